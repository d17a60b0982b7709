#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "mvfr/rng.hpp"
#include "mvfr/tc/adam.hpp"
#include "mvfr/tc/checkpoint.hpp"
#include "mvfr/tc/gradcheck.hpp"
#include "mvfr/tc/ops.hpp"

using namespace mvfr;
using namespace mvfr::tc;

namespace {

Array<double> random_array(std::vector<size_t> shape, Rng& rng, double scl = 1.0) {
  Array<double> a(std::move(shape));
  for (auto& v : a.data) v = scl * rng.normal();
  return a;
}

// independent nested-loop cross-correlation oracle, zero padding (k-1)/2
Array<double> conv2d_oracle(const Array<double>& x, const Array<double>& w,
                            const Array<double>& b, int s) {
  const int Cout = int(w.dim(0)), Cin = int(x.dim(0)), k = int(w.dim(2));
  const int H = int(x.dim(1)), W = int(x.dim(2)), p = (k - 1) / 2;
  const int OH = (H + 2 * p - k) / s + 1, OW = (W + 2 * p - k) / s + 1;
  Array<double> out({size_t(Cout), size_t(OH), size_t(OW)});
  for (int co = 0; co < Cout; ++co)
    for (int oy = 0; oy < OH; ++oy)
      for (int ox = 0; ox < OW; ++ox) {
        double acc = b[size_t(co)];
        for (int ci = 0; ci < Cin; ++ci)
          for (int ky = 0; ky < k; ++ky)
            for (int kx = 0; kx < k; ++kx) {
              int iy = oy * s + ky - p, ix = ox * s + kx - p;
              if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
              acc += x.at(size_t(ci), size_t(iy), size_t(ix)) *
                     w.at(size_t(co), size_t(ci), size_t(ky), size_t(kx));
            }
        out.at(size_t(co), size_t(oy), size_t(ox)) = acc;
      }
  return out;
}

Array<double> conv3d_oracle(const Array<double>& x, const Array<double>& w,
                            const Array<double>& b, int s) {
  const int Cout = int(w.dim(0)), Cin = int(x.dim(0)), k = int(w.dim(2));
  const int D = int(x.dim(1)), H = int(x.dim(2)), W = int(x.dim(3)), p = (k - 1) / 2;
  const int OD = (D + 2 * p - k) / s + 1, OH = (H + 2 * p - k) / s + 1,
            OW = (W + 2 * p - k) / s + 1;
  Array<double> out({size_t(Cout), size_t(OD), size_t(OH), size_t(OW)});
  for (int co = 0; co < Cout; ++co)
    for (int od = 0; od < OD; ++od)
      for (int oy = 0; oy < OH; ++oy)
        for (int ox = 0; ox < OW; ++ox) {
          double acc = b[size_t(co)];
          for (int ci = 0; ci < Cin; ++ci)
            for (int kd = 0; kd < k; ++kd)
              for (int ky = 0; ky < k; ++ky)
                for (int kx = 0; kx < k; ++kx) {
                  int id = od * s + kd - p, iy = oy * s + ky - p, ix = ox * s + kx - p;
                  if (id < 0 || id >= D || iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
                  acc += x.at(size_t(ci), size_t(id), size_t(iy), size_t(ix)) *
                         w.data[(((size_t(co) * Cin + ci) * k + kd) * k + ky) * k + kx];
                }
          out.at(size_t(co), size_t(od), size_t(oy), size_t(ox)) = acc;
        }
  return out;
}

}  // namespace

TEST_CASE("conv2d forward matches trivial and oracle cases") {
  Rng rng(7);

  // zero input -> output all equal bias
  {
    auto x = Tensor<double>::leaf(Array<double>({1, 3, 3}));
    auto w = Tensor<double>::leaf(random_array({2, 1, 3, 3}, rng));
    auto b = Tensor<double>::leaf(Array<double>::from({2}, {0.7, -1.2}));
    auto y = conv2d(x, w, b, 1);
    for (size_t c = 0; c < 2; ++c)
      for (size_t i = 0; i < 9; ++i)
        CHECK(y.value().data[c * 9 + i] == doctest::Approx(b.value()[c]).epsilon(1e-15));
  }
  // 1x1 identity kernel
  {
    auto x = Tensor<double>::leaf(random_array({1, 4, 5}, rng));
    auto w = Tensor<double>::leaf(Array<double>::from({1, 1, 1, 1}, {1.0}));
    auto b = Tensor<double>::leaf(Array<double>({1}));
    auto y = conv2d(x, w, b, 1);
    for (size_t i = 0; i < x.value().size(); ++i)
      CHECK(y.value()[i] == x.value()[i]);
  }
  // random 2x5x5, 3x3 kernel, stride 2, vs nested-loop oracle
  {
    auto x = random_array({2, 5, 5}, rng);
    auto w = random_array({3, 2, 3, 3}, rng);
    auto b = random_array({3}, rng);
    auto y = conv2d(Tensor<double>::leaf(x), Tensor<double>::leaf(w),
                    Tensor<double>::leaf(b), 2);
    auto ref = conv2d_oracle(x, w, b, 2);
    REQUIRE(y.shape() == ref.shape);
    for (size_t i = 0; i < ref.size(); ++i)
      CHECK(std::abs(y.value()[i] - ref[i]) < 1e-12);
  }
  // stride-1 preserves spatial dims; stride-2 gives ceil division
  {
    auto x = Tensor<double>::leaf(random_array({1, 7, 9}, rng));
    auto w = Tensor<double>::leaf(random_array({1, 1, 5, 5}, rng));
    auto b = Tensor<double>::leaf(Array<double>({1}));
    CHECK(conv2d(x, w, b, 1).shape() == std::vector<size_t>{1, 7, 9});
    CHECK(conv2d(x, w, b, 2).shape() == std::vector<size_t>{1, 4, 5});
  }
  // shape mismatch reports both shapes
  {
    auto x = Tensor<double>::leaf(Array<double>({2, 3, 3}));
    auto w = Tensor<double>::leaf(Array<double>({1, 3, 3, 3}));
    auto b = Tensor<double>::leaf(Array<double>({1}));
    CHECK_THROWS_AS(conv2d(x, w, b, 1), ValidationError);
    try {
      conv2d(x, w, b, 1);
    } catch (const ValidationError& e) {
      std::string msg = e.what();
      CHECK(msg.find("(2,3,3)") != std::string::npos);
      CHECK(msg.find("(1,3,3,3)") != std::string::npos);
    }
  }
}

TEST_CASE("conv3d forward matches trivial and oracle cases") {
  Rng rng(11);
  {
    auto x = Tensor<double>::leaf(Array<double>({1, 2, 2, 2}));
    auto w = Tensor<double>::leaf(random_array({2, 1, 3, 3, 3}, rng));
    auto b = Tensor<double>::leaf(Array<double>::from({2}, {0.25, 2.0}));
    auto y = conv3d(x, w, b, 1);
    for (size_t c = 0; c < 2; ++c)
      for (size_t i = 0; i < 8; ++i)
        CHECK(y.value().data[c * 8 + i] == doctest::Approx(b.value()[c]).epsilon(1e-15));
  }
  {
    auto x = Tensor<double>::leaf(random_array({1, 3, 4, 2}, rng));
    auto w = Tensor<double>::leaf(Array<double>::from({1, 1, 1, 1, 1}, {1.0}));
    auto b = Tensor<double>::leaf(Array<double>({1}));
    auto y = conv3d(x, w, b, 1);
    for (size_t i = 0; i < x.value().size(); ++i)
      CHECK(y.value()[i] == x.value()[i]);
  }
  {
    auto x = random_array({1, 4, 4, 4}, rng);
    auto w = random_array({2, 1, 3, 3, 3}, rng);
    auto b = random_array({2}, rng);
    auto y = conv3d(Tensor<double>::leaf(x), Tensor<double>::leaf(w),
                    Tensor<double>::leaf(b), 1);
    auto ref = conv3d_oracle(x, w, b, 1);
    REQUIRE(y.shape() == ref.shape);
    for (size_t i = 0; i < ref.size(); ++i)
      CHECK(std::abs(y.value()[i] - ref[i]) < 1e-12);
  }
}

TEST_CASE("groupnorm statistics and edge cases") {
  Rng rng(3);
  // constant input, gamma=1, beta=0 -> zeros (epsilon guards the zero variance)
  {
    auto x = Tensor<double>::leaf(Array<double>({4, 5}, 3.25));
    auto g = Tensor<double>::leaf(Array<double>({4}, 1.0));
    auto b = Tensor<double>::leaf(Array<double>({4}));
    auto y = groupnorm(x, 2, g, b);
    for (double v : y.value().data) CHECK(std::abs(v) < 1e-12);
  }
  // gamma = 0 -> output equals beta everywhere
  {
    auto x = Tensor<double>::leaf(random_array({4, 5}, rng));
    auto g = Tensor<double>::leaf(Array<double>({4}, 0.0));
    auto b = Tensor<double>::leaf(Array<double>({4}, -0.75));
    auto y = groupnorm(x, 4, g, b);
    for (double v : y.value().data) CHECK(v == doctest::Approx(-0.75).epsilon(1e-15));
  }
  // random 8-channel input, groups=4: per-group mean ~0, variance ~1 pre-affine
  {
    auto x = Tensor<double>::leaf(random_array({8, 16}, rng, 5.0));
    auto g = Tensor<double>::leaf(Array<double>({8}, 1.0));
    auto b = Tensor<double>::leaf(Array<double>({8}));
    auto y = groupnorm(x, 4, g, b);
    const size_t m = 2 * 16;
    for (int grp = 0; grp < 4; ++grp) {
      double mu = 0, var = 0;
      const double* ys = y.value().data.data() + size_t(grp) * m;
      for (size_t i = 0; i < m; ++i) mu += ys[i];
      mu /= double(m);
      for (size_t i = 0; i < m; ++i) var += (ys[i] - mu) * (ys[i] - mu);
      var /= double(m);
      CHECK(std::abs(mu) < 1e-10);
      CHECK(std::abs(var - 1.0) < 1e-6);
    }
  }
  // indivisible channel count
  {
    auto x = Tensor<double>::leaf(Array<double>({6, 3}));
    auto g = Tensor<double>::leaf(Array<double>({6}, 1.0));
    auto b = Tensor<double>::leaf(Array<double>({6}));
    CHECK_THROWS_AS(groupnorm(x, 4, g, b), ValidationError);
  }
  // rescaling one group's input by alpha in [0.5, 2] barely moves the output
  {
    auto x0 = random_array({8, 16}, rng, 1.0);
    auto g = Tensor<double>::leaf(Array<double>({8}, 1.0));
    auto b = Tensor<double>::leaf(Array<double>({8}));
    auto base = groupnorm(Tensor<double>::leaf(x0), 4, g, b);
    for (double alpha : {0.5, 2.0}) {
      Array<double> xs = x0;
      for (size_t i = 0; i < 2 * 16; ++i) xs.data[i] *= alpha;  // group 0
      auto scaled = groupnorm(Tensor<double>::leaf(xs), 4, g, b);
      for (size_t i = 0; i < 2 * 16; ++i)
        CHECK(std::abs(scaled.value()[i] - base.value()[i]) < 1e-4);
    }
  }
}

TEST_CASE("linear layers compose into an MLP") {
  Rng rng(19);
  // zero weights -> output equals final bias
  {
    auto x = Tensor<double>::leaf(random_array({1, 6}, rng));
    auto w1 = Tensor<double>::leaf(Array<double>({6, 4}));
    auto b1 = Tensor<double>::leaf(Array<double>({4}, 0.5));
    auto w2 = Tensor<double>::leaf(Array<double>({4, 1}));
    auto b2 = Tensor<double>::leaf(Array<double>::from({1}, {-2.5}));
    auto y = linear(relu(linear(x, w1, b1)), w2, b2);
    CHECK(y.value()[0] == doctest::Approx(-2.5).epsilon(1e-15));
  }
  // single layer, all-ones weights, zero bias -> sum of inputs
  {
    auto x = random_array({1, 5}, rng);
    auto w = Tensor<double>::leaf(Array<double>({5, 1}, 1.0));
    auto b = Tensor<double>::leaf(Array<double>({1}));
    auto y = linear(Tensor<double>::leaf(x), w, b);
    double s = 0;
    for (double v : x.data) s += v;
    CHECK(y.value()[0] == doctest::Approx(s).epsilon(1e-14));
  }
  // 2-layer net vs hand-rolled matrix product oracle
  {
    auto x = random_array({3, 4}, rng);
    auto w1 = random_array({4, 5}, rng);
    auto b1 = random_array({5}, rng);
    auto w2 = random_array({5, 1}, rng);
    auto b2 = random_array({1}, rng);
    auto y = linear(relu(linear(Tensor<double>::leaf(x), Tensor<double>::leaf(w1),
                                Tensor<double>::leaf(b1))),
                    Tensor<double>::leaf(w2), Tensor<double>::leaf(b2));
    for (size_t r = 0; r < 3; ++r) {
      double ref = b2[0];
      for (size_t j = 0; j < 5; ++j) {
        double h = b1[j];
        for (size_t i = 0; i < 4; ++i) h += x.at(r, i) * w1.at(i, j);
        ref += std::max(h, 0.0) * w2.at(j, 0);
      }
      CHECK(std::abs(y.value()[r] - ref) < 1e-12);
    }
  }
}

TEST_CASE("adam reference behaviour") {
  // zero gradient on a fresh state leaves parameters unchanged
  {
    auto p = Tensor<double>::leaf(Array<double>::from({2}, {1.0, -3.0}), true, "p");
    Adam<double> opt({p}, {});
    p.grad_ref();  // zero grads
    opt.step();
    CHECK(p.value()[0] == 1.0);
    CHECK(p.value()[1] == -3.0);
  }
  // single step matches the closed-form update
  {
    auto p = Tensor<double>::leaf(Array<double>::from({2}, {0.2, -0.4}), true, "p");
    AdamConfig cfg;
    Adam<double> opt({p}, cfg);
    p.grad_ref()[0] = 0.3;
    p.grad_ref()[1] = -1.7;
    opt.step();
    for (size_t i = 0; i < 2; ++i) {
      const double g = (i == 0) ? 0.3 : -1.7;
      const double m = (1 - cfg.beta1) * g, v = (1 - cfg.beta2) * g * g;
      const double mhat = m / (1 - cfg.beta1), vhat = v / (1 - cfg.beta2);
      const double expect = ((i == 0) ? 0.2 : -0.4) - cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
      CHECK(std::abs(p.value()[i] - expect) < 1e-15);
    }
  }
  // two identical steps vs a reference sequence
  {
    auto p = Tensor<double>::leaf(Array<double>::from({1}, {1.0}), true, "p");
    AdamConfig cfg;
    Adam<double> opt({p}, cfg);
    const double g = 0.9;
    double rp = 1.0, rm = 0.0, rv = 0.0;
    for (int t = 1; t <= 2; ++t) {
      p.zero_grad();
      p.grad_ref()[0] = g;
      opt.step();
      rm = cfg.beta1 * rm + (1 - cfg.beta1) * g;
      rv = cfg.beta2 * rv + (1 - cfg.beta2) * g * g;
      const double mh = rm / (1 - std::pow(cfg.beta1, t));
      const double vh = rv / (1 - std::pow(cfg.beta2, t));
      rp -= cfg.lr * mh / (std::sqrt(vh) + cfg.eps);
      CHECK(std::abs(p.value()[0] - rp) < 1e-12);
    }
  }
  // NaN gradient aborts naming the parameter
  {
    auto p = Tensor<double>::leaf(Array<double>::from({1}, {1.0}), true, "weights.q");
    Adam<double> opt({p}, {});
    p.grad_ref()[0] = std::nan("");
    try {
      opt.step();
      CHECK(false);
    } catch (const NumericError& e) {
      CHECK(std::string(e.what()).find("weights.q") != std::string::npos);
    }
  }
}

TEST_CASE("finite difference gradcheck on closed forms") {
  Rng rng(23);
  // fn(x) = sum(x): gradient all ones
  {
    auto point = random_array({7}, rng);
    double err = finite_diff_gradcheck([](Tensor<double> x) { return sum(x); }, point, 1e-5);
    CHECK(err < 1e-10);
  }
  // fn(x) = sum(x^2): gradient 2x
  {
    auto point = random_array({9}, rng);
    double err = finite_diff_gradcheck([](Tensor<double> x) { return sum(mul(x, x)); },
                                       point, 1e-5);
    CHECK(err < 1e-8);
  }
  // non-finite evaluation reports the coordinate
  {
    auto point = Array<double>::from({2}, {0.5, -1.0});
    auto fn = [](Tensor<double> x) {
      Array<double> out({1});
      out[0] = std::log(x.value()[1]);  // NaN for negative input
      return Tensor<double>::make_op(std::move(out), {x}, [](auto&) {});
    };
    CHECK_THROWS_AS(finite_diff_gradcheck(fn, point, 1e-5), NumericError);
  }
}

TEST_CASE("per-layer gradients match central differences") {
  Rng rng(31);
  const double kTol = 1e-5;

  SUBCASE("conv2d w.r.t. input, weights and bias") {
    auto x0 = random_array({2, 5, 4}, rng);
    auto w0 = random_array({3, 2, 3, 3}, rng);
    auto b0 = random_array({3}, rng);
    auto wt = Tensor<double>::leaf(w0);
    auto bt = Tensor<double>::leaf(b0);
    CHECK(finite_diff_gradcheck(
              [&](Tensor<double> x) { return sum(conv2d(x, wt, bt, 2)); }, x0) < kTol);
    auto xt = Tensor<double>::leaf(x0);
    CHECK(finite_diff_gradcheck(
              [&](Tensor<double> w) { return sum(conv2d(xt, w, bt, 1)); }, w0) < kTol);
    CHECK(finite_diff_gradcheck(
              [&](Tensor<double> b) { return sum(conv2d(xt, wt, b, 1)); }, b0) < kTol);
  }
  SUBCASE("conv3d w.r.t. input and weights") {
    auto x0 = random_array({1, 3, 4, 3}, rng);
    auto w0 = random_array({2, 1, 3, 3, 3}, rng);
    auto b0 = random_array({2}, rng);
    auto wt = Tensor<double>::leaf(w0);
    auto bt = Tensor<double>::leaf(b0);
    CHECK(finite_diff_gradcheck(
              [&](Tensor<double> x) { return sum(conv3d(x, wt, bt, 1)); }, x0) < kTol);
    auto xt = Tensor<double>::leaf(x0);
    CHECK(finite_diff_gradcheck(
              [&](Tensor<double> w) { return sum(conv3d(xt, w, bt, 2)); }, w0) < kTol);
  }
  SUBCASE("groupnorm w.r.t. input, gamma, beta") {
    auto x0 = random_array({4, 6}, rng);
    auto g0 = random_array({4}, rng);
    auto be0 = random_array({4}, rng);
    auto gt = Tensor<double>::leaf(g0);
    auto bet = Tensor<double>::leaf(be0);
    // weight the output so the gradient is not uniform
    auto w0 = random_array({4, 6}, rng);
    auto weight = Tensor<double>::leaf(w0);
    CHECK(finite_diff_gradcheck(
              [&](Tensor<double> x) { return sum(mul(groupnorm(x, 2, gt, bet), weight)); },
              x0) < kTol);
    auto xt = Tensor<double>::leaf(x0);
    CHECK(finite_diff_gradcheck(
              [&](Tensor<double> g) { return sum(mul(groupnorm(xt, 2, g, bet), weight)); },
              g0) < kTol);
    CHECK(finite_diff_gradcheck(
              [&](Tensor<double> b) { return sum(mul(groupnorm(xt, 2, gt, b), weight)); },
              be0) < kTol);
  }
  SUBCASE("linear and relu") {
    auto x0 = random_array({3, 4}, rng);
    auto w0 = random_array({4, 2}, rng);
    auto b0 = random_array({2}, rng);
    auto wt = Tensor<double>::leaf(w0);
    auto bt = Tensor<double>::leaf(b0);
    CHECK(finite_diff_gradcheck(
              [&](Tensor<double> x) { return sum(relu(linear(x, wt, bt))); }, x0) < kTol);
    auto xt = Tensor<double>::leaf(x0);
    CHECK(finite_diff_gradcheck(
              [&](Tensor<double> w) { return sum(relu(linear(xt, w, bt))); }, w0) < kTol);
  }
  SUBCASE("gather_bilinear w.r.t. the feature map") {
    auto fm0 = random_array({3, 5, 6}, rng);
    Array<double> coords({4, 2});
    coords.at(0, 0) = 1.3; coords.at(0, 1) = 2.7;
    coords.at(1, 0) = 0.0; coords.at(1, 1) = 0.0;
    coords.at(2, 0) = 4.9; coords.at(2, 1) = 3.2;
    coords.at(3, 0) = 2.5; coords.at(3, 1) = 1.5;
    std::vector<uint8_t> valid{1, 1, 0, 1};
    auto w0 = random_array({4, 3}, rng);
    auto weight = Tensor<double>::leaf(w0);
    CHECK(finite_diff_gradcheck(
              [&](Tensor<double> fm) {
                return sum(mul(gather_bilinear(fm, coords, valid), weight));
              },
              fm0) < kTol);
  }
  SUBCASE("variance_views w.r.t. each view") {
    const size_t B = 3, c = 4, N = 5;
    std::vector<Array<double>> feats;
    for (size_t v = 0; v < N; ++v) feats.push_back(random_array({B, c}, rng));
    Array<uint8_t> valid({N, B}, 1);
    valid.at(1, 0) = 0;
    valid.at(3, 2) = 0;
    auto w0 = random_array({B, c}, rng);
    auto weight = Tensor<double>::leaf(w0);
    for (size_t target = 0; target < N; ++target) {
      CHECK(finite_diff_gradcheck(
                [&](Tensor<double> x) {
                  std::vector<Tensor<double>> views;
                  for (size_t v = 0; v < N; ++v)
                    views.push_back(v == target ? x : Tensor<double>::leaf(feats[v]));
                  return sum(mul(variance_views(views, valid), weight));
                },
                feats[target]) < kTol);
    }
  }
  SUBCASE("mse and soft_argmax") {
    auto p0 = random_array({6}, rng);
    Array<double> target = random_array({6}, rng);
    std::vector<uint8_t> incl{1, 1, 0, 1, 1, 1};
    CHECK(finite_diff_gradcheck(
              [&](Tensor<double> p) { return mse(p, target, incl); }, p0) < kTol);

    auto v0 = random_array({8, 2, 3}, rng);
    Array<double> dvals({8});
    for (size_t k = 0; k < 8; ++k) dvals[k] = -1.0 + 2.0 * double(k) / 7.0;
    auto w0 = random_array({2, 3}, rng);
    auto weight = Tensor<double>::leaf(w0);
    CHECK(finite_diff_gradcheck(
              [&](Tensor<double> v) {
                return sum(mul(soft_argmax(v, dvals, 3.0), weight));
              },
              v0) < kTol);
  }
}

TEST_CASE("soft_argmax symmetry and range") {
  Rng rng(41);
  const size_t D = 64;
  Array<double> dvals({D});
  for (size_t k = 0; k < D; ++k) dvals[k] = -1.0 + 2.0 * double(k) / double(D - 1);

  // uniform scores -> exact grid mean (0 for a symmetric grid)
  {
    auto v = Tensor<double>::leaf(Array<double>({D, 1, 1}, 0.37));
    auto out = soft_argmax(v, dvals, 5.0);
    CHECK(std::abs(out.value()[0]) < 1e-12);
  }
  // one-hot score 100 at d_k = 0.25 with tau=1, D=64 (grid chosen so that
  // 0.25 is a bin value: -1 + 2k/64 at k = 40)
  {
    Array<double> grid({D});
    for (size_t k = 0; k < D; ++k) grid[k] = -1.0 + 2.0 * double(k) / double(D);
    Array<double> vol({D, 1, 1});
    vol.data[40] = 100.0;
    REQUIRE(grid[40] == 0.25);
    auto out = soft_argmax(Tensor<double>::leaf(vol), grid, 1.0);
    CHECK(std::abs(out.value()[0] - 0.25) < 1e-3);
  }
  // shift invariance: adding a constant leaves the output unchanged
  {
    Array<double> vol = random_array({D, 1, 1}, rng);
    auto a = soft_argmax(Tensor<double>::leaf(vol), dvals, 5.0);
    for (auto& s : vol.data) s += 11.0;
    auto b = soft_argmax(Tensor<double>::leaf(vol), dvals, 5.0);
    CHECK(std::abs(a.value()[0] - b.value()[0]) < 1e-12);
    CHECK(a.value()[0] >= -1.0);
    CHECK(a.value()[0] <= 1.0);
  }
}

TEST_CASE("variance_views matches a two-pass oracle and is order-insensitive") {
  Rng rng(43);
  const size_t B = 4, c = 3, N = 10;
  std::vector<Array<double>> feats;
  for (size_t v = 0; v < N; ++v) feats.push_back(random_array({B, c}, rng));
  Array<uint8_t> valid({N, B}, 1);
  valid.at(2, 1) = 0;

  std::vector<Tensor<double>> views;
  for (auto& f : feats) views.push_back(Tensor<double>::leaf(f));
  auto V = variance_views(views, valid);

  for (size_t i = 0; i < B; ++i) {
    int n = 0;
    for (size_t v = 0; v < N; ++v) n += valid.at(v, i);
    for (size_t ch = 0; ch < c; ++ch) {
      // two-pass: subtract the mean, then average squared residuals
      double mu = 0;
      for (size_t v = 0; v < N; ++v)
        if (valid.at(v, i)) mu += feats[v].at(i, ch);
      mu /= n;
      double var = 0;
      for (size_t v = 0; v < N; ++v)
        if (valid.at(v, i)) var += (feats[v].at(i, ch) - mu) * (feats[v].at(i, ch) - mu);
      var /= n;
      CHECK(std::abs(V.value().at(i, ch) - var) < 1e-10);
      CHECK(V.value().at(i, ch) >= 0.0);
    }
  }

  // identical features -> exactly zero
  std::vector<Tensor<double>> same(N, views[0]);
  auto Vz = variance_views(same, valid);
  for (double v : Vz.value().data) CHECK(v == 0.0);

  // two views {1, 3} -> ((a-b)/2)^2 = 1
  {
    auto a = Tensor<double>::leaf(Array<double>({1, 1}, 1.0));
    auto b = Tensor<double>::leaf(Array<double>({1, 1}, 3.0));
    Array<uint8_t> ok({2, 1}, 1);
    auto v2 = variance_views<double>({a, b}, ok);
    CHECK(v2.value()[0] == doctest::Approx(1.0).epsilon(1e-15));
  }
}

TEST_CASE("checkpoint container round-trips bit-exactly") {
  namespace fs = std::filesystem;
  const std::string path = (fs::temp_directory_path() / "mvfr_tc_container.bin").string();
  Rng rng(57);

  std::vector<ContainerEntry> entries;
  auto f32 = random_array({3, 4}, rng).cast<float>();
  auto f64 = random_array({5}, rng);
  std::vector<int64_t> idx{0, 17, 42, -3};
  std::vector<uint8_t> bytes{0, 1, 255, 128};
  entries.push_back(entry_from_f32("weights.a", f32));
  entries.push_back(entry_from_f64("oracle.b", f64));
  entries.push_back(entry_from_i64("indices", idx));
  entries.push_back(entry_from_u8("mask", bytes));
  write_container(path, entries);

  auto back = read_container(path);
  REQUIRE(back.size() == 4);
  CHECK(entry_to_f32(find_entry(back, "weights.a")).data == f32.data);
  CHECK(entry_to_f32(find_entry(back, "weights.a")).shape == f32.shape);
  CHECK(entry_to_f64(find_entry(back, "oracle.b")).data == f64.data);
  CHECK(entry_to_i64(find_entry(back, "indices")) == idx);
  CHECK(entry_to_u8(find_entry(back, "mask")) == bytes);

  // a second write of identical entries produces identical bytes
  const std::string path2 = (fs::temp_directory_path() / "mvfr_tc_container2.bin").string();
  write_container(path2, entries);
  std::ifstream a(path, std::ios::binary), b(path2, std::ios::binary);
  std::string sa((std::istreambuf_iterator<char>(a)), std::istreambuf_iterator<char>());
  std::string sb((std::istreambuf_iterator<char>(b)), std::istreambuf_iterator<char>());
  CHECK(sa == sb);

  // version mismatch is refused
  {
    std::string tampered = sa;
    tampered[4] = 9;  // bump the version field
    const std::string bad = (fs::temp_directory_path() / "mvfr_tc_bad.bin").string();
    std::ofstream os(bad, std::ios::binary);
    os.write(tampered.data(), std::streamsize(tampered.size()));
    os.close();
    CHECK_THROWS_AS(read_container(bad), IoError);
  }
  fs::remove(path);
  fs::remove(path2);
}

TEST_CASE("forward passes are deterministic") {
  Rng rng(71);
  auto x = random_array({3, 12, 10}, rng);
  auto w = random_array({4, 3, 3, 3}, rng);
  auto b = random_array({4}, rng);
  auto y1 = conv2d(Tensor<double>::leaf(x), Tensor<double>::leaf(w), Tensor<double>::leaf(b), 2);
  auto y2 = conv2d(Tensor<double>::leaf(x), Tensor<double>::leaf(w), Tensor<double>::leaf(b), 2);
  CHECK(y1.value().data == y2.value().data);
}
