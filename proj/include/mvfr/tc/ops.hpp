#pragma once

#include <Eigen/Core>
#include <cmath>
#include <cstdint>
#include <vector>

#include "mvfr/tc/tensor.hpp"

namespace mvfr::tc {

// Layer descriptor shared by the network configs. Conv layers use symmetric
// zero padding of (kernel-1)/2, so stride-1 layers preserve spatial size and
// the output dims are ceil(in/stride).
struct LayerSpec {
  enum Kind { kConv2d, kConv3d, kLinear, kGroupNorm, kRelu };
  Kind kind = kConv2d;
  int in_channels = 0;
  int out_channels = 0;
  int kernel = 3;
  int stride = 1;
  int groups = 1;  // groupnorm only
};

template <class T>
using MatRM = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MapRM = Eigen::Map<MatRM<T>>;
template <class T>
using CMapRM = Eigen::Map<const MatRM<T>>;

namespace ops_detail {

inline size_t conv_out_dim(size_t in, int kernel, int stride) {
  size_t pad = size_t(kernel - 1) / 2;
  return (in + 2 * pad - size_t(kernel)) / size_t(stride) + 1;
}

// col has shape [Cin*k*k, OH*OW]
template <class T>
void im2col2d(const Array<T>& x, int k, int s, Array<T>& col) {
  const int C = int(x.dim(0)), H = int(x.dim(1)), W = int(x.dim(2));
  const int p = (k - 1) / 2;
  const int OH = int(conv_out_dim(H, k, s)), OW = int(conv_out_dim(W, k, s));
  col = Array<T>({size_t(C * k * k), size_t(OH * OW)});
  T* cp = col.data.data();
  for (int c = 0; c < C; ++c) {
    const T* xc = x.data.data() + size_t(c) * H * W;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        T* row = cp + (size_t(c) * k * k + size_t(ky) * k + kx) * (size_t(OH) * OW);
        for (int oy = 0; oy < OH; ++oy) {
          int iy = oy * s + ky - p;
          if (iy < 0 || iy >= H) {
            std::fill(row + size_t(oy) * OW, row + size_t(oy + 1) * OW, T(0));
            continue;
          }
          const T* xr = xc + size_t(iy) * W;
          for (int ox = 0; ox < OW; ++ox) {
            int ix = ox * s + kx - p;
            row[size_t(oy) * OW + ox] = (ix < 0 || ix >= W) ? T(0) : xr[ix];
          }
        }
      }
    }
  }
}

template <class T>
void col2im2d(const Array<T>& col, int C, int H, int W, int k, int s, Array<T>& dx) {
  const int p = (k - 1) / 2;
  const int OH = int(conv_out_dim(H, k, s)), OW = int(conv_out_dim(W, k, s));
  for (int c = 0; c < C; ++c) {
    T* xc = dx.data.data() + size_t(c) * H * W;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const T* row = col.data.data() +
                       (size_t(c) * k * k + size_t(ky) * k + kx) * (size_t(OH) * OW);
        for (int oy = 0; oy < OH; ++oy) {
          int iy = oy * s + ky - p;
          if (iy < 0 || iy >= H) continue;
          T* xr = xc + size_t(iy) * W;
          for (int ox = 0; ox < OW; ++ox) {
            int ix = ox * s + kx - p;
            if (ix >= 0 && ix < W) xr[ix] += row[size_t(oy) * OW + ox];
          }
        }
      }
    }
  }
}

// 3-d variants; col has shape [Cin*k^3, OD*OH*OW]
template <class T>
void im2col3d(const Array<T>& x, int k, int s, Array<T>& col) {
  const int C = int(x.dim(0)), D = int(x.dim(1)), H = int(x.dim(2)), W = int(x.dim(3));
  const int p = (k - 1) / 2;
  const int OD = int(conv_out_dim(D, k, s)), OH = int(conv_out_dim(H, k, s)),
            OW = int(conv_out_dim(W, k, s));
  const size_t ocols = size_t(OD) * OH * OW;
  col = Array<T>({size_t(C) * k * k * k, ocols});
  for (int c = 0; c < C; ++c) {
    const T* xc = x.data.data() + size_t(c) * D * H * W;
    for (int kd = 0; kd < k; ++kd)
      for (int ky = 0; ky < k; ++ky)
        for (int kx = 0; kx < k; ++kx) {
          T* row = col.data.data() +
                   (((size_t(c) * k + kd) * k + ky) * k + kx) * ocols;
          for (int od = 0; od < OD; ++od) {
            int id = od * s + kd - p;
            for (int oy = 0; oy < OH; ++oy) {
              int iy = oy * s + ky - p;
              T* dst = row + (size_t(od) * OH + oy) * OW;
              if (id < 0 || id >= D || iy < 0 || iy >= H) {
                std::fill(dst, dst + OW, T(0));
                continue;
              }
              const T* xr = xc + (size_t(id) * H + iy) * W;
              for (int ox = 0; ox < OW; ++ox) {
                int ix = ox * s + kx - p;
                dst[ox] = (ix < 0 || ix >= W) ? T(0) : xr[ix];
              }
            }
          }
        }
  }
}

template <class T>
void col2im3d(const Array<T>& col, int C, int D, int H, int W, int k, int s, Array<T>& dx) {
  const int p = (k - 1) / 2;
  const int OD = int(conv_out_dim(D, k, s)), OH = int(conv_out_dim(H, k, s)),
            OW = int(conv_out_dim(W, k, s));
  const size_t ocols = size_t(OD) * OH * OW;
  for (int c = 0; c < C; ++c) {
    T* xc = dx.data.data() + size_t(c) * D * H * W;
    for (int kd = 0; kd < k; ++kd)
      for (int ky = 0; ky < k; ++ky)
        for (int kx = 0; kx < k; ++kx) {
          const T* row = col.data.data() +
                         (((size_t(c) * k + kd) * k + ky) * k + kx) * ocols;
          for (int od = 0; od < OD; ++od) {
            int id = od * s + kd - p;
            if (id < 0 || id >= D) continue;
            for (int oy = 0; oy < OH; ++oy) {
              int iy = oy * s + ky - p;
              if (iy < 0 || iy >= H) continue;
              T* xr = xc + (size_t(id) * H + iy) * W;
              const T* src = row + (size_t(od) * OH + oy) * OW;
              for (int ox = 0; ox < OW; ++ox) {
                int ix = ox * s + kx - p;
                if (ix >= 0 && ix < W) xr[ix] += src[ox];
              }
            }
          }
        }
  }
}

}  // namespace ops_detail

// ---------------------------------------------------------------------------
// elementwise / reduction ops

template <class T>
Tensor<T> add(Tensor<T> a, Tensor<T> b) {
  MVFR_CHECK(a.shape() == b.shape(), "add: shape mismatch " << shape_str(a.shape())
                                         << " vs " << shape_str(b.shape()));
  Array<T> out = a.value();
  for (size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
  return Tensor<T>::make_op(std::move(out), {a, b}, [a, b](auto& self) mutable {
    if (a.requires_grad()) {
      auto& ga = a.grad_ref();
      for (size_t i = 0; i < ga.size(); ++i) ga[i] += self.grad[i];
    }
    if (b.requires_grad()) {
      auto& gb = b.grad_ref();
      for (size_t i = 0; i < gb.size(); ++i) gb[i] += self.grad[i];
    }
  });
}

template <class T>
Tensor<T> sub(Tensor<T> a, Tensor<T> b) {
  MVFR_CHECK(a.shape() == b.shape(), "sub: shape mismatch " << shape_str(a.shape())
                                         << " vs " << shape_str(b.shape()));
  Array<T> out = a.value();
  for (size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
  return Tensor<T>::make_op(std::move(out), {a, b}, [a, b](auto& self) mutable {
    if (a.requires_grad()) {
      auto& ga = a.grad_ref();
      for (size_t i = 0; i < ga.size(); ++i) ga[i] += self.grad[i];
    }
    if (b.requires_grad()) {
      auto& gb = b.grad_ref();
      for (size_t i = 0; i < gb.size(); ++i) gb[i] -= self.grad[i];
    }
  });
}

template <class T>
Tensor<T> mul(Tensor<T> a, Tensor<T> b) {
  MVFR_CHECK(a.shape() == b.shape(), "mul: shape mismatch " << shape_str(a.shape())
                                         << " vs " << shape_str(b.shape()));
  Array<T> out = a.value();
  for (size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  return Tensor<T>::make_op(std::move(out), {a, b}, [a, b](auto& self) mutable {
    if (a.requires_grad()) {
      auto& ga = a.grad_ref();
      for (size_t i = 0; i < ga.size(); ++i) ga[i] += self.grad[i] * b.value()[i];
    }
    if (b.requires_grad()) {
      auto& gb = b.grad_ref();
      for (size_t i = 0; i < gb.size(); ++i) gb[i] += self.grad[i] * a.value()[i];
    }
  });
}

template <class T>
Tensor<T> scale(Tensor<T> a, double s) {
  Array<T> out = a.value();
  for (auto& v : out.data) v = T(v * s);
  return Tensor<T>::make_op(std::move(out), {a}, [a, s](auto& self) mutable {
    if (!a.requires_grad()) return;
    auto& ga = a.grad_ref();
    for (size_t i = 0; i < ga.size(); ++i) ga[i] += T(self.grad[i] * s);
  });
}

template <class T>
Tensor<T> sum(Tensor<T> a) {
  T acc = 0;
  for (const T& v : a.value().data) acc += v;
  return Tensor<T>::make_op(Array<T>::from({1}, {acc}), {a}, [a](auto& self) mutable {
    if (!a.requires_grad()) return;
    auto& ga = a.grad_ref();
    for (size_t i = 0; i < ga.size(); ++i) ga[i] += self.grad[0];
  });
}

template <class T>
Tensor<T> mean(Tensor<T> a) {
  T acc = 0;
  for (const T& v : a.value().data) acc += v;
  const T inv = T(1) / T(a.value().size());
  return Tensor<T>::make_op(Array<T>::from({1}, {acc * inv}), {a},
                            [a, inv](auto& self) mutable {
                              if (!a.requires_grad()) return;
                              auto& ga = a.grad_ref();
                              for (size_t i = 0; i < ga.size(); ++i)
                                ga[i] += self.grad[0] * inv;
                            });
}

template <class T>
Tensor<T> relu(Tensor<T> a) {
  Array<T> out = a.value();
  for (auto& v : out.data)
    if (v < T(0)) v = T(0);
  return Tensor<T>::make_op(std::move(out), {a}, [a](auto& self) mutable {
    if (!a.requires_grad()) return;
    auto& ga = a.grad_ref();
    const auto& x = a.value();
    for (size_t i = 0; i < ga.size(); ++i)
      if (x[i] > T(0)) ga[i] += self.grad[i];
  });
}

template <class T>
Tensor<T> reshape(Tensor<T> a, std::vector<size_t> shape) {
  MVFR_CHECK(numel(shape) == a.value().size(),
             "reshape: cannot view " << shape_str(a.shape()) << " as " << shape_str(shape));
  Array<T> out = a.value();
  out.shape = std::move(shape);
  return Tensor<T>::make_op(std::move(out), {a}, [a](auto& self) mutable {
    if (!a.requires_grad()) return;
    auto& ga = a.grad_ref();
    for (size_t i = 0; i < ga.size(); ++i) ga[i] += self.grad[i];
  });
}

template <class T>
Tensor<T> concat_cols(Tensor<T> a, Tensor<T> b) {
  MVFR_CHECK(a.shape().size() == 2 && b.shape().size() == 2 && a.dim(0) == b.dim(0),
             "concat_cols: incompatible shapes " << shape_str(a.shape()) << " vs "
                                                 << shape_str(b.shape()));
  const size_t B = a.value().dim(0), ca = a.value().dim(1), cb = b.value().dim(1);
  Array<T> out({B, ca + cb});
  for (size_t i = 0; i < B; ++i) {
    for (size_t j = 0; j < ca; ++j) out.at(i, j) = a.value().at(i, j);
    for (size_t j = 0; j < cb; ++j) out.at(i, ca + j) = b.value().at(i, j);
  }
  return Tensor<T>::make_op(std::move(out), {a, b}, [a, b, ca, cb](auto& self) mutable {
    const size_t B = self.value.dim(0);
    if (a.requires_grad()) {
      auto& ga = a.grad_ref();
      for (size_t i = 0; i < B; ++i)
        for (size_t j = 0; j < ca; ++j) ga.at(i, j) += self.grad.at(i, j);
    }
    if (b.requires_grad()) {
      auto& gb = b.grad_ref();
      for (size_t i = 0; i < B; ++i)
        for (size_t j = 0; j < cb; ++j) gb.at(i, j) += self.grad.at(i, ca + j);
    }
  });
}

// ---------------------------------------------------------------------------
// linear / convolution

// x: [B,K], w: [K,M], b: [M] -> [B,M]
template <class T>
Tensor<T> linear(Tensor<T> x, Tensor<T> w, Tensor<T> b) {
  MVFR_CHECK(x.shape().size() == 2 && w.shape().size() == 2 && x.dim(1) == w.dim(0),
             "linear: shape mismatch input " << shape_str(x.shape()) << " vs weights "
                                             << shape_str(w.shape()));
  MVFR_CHECK(b.shape().size() == 1 && b.dim(0) == w.dim(1),
             "linear: bias shape " << shape_str(b.shape()) << " vs weights "
                                   << shape_str(w.shape()));
  const size_t B = x.value().dim(0), K = x.value().dim(1), M = w.value().dim(1);
  Array<T> out({B, M});
  CMapRM<T> xm(x.value().data.data(), B, K);
  CMapRM<T> wm(w.value().data.data(), K, M);
  MapRM<T> om(out.data.data(), B, M);
  om.noalias() = xm * wm;
  for (size_t i = 0; i < B; ++i)
    for (size_t j = 0; j < M; ++j) out.at(i, j) += b.value()[j];
  return Tensor<T>::make_op(std::move(out), {x, w, b}, [x, w, b, B, K, M](auto& self) mutable {
    CMapRM<T> dy(self.grad.data.data(), B, M);
    if (x.requires_grad()) {
      MapRM<T> dx(x.grad_ref().data.data(), B, K);
      CMapRM<T> wm(w.value().data.data(), K, M);
      dx.noalias() += dy * wm.transpose();
    }
    if (w.requires_grad()) {
      MapRM<T> dw(w.grad_ref().data.data(), K, M);
      CMapRM<T> xm(x.value().data.data(), B, K);
      dw.noalias() += xm.transpose() * dy;
    }
    if (b.requires_grad()) {
      auto& db = b.grad_ref();
      for (size_t i = 0; i < B; ++i)
        for (size_t j = 0; j < M; ++j) db[j] += self.grad.at(i, j);
    }
  });
}

// x: [Cin,H,W], w: [Cout,Cin,k,k], b: [Cout] -> [Cout,OH,OW]
template <class T>
Tensor<T> conv2d(Tensor<T> x, Tensor<T> w, Tensor<T> b, int stride) {
  MVFR_CHECK(x.shape().size() == 3 && w.shape().size() == 4 && x.dim(0) == w.dim(1),
             "conv2d: shape mismatch input " << shape_str(x.shape()) << " vs weights "
                                             << shape_str(w.shape()));
  const int k = int(w.value().dim(2));
  MVFR_CHECK(k == int(w.value().dim(3)) && k % 2 == 1, "conv2d: kernel must be square and odd");
  MVFR_CHECK(stride >= 1, "conv2d: stride must be positive");
  const size_t Cout = w.value().dim(0), Cin = x.value().dim(0);
  const size_t H = x.value().dim(1), W = x.value().dim(2);
  const size_t OH = ops_detail::conv_out_dim(H, k, stride);
  const size_t OW = ops_detail::conv_out_dim(W, k, stride);

  Array<T> col;
  ops_detail::im2col2d(x.value(), k, stride, col);
  Array<T> out({Cout, OH, OW});
  {
    CMapRM<T> wm(w.value().data.data(), Cout, Cin * k * k);
    CMapRM<T> cm(col.data.data(), Cin * k * k, OH * OW);
    MapRM<T> om(out.data.data(), Cout, OH * OW);
    om.noalias() = wm * cm;
    for (size_t c = 0; c < Cout; ++c)
      om.row(c).array() += b.value()[c];
  }
  // col is recomputed in backward rather than cached; backward cost goes up a
  // little but activation memory stays bounded for the 8-view training step.
  return Tensor<T>::make_op(
      std::move(out), {x, w, b},
      [x, w, b, k, stride, Cin, Cout, H, W, OH, OW](auto& self) mutable {
        CMapRM<T> dy(self.grad.data.data(), Cout, OH * OW);
        if (w.requires_grad() || x.requires_grad()) {
          Array<T> col;
          ops_detail::im2col2d(x.value(), k, stride, col);
          if (w.requires_grad()) {
            MapRM<T> dw(w.grad_ref().data.data(), Cout, Cin * k * k);
            CMapRM<T> cm(col.data.data(), Cin * k * k, OH * OW);
            dw.noalias() += dy * cm.transpose();
          }
          if (x.requires_grad()) {
            Array<T> dcol({Cin * size_t(k) * k, OH * OW});
            MapRM<T> dc(dcol.data.data(), Cin * k * k, OH * OW);
            CMapRM<T> wm(w.value().data.data(), Cout, Cin * k * k);
            dc.noalias() = wm.transpose() * dy;
            ops_detail::col2im2d(dcol, int(Cin), int(H), int(W), k, stride, x.grad_ref());
          }
        }
        if (b.requires_grad()) {
          auto& db = b.grad_ref();
          for (size_t c = 0; c < Cout; ++c) {
            T acc = 0;
            const T* row = self.grad.data.data() + c * OH * OW;
            for (size_t i = 0; i < OH * OW; ++i) acc += row[i];
            db[c] += acc;
          }
        }
      });
}

// x: [Cin,D,H,W], w: [Cout,Cin,k,k,k], b: [Cout] -> [Cout,OD,OH,OW]
template <class T>
Tensor<T> conv3d(Tensor<T> x, Tensor<T> w, Tensor<T> b, int stride) {
  MVFR_CHECK(x.shape().size() == 4 && w.shape().size() == 5 && x.dim(0) == w.dim(1),
             "conv3d: shape mismatch input " << shape_str(x.shape()) << " vs weights "
                                             << shape_str(w.shape()));
  const int k = int(w.value().dim(2));
  MVFR_CHECK(k % 2 == 1, "conv3d: kernel must be odd");
  const size_t Cout = w.value().dim(0), Cin = x.value().dim(0);
  const size_t D = x.value().dim(1), H = x.value().dim(2), W = x.value().dim(3);
  const size_t OD = ops_detail::conv_out_dim(D, k, stride);
  const size_t OH = ops_detail::conv_out_dim(H, k, stride);
  const size_t OW = ops_detail::conv_out_dim(W, k, stride);
  const size_t ocols = OD * OH * OW, krows = Cin * size_t(k) * k * k;

  Array<T> col;
  ops_detail::im2col3d(x.value(), k, stride, col);
  Array<T> out({Cout, OD, OH, OW});
  {
    CMapRM<T> wm(w.value().data.data(), Cout, krows);
    CMapRM<T> cm(col.data.data(), krows, ocols);
    MapRM<T> om(out.data.data(), Cout, ocols);
    om.noalias() = wm * cm;
    for (size_t c = 0; c < Cout; ++c) om.row(c).array() += b.value()[c];
  }
  return Tensor<T>::make_op(
      std::move(out), {x, w, b},
      [x, w, b, k, stride, Cin, Cout, D, H, W, ocols, krows](auto& self) mutable {
        CMapRM<T> dy(self.grad.data.data(), Cout, ocols);
        if (w.requires_grad() || x.requires_grad()) {
          Array<T> col;
          ops_detail::im2col3d(x.value(), k, stride, col);
          if (w.requires_grad()) {
            MapRM<T> dw(w.grad_ref().data.data(), Cout, krows);
            CMapRM<T> cm(col.data.data(), krows, ocols);
            dw.noalias() += dy * cm.transpose();
          }
          if (x.requires_grad()) {
            Array<T> dcol({krows, ocols});
            MapRM<T> dc(dcol.data.data(), krows, ocols);
            CMapRM<T> wm(w.value().data.data(), Cout, krows);
            dc.noalias() = wm.transpose() * dy;
            ops_detail::col2im3d(dcol, int(Cin), int(D), int(H), int(W), k, stride,
                                 x.grad_ref());
          }
        }
        if (b.requires_grad()) {
          auto& db = b.grad_ref();
          for (size_t c = 0; c < Cout; ++c) {
            T acc = 0;
            const T* row = self.grad.data.data() + c * ocols;
            for (size_t i = 0; i < ocols; ++i) acc += row[i];
            db[c] += acc;
          }
        }
      });
}

// x: [C, spatial...]; per-group mean 0 / variance 1 before the affine.
template <class T>
Tensor<T> groupnorm(Tensor<T> x, int groups, Tensor<T> gamma, Tensor<T> beta,
                    T eps = T(1e-5)) {
  MVFR_CHECK(x.shape().size() >= 1, "groupnorm: input must have a channel axis");
  const size_t C = x.value().dim(0);
  MVFR_CHECK(groups >= 1 && C % size_t(groups) == 0,
             "groupnorm: " << C << " channels not divisible by " << groups << " groups");
  MVFR_CHECK(gamma.value().size() == C && beta.value().size() == C,
             "groupnorm: affine parameters must have " << C << " entries");
  const size_t spatial = x.value().size() / C;
  const size_t cpg = C / size_t(groups);
  const size_t m = cpg * spatial;  // elements per group

  Array<T> out(x.value().shape);
  std::vector<T> mean(groups), invstd(groups);
  for (int g = 0; g < groups; ++g) {
    const T* xs = x.value().data.data() + size_t(g) * m;
    T mu = 0;
    for (size_t i = 0; i < m; ++i) mu += xs[i];
    mu /= T(m);
    T var = 0;
    for (size_t i = 0; i < m; ++i) var += (xs[i] - mu) * (xs[i] - mu);
    var /= T(m);
    const T inv = T(1) / std::sqrt(var + eps);
    mean[g] = mu;
    invstd[g] = inv;
    T* os = out.data.data() + size_t(g) * m;
    for (size_t c = 0; c < cpg; ++c) {
      const T ga = gamma.value()[size_t(g) * cpg + c];
      const T be = beta.value()[size_t(g) * cpg + c];
      for (size_t i = 0; i < spatial; ++i) {
        size_t idx = c * spatial + i;
        os[idx] = (xs[idx] - mu) * inv * ga + be;
      }
    }
  }
  return Tensor<T>::make_op(
      std::move(out), {x, gamma, beta},
      [x, gamma, beta, groups, cpg, spatial, m, mean, invstd](auto& self) mutable {
        for (int g = 0; g < groups; ++g) {
          const T* xs = x.value().data.data() + size_t(g) * m;
          const T* dys = self.grad.data.data() + size_t(g) * m;
          const T mu = mean[g], inv = invstd[g];
          // accumulate the two group sums over dy*gamma and dy*gamma*xhat
          T sum_dyg = 0, sum_dyg_xh = 0;
          for (size_t c = 0; c < cpg; ++c) {
            const T ga = gamma.value()[size_t(g) * cpg + c];
            for (size_t i = 0; i < spatial; ++i) {
              size_t idx = c * spatial + i;
              const T xh = (xs[idx] - mu) * inv;
              const T dyg = dys[idx] * ga;
              sum_dyg += dyg;
              sum_dyg_xh += dyg * xh;
            }
          }
          if (gamma.requires_grad() || beta.requires_grad()) {
            for (size_t c = 0; c < cpg; ++c) {
              T dga = 0, dbe = 0;
              for (size_t i = 0; i < spatial; ++i) {
                size_t idx = c * spatial + i;
                const T xh = (xs[idx] - mu) * inv;
                dga += dys[idx] * xh;
                dbe += dys[idx];
              }
              if (gamma.requires_grad()) gamma.grad_ref()[size_t(g) * cpg + c] += dga;
              if (beta.requires_grad()) beta.grad_ref()[size_t(g) * cpg + c] += dbe;
            }
          }
          if (x.requires_grad()) {
            T* dxs = x.grad_ref().data.data() + size_t(g) * m;
            const T invm = T(1) / T(m);
            for (size_t c = 0; c < cpg; ++c) {
              const T ga = gamma.value()[size_t(g) * cpg + c];
              for (size_t i = 0; i < spatial; ++i) {
                size_t idx = c * spatial + i;
                const T xh = (xs[idx] - mu) * inv;
                dxs[idx] += inv * (dys[idx] * ga - invm * (sum_dyg + xh * sum_dyg_xh));
              }
            }
          }
        }
      });
}

// ---------------------------------------------------------------------------
// cost-space ops

namespace ops_detail {

struct BilinearTaps {
  size_t x0, x1, y0, y1;
  double fx, fy;
};

inline BilinearTaps bilinear_taps(double gx, double gy, size_t Wf, size_t Hf) {
  gx = std::min(std::max(gx, 0.0), double(Wf - 1));
  gy = std::min(std::max(gy, 0.0), double(Hf - 1));
  BilinearTaps t;
  t.x0 = size_t(gx);
  t.y0 = size_t(gy);
  t.x1 = std::min(t.x0 + 1, Wf - 1);
  t.y1 = std::min(t.y0 + 1, Hf - 1);
  t.fx = gx - double(t.x0);
  t.fy = gy - double(t.y0);
  return t;
}

}  // namespace ops_detail

// fm: [c,Hf,Wf]; coords: [B,2] (x,y) in feature-grid units; invalid rows -> 0.
template <class T>
Tensor<T> gather_bilinear(Tensor<T> fm, const Array<double>& coords,
                          const std::vector<uint8_t>& valid) {
  MVFR_CHECK(fm.shape().size() == 3, "gather_bilinear: feature map must be [c,H,W], got "
                                         << shape_str(fm.shape()));
  MVFR_CHECK(coords.rank() == 2 && coords.dim(1) == 2 && coords.dim(0) == valid.size(),
             "gather_bilinear: coords shape " << shape_str(coords.shape)
                                              << " vs valid count " << valid.size());
  const size_t c = fm.value().dim(0), Hf = fm.value().dim(1), Wf = fm.value().dim(2);
  const size_t B = coords.dim(0);
  const size_t plane = Hf * Wf;
  Array<T> out({B, c});

  for (size_t i = 0; i < B; ++i) {
    if (!valid[i]) continue;
    const auto t = ops_detail::bilinear_taps(coords.at(i, 0), coords.at(i, 1), Wf, Hf);
    const T fx = T(t.fx), fy = T(t.fy);
    const T w00 = (1 - fx) * (1 - fy), w10 = fx * (1 - fy), w01 = (1 - fx) * fy,
            w11 = fx * fy;
    const T* base = fm.value().data.data();
    for (size_t ch = 0; ch < c; ++ch) {
      const T* p = base + ch * plane;
      out.at(i, ch) = w00 * p[t.y0 * Wf + t.x0] + w10 * p[t.y0 * Wf + t.x1] +
                      w01 * p[t.y1 * Wf + t.x0] + w11 * p[t.y1 * Wf + t.x1];
    }
  }
  return Tensor<T>::make_op(
      std::move(out), {fm}, [fm, coords, valid, c, Hf, Wf, plane](auto& self) mutable {
        if (!fm.requires_grad()) return;
        auto& g = fm.grad_ref();
        const size_t B = valid.size();
        for (size_t i = 0; i < B; ++i) {
          if (!valid[i]) continue;
          const auto t =
              ops_detail::bilinear_taps(coords.at(i, 0), coords.at(i, 1), Wf, Hf);
          const T fx = T(t.fx), fy = T(t.fy);
          const T w00 = (1 - fx) * (1 - fy), w10 = fx * (1 - fy), w01 = (1 - fx) * fy,
                  w11 = fx * fy;
          for (size_t ch = 0; ch < c; ++ch) {
            const T dy = self.grad.at(i, ch);
            T* p = g.data.data() + ch * plane;
            p[t.y0 * Wf + t.x0] += w00 * dy;
            p[t.y0 * Wf + t.x1] += w10 * dy;
            p[t.y1 * Wf + t.x0] += w01 * dy;
            p[t.y1 * Wf + t.x1] += w11 * dy;
          }
        }
      });
}

// Per-channel variance across views: V = mean(F^2) - mean(F)^2 over the valid
// views of each point. Views enter in ascending view-id order and are reduced
// sequentially, so the result is independent of caller-side permutations once
// re-sorted. Points with fewer than 2 valid views produce zeros.
template <class T>
Tensor<T> variance_views(const std::vector<Tensor<T>>& views, const Array<uint8_t>& valid) {
  MVFR_CHECK(!views.empty(), "variance_views: need at least one view");
  const size_t N = views.size();
  MVFR_CHECK(valid.rank() == 2 && valid.dim(0) == N,
             "variance_views: valid mask shape " << shape_str(valid.shape) << " vs "
                                                 << N << " views");
  const size_t B = views[0].value().dim(0), c = views[0].value().dim(1);
  for (const auto& v : views)
    MVFR_CHECK(v.value().dim(0) == B && v.value().dim(1) == c,
               "variance_views: inconsistent view feature shapes");

  Array<T> out({B, c});
  Array<T> meanv({B, c});
  std::vector<int> counts(B, 0);
  for (size_t i = 0; i < B; ++i) {
    int n = 0;
    for (size_t v = 0; v < N; ++v) n += valid.at(v, i) ? 1 : 0;
    counts[i] = n;
    if (n < 2) continue;
    const T invn = T(1) / T(n);
    int first = -1;
    for (size_t v = 0; v < N; ++v)
      if (valid.at(v, i)) {
        first = int(v);
        break;
      }
    for (size_t ch = 0; ch < c; ++ch) {
      // accumulate shifted by the first valid feature so identical inputs
      // produce an exact zero
      const T shift = views[size_t(first)].value().at(i, ch);
      T s = 0, s2 = 0;
      for (size_t v = 0; v < N; ++v) {
        if (!valid.at(v, i)) continue;
        const T f = views[v].value().at(i, ch) - shift;
        s += f;
        s2 += f * f;
      }
      const T mu = s * invn;
      meanv.at(i, ch) = shift + mu;
      T var = s2 * invn - mu * mu;
      out.at(i, ch) = var > T(0) ? var : T(0);
    }
  }
  std::vector<Tensor<T>> parents = views;
  std::vector<Tensor<T>> held = views;
  return Tensor<T>::make_op(
      std::move(out), std::move(parents),
      [views = std::move(held), valid, meanv, counts, B, c, N](auto& self) mutable {
        for (size_t v = 0; v < N; ++v) {
          if (!views[v].requires_grad()) continue;
          auto& g = views[v].grad_ref();
          for (size_t i = 0; i < B; ++i) {
            if (counts[i] < 2 || !valid.at(v, i)) continue;
            const T invn = T(1) / T(counts[i]);
            for (size_t ch = 0; ch < c; ++ch) {
              const T f = views[v].value().at(i, ch);
              g.at(i, ch) += self.grad.at(i, ch) * T(2) * invn * (f - meanv.at(i, ch));
            }
          }
        }
      });
}

// Mean squared error over the included rows.
template <class T>
Tensor<T> mse(Tensor<T> pred, const Array<T>& target, const std::vector<uint8_t>& include) {
  MVFR_CHECK(pred.value().size() == target.size() && target.size() == include.size(),
             "mse: prediction " << shape_str(pred.shape()) << " vs target "
                                << shape_str(target.shape));
  size_t n = 0;
  T acc = 0;
  for (size_t i = 0; i < include.size(); ++i) {
    if (!include[i]) continue;
    const T d = pred.value()[i] - target[i];
    acc += d * d;
    ++n;
  }
  MVFR_CHECK(n > 0, "mse: no rows included");
  const T invn = T(1) / T(n);
  return Tensor<T>::make_op(Array<T>::from({1}, {acc * invn}), {pred},
                            [pred, target, include, invn](auto& self) mutable {
                              if (!pred.requires_grad()) return;
                              auto& g = pred.grad_ref();
                              for (size_t i = 0; i < include.size(); ++i) {
                                if (!include[i]) continue;
                                g[i] += self.grad[0] * T(2) * invn *
                                        (pred.value()[i] - target[i]);
                              }
                            });
}

// vol: [D,A,B] score columns; dvals: [D]; softmax(tau*s) expectation along D.
// Columns flagged invalid produce 0 and receive no gradient.
template <class T>
Tensor<T> soft_argmax(Tensor<T> vol, const Array<T>& dvals, T tau,
                      const std::vector<uint8_t>& col_valid = {}) {
  MVFR_CHECK(vol.shape().size() == 3, "soft_argmax: volume must be [D,A,B], got "
                                          << shape_str(vol.shape()));
  MVFR_CHECK(tau > T(0), "soft_argmax: temperature must be positive");
  const size_t D = vol.value().dim(0), A = vol.value().dim(1), Bn = vol.value().dim(2);
  MVFR_CHECK(dvals.size() == D, "soft_argmax: dvals length mismatch");
  MVFR_CHECK(col_valid.empty() || col_valid.size() == A * Bn,
             "soft_argmax: validity mask size mismatch");
  const size_t plane = A * Bn;
  Array<T> out({A, Bn});
  for (size_t i = 0; i < plane; ++i) {
    if (!col_valid.empty() && !col_valid[i]) continue;
    const T* col = vol.value().data.data() + i;
    T mx = col[0];
    for (size_t k = 1; k < D; ++k) mx = std::max(mx, col[k * plane]);
    T wsum = 0, dsum = 0;
    for (size_t k = 0; k < D; ++k) {
      const T w = std::exp(tau * (col[k * plane] - mx));
      wsum += w;
      dsum += w * dvals[k];
    }
    out[i] = dsum / wsum;
  }
  return Tensor<T>::make_op(
      std::move(out), {vol}, [vol, dvals, tau, col_valid, D, plane](auto& self) mutable {
        if (!vol.requires_grad()) return;
        auto& g = vol.grad_ref();
        for (size_t i = 0; i < plane; ++i) {
          if (!col_valid.empty() && !col_valid[i]) continue;
          const T dy = self.grad[i];
          if (dy == T(0)) continue;
          const T* col = vol.value().data.data() + i;
          T mx = col[0];
          for (size_t k = 1; k < D; ++k) mx = std::max(mx, col[k * plane]);
          T wsum = 0, dsum = 0;
          for (size_t k = 0; k < D; ++k) {
            const T w = std::exp(tau * (col[k * plane] - mx));
            wsum += w;
            dsum += w * dvals[k];
          }
          const T ed = dsum / wsum;
          for (size_t k = 0; k < D; ++k) {
            const T w = std::exp(tau * (col[k * plane] - mx)) / wsum;
            g.data[k * plane + i] += dy * tau * w * (dvals[k] - ed);
          }
        }
      });
}

}  // namespace mvfr::tc
