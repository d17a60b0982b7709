#pragma once

#include <cmath>
#include <functional>

#include "mvfr/tc/tensor.hpp"

namespace mvfr::tc {

// Central finite-difference check, 64-bit only. `fn` maps a leaf tensor to a
// scalar tensor (it may close over fixed weights). Returns the max over
// coordinates of |analytic - fd| / max(1, |analytic|).
inline double finite_diff_gradcheck(
    const std::function<Tensor<double>(Tensor<double>)>& fn, const Array<double>& point,
    double h = 1e-5) {
  Tensor<double> x = Tensor<double>::leaf(point, /*requires_grad=*/true, "gradcheck.x");
  Tensor<double> y = fn(x);
  MVFR_CHECK(y.value().size() == 1, "gradcheck: function must be scalar-valued");
  y.backward();
  const Array<double> analytic = x.grad();

  auto eval = [&](const Array<double>& at) {
    Tensor<double> xi = Tensor<double>::leaf(at, false);
    return fn(xi).value()[0];
  };

  double worst = 0.0;
  Array<double> probe = point;
  for (size_t i = 0; i < point.size(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + h;
    const double fp = eval(probe);
    probe[i] = orig - h;
    const double fm = eval(probe);
    probe[i] = orig;
    MVFR_CHECK_NUMERIC(std::isfinite(fp) && std::isfinite(fm),
                       "gradcheck: non-finite evaluation at coordinate " << i);
    const double fd = (fp - fm) / (2.0 * h);
    const double rel = std::abs(analytic[i] - fd) / std::max(1.0, std::abs(analytic[i]));
    worst = std::max(worst, rel);
  }
  return worst;
}

}  // namespace mvfr::tc
