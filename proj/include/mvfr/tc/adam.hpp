#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "mvfr/tc/tensor.hpp"

namespace mvfr::tc {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Standard Adam with bias correction over a fixed parameter list. Updates are
// deterministic given the gradient sequence. A NaN gradient aborts with the
// parameter name rather than silently corrupting the state.
template <class T>
class Adam {
 public:
  Adam() = default;
  Adam(std::vector<Tensor<T>> params, AdamConfig cfg) : cfg_(cfg), params_(std::move(params)) {
    for (const auto& p : params_) {
      m_.emplace_back(p.value().shape);
      v_.emplace_back(p.value().shape);
    }
  }

  void step() {
    ++step_;
    const T b1 = T(cfg_.beta1), b2 = T(cfg_.beta2);
    const T corr1 = T(1) - T(std::pow(cfg_.beta1, double(step_)));
    const T corr2 = T(1) - T(std::pow(cfg_.beta2, double(step_)));
    for (size_t pi = 0; pi < params_.size(); ++pi) {
      auto& p = params_[pi];
      if (!p.has_grad()) continue;
      const auto& g = p.grad();
      auto& val = p.mutable_value();
      auto& m = m_[pi];
      auto& v = v_[pi];
      for (size_t i = 0; i < val.size(); ++i) {
        const T gi = g[i];
        MVFR_CHECK_NUMERIC(std::isfinite(double(gi)),
                           "adam: non-finite gradient in parameter '"
                               << (p.name().empty() ? std::to_string(pi) : p.name())
                               << "' at element " << i);
        m[i] = b1 * m[i] + (T(1) - b1) * gi;
        v[i] = b2 * v[i] + (T(1) - b2) * gi * gi;
        const T mhat = m[i] / corr1;
        const T vhat = v[i] / corr2;
        val[i] -= T(cfg_.lr) * mhat / (std::sqrt(vhat) + T(cfg_.eps));
      }
    }
  }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

  int64_t step_count() const { return step_; }
  const std::vector<Tensor<T>>& params() const { return params_; }
  Array<T>& moment1(size_t i) { return m_[i]; }
  Array<T>& moment2(size_t i) { return v_[i]; }
  void set_step_count(int64_t s) { step_ = s; }
  const AdamConfig& config() const { return cfg_; }

 private:
  AdamConfig cfg_;
  int64_t step_ = 0;
  std::vector<Tensor<T>> params_;
  std::vector<Array<T>> m_, v_;
};

}  // namespace mvfr::tc
