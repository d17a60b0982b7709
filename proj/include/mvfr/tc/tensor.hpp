#pragma once

#include <algorithm>
#include <atomic>
#include <functional>
#include <memory>
#include <string>
#include <unordered_set>
#include <vector>

#include "mvfr/tc/array.hpp"

namespace mvfr::tc {

template <class T>
class Tensor;

namespace detail {

inline std::atomic<int64_t>& tensor_seq() {
  static std::atomic<int64_t> seq{0};
  return seq;
}

template <class T>
struct TensorImpl {
  Array<T> value;
  Array<T> grad;  // allocated lazily during backward / first accumulation
  bool requires_grad = false;
  int64_t seq = 0;
  std::string name;  // set for parameters, used in diagnostics
  std::vector<Tensor<T>> parents;
  // Propagates this->grad into the parents' grads. Cleared after backward.
  std::function<void(TensorImpl&)> backward_fn;

  Array<T>& grad_ref() {
    if (grad.empty() && !value.empty()) grad = Array<T>(value.shape);
    return grad;
  }
};

}  // namespace detail

// Reverse-mode autodiff handle. Ops are free functions (ops.hpp) that record
// a backward closure; Tensor::backward() replays the tape in reverse creation
// order, which fixes the reduction order and keeps gradients bit-deterministic.
template <class T>
class Tensor {
 public:
  using Impl = detail::TensorImpl<T>;

  Tensor() = default;

  static Tensor leaf(Array<T> v, bool requires_grad = false, std::string name = {}) {
    Tensor t;
    t.p_ = std::make_shared<Impl>();
    t.p_->value = std::move(v);
    t.p_->requires_grad = requires_grad;
    t.p_->seq = ++detail::tensor_seq();
    t.p_->name = std::move(name);
    return t;
  }

  static Tensor make_op(Array<T> v, std::vector<Tensor> parents,
                        std::function<void(Impl&)> backward_fn) {
    Tensor t;
    t.p_ = std::make_shared<Impl>();
    t.p_->value = std::move(v);
    for (const auto& p : parents)
      if (p.requires_grad()) t.p_->requires_grad = true;
    t.p_->seq = ++detail::tensor_seq();
    if (t.p_->requires_grad) {
      t.p_->parents = std::move(parents);
      t.p_->backward_fn = std::move(backward_fn);
    }
    return t;
  }

  bool defined() const { return bool(p_); }
  const Array<T>& value() const { return p_->value; }
  Array<T>& mutable_value() { return p_->value; }
  const std::vector<size_t>& shape() const { return p_->value.shape; }
  size_t dim(size_t i) const { return p_->value.shape[i]; }
  bool requires_grad() const { return p_ && p_->requires_grad; }
  const std::string& name() const { return p_->name; }

  bool has_grad() const { return p_ && !p_->grad.empty(); }
  const Array<T>& grad() const {
    MVFR_CHECK(has_grad(), "tensor '" << p_->name << "' has no gradient; run backward first");
    return p_->grad;
  }
  Array<T>& grad_ref() { return p_->grad_ref(); }

  void zero_grad() {
    if (p_ && !p_->grad.empty()) std::fill(p_->grad.data.begin(), p_->grad.data.end(), T(0));
  }

  // Backward from a scalar output. Grads of every requires_grad tensor in the
  // reachable subgraph are populated; parameter leaves accumulate across calls.
  void backward() {
    MVFR_CHECK(p_ && p_->value.size() == 1, "backward() requires a scalar output");
    // collect reachable grad-requiring nodes, holding strong references so
    // intermediates stay alive while the tape is replayed
    std::vector<std::shared_ptr<Impl>> order;
    std::unordered_set<Impl*> seen;
    std::vector<std::shared_ptr<Impl>> stack{p_};
    while (!stack.empty()) {
      std::shared_ptr<Impl> n = stack.back();
      stack.pop_back();
      if (!n->requires_grad || seen.count(n.get())) continue;
      seen.insert(n.get());
      order.push_back(n);
      for (auto& par : n->parents) stack.push_back(par.p_);
    }
    std::sort(order.begin(), order.end(),
              [](const auto& a, const auto& b) { return a->seq > b->seq; });
    for (auto& n : order) n->grad_ref();
    p_->grad_ref()[0] = T(1);
    for (auto& n : order) {
      if (n->backward_fn) n->backward_fn(*n);
      // release the closure and parent links so activations can be freed
      n->backward_fn = nullptr;
      n->parents.clear();
    }
  }

  Impl* impl() const { return p_.get(); }

 private:
  std::shared_ptr<Impl> p_;
};

}  // namespace mvfr::tc
