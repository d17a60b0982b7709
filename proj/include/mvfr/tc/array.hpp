#pragma once

#include <cstddef>
#include <numeric>
#include <utility>
#include <vector>

#include "mvfr/common.hpp"

namespace mvfr::tc {

inline size_t numel(const std::vector<size_t>& shape) {
  size_t n = 1;
  for (size_t d : shape) n *= d;
  return n;
}

// Dense row-major n-d array. Instantiated with float for training and double
// for gradient checks.
template <class T>
struct Array {
  std::vector<size_t> shape;
  std::vector<T> data;

  Array() = default;
  explicit Array(std::vector<size_t> s, T fill = T(0))
      : shape(std::move(s)), data(numel(shape), fill) {}

  static Array from(std::vector<size_t> s, std::vector<T> d) {
    MVFR_CHECK(numel(s) == d.size(), "array data length " << d.size()
                                         << " does not match shape " << shape_str(s));
    Array a;
    a.shape = std::move(s);
    a.data = std::move(d);
    return a;
  }

  size_t size() const { return data.size(); }
  size_t rank() const { return shape.size(); }
  size_t dim(size_t i) const { return shape[i]; }
  bool empty() const { return data.empty(); }

  T& operator[](size_t i) { return data[i]; }
  const T& operator[](size_t i) const { return data[i]; }

  T& at(size_t i, size_t j) { return data[i * shape[1] + j]; }
  const T& at(size_t i, size_t j) const { return data[i * shape[1] + j]; }
  T& at(size_t i, size_t j, size_t k) {
    return data[(i * shape[1] + j) * shape[2] + k];
  }
  const T& at(size_t i, size_t j, size_t k) const {
    return data[(i * shape[1] + j) * shape[2] + k];
  }
  T& at(size_t i, size_t j, size_t k, size_t l) {
    return data[((i * shape[1] + j) * shape[2] + k) * shape[3] + l];
  }
  const T& at(size_t i, size_t j, size_t k, size_t l) const {
    return data[((i * shape[1] + j) * shape[2] + k) * shape[3] + l];
  }

  template <class U>
  Array<U> cast() const {
    Array<U> out;
    out.shape = shape;
    out.data.resize(data.size());
    for (size_t i = 0; i < data.size(); ++i) out.data[i] = U(data[i]);
    return out;
  }
};

template <class T>
bool same_shape(const Array<T>& a, const Array<T>& b) {
  return a.shape == b.shape;
}

}  // namespace mvfr::tc
