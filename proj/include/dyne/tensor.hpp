#pragma once

#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <stdexcept>
#include <vector>

namespace dyne::nn {

// Dense row-major tensor. Training code treats these as [rows x cols]
// matrices with rows = shape[0] and cols = remaining dimensions flattened.
template <class T>
struct Tensor {
  std::vector<int> shape;
  std::vector<T> v;

  Tensor() = default;
  Tensor(std::vector<int> s, std::vector<T> values) : shape(std::move(s)), v(std::move(values)) {
    if (numel_of(shape) != static_cast<long>(v.size()))
      throw std::invalid_argument("tensor: shape does not match value count");
  }

  static Tensor zeros(std::vector<int> s) {
    long n = numel_of(s);
    return Tensor(std::move(s), std::vector<T>(static_cast<size_t>(n), T(0)));
  }

  static Tensor full(std::vector<int> s, T value) {
    long n = numel_of(s);
    return Tensor(std::move(s), std::vector<T>(static_cast<size_t>(n), value));
  }

  long numel() const { return static_cast<long>(v.size()); }
  int rows() const { return shape.empty() ? 1 : shape[0]; }
  int cols() const { return shape.empty() ? 1 : static_cast<int>(numel() / rows()); }

  T* data() { return v.data(); }
  const T* data() const { return v.data(); }

  template <class U>
  Tensor<U> cast() const {
    Tensor<U> out;
    out.shape = shape;
    out.v.resize(v.size());
    for (size_t i = 0; i < v.size(); ++i) out.v[i] = static_cast<U>(v[i]);
    return out;
  }

  static long numel_of(const std::vector<int>& s) {
    long n = 1;
    for (int d : s) {
      if (d < 0) throw std::invalid_argument("tensor: negative dimension");
      n *= d;
    }
    return n;
  }
};

}  // namespace dyne::nn
