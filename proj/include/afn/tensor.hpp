#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "afn/errors.hpp"

namespace afn {

/// Dense row-major tensor. Rank 1 and 2 cover almost everything; fusion core
/// tensors are rank 3. Values are immutable once handed to a Graph.
template <typename T>
struct Tensor {
  std::vector<std::int64_t> shape;
  std::vector<T> v;

  Tensor() = default;
  Tensor(std::vector<std::int64_t> s, std::vector<T> data)
      : shape(std::move(s)), v(std::move(data)) {
    if (numel_of(shape) != static_cast<std::int64_t>(v.size()))
      throw ShapeError("tensor data length " + std::to_string(v.size()) +
                       " does not match shape " + shape_str(shape));
  }

  static std::int64_t numel_of(const std::vector<std::int64_t>& s) {
    std::int64_t n = 1;
    for (auto d : s) {
      if (d <= 0) throw ShapeError("non-positive extent in shape " + shape_str(s));
      n *= d;
    }
    return n;
  }

  static Tensor zeros(std::vector<std::int64_t> s) {
    auto n = numel_of(s);
    return Tensor(std::move(s), std::vector<T>(static_cast<std::size_t>(n), T(0)));
  }

  static Tensor full(std::vector<std::int64_t> s, T value) {
    auto n = numel_of(s);
    return Tensor(std::move(s), std::vector<T>(static_cast<std::size_t>(n), value));
  }

  static Tensor vec(std::vector<T> data) {
    auto n = static_cast<std::int64_t>(data.size());
    return Tensor({n}, std::move(data));
  }

  static Tensor scalar(T value) { return Tensor({1}, {value}); }

  std::int64_t numel() const { return static_cast<std::int64_t>(v.size()); }
  int rank() const { return static_cast<int>(shape.size()); }

  // 2-d views: rank-1 tensors behave as a single row.
  std::int64_t rows() const { return rank() <= 1 ? 1 : shape[0]; }
  std::int64_t cols() const {
    if (rank() == 0) return 0;
    return rank() == 1 ? shape[0] : shape[rank() - 1];
  }

  T& at(std::int64_t r, std::int64_t c) { return v[static_cast<std::size_t>(r * cols() + c)]; }
  T at(std::int64_t r, std::int64_t c) const {
    return v[static_cast<std::size_t>(r * cols() + c)];
  }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  bool all_finite() const {
    for (T x : v)
      if (!std::isfinite(static_cast<double>(x))) return false;
    return true;
  }

  static std::string shape_str(const std::vector<std::int64_t>& s) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
    os << ']';
    return os.str();
  }

  std::string shape_str() const { return shape_str(shape); }

  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> out(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = static_cast<U>(v[i]);
    return Tensor<U>(shape, std::move(out));
  }
};

template <typename T>
inline void check_finite(const Tensor<T>& t, const char* where) {
  if (!t.all_finite())
    throw NumericError(std::string(where) + ": non-finite value in tensor " + t.shape_str());
}

}  // namespace afn
