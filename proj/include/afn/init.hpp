#pragma once

#include <cmath>
#include <cstdint>
#include <string>

#include "afn/rng.hpp"
#include "afn/tensor.hpp"

namespace afn {

// Weight initialization. Every parameter draws from its own stream keyed by
// (seed, parameter name), so adding or reordering parameters elsewhere in a
// model never changes the values another parameter receives.

template <typename T>
Tensor<T> init_uniform_fan_in(std::vector<std::int64_t> shape, std::int64_t fan_in,
                              std::uint64_t seed, const std::string& name) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  Rng rng(key_combine(seed, key_of(name)));
  auto t = Tensor<T>::zeros(std::move(shape));
  for (auto& e : t.v) e = static_cast<T>(rng.uniform(-bound, bound));
  return t;
}

template <typename T>
Tensor<T> init_normal(std::vector<std::int64_t> shape, double sigma, std::uint64_t seed,
                      const std::string& name) {
  Rng rng(key_combine(seed, key_of(name)));
  auto t = Tensor<T>::zeros(std::move(shape));
  for (auto& e : t.v) e = static_cast<T>(rng.normal() * sigma);
  return t;
}

}  // namespace afn
