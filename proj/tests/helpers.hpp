#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "cmr/rng.hpp"
#include "cmr/tensor.hpp"

namespace cmr::testing {

inline Tensor random_tensor(Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  RngStream rng(seed, "test");
  std::vector<double> v(shape.numel());
  for (auto& x : v) {
    x = rng.uniform(lo, hi);
  }
  return Tensor(shape, std::move(v));
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    m = std::max(m, std::abs(a[i] - b[i]));
  }
  return m;
}

inline double inner(const Tensor& a, const Tensor& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    s += a[i] * b[i];
  }
  return s;
}

inline bool all_finite(const Tensor& t) {
  for (double v : t.data()) {
    if (!std::isfinite(v)) {
      return false;
    }
  }
  return true;
}

} // namespace cmr::testing
