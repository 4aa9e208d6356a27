#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "cmr/tensor.hpp"

namespace cmr {

using ScalarFn = std::function<Tensor(const Tensor&)>;
using MultiScalarFn = std::function<Tensor(std::span<const Tensor>)>;

// Compares reverse-mode gradients of scalar-valued `f` at `x` with central
// differences. Returns max |analytic - numeric| / max(1, |analytic|, |numeric|)
// over all elements; NaN if any evaluation produced a NaN.
double grad_check(const ScalarFn& f, const Tensor& x, double step = 1e-6);

// Coordinates to probe: (input index, element index).
struct Probe {
  std::size_t input;
  std::size_t element;
};

// Multi-input variant restricted to the listed coordinates.
double grad_check(const MultiScalarFn& f, std::span<const Tensor> inputs, std::span<const Probe> probes,
                  double step = 1e-6);

} // namespace cmr
