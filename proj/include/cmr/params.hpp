#pragma once

#include <string>
#include <vector>

#include "cmr/rng.hpp"
#include "cmr/tensor.hpp"

namespace cmr {

enum class Init { Kaiming, Zeros, Ones };

// Description of one learnable tensor.
struct ParamSpec {
  std::string name;
  Shape shape;
  Init init = Init::Kaiming;
  // Fan-in used by Kaiming init.
  int fan_in = 1;
};

// Kaiming-normal (std sqrt(2 / fan_in)) or constant fill.
Tensor initialize(const ParamSpec& spec, RngStream& rng);

std::vector<Tensor> initialize_all(const std::vector<ParamSpec>& specs, RngStream& rng);

// Conv weight (out, in, k, k) with its (1, out, 1, 1) bias.
std::vector<ParamSpec> conv_specs(const std::string& prefix, int in_channels, int out_channels, int kernel,
                                  bool bias = true);

} // namespace cmr
