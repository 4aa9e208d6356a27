#include "cmr/params.hpp"

#include <cmath>

namespace cmr {

Tensor initialize(const ParamSpec& spec, RngStream& rng) {
  switch (spec.init) {
  case Init::Zeros:
    return Tensor::zeros(spec.shape);
  case Init::Ones:
    return Tensor::full(spec.shape, 1.0);
  case Init::Kaiming:
    break;
  }
  const double stddev = std::sqrt(2.0 / static_cast<double>(spec.fan_in));
  std::vector<double> v(spec.shape.numel());
  for (auto& x : v) {
    x = stddev * rng.normal();
  }
  return Tensor(spec.shape, std::move(v));
}

std::vector<Tensor> initialize_all(const std::vector<ParamSpec>& specs, RngStream& rng) {
  std::vector<Tensor> out;
  out.reserve(specs.size());
  for (const auto& s : specs) {
    out.push_back(initialize(s, rng));
  }
  return out;
}

std::vector<ParamSpec> conv_specs(const std::string& prefix, int in_channels, int out_channels, int kernel,
                                  bool bias) {
  std::vector<ParamSpec> specs;
  specs.push_back(
      {prefix + ".weight", Shape{out_channels, in_channels, kernel, kernel}, Init::Kaiming, in_channels * kernel * kernel});
  if (bias) {
    specs.push_back({prefix + ".bias", Shape{1, out_channels, 1, 1}, Init::Zeros, 1});
  }
  return specs;
}

} // namespace cmr
