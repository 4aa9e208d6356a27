#include "cmr/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace cmr {

namespace {

Tensor with_element(const Tensor& t, std::size_t i, double value) {
  std::vector<double> data = t.storage();
  data[i] = value;
  return Tensor(t.shape(), std::move(data));
}

} // namespace

double grad_check(const ScalarFn& f, const Tensor& x, double step) {
  std::vector<Probe> probes(x.numel());
  for (std::size_t i = 0; i < probes.size(); ++i) {
    probes[i] = Probe{0, i};
  }
  const std::vector<Tensor> inputs{x};
  return grad_check([&](std::span<const Tensor> in) { return f(in[0]); }, inputs, probes, step);
}

double grad_check(const MultiScalarFn& f, std::span<const Tensor> inputs, std::span<const Probe> probes,
                  double step) {
  if (!(step >= 1e-7 && step <= 1e-4)) {
    throw std::invalid_argument("grad_check: step must lie in [1e-7, 1e-4]");
  }
  constexpr double nan = std::numeric_limits<double>::quiet_NaN();

  Graph graph;
  std::vector<Tensor> watched;
  watched.reserve(inputs.size());
  for (const auto& t : inputs) {
    watched.push_back(graph.watch(t));
  }
  const Tensor loss = f(watched);
  if (std::isnan(loss.item())) {
    return nan;
  }
  const Gradients grads = graph.backward(loss);
  std::vector<Tensor> analytic;
  analytic.reserve(watched.size());
  for (const auto& w : watched) {
    analytic.push_back(grads.of(w));
  }

  std::vector<Tensor> probe_inputs(inputs.begin(), inputs.end());
  double worst = 0.0;
  for (const Probe& p : probes) {
    const Tensor& base = inputs[p.input];
    const double x0 = base[p.element];
    probe_inputs[p.input] = with_element(base, p.element, x0 + step);
    const double up = f(probe_inputs).item();
    probe_inputs[p.input] = with_element(base, p.element, x0 - step);
    const double down = f(probe_inputs).item();
    probe_inputs[p.input] = base;

    const double numeric = (up - down) / (2.0 * step);
    const double exact = analytic[p.input][p.element];
    if (std::isnan(numeric) || std::isnan(exact)) {
      return nan;
    }
    const double denom = std::max({1.0, std::abs(exact), std::abs(numeric)});
    worst = std::max(worst, std::abs(exact - numeric) / denom);
  }
  return worst;
}

} // namespace cmr
