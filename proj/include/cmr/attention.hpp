#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "cmr/params.hpp"
#include "cmr/tensor.hpp"

// Feature-map recalibration modules. Every forward maps (n, c, h, w) to
// (n, c, h, w) and is differentiable end to end.
namespace cmr::attention {

enum class StatisticsMode {
  // Mean and variance of the other neurons in the channel.
  ExactLeaveOneOut,
  // Mean and population variance of every neuron in the channel.
  AllInclusiveApprox,
};

struct SimamConfig {
  double lambda = 1e-4;
  StatisticsMode mode = StatisticsMode::AllInclusiveApprox;
};

// Minimal per-neuron energy
//   e_t = 4 (var + lambda) / ((t - mean)^2 + 2 var + 2 lambda)
// with channel statistics chosen by cfg.mode. Closed form, O(h*w) per channel.
Tensor simam_energy(const Tensor& x, const SimamConfig& cfg);

// sigmoid(1 / e_t) * x, elementwise. No parameters.
Tensor simam_forward(const Tensor& x, const SimamConfig& cfg);

// Two 1x1 affine layers applied to pooled (n, c, 1, 1) descriptors.
struct MlpParams {
  Tensor w1; // (c/r, c, 1, 1)
  Tensor b1; // (1, c/r, 1, 1)
  Tensor w2; // (c, c/r, 1, 1)
  Tensor b2; // (1, c, 1, 1)
};

Tensor se_forward(const Tensor& x, const MlpParams& params, int reduction);

struct CbamParams {
  MlpParams mlp;
  Tensor spatial; // (1, 2, k, k), no bias
};

Tensor cbam_forward(const Tensor& x, const CbamParams& params, int reduction, int spatial_kernel);

inline constexpr double kGctEps = 1e-5;

// Parameter-free Gaussian channel gate exp(-z^2 / (2 c^2)) on standardized
// channel means.
Tensor gct_forward(const Tensor& x, double c, double eps = kGctEps);

// x / (||x||_2 + eps), norm over (c, h, w) of each batch item.
Tensor l2norm_forward(const Tensor& x, double eps);

struct HadamardParams {
  Tensor wq; // (c/r, c, 1, 1)
  Tensor bq;
  Tensor wk; // (c/r, c, 1, 1)
  Tensor bk;
  Tensor wo; // (c, c/r, 1, 1)
  Tensor bo;
};

// sigmoid(q(x)) * sigmoid(k(x)) projected back to c channels, multiplied by x
// and added to x.
Tensor hadamard_forward(const Tensor& x, const HadamardParams& params, int reduction);

struct CmrattConfig {
  SimamConfig simam;
  double eps = 1e-12;
  int reduction = 4;
};

// hadamard(l2norm(simam(x)))
Tensor cmratt_forward(const Tensor& x, const CmrattConfig& cfg, const HadamardParams& params);

// --- kinds ----------------------------------------------------------------

struct NoneKind {};
struct SimamKind {
  SimamConfig cfg;
};
struct SeKind {
  int reduction = 16;
};
struct CbamKind {
  int reduction = 16;
  int spatial_kernel = 7;
};
struct GctKind {
  double c = 2.0;
  double eps = kGctEps;
};
struct L2NormKind {
  double eps = 1e-12;
};
struct HadamardKind {
  int reduction = 4;
};
struct CmrattKind {
  CmrattConfig cfg;
};

using AttentionKind = std::variant<NoneKind, SimamKind, SeKind, CbamKind, GctKind, L2NormKind, HadamardKind, CmrattKind>;

// Canonical name: "none", "simam", "se", ...
std::string kind_name(const AttentionKind& kind);
// Settings string, e.g. "reduction=16, kernel size=7".
std::string kind_settings(const AttentionKind& kind);
nlohmann::json kind_to_json(const AttentionKind& kind);

// Attention instance at one insertion site of a given channel width.
class Module {
public:
  virtual ~Module() = default;
  virtual std::vector<ParamSpec> param_specs() const = 0;
  // `params` are bound in param_specs() order.
  virtual Tensor forward(const Tensor& x, std::span<const Tensor> params) const = 0;
};

// Throws if the kind's invariants fail at this channel width.
std::unique_ptr<Module> make_module(const AttentionKind& kind, int channels);

// Learnable scalars summed over insertion sites.
std::int64_t param_count(const AttentionKind& kind, std::span<const int> channel_schedule);

// Name -> kind constructor taking that kind's JSON settings object. Unknown
// settings keys are rejected.
class Registry {
public:
  using Factory = std::function<AttentionKind(const nlohmann::json& settings)>;

  static Registry& global();

  void add(const std::string& name, Factory factory);
  bool contains(const std::string& name) const;
  AttentionKind make(const std::string& name, const nlohmann::json& settings = nlohmann::json::object()) const;
  std::vector<std::string> names() const;

private:
  Registry();
  std::vector<std::pair<std::string, Factory>> entries_;
};

} // namespace cmr::attention
