#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "cmr/attention.hpp"
#include "cmr/ops.hpp"
#include "cmr/params.hpp"
#include "cmr/rng.hpp"
#include "cmr/tensor.hpp"

namespace cmr {

enum class Placement { None, PerConvAndSkip };

struct UNetConfig {
  int base_channels = 32;
  int depth = 4;
  double dropout_p = 0.25;
  attention::AttentionKind attention = attention::NoneKind{};
  Placement placement = Placement::PerConvAndSkip;
  int input_h = 256;
  int input_w = 256;

  // Throws std::invalid_argument naming every violated invariant.
  void validate() const;
  // Channels of encoder level `level` (the bridge is level == depth).
  int channels(int level) const { return base_channels << level; }

  nlohmann::json to_json() const;
  // Unknown keys are rejected; missing keys keep their defaults.
  static UNetConfig from_json(const nlohmann::json& j);
};

std::string placement_name(Placement p);
Placement parse_placement(const std::string& s);

// Channel width of every attention insertion site, in build order.
std::vector<int> attention_sites(const UNetConfig& cfg);

struct ParamCount {
  std::int64_t total = 0;
  std::int64_t attention_overhead = 0;
};

// Counts without allocating a model.
ParamCount param_count(const UNetConfig& cfg);

class UNetModel {
public:
  // Each parameter is drawn from rng.child(name), so the backbone init does
  // not depend on the attention kind.
  static UNetModel build(const UNetConfig& cfg, const RngStream& rng);

  UNetModel(UNetModel&&) noexcept;
  UNetModel& operator=(UNetModel&&) noexcept;
  ~UNetModel();

  const UNetConfig& config() const { return cfg_; }
  const std::vector<ParamSpec>& specs() const { return specs_; }
  const std::vector<Tensor>& params() const { return params_; }
  void set_params(std::vector<Tensor> params);
  // Throws if absent.
  std::size_t index_of(const std::string& name) const;

  // Forward with the model's own parameters.
  Tensor forward(const Tensor& x, Mode mode, RngStream& rng);
  // Forward with externally bound parameters (e.g. watched copies), in
  // specs() order. Train mode updates the batch-norm running statistics.
  Tensor forward(const Tensor& x, Mode mode, RngStream& rng, std::span<const Tensor> params);

  // Batch-norm running statistics as (1, c, 1, 1) tensors named
  // "<layer>.running_mean" / "<layer>.running_var".
  std::vector<std::pair<std::string, Tensor>> buffers() const;
  void set_buffer(const std::string& name, const Tensor& value);

  // Opaque wiring of layers to parameter indices.
  struct Layout;

private:
  UNetModel(UNetConfig cfg);
  UNetConfig cfg_;
  std::vector<ParamSpec> specs_;
  std::vector<Tensor> params_;
  std::unique_ptr<Layout> layout_;
};

ParamCount model_param_count(const UNetModel& model);

// Directory of .ten files plus manifest.json (name -> file) and config.json.
struct Checkpoint {
  nlohmann::json config;
  // Free-form metadata (e.g. optimizer step).
  nlohmann::json meta = nlohmann::json::object();
  std::vector<std::pair<std::string, Tensor>> tensors;

  const Tensor* find(const std::string& name) const;
};

void save_checkpoint(const std::filesystem::path& dir, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& dir);

// Parameters under "param/<name>", buffers under "buffer/<name>".
Checkpoint snapshot(const UNetModel& model);
UNetModel restore(const Checkpoint& ckpt);

} // namespace cmr
