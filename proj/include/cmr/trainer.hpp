#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "cmr/kspace.hpp"
#include "cmr/metrics.hpp"
#include "cmr/tensor.hpp"
#include "cmr/unet.hpp"

namespace cmr {

struct TrainConfig {
  double learning_rate = 1e-3;
  int batch_size = 2;
  int epochs = 30;
  double weight_decay = 0.01;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 0;
  // Evaluate on the held-out set every this many epochs; 0 disables.
  int eval_every = 0;

  // learning_rate and weight_decay may be 0.
  void validate() const;
  void validate(std::size_t dataset_size) const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

struct OptimizerState {
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  std::int64_t step = 0;

  static OptimizerState fresh(std::span<const Tensor> params);
};

// One AdamW update with decoupled decay:
//   p <- p - lr wd p, then p <- p - lr mhat / (sqrt(vhat) + eps).
// `names` label parameters in error messages.
void adamw_step(std::vector<Tensor>& params, std::span<const Tensor> grads, OptimizerState& state,
                const TrainConfig& cfg, std::span<const std::string> names = {});

// Concatenate (1, c, h, w) tensors along n.
Tensor stack(std::span<const Tensor> items);

// Forward, MSE loss, backward and AdamW update on one batch. Dropout draws
// from a stream keyed by (cfg.seed, state.step), so a resumed run repeats
// the uninterrupted trajectory. Returns the loss before the update.
double train_step(UNetModel& model, const Tensor& input, const Tensor& target, OptimizerState& state,
                  const TrainConfig& cfg);

struct EvalResult {
  metrics::Report model;
  // Metrics of the zero-filled input itself.
  metrics::Report zero_filled;
};

EvalResult evaluate(UNetModel& model, std::span<const kspace::Pair> data, const metrics::MetricsConfig& cfg);

struct EvalPoint {
  int epoch = 0;
  double psnr = 0.0;
  double mse = 0.0;
  double ssim = 0.0;
};

struct TrainResult {
  std::vector<double> loss_curve;
  std::vector<EvalPoint> evals;
};

using LogFn = std::function<void(const std::string&)>;

// cfg.epochs x ceil(N / batch) steps; per-epoch shuffle from cfg.seed; the
// last partial batch is kept. Throws on a NaN loss with its step index.
TrainResult train(UNetModel& model, std::span<const kspace::Pair> data, const TrainConfig& cfg,
                  OptimizerState& state, std::span<const kspace::Pair> eval_data = {},
                  const metrics::MetricsConfig& metrics_cfg = {}, const LogFn& log = {});

void write_loss_csv(std::ostream& out, const std::vector<double>& curve);

// Model checkpoint plus "adam/m/<name>", "adam/v/<name>" and the step.
void save_training_checkpoint(const std::filesystem::path& dir, const UNetModel& model, const OptimizerState& state);

struct Restored {
  UNetModel model;
  OptimizerState state;
};

Restored load_training_checkpoint(const std::filesystem::path& dir);

} // namespace cmr
