#include "cmr/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>
#include <stdexcept>

#include <fmt/format.h>

#include "cmr/ops.hpp"
#include "cmr/strict_json.hpp"

namespace cmr {

using nlohmann::json;

void TrainConfig::validate() const {
  std::vector<std::string> bad;
  if (!(learning_rate >= 0.0)) {
    bad.push_back(fmt::format("learning_rate must be >= 0 (got {})", learning_rate));
  }
  if (batch_size < 1) {
    bad.push_back(fmt::format("batch_size must be positive (got {})", batch_size));
  }
  if (epochs < 1) {
    bad.push_back(fmt::format("epochs must be positive (got {})", epochs));
  }
  if (!(weight_decay >= 0.0)) {
    bad.push_back(fmt::format("weight_decay must be >= 0 (got {})", weight_decay));
  }
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) || !(adam_beta2 >= 0.0 && adam_beta2 < 1.0)) {
    bad.push_back(fmt::format("adam betas must be in [0, 1) (got {}, {})", adam_beta1, adam_beta2));
  }
  if (!(adam_eps > 0.0)) {
    bad.push_back(fmt::format("adam_eps must be positive (got {})", adam_eps));
  }
  if (eval_every < 0) {
    bad.push_back(fmt::format("eval_every must be >= 0 (got {})", eval_every));
  }
  if (!bad.empty()) {
    std::string msg = "invalid TrainConfig:";
    for (const auto& b : bad) {
      msg += " " + b + ";";
    }
    msg.pop_back();
    throw std::invalid_argument(msg);
  }
}

void TrainConfig::validate(std::size_t dataset_size) const {
  validate();
  if (dataset_size == 0) {
    throw std::invalid_argument("training set is empty");
  }
  if (static_cast<std::size_t>(batch_size) > dataset_size) {
    throw std::invalid_argument(
        fmt::format("batch_size {} exceeds the training set size {}", batch_size, dataset_size));
  }
}

json TrainConfig::to_json() const {
  return json{{"learning_rate", learning_rate}, {"batch_size", batch_size}, {"epochs", epochs},
              {"weight_decay", weight_decay},   {"adam_beta1", adam_beta1}, {"adam_beta2", adam_beta2},
              {"adam_eps", adam_eps},           {"seed", seed},             {"eval_every", eval_every}};
}

TrainConfig TrainConfig::from_json(const json& j) {
  StrictObject o("train", j,
                 {"learning_rate", "batch_size", "epochs", "weight_decay", "adam_beta1", "adam_beta2", "adam_eps",
                  "seed", "eval_every"});
  TrainConfig c;
  c.learning_rate = o.get("learning_rate", c.learning_rate);
  c.batch_size = o.get("batch_size", c.batch_size);
  c.epochs = o.get("epochs", c.epochs);
  c.weight_decay = o.get("weight_decay", c.weight_decay);
  c.adam_beta1 = o.get("adam_beta1", c.adam_beta1);
  c.adam_beta2 = o.get("adam_beta2", c.adam_beta2);
  c.adam_eps = o.get("adam_eps", c.adam_eps);
  c.seed = o.get("seed", c.seed);
  c.eval_every = o.get("eval_every", c.eval_every);
  c.validate();
  return c;
}

OptimizerState OptimizerState::fresh(std::span<const Tensor> params) {
  OptimizerState s;
  for (const auto& p : params) {
    s.m.push_back(Tensor::zeros(p.shape()));
    s.v.push_back(Tensor::zeros(p.shape()));
  }
  return s;
}

void adamw_step(std::vector<Tensor>& params, std::span<const Tensor> grads, OptimizerState& state,
                const TrainConfig& cfg, std::span<const std::string> names) {
  if (grads.size() != params.size() || state.m.size() != params.size() || state.v.size() != params.size()) {
    throw std::invalid_argument(fmt::format("adamw_step: {} parameters, {} gradients, {} moments", params.size(),
                                            grads.size(), state.m.size()));
  }
  auto label = [&](std::size_t i) { return i < names.size() ? names[i] : fmt::format("#{}", i); };
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (grads[i].shape() != params[i].shape() || state.m[i].shape() != params[i].shape()) {
      throw std::invalid_argument(fmt::format("adamw_step: shape mismatch for parameter {}", label(i)));
    }
    for (double g : grads[i].data()) {
      if (!std::isfinite(g)) {
        throw std::runtime_error(fmt::format("non-finite gradient for parameter {}", label(i)));
      }
    }
  }
  const std::int64_t t = state.step + 1;
  const double b1 = cfg.adam_beta1;
  const double b2 = cfg.adam_beta2;
  const double bc1 = 1.0 - std::pow(b1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(b2, static_cast<double>(t));
  const double decay = 1.0 - cfg.learning_rate * cfg.weight_decay;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto g = grads[i].data();
    std::vector<double> p(params[i].data().begin(), params[i].data().end());
    std::vector<double> m(state.m[i].data().begin(), state.m[i].data().end());
    std::vector<double> v(state.v[i].data().begin(), state.v[i].data().end());
    for (std::size_t k = 0; k < p.size(); ++k) {
      m[k] = b1 * m[k] + (1.0 - b1) * g[k];
      v[k] = b2 * v[k] + (1.0 - b2) * g[k] * g[k];
      const double mhat = m[k] / bc1;
      const double vhat = v[k] / bc2;
      p[k] = p[k] * decay;
      p[k] -= cfg.learning_rate * mhat / (std::sqrt(vhat) + cfg.adam_eps);
    }
    const Shape s = params[i].shape();
    params[i] = Tensor(s, std::move(p));
    state.m[i] = Tensor(s, std::move(m));
    state.v[i] = Tensor(s, std::move(v));
  }
  state.step = t;
}

Tensor stack(std::span<const Tensor> items) {
  if (items.empty()) {
    throw std::invalid_argument("stack of zero tensors");
  }
  Shape s = items[0].shape();
  std::vector<double> v;
  v.reserve(s.numel() * items.size());
  for (const auto& t : items) {
    if (t.shape().c != s.c || t.shape().h != s.h || t.shape().w != s.w) {
      throw std::invalid_argument(fmt::format("stack: shape {} does not match {}", t.shape().str(), s.str()));
    }
    v.insert(v.end(), t.data().begin(), t.data().end());
  }
  s.n = static_cast<int>(v.size() / (static_cast<std::size_t>(s.c) * s.h * s.w));
  return Tensor(s, std::move(v));
}

double train_step(UNetModel& model, const Tensor& input, const Tensor& target, OptimizerState& state,
                  const TrainConfig& cfg) {
  Graph graph;
  std::vector<Tensor> watched;
  watched.reserve(model.params().size());
  for (const auto& p : model.params()) {
    watched.push_back(graph.watch(p));
  }
  RngStream rng = RngStream(cfg.seed, "dropout").child(std::to_string(state.step));
  const Tensor pred = model.forward(input, Mode::Train, rng, watched);
  const Tensor loss = ops::mse_loss(pred, target);
  const double value = loss.item();
  if (std::isnan(value)) {
    throw std::runtime_error(fmt::format("loss is NaN at step {}", state.step));
  }
  const Gradients grads = graph.backward(loss);
  std::vector<Tensor> g;
  g.reserve(watched.size());
  for (const auto& w : watched) {
    g.push_back(grads.of(w));
  }
  std::vector<Tensor> params = model.params();
  std::vector<std::string> names;
  for (const auto& s : model.specs()) {
    names.push_back(s.name);
  }
  adamw_step(params, g, state, cfg, names);
  model.set_params(std::move(params));
  return value;
}

EvalResult evaluate(UNetModel& model, std::span<const kspace::Pair> data, const metrics::MetricsConfig& cfg) {
  if (data.empty()) {
    throw std::invalid_argument("evaluation set is empty");
  }
  std::vector<metrics::Row> rows;
  std::vector<metrics::Row> zf;
  RngStream unused(0, "eval");
  for (std::size_t i = 0; i < data.size(); ++i) {
    const Tensor pred = model.forward(data[i].input, Mode::Eval, unused);
    rows.push_back(metrics::evaluate_pair(std::to_string(i), pred, data[i].target, cfg));
    zf.push_back(metrics::evaluate_pair(std::to_string(i), data[i].input, data[i].target, cfg));
  }
  return {metrics::aggregate(std::move(rows)), metrics::aggregate(std::move(zf), "zero_filled")};
}

TrainResult train(UNetModel& model, std::span<const kspace::Pair> data, const TrainConfig& cfg,
                  OptimizerState& state, std::span<const kspace::Pair> eval_data,
                  const metrics::MetricsConfig& metrics_cfg, const LogFn& log) {
  cfg.validate(data.size());
  if (state.m.size() != model.params().size()) {
    state = OptimizerState::fresh(model.params());
  }
  TrainResult result;
  std::vector<std::size_t> order(data.size());
  const RngStream shuffle_root(cfg.seed, "shuffle");
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    RngStream shuffle = shuffle_root.child(std::to_string(epoch));
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[shuffle.below(i)]);
    }
    double epoch_loss = 0.0;
    int batches = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      std::vector<Tensor> in;
      std::vector<Tensor> tg;
      for (std::size_t k = start; k < end; ++k) {
        in.push_back(data[order[k]].input);
        tg.push_back(data[order[k]].target);
      }
      const double loss = train_step(model, stack(in), stack(tg), state, cfg);
      result.loss_curve.push_back(loss);
      epoch_loss += loss;
      ++batches;
    }
    if (log) {
      log(fmt::format("epoch {}/{} mean loss {:.6g}", epoch + 1, cfg.epochs, epoch_loss / batches));
    }
    if (cfg.eval_every > 0 && !eval_data.empty() && (epoch + 1) % cfg.eval_every == 0) {
      const auto r = evaluate(model, eval_data, metrics_cfg).model;
      result.evals.push_back({epoch + 1, r.psnr, r.mse, r.ssim});
      if (log) {
        log(fmt::format("epoch {} eval psnr {:.4f} mse {:.6f} ssim {:.6f}", epoch + 1, r.psnr, r.mse, r.ssim));
      }
    }
  }
  return result;
}

void write_loss_csv(std::ostream& out, const std::vector<double>& curve) {
  out << "step,loss\n";
  for (std::size_t i = 0; i < curve.size(); ++i) {
    out << i << ',' << fmt::format("{:.17g}", curve[i]) << '\n';
  }
}

void save_training_checkpoint(const std::filesystem::path& dir, const UNetModel& model, const OptimizerState& state) {
  Checkpoint ckpt = snapshot(model);
  ckpt.meta = json{{"step", state.step}};
  for (std::size_t i = 0; i < state.m.size(); ++i) {
    ckpt.tensors.emplace_back("adam/m/" + model.specs()[i].name, state.m[i]);
  }
  for (std::size_t i = 0; i < state.v.size(); ++i) {
    ckpt.tensors.emplace_back("adam/v/" + model.specs()[i].name, state.v[i]);
  }
  save_checkpoint(dir, ckpt);
}

Restored load_training_checkpoint(const std::filesystem::path& dir) {
  const Checkpoint ckpt = load_checkpoint(dir);
  Restored r{restore(ckpt), {}};
  r.state.step = ckpt.meta.value("step", std::int64_t{0});
  for (const auto& spec : r.model.specs()) {
    const Tensor* m = ckpt.find("adam/m/" + spec.name);
    const Tensor* v = ckpt.find("adam/v/" + spec.name);
    if (m == nullptr || v == nullptr) {
      throw std::runtime_error(fmt::format("{}: missing optimizer moments for {}", dir.string(), spec.name));
    }
    r.state.m.push_back(*m);
    r.state.v.push_back(*v);
  }
  return r;
}

} // namespace cmr
