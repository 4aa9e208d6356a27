#include "cmr/attention.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <fmt/core.h>

#include "cmr/ops.hpp"
#include "cmr/strict_json.hpp"

namespace cmr::attention {

namespace {

double sigmoid_scalar(double x) {
  if (x >= 0.0) {
    return 1.0 / (1.0 + std::exp(-x));
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

void require_divisible(int channels, int reduction, const char* who) {
  if (reduction < 1) {
    throw std::invalid_argument(fmt::format("{}: reduction must be >= 1, got {}", who, reduction));
  }
  if (channels % reduction != 0) {
    throw std::invalid_argument(
        fmt::format("{}: reduction {} does not divide channel count {}", who, reduction, channels));
  }
}

// Per-channel centered values a_i = x_i - mean and A = sum a_i^2. The data
// are shifted by their first element before averaging so that a constant
// channel yields exact zeros.
void center_channel(const double* x, std::size_t count, double* a, double& sum_sq) {
  const double shift = x[0];
  double m = 0.0;
  for (std::size_t i = 0; i < count; ++i) {
    m += x[i] - shift;
  }
  m /= static_cast<double>(count);
  sum_sq = 0.0;
  for (std::size_t i = 0; i < count; ++i) {
    a[i] = (x[i] - shift) - m;
    sum_sq += a[i] * a[i];
  }
}

// Energy terms of one neuron. 1/e = u / (4 p) + 1/2 where u is the squared
// deviation from the reference mean and p is reference variance + lambda.
struct EnergyTerms {
  double u;
  double p;
};

EnergyTerms energy_terms(double a, double sum_sq, std::size_t count, const SimamConfig& cfg) {
  const auto n = static_cast<double>(count);
  if (cfg.mode == StatisticsMode::AllInclusiveApprox) {
    return {a * a, sum_sq / n + cfg.lambda};
  }
  // Leaving t out: t - mean_others = n/(n-1) a, and the others' sum of
  // squared deviations is A - n/(n-1) a^2.
  const double k = n / (n - 1.0);
  return {k * k * a * a, sum_sq / (n - 1.0) - n * a * a / ((n - 1.0) * (n - 1.0)) + cfg.lambda};
}

void check_simam(const Tensor& x, const SimamConfig& cfg) {
  if (cfg.lambda < 0.0) {
    throw std::invalid_argument(fmt::format("simam: lambda must be non-negative, got {}", cfg.lambda));
  }
  if (cfg.mode == StatisticsMode::ExactLeaveOneOut && x.shape().plane() < 2) {
    throw std::invalid_argument("simam: leave-one-out statistics need at least two neurons per channel");
  }
}

double guarded_p(double p) {
  if (!(p > 0.0)) {
    throw std::domain_error("simam: zero variance with lambda = 0 makes the energy undefined");
  }
  return p;
}

} // namespace

Tensor simam_energy(const Tensor& x, const SimamConfig& cfg) {
  check_simam(x, cfg);
  const Shape s = x.shape();
  const std::size_t plane = s.plane();
  std::vector<double> out(x.numel());
  std::vector<double> a(plane);
  for (std::size_t k = 0; k < static_cast<std::size_t>(s.n) * s.c; ++k) {
    double sum_sq = 0.0;
    center_channel(x.data().data() + k * plane, plane, a.data(), sum_sq);
    for (std::size_t i = 0; i < plane; ++i) {
      const EnergyTerms t = energy_terms(a[i], sum_sq, plane, cfg);
      const double p = guarded_p(t.p);
      out[k * plane + i] = 4.0 * p / (t.u + 2.0 * p);
    }
  }
  return Tensor(s, std::move(out));
}

Tensor simam_forward(const Tensor& x, const SimamConfig& cfg) {
  check_simam(x, cfg);
  const Shape s = x.shape();
  const std::size_t plane = s.plane();
  const std::size_t groups = static_cast<std::size_t>(s.n) * s.c;
  std::vector<double> out(x.numel());
  auto gates = std::make_shared<std::vector<double>>(x.numel());
  auto centered = std::make_shared<std::vector<double>>(x.numel());
  auto sums = std::make_shared<std::vector<double>>(groups);
  const auto& xv = x.storage();
  for (std::size_t k = 0; k < groups; ++k) {
    double* a = centered->data() + k * plane;
    center_channel(xv.data() + k * plane, plane, a, (*sums)[k]);
    for (std::size_t i = 0; i < plane; ++i) {
      const EnergyTerms t = energy_terms(a[i], (*sums)[k], plane, cfg);
      const double inv_energy = t.u / (4.0 * guarded_p(t.p)) + 0.5;
      const double gate = sigmoid_scalar(inv_energy);
      (*gates)[k * plane + i] = gate;
      out[k * plane + i] = gate * xv[k * plane + i];
    }
  }

  Graph* g = Graph::common({&x});
  if (g == nullptr) {
    return Tensor(s, std::move(out));
  }
  return g->record(
      s, std::move(out),
      [cfg, plane, groups, gates, centered, sums, xs = x.shared_storage(),
       xid = g->id_of(x)](std::span<const double> gout, GradSink& sink) {
        auto gx = sink.grad(xid);
        const auto n = static_cast<double>(plane);
        const bool exact = cfg.mode == StatisticsMode::ExactLeaveOneOut;
        std::vector<double> q(plane);
        std::vector<double> ga(plane);
        for (std::size_t k = 0; k < groups; ++k) {
          const std::size_t base = k * plane;
          const double* a = centered->data() + base;
          const double sum_sq = (*sums)[k];
          // q_i = dL/d(1/e_i); r accumulates sum_i q_i * d(1/e_i)/dp_i.
          double r = 0.0;
          for (std::size_t i = 0; i < plane; ++i) {
            const double gate = (*gates)[base + i];
            q[i] = gout[base + i] * (*xs)[base + i] * gate * (1.0 - gate);
            const EnergyTerms t = energy_terms(a[i], sum_sq, plane, cfg);
            r += q[i] * (-t.u / (4.0 * t.p * t.p));
          }
          double mean_ga = 0.0;
          for (std::size_t i = 0; i < plane; ++i) {
            const EnergyTerms t = energy_terms(a[i], sum_sq, plane, cfg);
            const double d_du = 1.0 / (4.0 * t.p);
            const double d_dp = -t.u / (4.0 * t.p * t.p);
            if (exact) {
              const double kk = n / (n - 1.0);
              const double du_da = 2.0 * kk * kk * a[i];
              const double dp_da = -2.0 * n * a[i] / ((n - 1.0) * (n - 1.0));
              ga[i] = q[i] * (d_du * du_da + d_dp * dp_da) + r / (n - 1.0) * 2.0 * a[i];
            } else {
              ga[i] = q[i] * d_du * 2.0 * a[i] + r * 2.0 * a[i] / n;
            }
            mean_ga += ga[i];
          }
          mean_ga /= n;
          for (std::size_t i = 0; i < plane; ++i) {
            gx[base + i] += gout[base + i] * (*gates)[base + i] + ga[i] - mean_ga;
          }
        }
      });
}

Tensor se_forward(const Tensor& x, const MlpParams& params, int reduction) {
  require_divisible(x.shape().c, reduction, "se");
  const Tensor squeeze = ops::global_avg_pool(x);
  const Tensor hidden = ops::relu(ops::conv2d(squeeze, params.w1, params.b1));
  const Tensor gate = ops::sigmoid(ops::conv2d(hidden, params.w2, params.b2));
  return ops::scale_channels(x, gate);
}

Tensor cbam_forward(const Tensor& x, const CbamParams& params, int reduction, int spatial_kernel) {
  require_divisible(x.shape().c, reduction, "cbam");
  if (spatial_kernel < 1 || spatial_kernel % 2 == 0) {
    throw std::invalid_argument(fmt::format("cbam: spatial kernel {} must be odd", spatial_kernel));
  }
  const MlpParams& m = params.mlp;
  auto mlp = [&m](const Tensor& v) {
    return ops::conv2d(ops::relu(ops::conv2d(v, m.w1, m.b1)), m.w2, m.b2);
  };
  const Tensor channel_gate = ops::sigmoid(ops::add(mlp(ops::global_avg_pool(x)), mlp(ops::global_max_pool(x))));
  const Tensor refined = ops::scale_channels(x, channel_gate);
  const Tensor pooled = ops::concat_channels(ops::channel_mean_map(refined), ops::channel_max_map(refined));
  const Tensor spatial_gate = ops::sigmoid(ops::conv2d(pooled, params.spatial, Tensor(), 1, spatial_kernel / 2));
  return ops::scale_spatial(refined, spatial_gate);
}

Tensor gct_forward(const Tensor& x, double c, double eps) {
  const Shape s = x.shape();
  if (!(c > 0.0)) {
    throw std::invalid_argument(fmt::format("gct: c must be positive, got {}", c));
  }
  if (s.c < 2) {
    throw std::invalid_argument("gct: needs at least two channels");
  }
  const Tensor context = ops::global_avg_pool(x);
  const auto channels = static_cast<std::size_t>(s.c);
  std::vector<double> gate(context.numel());
  std::vector<double> centered(context.numel());
  std::vector<double> stddev(static_cast<std::size_t>(s.n));
  for (int n = 0; n < s.n; ++n) {
    const std::size_t base = static_cast<std::size_t>(n) * channels;
    double sum_sq = 0.0;
    center_channel(context.data().data() + base, channels, centered.data() + base, sum_sq);
    stddev[static_cast<std::size_t>(n)] = std::sqrt(sum_sq / static_cast<double>(channels));
    const double denom = stddev[static_cast<std::size_t>(n)] + eps;
    for (std::size_t k = 0; k < channels; ++k) {
      const double z = centered[base + k] / denom;
      gate[base + k] = std::exp(-z * z / (2.0 * c * c));
    }
  }

  Graph* g = Graph::common({&context});
  Tensor gate_t;
  if (g == nullptr) {
    gate_t = Tensor(context.shape(), std::move(gate));
  } else {
    auto saved_gate = std::make_shared<const std::vector<double>>(gate);
    gate_t = g->record(
        context.shape(), std::move(gate),
        [c, eps, channels, n_batch = s.n, saved_gate, centered = std::move(centered), stddev = std::move(stddev),
         cid = g->id_of(context)](std::span<const double> gout, GradSink& sink) {
          auto gc = sink.grad(cid);
          const auto cn = static_cast<double>(channels);
          std::vector<double> gz(channels);
          for (int n = 0; n < n_batch; ++n) {
            const std::size_t base = static_cast<std::size_t>(n) * channels;
            const double sd = stddev[static_cast<std::size_t>(n)];
            const double denom = sd + eps;
            double mean_gz = 0.0;
            double dot = 0.0;
            for (std::size_t k = 0; k < channels; ++k) {
              const double z = centered[base + k] / denom;
              gz[k] = gout[base + k] * (*saved_gate)[base + k] * (-z / (c * c));
              mean_gz += gz[k];
              dot += gz[k] * centered[base + k];
            }
            mean_gz /= cn;
            for (std::size_t k = 0; k < channels; ++k) {
              double v = (gz[k] - mean_gz) / denom;
              if (sd > 0.0) {
                v -= dot / (denom * denom) * centered[base + k] / (cn * sd);
              }
              gc[base + k] += v;
            }
          }
        });
  }
  return ops::scale_channels(x, gate_t);
}

Tensor l2norm_forward(const Tensor& x, double eps) {
  if (!(eps > 0.0)) {
    throw std::invalid_argument("l2norm: eps must be positive");
  }
  const Shape s = x.shape();
  const std::size_t item = static_cast<std::size_t>(s.c) * s.plane();
  std::vector<double> norms(static_cast<std::size_t>(s.n));
  std::vector<double> out(x.numel());
  for (int n = 0; n < s.n; ++n) {
    const double* p = x.data().data() + n * item;
    double sq = 0.0;
    for (std::size_t i = 0; i < item; ++i) {
      sq += p[i] * p[i];
    }
    const double r = std::sqrt(sq);
    norms[static_cast<std::size_t>(n)] = r;
    for (std::size_t i = 0; i < item; ++i) {
      out[n * item + i] = p[i] / (r + eps);
    }
  }
  Graph* g = Graph::common({&x});
  if (g == nullptr) {
    return Tensor(s, std::move(out));
  }
  return g->record(s, std::move(out),
                   [eps, item, norms = std::move(norms), xs = x.shared_storage(),
                    xid = g->id_of(x)](std::span<const double> gout, GradSink& sink) {
                     auto gx = sink.grad(xid);
                     for (std::size_t n = 0; n < norms.size(); ++n) {
                       const double r = norms[n];
                       const double d = r + eps;
                       const double* xv = xs->data() + n * item;
                       const double* go = gout.data() + n * item;
                       double dot = 0.0;
                       for (std::size_t i = 0; i < item; ++i) {
                         dot += go[i] * xv[i];
                       }
                       const double coef = r > 0.0 ? dot / (d * d * r) : 0.0;
                       for (std::size_t i = 0; i < item; ++i) {
                         gx[n * item + i] += go[i] / d - xv[i] * coef;
                       }
                     }
                   });
}

Tensor hadamard_forward(const Tensor& x, const HadamardParams& params, int reduction) {
  require_divisible(x.shape().c, reduction, "hadamard");
  const Tensor q = ops::sigmoid(ops::conv2d(x, params.wq, params.bq));
  const Tensor k = ops::sigmoid(ops::conv2d(x, params.wk, params.bk));
  const Tensor a = ops::conv2d(ops::mul(q, k), params.wo, params.bo);
  return ops::add(ops::mul(a, x), x);
}

Tensor cmratt_forward(const Tensor& x, const CmrattConfig& cfg, const HadamardParams& params) {
  return hadamard_forward(l2norm_forward(simam_forward(x, cfg.simam), cfg.eps), params, cfg.reduction);
}

// --- modules ----------------------------------------------------------------

namespace {

std::vector<ParamSpec> mlp_specs(const std::string& prefix, int channels, int reduction) {
  const int hidden = channels / reduction;
  auto specs = conv_specs(prefix + ".fc1", channels, hidden, 1);
  auto second = conv_specs(prefix + ".fc2", hidden, channels, 1);
  specs.insert(specs.end(), second.begin(), second.end());
  return specs;
}

MlpParams bind_mlp(std::span<const Tensor> p) { return MlpParams{p[0], p[1], p[2], p[3]}; }

HadamardParams bind_hadamard(std::span<const Tensor> p) { return HadamardParams{p[0], p[1], p[2], p[3], p[4], p[5]}; }

std::vector<ParamSpec> hadamard_specs(int channels, int reduction) {
  const int hidden = channels / reduction;
  std::vector<ParamSpec> specs;
  for (const char* name : {"query", "key"}) {
    auto s = conv_specs(name, channels, hidden, 1);
    specs.insert(specs.end(), s.begin(), s.end());
  }
  auto out = conv_specs("out", hidden, channels, 1);
  specs.insert(specs.end(), out.begin(), out.end());
  return specs;
}

class Identity final : public Module {
public:
  std::vector<ParamSpec> param_specs() const override { return {}; }
  Tensor forward(const Tensor& x, std::span<const Tensor>) const override { return x; }
};

class Simam final : public Module {
public:
  explicit Simam(SimamConfig cfg) : cfg_(cfg) {}
  std::vector<ParamSpec> param_specs() const override { return {}; }
  Tensor forward(const Tensor& x, std::span<const Tensor>) const override { return simam_forward(x, cfg_); }

private:
  SimamConfig cfg_;
};

class Se final : public Module {
public:
  Se(int channels, int reduction) : channels_(channels), reduction_(reduction) {
    require_divisible(channels, reduction, "se");
  }
  std::vector<ParamSpec> param_specs() const override { return mlp_specs("mlp", channels_, reduction_); }
  Tensor forward(const Tensor& x, std::span<const Tensor> p) const override {
    return se_forward(x, bind_mlp(p), reduction_);
  }

private:
  int channels_;
  int reduction_;
};

class Cbam final : public Module {
public:
  Cbam(int channels, CbamKind kind) : channels_(channels), kind_(kind) {
    require_divisible(channels, kind.reduction, "cbam");
    if (kind.spatial_kernel < 1 || kind.spatial_kernel % 2 == 0) {
      throw std::invalid_argument(fmt::format("cbam: spatial kernel {} must be odd", kind.spatial_kernel));
    }
  }
  std::vector<ParamSpec> param_specs() const override {
    auto specs = mlp_specs("mlp", channels_, kind_.reduction);
    auto spatial = conv_specs("spatial", 2, 1, kind_.spatial_kernel, false);
    specs.insert(specs.end(), spatial.begin(), spatial.end());
    return specs;
  }
  Tensor forward(const Tensor& x, std::span<const Tensor> p) const override {
    return cbam_forward(x, CbamParams{bind_mlp(p), p[4]}, kind_.reduction, kind_.spatial_kernel);
  }

private:
  int channels_;
  CbamKind kind_;
};

class Gct final : public Module {
public:
  Gct(int channels, GctKind kind) : kind_(kind) {
    if (channels < 2) {
      throw std::invalid_argument("gct: needs at least two channels");
    }
  }
  std::vector<ParamSpec> param_specs() const override { return {}; }
  Tensor forward(const Tensor& x, std::span<const Tensor>) const override {
    return gct_forward(x, kind_.c, kind_.eps);
  }

private:
  GctKind kind_;
};

class L2Norm final : public Module {
public:
  explicit L2Norm(double eps) : eps_(eps) {}
  std::vector<ParamSpec> param_specs() const override { return {}; }
  Tensor forward(const Tensor& x, std::span<const Tensor>) const override { return l2norm_forward(x, eps_); }

private:
  double eps_;
};

class Hadamard final : public Module {
public:
  Hadamard(int channels, int reduction) : channels_(channels), reduction_(reduction) {
    require_divisible(channels, reduction, "hadamard");
  }
  std::vector<ParamSpec> param_specs() const override { return hadamard_specs(channels_, reduction_); }
  Tensor forward(const Tensor& x, std::span<const Tensor> p) const override {
    return hadamard_forward(x, bind_hadamard(p), reduction_);
  }

private:
  int channels_;
  int reduction_;
};

class Cmratt final : public Module {
public:
  Cmratt(int channels, CmrattConfig cfg) : channels_(channels), cfg_(cfg) {
    require_divisible(channels, cfg.reduction, "cmratt");
    if (cfg.simam.lambda < 0.0) {
      throw std::invalid_argument("cmratt: lambda must be non-negative");
    }
  }
  std::vector<ParamSpec> param_specs() const override { return hadamard_specs(channels_, cfg_.reduction); }
  Tensor forward(const Tensor& x, std::span<const Tensor> p) const override {
    return cmratt_forward(x, cfg_, bind_hadamard(p));
  }

private:
  int channels_;
  CmrattConfig cfg_;
};

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

const char* mode_name(StatisticsMode m) {
  return m == StatisticsMode::ExactLeaveOneOut ? "exact_leave_one_out" : "all_inclusive_approx";
}

StatisticsMode parse_mode(const std::string& s) {
  if (s == "exact_leave_one_out") {
    return StatisticsMode::ExactLeaveOneOut;
  }
  if (s == "all_inclusive_approx") {
    return StatisticsMode::AllInclusiveApprox;
  }
  throw std::invalid_argument(fmt::format("unknown statistics_mode \"{}\"", s));
}

using Settings = StrictObject;

std::string format_number(double v) { return fmt::format("{:g}", v); }

} // namespace

std::string kind_name(const AttentionKind& kind) {
  return std::visit(Overloaded{[](const NoneKind&) { return "none"; }, [](const SimamKind&) { return "simam"; },
                               [](const SeKind&) { return "se"; }, [](const CbamKind&) { return "cbam"; },
                               [](const GctKind&) { return "gct"; }, [](const L2NormKind&) { return "l2norm"; },
                               [](const HadamardKind&) { return "hadamard"; },
                               [](const CmrattKind&) { return "cmratt"; }},
                    kind);
}

std::string kind_settings(const AttentionKind& kind) {
  return std::visit(
      Overloaded{
          [](const NoneKind&) -> std::string { return "none"; },
          [](const SimamKind& k) { return "lambda=" + format_number(k.cfg.lambda); },
          [](const SeKind& k) { return fmt::format("reduction={}", k.reduction); },
          [](const CbamKind& k) { return fmt::format("reduction={}; kernel size={}", k.reduction, k.spatial_kernel); },
          [](const GctKind& k) { return "c=" + format_number(k.c); },
          [](const L2NormKind& k) { return "eps=" + format_number(k.eps); },
          [](const HadamardKind& k) { return fmt::format("reduction={}", k.reduction); },
          [](const CmrattKind& k) {
            return fmt::format("lambda={}; eps={}; reduction={}", format_number(k.cfg.simam.lambda),
                               format_number(k.cfg.eps), k.cfg.reduction);
          }},
      kind);
}

nlohmann::json kind_to_json(const AttentionKind& kind) {
  return std::visit(
      Overloaded{[](const NoneKind&) { return nlohmann::json::object(); },
                 [](const SimamKind& k) {
                   return nlohmann::json{{"lambda", k.cfg.lambda}, {"statistics_mode", mode_name(k.cfg.mode)}};
                 },
                 [](const SeKind& k) { return nlohmann::json{{"reduction", k.reduction}}; },
                 [](const CbamKind& k) {
                   return nlohmann::json{{"reduction", k.reduction}, {"spatial_kernel", k.spatial_kernel}};
                 },
                 [](const GctKind& k) { return nlohmann::json{{"c", k.c}, {"eps", k.eps}}; },
                 [](const L2NormKind& k) { return nlohmann::json{{"eps", k.eps}}; },
                 [](const HadamardKind& k) { return nlohmann::json{{"reduction", k.reduction}}; },
                 [](const CmrattKind& k) {
                   return nlohmann::json{{"lambda", k.cfg.simam.lambda},
                                         {"statistics_mode", mode_name(k.cfg.simam.mode)},
                                         {"eps", k.cfg.eps},
                                         {"reduction", k.cfg.reduction}};
                 }},
      kind);
}

std::unique_ptr<Module> make_module(const AttentionKind& kind, int channels) {
  return std::visit(
      Overloaded{
          [](const NoneKind&) -> std::unique_ptr<Module> { return std::make_unique<Identity>(); },
          [](const SimamKind& k) -> std::unique_ptr<Module> { return std::make_unique<Simam>(k.cfg); },
          [channels](const SeKind& k) -> std::unique_ptr<Module> { return std::make_unique<Se>(channels, k.reduction); },
          [channels](const CbamKind& k) -> std::unique_ptr<Module> { return std::make_unique<Cbam>(channels, k); },
          [channels](const GctKind& k) -> std::unique_ptr<Module> { return std::make_unique<Gct>(channels, k); },
          [](const L2NormKind& k) -> std::unique_ptr<Module> { return std::make_unique<L2Norm>(k.eps); },
          [channels](const HadamardKind& k) -> std::unique_ptr<Module> {
            return std::make_unique<Hadamard>(channels, k.reduction);
          },
          [channels](const CmrattKind& k) -> std::unique_ptr<Module> {
            return std::make_unique<Cmratt>(channels, k.cfg);
          }},
      kind);
}

std::int64_t param_count(const AttentionKind& kind, std::span<const int> channel_schedule) {
  std::int64_t total = 0;
  for (int c : channel_schedule) {
    for (const auto& spec : make_module(kind, c)->param_specs()) {
      total += static_cast<std::int64_t>(spec.shape.numel());
    }
  }
  return total;
}

Registry::Registry() {
  add("none", [](const nlohmann::json& j) -> AttentionKind {
    Settings s("none", j, {});
    return NoneKind{};
  });
  add("simam", [](const nlohmann::json& j) -> AttentionKind {
    Settings s("simam", j, {"lambda", "statistics_mode"});
    SimamKind k;
    k.cfg.lambda = s.get("lambda", k.cfg.lambda);
    k.cfg.mode = parse_mode(s.get<std::string>("statistics_mode", mode_name(k.cfg.mode)));
    return k;
  });
  add("se", [](const nlohmann::json& j) -> AttentionKind {
    Settings s("se", j, {"reduction"});
    return SeKind{s.get("reduction", 16)};
  });
  add("cbam", [](const nlohmann::json& j) -> AttentionKind {
    Settings s("cbam", j, {"reduction", "spatial_kernel"});
    return CbamKind{s.get("reduction", 16), s.get("spatial_kernel", 7)};
  });
  add("gct", [](const nlohmann::json& j) -> AttentionKind {
    Settings s("gct", j, {"c", "eps"});
    return GctKind{s.get("c", 2.0), s.get("eps", kGctEps)};
  });
  add("l2norm", [](const nlohmann::json& j) -> AttentionKind {
    Settings s("l2norm", j, {"eps"});
    return L2NormKind{s.get("eps", 1e-12)};
  });
  add("hadamard", [](const nlohmann::json& j) -> AttentionKind {
    Settings s("hadamard", j, {"reduction"});
    return HadamardKind{s.get("reduction", 4)};
  });
  add("cmratt", [](const nlohmann::json& j) -> AttentionKind {
    Settings s("cmratt", j, {"lambda", "statistics_mode", "eps", "reduction"});
    CmrattKind k;
    k.cfg.simam.lambda = s.get("lambda", k.cfg.simam.lambda);
    k.cfg.simam.mode = parse_mode(s.get<std::string>("statistics_mode", mode_name(k.cfg.simam.mode)));
    k.cfg.eps = s.get("eps", k.cfg.eps);
    k.cfg.reduction = s.get("reduction", k.cfg.reduction);
    return k;
  });
}

Registry& Registry::global() {
  static Registry registry;
  return registry;
}

void Registry::add(const std::string& name, Factory factory) {
  for (auto& [n, f] : entries_) {
    if (n == name) {
      f = std::move(factory);
      return;
    }
  }
  entries_.emplace_back(name, std::move(factory));
}

bool Registry::contains(const std::string& name) const {
  return std::any_of(entries_.begin(), entries_.end(), [&](const auto& e) { return e.first == name; });
}

AttentionKind Registry::make(const std::string& name, const nlohmann::json& settings) const {
  for (const auto& [n, f] : entries_) {
    if (n == name) {
      return f(settings);
    }
  }
  throw std::invalid_argument(fmt::format("unknown attention kind \"{}\"", name));
}

std::vector<std::string> Registry::names() const {
  std::vector<std::string> out;
  for (const auto& e : entries_) {
    out.push_back(e.first);
  }
  return out;
}

} // namespace cmr::attention
