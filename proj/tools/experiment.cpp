#include "experiment.hpp"

#include <fstream>
#include <stdexcept>

#include <fmt/format.h>

#include "cmr/strict_json.hpp"

namespace cmr::cli {

using nlohmann::json;

kspace::DatasetSpec DataSection::train_spec() const {
  kspace::DatasetSpec s;
  s.count = count;
  s.size = size;
  s.accel = accel;
  s.acs_lines = acs;
  s.pattern = pattern;
  s.seed = seed;
  s.prefix = "train";
  return s;
}

kspace::DatasetSpec DataSection::test_spec() const {
  kspace::DatasetSpec s = train_spec();
  s.count = test_count;
  s.seed = test_seed;
  s.prefix = "test";
  return s;
}

UNetConfig ExperimentConfig::default_model() {
  UNetConfig m;
  m.base_channels = 8;
  m.depth = 3;
  m.input_h = 64;
  m.input_w = 64;
  return m;
}

void ExperimentConfig::validate() const {
  if (data.count < 1 || data.test_count < 1) {
    throw std::invalid_argument("data: count and test_count must be positive");
  }
  if (data.accel < 1.0) {
    throw std::invalid_argument(fmt::format("data: accel must be >= 1 (got {})", data.accel));
  }
  if (data.acs < 0 || data.acs >= data.size) {
    throw std::invalid_argument(fmt::format("data: acs must lie in [0, size) (got {})", data.acs));
  }
  if (model.input_h != data.size || model.input_w != data.size) {
    throw std::invalid_argument(fmt::format("model input {}x{} does not match data size {}", model.input_h,
                                            model.input_w, data.size));
  }
  model.validate();
  train.validate();
  metrics.validate();
  if (bench.seeds.empty()) {
    throw std::invalid_argument("bench: seeds must not be empty");
  }
}

json ExperimentConfig::to_json() const {
  json kinds = json::array();
  for (const auto& k : bench.kinds) {
    kinds.push_back({{"kind", attention::kind_name(k)}, {"settings", attention::kind_to_json(k)}});
  }
  return json{{"data",
               {{"count", data.count},
                {"test_count", data.test_count},
                {"size", data.size},
                {"accel", data.accel},
                {"acs", data.acs},
                {"pattern", kspace::pattern_name(data.pattern)},
                {"seed", data.seed},
                {"test_seed", data.test_seed}}},
              {"model", model.to_json()},
              {"train", train.to_json()},
              {"metrics", metrics.to_json()},
              {"bench",
               {{"kinds", kinds}, {"seeds", bench.seeds}, {"train_dir", bench.train_dir}, {"test_dir", bench.test_dir}}}};
}

namespace {

attention::AttentionKind kind_from_json(const json& j) {
  if (j.is_string()) {
    return attention::Registry::global().make(j.get<std::string>());
  }
  StrictObject o("attention", j, {"kind", "settings"});
  return attention::Registry::global().make(o.require<std::string>("kind"),
                                            o.has("settings") ? o.raw("settings") : json::object());
}

} // namespace

ExperimentConfig ExperimentConfig::from_json(const json& j) {
  StrictObject root("config", j, {"data", "model", "train", "metrics", "bench"});
  ExperimentConfig c;
  if (root.has("data")) {
    StrictObject d("data", root.raw("data"), {"count", "test_count", "size", "accel", "acs", "pattern", "seed", "test_seed"});
    c.data.count = d.get("count", c.data.count);
    c.data.test_count = d.get("test_count", c.data.test_count);
    c.data.size = d.get("size", c.data.size);
    c.data.accel = d.get("accel", c.data.accel);
    c.data.acs = d.get("acs", c.data.acs);
    c.data.pattern = kspace::parse_pattern(d.get<std::string>("pattern", kspace::pattern_name(c.data.pattern)));
    c.data.seed = d.get("seed", c.data.seed);
    c.data.test_seed = d.get("test_seed", c.data.test_seed);
  }
  // Overlay onto the desk defaults so a partial model section works.
  json model = default_model().to_json();
  model["input_size"] = {c.data.size, c.data.size};
  if (root.has("model")) {
    const json& m = root.raw("model");
    if (!m.is_object()) {
      throw std::invalid_argument("model: settings must be a JSON object");
    }
    for (const auto& [k, v] : m.items()) {
      model[k] = v;
    }
  }
  c.model = UNetConfig::from_json(model);
  if (root.has("train")) {
    c.train = TrainConfig::from_json(root.raw("train"));
  }
  if (root.has("metrics")) {
    c.metrics = metrics::MetricsConfig::from_json(root.raw("metrics"));
  }
  if (root.has("bench")) {
    StrictObject b("bench", root.raw("bench"), {"kinds", "seeds", "train_dir", "test_dir"});
    if (b.has("kinds")) {
      const json& ks = b.raw("kinds");
      if (!ks.is_array()) {
        throw std::invalid_argument("bench: kinds must be an array");
      }
      c.bench.kinds.clear();
      for (const auto& k : ks) {
        c.bench.kinds.push_back(kind_from_json(k));
      }
    }
    c.bench.seeds = b.get("seeds", c.bench.seeds);
    c.bench.train_dir = b.get("train_dir", c.bench.train_dir);
    c.bench.test_dir = b.get("test_dir", c.bench.test_dir);
  }
  c.validate();
  return c;
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw std::runtime_error(fmt::format("cannot read config {}", path.string()));
  }
  json j;
  try {
    in >> j;
  } catch (const json::parse_error& e) {
    throw std::invalid_argument(fmt::format("{}: {}", path.string(), e.what()));
  }
  return from_json(j);
}

void ExperimentConfig::save(const std::filesystem::path& path) const {
  if (path.has_parent_path()) {
    std::filesystem::create_directories(path.parent_path());
  }
  std::ofstream out(path);
  out << to_json().dump(2) << '\n';
  if (!out) {
    throw std::runtime_error(fmt::format("cannot write {}", path.string()));
  }
}

attention::AttentionKind parse_attention(const std::string& text) {
  if (!text.empty() && text.front() == '{') {
    json j;
    try {
      j = json::parse(text);
    } catch (const json::parse_error& e) {
      throw std::invalid_argument(fmt::format("--attention: {}", e.what()));
    }
    return kind_from_json(j);
  }
  return attention::Registry::global().make(text);
}

} // namespace cmr::cli
