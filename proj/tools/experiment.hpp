#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "cmr/attention.hpp"
#include "cmr/kspace.hpp"
#include "cmr/metrics.hpp"
#include "cmr/trainer.hpp"
#include "cmr/unet.hpp"

namespace cmr::cli {

struct DataSection {
  int count = 200;
  int test_count = 50;
  int size = 64;
  double accel = 4.0;
  int acs = 16;
  kspace::MaskPattern pattern = kspace::MaskPattern::Equispaced;
  std::uint64_t seed = 0;
  std::uint64_t test_seed = 1;

  kspace::DatasetSpec train_spec() const;
  kspace::DatasetSpec test_spec() const;
};

struct BenchSection {
  // Kind names or {"kind", "settings"} objects; "none" is implied.
  std::vector<attention::AttentionKind> kinds{attention::CmrattKind{}};
  std::vector<std::uint64_t> seeds{0, 1, 2};
  // Empty: datasets are generated from the data section.
  std::string train_dir;
  std::string test_dir;
};

// Desk-scale defaults: 64x64 phantoms, base 8, depth 3.
struct ExperimentConfig {
  DataSection data;
  UNetConfig model = default_model();
  TrainConfig train;
  metrics::MetricsConfig metrics;
  BenchSection bench;

  static UNetConfig default_model();

  void validate() const;
  nlohmann::json to_json() const;
  // Missing sections and keys keep their defaults; unknown keys throw.
  // model.input_size follows data.size unless given.
  static ExperimentConfig from_json(const nlohmann::json& j);
  static ExperimentConfig load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;
};

// "se" or '{"kind": "se", "settings": {"reduction": 8}}'.
attention::AttentionKind parse_attention(const std::string& text);

} // namespace cmr::cli
