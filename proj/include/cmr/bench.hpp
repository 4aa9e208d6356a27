#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cmr/attention.hpp"
#include "cmr/kspace.hpp"
#include "cmr/metrics.hpp"
#include "cmr/trainer.hpp"
#include "cmr/unet.hpp"

namespace cmr::bench {

struct BenchSpec {
  // "none" is prepended when missing.
  std::vector<attention::AttentionKind> kinds;
  // Attention field is replaced per kind.
  UNetConfig model;
  // Seed field is replaced per run.
  TrainConfig train;
  std::vector<std::uint64_t> seeds{0, 1, 2};
  metrics::MetricsConfig metrics;
  // Optional second evaluation of the same trained models, e.g. windowed SSIM.
  // Reported alongside; never used for ranking.
  std::optional<metrics::MetricsConfig> secondary;
};

struct RunResult {
  std::string method;
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;
  metrics::Report report;
  std::optional<metrics::Report> secondary;
  std::vector<double> loss_curve;
};

struct BenchRow {
  std::string method;
  std::string parameters;
  std::int64_t overhead = 0;
  bool ok = false;
  int runs_ok = 0;
  // Medians over successful seeds.
  double psnr = 0.0;
  double mse = 0.0;
  double ssim = 0.0;
  // Median secondary SSIM, when a secondary config is given.
  std::optional<double> secondary_ssim;
};

struct BenchResult {
  // Sorted by SSIM descending; failed rows last.
  std::vector<BenchRow> rows;
  std::vector<RunResult> runs;
  // Metrics of the zero-filled test inputs.
  metrics::Report zero_filled;
  std::optional<metrics::Report> zero_filled_secondary;
};

// Kinds with their "none" baseline; throws on duplicate kind names.
std::vector<attention::AttentionKind> resolve_kinds(std::span<const attention::AttentionKind> kinds);

double median(std::vector<double> values);

// Orders rows by SSIM descending (ties by method name), failed rows last.
void sort_rows(std::vector<BenchRow>& rows);

// Build, train and evaluate every kind x seed. A run that throws becomes a
// failed run; the bench continues.
BenchResult run_bench(const BenchSpec& spec, std::span<const kspace::Pair> train_set,
                      std::span<const kspace::Pair> test_set, const LogFn& log = {});

// method,parameters,computational_overhead,psnr,mse,ssim
void write_bench_csv(std::ostream& out, const std::vector<BenchRow>& rows);
// method,seed,status,psnr,mse,ssim,error
void write_runs_csv(std::ostream& out, const std::vector<RunResult>& runs);

// Binary 8-bit PGM; values clamped to [0, 1] and scaled to 255.
void write_pgm(const std::filesystem::path& path, const Tensor& image);

struct ErrorMapStats {
  // Mean |prediction - target| per image, before rescaling.
  std::vector<double> model;
  // Mean |input - target| per image.
  std::vector<double> zero_filled;
};

// Per image i: i_pred.pgm, i_target.pgm, i_input.pgm, i_error.pgm and
// i_input_error.pgm. Error maps are rescaled by their own max (all-zero maps
// stay zero). At most `limit` images when limit > 0.
ErrorMapStats export_error_maps(UNetModel& model, std::span<const kspace::Pair> data,
                                const std::filesystem::path& out_dir, int limit = 0);

// |a - b| / max, zeros when the max is 0.
Tensor error_map(const Tensor& a, const Tensor& b);

} // namespace cmr::bench
