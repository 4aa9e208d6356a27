#pragma once

#include <cstdint>
#include <iosfwd>
#include <limits>
#include <string>
#include <vector>

#include <json.hpp>

#include "cmr/tensor.hpp"

namespace cmr::metrics {

enum class SsimMode { Global, Windowed };

struct MetricsConfig {
  double peakval = 1.0;
  double ssim_c1 = 1e-4; // (0.01 peak)^2
  double ssim_c2 = 9e-4; // (0.03 peak)^2
  SsimMode ssim_mode = SsimMode::Global;
  int window = 7;
  double sigma = 1.5;

  void validate() const;
  nlohmann::json to_json() const;
  // Missing c1/c2 default from peakval; unknown keys are rejected.
  static MetricsConfig from_json(const nlohmann::json& j);
};

// Mean squared difference over every element.
double mse(const Tensor& yhat, const Tensor& y);

// 10 log10(peak^2 / mse); +infinity when mse is 0.
double psnr(const Tensor& yhat, const Tensor& y, const MetricsConfig& cfg = {});
double psnr_from_mse(double mse, double peakval);

// Averaged over (n, c) planes. Global mode evaluates the index once per
// plane with population statistics; windowed mode averages it over valid
// Gaussian-weighted windows.
double ssim(const Tensor& yhat, const Tensor& y, const MetricsConfig& cfg = {});

struct Row {
  std::string id;
  double mse = 0.0;
  double psnr = 0.0;
  double ssim = 0.0;
};

Row evaluate_pair(const std::string& id, const Tensor& yhat, const Tensor& y, const MetricsConfig& cfg);

struct Report {
  std::string method;
  std::int64_t params_overhead = 0;
  std::vector<Row> rows;
  double mse = 0.0;
  // Mean over finite rows; +infinity if none.
  double psnr = 0.0;
  double ssim = 0.0;
  // Rows with infinite PSNR left out of the PSNR mean.
  int psnr_excluded = 0;
};

Report aggregate(std::vector<Row> rows, std::string method = "", std::int64_t params_overhead = 0);

// Six-decimal fixed formatting; infinity prints as "inf".
std::string fixed6(double v);

// id,psnr,mse,ssim
void write_rows_csv(std::ostream& out, const Report& report);
// method,params_overhead,psnr,mse,ssim
void write_summary_csv(std::ostream& out, const std::vector<Report>& reports);

} // namespace cmr::metrics
