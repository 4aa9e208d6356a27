#include "cmr/metrics.hpp"

#include <cmath>
#include <ostream>
#include <stdexcept>

#include <fmt/format.h>

#include "cmr/strict_json.hpp"

namespace cmr::metrics {

void MetricsConfig::validate() const {
  if (!(peakval > 0.0)) {
    throw std::invalid_argument(fmt::format("peakval must be positive (got {})", peakval));
  }
  if (!(ssim_c1 > 0.0) || !(ssim_c2 > 0.0)) {
    throw std::invalid_argument(fmt::format("ssim_c1 and ssim_c2 must be positive (got {}, {})", ssim_c1, ssim_c2));
  }
  if (ssim_mode == SsimMode::Windowed && (window < 1 || window % 2 == 0 || !(sigma > 0.0))) {
    throw std::invalid_argument(fmt::format("windowed SSIM needs an odd window and sigma > 0 (got {}, {})", window, sigma));
  }
}

nlohmann::json MetricsConfig::to_json() const {
  return nlohmann::json{{"peakval", peakval},
                        {"ssim_c1", ssim_c1},
                        {"ssim_c2", ssim_c2},
                        {"ssim_mode", ssim_mode == SsimMode::Global ? "global" : "windowed"},
                        {"window", window},
                        {"sigma", sigma}};
}

MetricsConfig MetricsConfig::from_json(const nlohmann::json& j) {
  StrictObject o("metrics", j, {"peakval", "ssim_c1", "ssim_c2", "ssim_mode", "window", "sigma"});
  MetricsConfig cfg;
  cfg.peakval = o.get("peakval", cfg.peakval);
  cfg.ssim_c1 = o.get("ssim_c1", std::pow(0.01 * cfg.peakval, 2));
  cfg.ssim_c2 = o.get("ssim_c2", std::pow(0.03 * cfg.peakval, 2));
  const auto mode = o.get<std::string>("ssim_mode", "global");
  if (mode == "global") {
    cfg.ssim_mode = SsimMode::Global;
  } else if (mode == "windowed") {
    cfg.ssim_mode = SsimMode::Windowed;
  } else {
    throw std::invalid_argument(fmt::format("metrics: unknown ssim_mode \"{}\"", mode));
  }
  cfg.window = o.get("window", cfg.window);
  cfg.sigma = o.get("sigma", cfg.sigma);
  cfg.validate();
  return cfg;
}

namespace {

void check_shapes(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument(fmt::format("shape mismatch: {} vs {}", a.shape().str(), b.shape().str()));
  }
  if (a.numel() == 0) {
    throw std::invalid_argument("metrics of an empty tensor");
  }
}

double ssim_formula(double mx, double my, double vx, double vy, double cov, double c1, double c2) {
  return ((2.0 * mx * my + c1) * (2.0 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
}

double ssim_global_plane(const double* a, const double* b, std::size_t n, const MetricsConfig& cfg) {
  double ma = 0.0;
  double mb = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= static_cast<double>(n);
  mb /= static_cast<double>(n);
  double va = 0.0;
  double vb = 0.0;
  double cov = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double da = a[i] - ma;
    const double db = b[i] - mb;
    va += da * da;
    vb += db * db;
    cov += da * db;
  }
  const auto dn = static_cast<double>(n);
  return ssim_formula(ma, mb, va / dn, vb / dn, cov / dn, cfg.ssim_c1, cfg.ssim_c2);
}

double ssim_windowed_plane(const double* a, const double* b, int h, int w, const MetricsConfig& cfg) {
  const int k = cfg.window;
  if (h < k || w < k) {
    throw std::invalid_argument(fmt::format("windowed SSIM needs images of at least {}x{} (got {}x{})", k, k, h, w));
  }
  std::vector<double> g(static_cast<std::size_t>(k) * k);
  double total = 0.0;
  for (int i = 0; i < k; ++i) {
    for (int j = 0; j < k; ++j) {
      const double di = i - k / 2;
      const double dj = j - k / 2;
      g[static_cast<std::size_t>(i) * k + j] = std::exp(-(di * di + dj * dj) / (2.0 * cfg.sigma * cfg.sigma));
      total += g[static_cast<std::size_t>(i) * k + j];
    }
  }
  for (auto& v : g) {
    v /= total;
  }
  double acc = 0.0;
  int windows = 0;
  for (int r = 0; r + k <= h; ++r) {
    for (int c = 0; c + k <= w; ++c) {
      double ma = 0.0;
      double mb = 0.0;
      for (int i = 0; i < k; ++i) {
        for (int j = 0; j < k; ++j) {
          const double wt = g[static_cast<std::size_t>(i) * k + j];
          const std::size_t p = static_cast<std::size_t>(r + i) * w + (c + j);
          ma += wt * a[p];
          mb += wt * b[p];
        }
      }
      double va = 0.0;
      double vb = 0.0;
      double cov = 0.0;
      for (int i = 0; i < k; ++i) {
        for (int j = 0; j < k; ++j) {
          const double wt = g[static_cast<std::size_t>(i) * k + j];
          const std::size_t p = static_cast<std::size_t>(r + i) * w + (c + j);
          const double da = a[p] - ma;
          const double db = b[p] - mb;
          va += wt * da * da;
          vb += wt * db * db;
          cov += wt * da * db;
        }
      }
      acc += ssim_formula(ma, mb, va, vb, cov, cfg.ssim_c1, cfg.ssim_c2);
      ++windows;
    }
  }
  return acc / windows;
}

} // namespace

double mse(const Tensor& yhat, const Tensor& y) {
  check_shapes(yhat, y);
  double s = 0.0;
  for (std::size_t i = 0; i < y.numel(); ++i) {
    const double d = yhat[i] - y[i];
    s += d * d;
  }
  return s / static_cast<double>(y.numel());
}

double psnr_from_mse(double m, double peakval) {
  if (m == 0.0) {
    return std::numeric_limits<double>::infinity();
  }
  return 10.0 * std::log10(peakval * peakval / m);
}

double psnr(const Tensor& yhat, const Tensor& y, const MetricsConfig& cfg) {
  return psnr_from_mse(mse(yhat, y), cfg.peakval);
}

double ssim(const Tensor& yhat, const Tensor& y, const MetricsConfig& cfg) {
  check_shapes(yhat, y);
  cfg.validate();
  const Shape& s = y.shape();
  const std::size_t plane = s.plane();
  double acc = 0.0;
  const int planes = s.n * s.c;
  for (int p = 0; p < planes; ++p) {
    const double* a = yhat.data().data() + static_cast<std::size_t>(p) * plane;
    const double* b = y.data().data() + static_cast<std::size_t>(p) * plane;
    acc += cfg.ssim_mode == SsimMode::Global ? ssim_global_plane(a, b, plane, cfg)
                                             : ssim_windowed_plane(a, b, s.h, s.w, cfg);
  }
  return acc / planes;
}

Row evaluate_pair(const std::string& id, const Tensor& yhat, const Tensor& y, const MetricsConfig& cfg) {
  Row r;
  r.id = id;
  r.mse = mse(yhat, y);
  r.psnr = psnr_from_mse(r.mse, cfg.peakval);
  r.ssim = ssim(yhat, y, cfg);
  return r;
}

Report aggregate(std::vector<Row> rows, std::string method, std::int64_t params_overhead) {
  if (rows.empty()) {
    throw std::invalid_argument("cannot aggregate an empty set of rows");
  }
  Report rep;
  rep.method = std::move(method);
  rep.params_overhead = params_overhead;
  double psnr_sum = 0.0;
  int finite = 0;
  for (const auto& r : rows) {
    rep.mse += r.mse;
    rep.ssim += r.ssim;
    if (std::isinf(r.psnr)) {
      ++rep.psnr_excluded;
    } else {
      psnr_sum += r.psnr;
      ++finite;
    }
  }
  const auto n = static_cast<double>(rows.size());
  rep.mse /= n;
  rep.ssim /= n;
  rep.psnr = finite > 0 ? psnr_sum / finite : std::numeric_limits<double>::infinity();
  rep.rows = std::move(rows);
  return rep;
}

std::string fixed6(double v) {
  if (std::isinf(v)) {
    return v > 0 ? "inf" : "-inf";
  }
  if (std::isnan(v)) {
    return "nan";
  }
  return fmt::format("{:.6f}", v);
}

void write_rows_csv(std::ostream& out, const Report& report) {
  out << "id,psnr,mse,ssim\n";
  for (const auto& r : report.rows) {
    out << r.id << ',' << fixed6(r.psnr) << ',' << fixed6(r.mse) << ',' << fixed6(r.ssim) << '\n';
  }
}

void write_summary_csv(std::ostream& out, const std::vector<Report>& reports) {
  out << "method,params_overhead,psnr,mse,ssim\n";
  for (const auto& r : reports) {
    out << r.method << ',' << r.params_overhead << ',' << fixed6(r.psnr) << ',' << fixed6(r.mse) << ','
        << fixed6(r.ssim) << '\n';
  }
}

} // namespace cmr::metrics
