#include "cmr/bench.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <ostream>
#include <stdexcept>

#include <fmt/format.h>

namespace cmr::bench {

namespace fs = std::filesystem;

std::vector<attention::AttentionKind> resolve_kinds(std::span<const attention::AttentionKind> kinds) {
  std::vector<attention::AttentionKind> out;
  const bool has_none = std::any_of(kinds.begin(), kinds.end(), [](const auto& k) {
    return std::holds_alternative<attention::NoneKind>(k);
  });
  if (!has_none) {
    out.emplace_back(attention::NoneKind{});
  }
  for (const auto& k : kinds) {
    const std::string name = attention::kind_name(k);
    for (const auto& seen : out) {
      if (attention::kind_name(seen) == name) {
        throw std::invalid_argument(fmt::format("attention kind \"{}\" listed twice", name));
      }
    }
    out.push_back(k);
  }
  return out;
}

double median(std::vector<double> values) {
  if (values.empty()) {
    throw std::invalid_argument("median of no values");
  }
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 == 1 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

void sort_rows(std::vector<BenchRow>& rows) {
  std::stable_sort(rows.begin(), rows.end(), [](const BenchRow& a, const BenchRow& b) {
    if (a.ok != b.ok) {
      return a.ok;
    }
    if (a.ok && a.ssim != b.ssim) {
      return a.ssim > b.ssim;
    }
    return a.method < b.method;
  });
}

BenchResult run_bench(const BenchSpec& spec, std::span<const kspace::Pair> train_set,
                      std::span<const kspace::Pair> test_set, const LogFn& log) {
  if (spec.seeds.empty()) {
    throw std::invalid_argument("bench needs at least one seed");
  }
  if (test_set.empty()) {
    throw std::invalid_argument("bench test set is empty");
  }
  spec.train.validate(train_set.size());
  const auto kinds = resolve_kinds(spec.kinds);
  BenchResult result;
  {
    std::vector<metrics::Row> zf;
    for (std::size_t i = 0; i < test_set.size(); ++i) {
      zf.push_back(metrics::evaluate_pair(std::to_string(i), test_set[i].input, test_set[i].target, spec.metrics));
    }
    result.zero_filled = metrics::aggregate(std::move(zf), "zero_filled");
    if (spec.secondary) {
      std::vector<metrics::Row> zs;
      for (std::size_t i = 0; i < test_set.size(); ++i) {
        zs.push_back(metrics::evaluate_pair(std::to_string(i), test_set[i].input, test_set[i].target, *spec.secondary));
      }
      result.zero_filled_secondary = metrics::aggregate(std::move(zs), "zero_filled");
    }
  }
  for (const auto& kind : kinds) {
    UNetConfig mc = spec.model;
    mc.attention = kind;
    BenchRow row;
    row.method = attention::kind_name(kind);
    row.parameters = attention::kind_settings(kind);
    std::vector<double> psnr;
    std::vector<double> mse;
    std::vector<double> ssim;
    std::vector<double> ssim2;
    try {
      row.overhead = param_count(mc).attention_overhead;
    } catch (const std::exception& e) {
      for (auto seed : spec.seeds) {
        result.runs.push_back({row.method, seed, false, e.what(), {}, {}});
      }
      result.rows.push_back(row);
      continue;
    }
    for (auto seed : spec.seeds) {
      RunResult run;
      run.method = row.method;
      run.seed = seed;
      try {
        auto model = UNetModel::build(mc, RngStream(seed, "init"));
        TrainConfig tc = spec.train;
        tc.seed = seed;
        OptimizerState state;
        const LogFn prefixed = log ? LogFn([&](const std::string& s) { log(fmt::format("[{} seed {}] {}", row.method, seed, s)); })
                                   : LogFn{};
        run.loss_curve = train(model, train_set, tc, state, test_set, spec.metrics, prefixed).loss_curve;
        run.report = evaluate(model, test_set, spec.metrics).model;
        run.report.method = row.method;
        run.report.params_overhead = row.overhead;
        if (spec.secondary) {
          run.secondary = evaluate(model, test_set, *spec.secondary).model;
          run.secondary->method = row.method;
          ssim2.push_back(run.secondary->ssim);
        }
        run.ok = true;
        psnr.push_back(run.report.psnr);
        mse.push_back(run.report.mse);
        ssim.push_back(run.report.ssim);
        if (log) {
          log(fmt::format("[{} seed {}] test psnr {:.4f} mse {:.6f} ssim {:.6f}", row.method, seed, run.report.psnr,
                          run.report.mse, run.report.ssim));
        }
      } catch (const std::exception& e) {
        run.error = e.what();
        if (log) {
          log(fmt::format("[{} seed {}] failed: {}", row.method, seed, run.error));
        }
      }
      result.runs.push_back(std::move(run));
    }
    row.runs_ok = static_cast<int>(ssim.size());
    if (!ssim.empty()) {
      row.ok = true;
      row.psnr = median(psnr);
      row.mse = median(mse);
      row.ssim = median(ssim);
      if (!ssim2.empty()) {
        row.secondary_ssim = median(ssim2);
      }
    }
    result.rows.push_back(row);
  }
  sort_rows(result.rows);
  return result;
}

namespace {

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) {
    return s;
  }
  std::string q = "\"";
  for (char c : s) {
    q += c == '"' ? std::string("\"\"") : std::string(1, c);
  }
  return q + "\"";
}

} // namespace

void write_bench_csv(std::ostream& out, const std::vector<BenchRow>& rows) {
  out << "method,parameters,computational_overhead,psnr,mse,ssim\n";
  for (const auto& r : rows) {
    out << csv_field(r.method) << ',' << csv_field(r.parameters) << ',' << r.overhead << ',';
    if (r.ok) {
      out << metrics::fixed6(r.psnr) << ',' << metrics::fixed6(r.mse) << ',' << metrics::fixed6(r.ssim) << '\n';
    } else {
      out << "failed,failed,failed\n";
    }
  }
}

void write_runs_csv(std::ostream& out, const std::vector<RunResult>& runs) {
  out << "method,seed,status,psnr,mse,ssim,error\n";
  for (const auto& r : runs) {
    out << csv_field(r.method) << ',' << r.seed << ',' << (r.ok ? "ok" : "failed") << ',';
    if (r.ok) {
      out << metrics::fixed6(r.report.psnr) << ',' << metrics::fixed6(r.report.mse) << ','
          << metrics::fixed6(r.report.ssim) << ",\n";
    } else {
      out << ",,," << csv_field(r.error) << '\n';
    }
  }
}

void write_pgm(const fs::path& path, const Tensor& image) {
  const Shape& s = image.shape();
  if (s.n != 1 || s.c != 1) {
    throw std::invalid_argument(fmt::format("PGM export expects a (1, 1, h, w) image, got {}", s.str()));
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw std::runtime_error(fmt::format("cannot write {}", path.string()));
  }
  out << "P5\n" << s.w << ' ' << s.h << "\n255\n";
  std::string bytes(image.numel(), '\0');
  for (std::size_t i = 0; i < image.numel(); ++i) {
    const double v = std::isfinite(image[i]) ? std::clamp(image[i], 0.0, 1.0) : 0.0;
    bytes[i] = static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0)));
  }
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) {
    throw std::runtime_error(fmt::format("write failed for {}", path.string()));
  }
}

Tensor error_map(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument(fmt::format("shape mismatch: {} vs {}", a.shape().str(), b.shape().str()));
  }
  std::vector<double> e(a.numel());
  double peak = 0.0;
  for (std::size_t i = 0; i < e.size(); ++i) {
    e[i] = std::abs(a[i] - b[i]);
    peak = std::max(peak, e[i]);
  }
  if (peak > 0.0) {
    for (auto& v : e) {
      v /= peak;
    }
  }
  return Tensor(a.shape(), std::move(e));
}

namespace {

double mean_abs_diff(const Tensor& a, const Tensor& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    s += std::abs(a[i] - b[i]);
  }
  return s / static_cast<double>(a.numel());
}

} // namespace

ErrorMapStats export_error_maps(UNetModel& model, std::span<const kspace::Pair> data, const fs::path& out_dir,
                                int limit) {
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) {
    throw std::runtime_error(fmt::format("cannot create {}: {}", out_dir.string(), ec.message()));
  }
  ErrorMapStats stats;
  RngStream unused(0, "export");
  const std::size_t n = limit > 0 ? std::min(data.size(), static_cast<std::size_t>(limit)) : data.size();
  for (std::size_t i = 0; i < n; ++i) {
    const auto& p = data[i];
    const Tensor pred = model.forward(p.input, Mode::Eval, unused);
    write_pgm(out_dir / fmt::format("{}_pred.pgm", i), pred);
    write_pgm(out_dir / fmt::format("{}_target.pgm", i), p.target);
    write_pgm(out_dir / fmt::format("{}_input.pgm", i), p.input);
    write_pgm(out_dir / fmt::format("{}_error.pgm", i), error_map(pred, p.target));
    write_pgm(out_dir / fmt::format("{}_input_error.pgm", i), error_map(p.input, p.target));
    stats.model.push_back(mean_abs_diff(pred, p.target));
    stats.zero_filled.push_back(mean_abs_diff(p.input, p.target));
  }
  return stats;
}

} // namespace cmr::bench
