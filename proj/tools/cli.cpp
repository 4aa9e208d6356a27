#include "cli.hpp"

#include <algorithm>
#include <fstream>
#include <ostream>
#include <stdexcept>
#include <string>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "cmr/bench.hpp"
#include "experiment.hpp"

namespace cmr::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Flags shared by several subcommands. Values start at the defaults so
// --help can show them; only flags given on the command line override.
struct Common {
  std::string config;
  std::uint64_t seed = 0;
  int epochs = TrainConfig{}.epochs;
  std::string attention = "none";
  double accel = DataSection{}.accel;
  std::string out;
  bool seed_set = false;
  bool epochs_set = false;
  bool attention_set = false;
  bool accel_set = false;
};

void add_config(CLI::App* app, Common& c) {
  app->add_option("--config", c.config, "Experiment JSON (sections data, model, train, metrics, bench)")
      ->check(CLI::ExistingFile);
}

json read_json(const std::string& path) {
  if (path.empty()) {
    return json::object();
  }
  std::ifstream in(path);
  if (!in) {
    throw std::runtime_error(fmt::format("cannot read config {}", path));
  }
  try {
    json j;
    in >> j;
    return j;
  } catch (const json::parse_error& e) {
    throw std::invalid_argument(fmt::format("{}: {}", path, e.what()));
  }
}

json& section(json& j, const char* name) {
  if (!j.is_object()) {
    throw std::invalid_argument("config: top level must be a JSON object");
  }
  if (!j.contains(name)) {
    j[name] = json::object();
  }
  return j[name];
}

json attention_json(const std::string& text) {
  const auto kind = parse_attention(text);
  return {{"kind", attention::kind_name(kind)}, {"settings", attention::kind_to_json(kind)}};
}

std::string banner(const char* what, const fs::path& where) {
  return fmt::format("{}: {}\n", what, where.string());
}

void log_to(std::ostream& err, const std::string& line) {
  err << line << '\n';
  err.flush();
}

int cmd_gen(const Common& c, const json& base, int count, int size, int acs, const std::string& pattern,
            CLI::App* app, std::ostream& out, std::ostream& err) {
  json j = base;
  json& d = section(j, "data");
  if (app->count("--count") > 0) {
    d["count"] = count;
  }
  if (app->count("--size") > 0) {
    d["size"] = size;
    // Keep the model consistent with the generated images.
    section(j, "model")["input_size"] = {size, size};
  }
  if (app->count("--acs") > 0) {
    d["acs"] = acs;
  }
  if (app->count("--pattern") > 0) {
    d["pattern"] = pattern;
  }
  if (c.seed_set) {
    d["seed"] = c.seed;
  }
  if (c.accel_set) {
    d["accel"] = c.accel;
  }
  const auto cfg = ExperimentConfig::from_json(j);
  kspace::DatasetSpec spec = cfg.data.train_spec();
  spec.prefix = "item";
  const fs::path dir = c.out;
  const json manifest = kspace::gen_dataset(spec, dir);
  cfg.save(dir / "experiment.json");
  err << fmt::format("generated {} pairs (effective acceleration {:.4f})\n", spec.count,
                     manifest.value("effective_accel", 0.0));
  out << banner("dataset", dir);
  return 0;
}

// Resolved inputs of commands that run an existing checkpoint.
void save_resolved(const fs::path& path, const std::string& ckpt, const std::string& data_dir, const UNetModel& model,
                   const metrics::MetricsConfig& metrics_cfg) {
  std::ofstream f(path);
  f << json{{"checkpoint", ckpt}, {"data", data_dir}, {"model", model.config().to_json()}, {"metrics", metrics_cfg.to_json()}}
           .dump(2)
    << '\n';
  if (!f) {
    throw std::runtime_error(fmt::format("cannot write {}", path.string()));
  }
}

std::vector<kspace::Pair> load_checked(const fs::path& dir, const UNetConfig& model) {
  auto data = kspace::load_dataset(dir);
  for (const auto& p : data) {
    const Shape& s = p.input.shape();
    if (s.h != model.input_h || s.w != model.input_w) {
      throw std::invalid_argument(fmt::format("{} holds {}x{} images but the model expects {}x{}", dir.string(), s.h,
                                              s.w, model.input_h, model.input_w));
    }
  }
  return data;
}

int cmd_train(const Common& c, const json& base, const std::string& data_dir, const std::string& test_dir,
              std::ostream& out, std::ostream& err) {
  json j = base;
  if (c.seed_set) {
    section(j, "train")["seed"] = c.seed;
  }
  if (c.epochs_set) {
    section(j, "train")["epochs"] = c.epochs;
  }
  if (c.attention_set) {
    section(j, "model")["attention"] = attention_json(c.attention);
  }
  if (c.accel_set) {
    throw std::invalid_argument("--accel has no effect on train; the dataset fixes the acceleration");
  }
  const auto cfg = ExperimentConfig::from_json(j);
  const auto train_set = load_checked(data_dir, cfg.model);
  cfg.train.validate(train_set.size());
  std::vector<kspace::Pair> test_set;
  if (!test_dir.empty()) {
    test_set = load_checked(test_dir, cfg.model);
  }
  const fs::path dir = c.out;
  fs::create_directories(dir);
  cfg.save(dir / "experiment.json");

  auto model = UNetModel::build(cfg.model, RngStream(cfg.train.seed, "init"));
  OptimizerState state;
  const auto result = train(model, train_set, cfg.train, state, test_set, cfg.metrics,
                            [&](const std::string& s) { log_to(err, s); });
  save_training_checkpoint(dir / "checkpoint", model, state);
  {
    std::ofstream f(dir / "loss.csv");
    write_loss_csv(f, result.loss_curve);
  }
  if (!result.evals.empty()) {
    std::ofstream f(dir / "evals.csv");
    f << "epoch,psnr,mse,ssim\n";
    for (const auto& e : result.evals) {
      f << e.epoch << ',' << metrics::fixed6(e.psnr) << ',' << metrics::fixed6(e.mse) << ',' << metrics::fixed6(e.ssim)
        << '\n';
    }
  }
  out << banner("checkpoint", dir / "checkpoint");
  return 0;
}

int cmd_eval(const Common& c, const json& base, const std::string& ckpt, const std::string& data_dir,
             std::ostream& out, std::ostream& err) {
  auto restored = load_training_checkpoint(ckpt);
  // The checkpoint decides the model; the config only contributes metrics.
  const auto cfg = ExperimentConfig::from_json(base);
  const auto data = load_checked(data_dir, restored.model.config());
  const auto r = evaluate(restored.model, data, cfg.metrics);
  const fs::path dir = c.out;
  fs::create_directories(dir);
  save_resolved(dir / "eval.json", ckpt, data_dir, restored.model, cfg.metrics);
  metrics::Report model_report = r.model;
  model_report.method = attention::kind_name(restored.model.config().attention);
  model_report.params_overhead = model_param_count(restored.model).attention_overhead;
  {
    std::ofstream f(dir / "rows.csv");
    metrics::write_rows_csv(f, model_report);
  }
  {
    std::ofstream f(dir / "zero_filled_rows.csv");
    metrics::write_rows_csv(f, r.zero_filled);
  }
  std::ofstream f(dir / "summary.csv");
  metrics::write_summary_csv(f, {model_report, r.zero_filled});
  metrics::write_summary_csv(out, {model_report, r.zero_filled});
  if (model_report.psnr_excluded > 0) {
    err << fmt::format("{} images with zero error left out of the mean PSNR\n", model_report.psnr_excluded);
  }
  return 0;
}

int cmd_bench(const Common& c, const json& base, const std::string& train_dir, const std::string& test_dir,
              const std::vector<std::string>& kinds, std::ostream& out, std::ostream& err) {
  json j = base;
  json& b = section(j, "bench");
  if (c.seed_set) {
    b["seeds"] = {c.seed};
  }
  if (c.epochs_set) {
    section(j, "train")["epochs"] = c.epochs;
  }
  if (c.accel_set) {
    section(j, "data")["accel"] = c.accel;
  }
  if (c.attention_set && !kinds.empty()) {
    throw std::invalid_argument("give either --attention or --kinds");
  }
  if (c.attention_set) {
    b["kinds"] = json::array({attention_json(c.attention)});
  }
  if (!kinds.empty()) {
    b["kinds"] = json::array();
    for (const auto& k : kinds) {
      b["kinds"].push_back(attention_json(k));
    }
  }
  if (!train_dir.empty()) {
    b["train_dir"] = train_dir;
  }
  if (!test_dir.empty()) {
    b["test_dir"] = test_dir;
  }
  const auto cfg = ExperimentConfig::from_json(j);
  if (cfg.bench.train_dir.empty() != cfg.bench.test_dir.empty()) {
    throw std::invalid_argument("bench: give both train_dir and test_dir, or neither");
  }

  const fs::path csv = c.out;
  const fs::path stem = csv.parent_path() / csv.stem();
  if (csv.has_parent_path()) {
    fs::create_directories(csv.parent_path());
  }
  fs::path tr = cfg.bench.train_dir;
  fs::path te = cfg.bench.test_dir;
  if (tr.empty()) {
    tr = stem.string() + "_data/train";
    te = stem.string() + "_data/test";
    err << fmt::format("generating datasets under {}_data\n", stem.string());
    kspace::gen_dataset(cfg.data.train_spec(), tr);
    kspace::gen_dataset(cfg.data.test_spec(), te);
  }
  const auto train_set = load_checked(tr, cfg.model);
  const auto test_set = load_checked(te, cfg.model);
  cfg.save(stem.string() + ".config.json");

  bench::BenchSpec spec;
  spec.kinds = cfg.bench.kinds;
  spec.model = cfg.model;
  spec.train = cfg.train;
  spec.seeds = cfg.bench.seeds;
  spec.metrics = cfg.metrics;
  const auto result = bench::run_bench(spec, train_set, test_set, [&](const std::string& s) { log_to(err, s); });
  {
    std::ofstream f(csv);
    bench::write_bench_csv(f, result.rows);
    if (!f) {
      throw std::runtime_error(fmt::format("cannot write {}", csv.string()));
    }
  }
  {
    std::ofstream f(stem.string() + ".runs.csv");
    bench::write_runs_csv(f, result.runs);
  }
  bench::write_bench_csv(out, result.rows);
  err << fmt::format("zero-filled input: psnr {} mse {} ssim {} ({} ssim)\n", metrics::fixed6(result.zero_filled.psnr),
                     metrics::fixed6(result.zero_filled.mse), metrics::fixed6(result.zero_filled.ssim),
                     cfg.metrics.ssim_mode == metrics::SsimMode::Global ? "global" : "windowed");
  for (const auto& row : result.rows) {
    if (!row.ok) {
      return 1;
    }
  }
  return 0;
}

int cmd_params(const Common& c, const json& base, std::ostream& out) {
  json j = base;
  if (c.attention_set) {
    section(j, "model")["attention"] = attention_json(c.attention);
  }
  const auto cfg = ExperimentConfig::from_json(j);
  const auto count = param_count(cfg.model);
  const std::string name = attention::kind_name(cfg.model.attention);
  out << fmt::format("attention: {}\nsettings: {}\ntotal parameters: {}\nattention overhead: {}\n", name,
                     attention::kind_settings(cfg.model.attention), count.total, count.attention_overhead);
  if (!c.out.empty()) {
    const fs::path dir = c.out;
    fs::create_directories(dir);
    cfg.save(dir / "experiment.json");
    std::ofstream f(dir / "params.json");
    f << json{{"attention", name}, {"total", count.total}, {"attention_overhead", count.attention_overhead}}.dump(2)
      << '\n';
  }
  return 0;
}

int cmd_export(const Common& c, const json& base, const std::string& ckpt, const std::string& data_dir, int limit,
               std::ostream& out) {
  auto restored = load_training_checkpoint(ckpt);
  const auto cfg = ExperimentConfig::from_json(base);
  const auto data = load_checked(data_dir, restored.model.config());
  const fs::path dir = c.out;
  const auto stats = bench::export_error_maps(restored.model, data, dir, limit);
  save_resolved(dir / "export.json", ckpt, data_dir, restored.model, cfg.metrics);
  std::ofstream f(dir / "error_means.csv");
  f << "id,model_mae,zero_filled_mae\n";
  out << "id,model_mae,zero_filled_mae\n";
  for (std::size_t i = 0; i < stats.model.size(); ++i) {
    const std::string line =
        fmt::format("{},{},{}\n", i, metrics::fixed6(stats.model[i]), metrics::fixed6(stats.zero_filled[i]));
    f << line;
    out << line;
  }
  return 0;
}

} // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Undersampled MRI reconstruction lab: phantoms, U-Net training with attention, metrics and "
               "benchmarks"};
  app.require_subcommand(1);
  app.option_defaults()->always_capture_default();

  Common c;
  const DataSection data_defaults;

  auto* gen = app.add_subcommand("gen", "Generate a phantom dataset of (zero-filled input, target) pairs");
  int count = data_defaults.count;
  int size = data_defaults.size;
  int acs = data_defaults.acs;
  std::string pattern = kspace::pattern_name(data_defaults.pattern);
  add_config(gen, c);
  gen->add_option("--count", count, "Number of pairs");
  gen->add_option("--size", size, "Image side (power of two)");
  gen->add_option("--acs", acs, "Central fully sampled lines");
  gen->add_option("--pattern", pattern, "Line pattern")->check(CLI::IsMember({"equispaced", "random"}));
  auto* gen_seed = gen->add_option("--seed", c.seed, "Dataset seed");
  auto* gen_accel = gen->add_option("--accel", c.accel, "Acceleration factor");
  gen->add_option("--out", c.out, "Output directory")->required();

  auto* tr = app.add_subcommand("train", "Train one model and save a checkpoint");
  std::string data_dir;
  std::string test_dir;
  add_config(tr, c);
  tr->add_option("--data", data_dir, "Training dataset directory")->required()->check(CLI::ExistingDirectory);
  tr->add_option("--test", test_dir, "Held-out dataset for periodic evaluation")->check(CLI::ExistingDirectory);
  auto* tr_seed = tr->add_option("--seed", c.seed, "Init, shuffle and dropout seed");
  auto* tr_epochs = tr->add_option("--epochs", c.epochs, "Training epochs");
  auto* tr_att = tr->add_option("--attention", c.attention, "Attention kind name or {\"kind\", \"settings\"} JSON");
  auto* tr_accel = tr->add_option("--accel", c.accel, "Rejected: the dataset fixes the acceleration");
  tr->add_option("--out", c.out, "Output directory")->required();

  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset");
  std::string ckpt;
  add_config(ev, c);
  ev->add_option("--checkpoint", ckpt, "Checkpoint directory")->required()->check(CLI::ExistingDirectory);
  ev->add_option("--data", data_dir, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  ev->add_option("--out", c.out, "Output directory")->required();

  auto* be = app.add_subcommand("bench", "Train and rank every attention kind over several seeds");
  std::string train_dir;
  std::vector<std::string> kinds;
  add_config(be, c);
  be->add_option("--train", train_dir, "Training dataset (generated from the data section when absent)")
      ->check(CLI::ExistingDirectory);
  be->add_option("--test", test_dir, "Test dataset")->check(CLI::ExistingDirectory);
  be->add_option("--kinds", kinds, "Attention kinds to compare; none is always added")
      ->delimiter(',')
      ->default_str("cmratt");
  auto* be_seed = be->add_option("--seed", c.seed, "Run a single seed instead of the bench seeds");
  auto* be_epochs = be->add_option("--epochs", c.epochs, "Training epochs");
  auto* be_att = be->add_option("--attention", c.attention, "Compare this one kind against none");
  auto* be_accel = be->add_option("--accel", c.accel, "Acceleration when generating data");
  be->add_option("--out", c.out, "Ranked CSV path")->required();

  auto* pa = app.add_subcommand("params", "Count model parameters and attention overhead");
  add_config(pa, c);
  auto* pa_att = pa->add_option("--attention", c.attention, "Attention kind name or JSON");
  pa->add_option("--out", c.out, "Optional directory for params.json");

  auto* ex = app.add_subcommand("export-maps", "Write prediction, target and normalized error PGM images");
  int limit = 0;
  add_config(ex, c);
  ex->add_option("--checkpoint", ckpt, "Checkpoint directory")->required()->check(CLI::ExistingDirectory);
  ex->add_option("--data", data_dir, "Dataset directory")->required()->check(CLI::ExistingDirectory);
  ex->add_option("--limit", limit, "At most this many images (0: all)");
  ex->add_option("--out", c.out, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? 0 : 2;
  }

  // Only one subcommand parses, so the others report zero counts.
  const auto given = [](std::initializer_list<CLI::Option*> opts) {
    return std::any_of(opts.begin(), opts.end(), [](CLI::Option* o) { return o->count() > 0; });
  };
  c.seed_set = given({gen_seed, tr_seed, be_seed});
  c.epochs_set = given({tr_epochs, be_epochs});
  c.attention_set = given({tr_att, be_att, pa_att});
  c.accel_set = given({gen_accel, tr_accel, be_accel});

  try {
    const json base = read_json(c.config);
    if (gen->parsed()) {
      return cmd_gen(c, base, count, size, acs, pattern, gen, out, err);
    }
    if (tr->parsed()) {
      return cmd_train(c, base, data_dir, test_dir, out, err);
    }
    if (ev->parsed()) {
      return cmd_eval(c, base, ckpt, data_dir, out, err);
    }
    if (be->parsed()) {
      return cmd_bench(c, base, train_dir, test_dir, kinds, out, err);
    }
    if (pa->parsed()) {
      return cmd_params(c, base, out);
    }
    return cmd_export(c, base, ckpt, data_dir, limit, out);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
}

} // namespace cmr::cli
