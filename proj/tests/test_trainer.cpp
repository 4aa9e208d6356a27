#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>

#include "doctest.h"

#include "cmr/trainer.hpp"
#include "helpers.hpp"

using namespace cmr;
namespace fs = std::filesystem;

namespace {

UNetConfig tiny(int size = 16, double dropout = 0.25) {
  UNetConfig cfg;
  cfg.base_channels = 4;
  cfg.depth = 2;
  cfg.dropout_p = dropout;
  cfg.input_h = size;
  cfg.input_w = size;
  return cfg;
}

std::vector<kspace::Pair> make_data(const fs::path& dir, int count, int size, double accel, std::uint64_t seed) {
  kspace::DatasetSpec spec;
  spec.count = count;
  spec.size = size;
  spec.accel = accel;
  spec.acs_lines = size / 8;
  spec.seed = seed;
  kspace::gen_dataset(spec, dir);
  return kspace::load_dataset(dir);
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

bool same_params(const UNetModel& a, const UNetModel& b) {
  for (std::size_t i = 0; i < a.params().size(); ++i) {
    if (a.params()[i].storage() != b.params()[i].storage()) {
      return false;
    }
  }
  return true;
}

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("cmr_trainer_" + name);
  fs::remove_all(dir);
  return dir;
}

} // namespace

TEST_CASE("adamw decay-only update") {
  std::vector<Tensor> p{Tensor({1, 1, 1, 3}, {1.0, -2.0, 0.5})};
  const std::vector<Tensor> g{Tensor::zeros({1, 1, 1, 3})};
  auto state = OptimizerState::fresh(p);
  TrainConfig cfg;
  adamw_step(p, g, state, cfg);
  CHECK(state.step == 1);
  CHECK(p[0][0] == 1.0 * (1 - 1e-5));
  CHECK(p[0][1] == -2.0 * (1 - 1e-5));
  CHECK(p[0][2] == 0.5 * (1 - 1e-5));
}

TEST_CASE("adamw first step moves by about the learning rate") {
  std::vector<Tensor> p{Tensor::scalar(0.7)};
  auto state = OptimizerState::fresh(p);
  TrainConfig cfg;
  adamw_step(p, std::vector<Tensor>{Tensor::scalar(1.0)}, state, cfg);
  // m = 0.1, v = 0.001; bias correction makes both 1.
  const double expected = 0.7 * (1 - 1e-5) - 1e-3 * 1.0 / (1.0 + 1e-8);
  CHECK(std::abs(p[0].item() - expected) < 1e-15);
  CHECK(p[0].item() - 0.7 == doctest::Approx(-1e-3).epsilon(1e-4));
}

TEST_CASE("adamw trajectory matches the hand recursion") {
  // f(p) = (p - 3)^2, g = 2 (p - 3).
  for (double wd : {0.01, 0.0}) {
    TrainConfig cfg;
    cfg.learning_rate = 0.05;
    cfg.weight_decay = wd;
    std::vector<Tensor> p{Tensor::scalar(0.5)};
    auto state = OptimizerState::fresh(p);

    double q = 0.5;
    double m = 0.0;
    double v = 0.0;
    for (int t = 1; t <= 10; ++t) {
      const double g = 2.0 * (q - 3.0);
      adamw_step(p, std::vector<Tensor>{Tensor::scalar(2.0 * (p[0].item() - 3.0))}, state, cfg);
      m = 0.9 * m + 0.1 * g;
      v = 0.999 * v + 0.001 * g * g;
      const double step = 0.05 * (m / (1 - std::pow(0.9, t))) / (std::sqrt(v / (1 - std::pow(0.999, t))) + 1e-8);
      // Plain Adam when wd is 0.
      q = q - 0.05 * wd * q - step;
      CHECK(std::abs(p[0].item() - q) < 1e-12);
    }
  }
}

TEST_CASE("adamw rejects non-finite gradients by name") {
  std::vector<Tensor> p{Tensor::scalar(1.0)};
  auto state = OptimizerState::fresh(p);
  const std::vector<std::string> names{"enc0.conv1.weight"};
  CHECK_THROWS_WITH(adamw_step(p, std::vector<Tensor>{Tensor::scalar(std::nan(""))}, state, TrainConfig{}, names),
                    doctest::Contains("enc0.conv1.weight"));
  CHECK(state.step == 0);
}

TEST_CASE("identical replicas follow identical trajectories") {
  const auto dir = scratch("replica");
  const auto data = make_data(dir, 5, 16, 4.0, 1);
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.seed = 3;
  auto a = UNetModel::build(tiny(), RngStream(4, "init"));
  auto b = UNetModel::build(tiny(), RngStream(4, "init"));
  OptimizerState sa;
  OptimizerState sb;
  const auto ra = train(a, data, cfg, sa);
  const auto rb = train(b, data, cfg, sb);
  CHECK(ra.loss_curve == rb.loss_curve);
  // Five items in batches of two, the last one partial.
  CHECK(ra.loss_curve.size() == 6);
  CHECK(same_params(a, b));
  fs::remove_all(dir);
}

TEST_CASE("zero learning rate leaves parameters and loss unchanged") {
  const auto dir = scratch("lr0");
  const auto data = make_data(dir, 1, 16, 4.0, 2);
  TrainConfig cfg;
  cfg.learning_rate = 0.0;
  cfg.batch_size = 1;
  cfg.epochs = 5;
  auto model = UNetModel::build(tiny(16, 0.0), RngStream(5, "init"));
  const auto before = model.params();
  OptimizerState st;
  const auto r = train(model, data, cfg, st);
  for (std::size_t i = 0; i < before.size(); ++i) {
    CHECK(model.params()[i].storage() == before[i].storage());
  }
  for (double l : r.loss_curve) {
    CHECK(l == r.loss_curve.front());
  }
  fs::remove_all(dir);
}

TEST_CASE("a small model overfits a single pair") {
  const auto dir = scratch("overfit");
  const auto data = make_data(dir, 1, 16, 4.0, 6);
  TrainConfig cfg;
  cfg.batch_size = 1;
  cfg.epochs = 500;
  auto model = UNetModel::build(tiny(), RngStream(7, "init"));
  OptimizerState st;
  const auto r = train(model, data, cfg, st);
  CAPTURE(r.loss_curve.front());
  CAPTURE(r.loss_curve.back());
  CHECK(r.loss_curve.back() < 0.01 * r.loss_curve.front());
  fs::remove_all(dir);
}

TEST_CASE("evaluation") {
  const auto dir = scratch("eval");
  const auto train_set = make_data(dir / "train", 16, 32, 4.0, 8);
  const auto test_set = make_data(dir / "test", 6, 32, 4.0, 9);
  UNetConfig mc = tiny(32);
  auto model = UNetModel::build(mc, RngStream(10, "init"));
  const auto before = evaluate(model, test_set, {});
  CHECK(before.model.rows.size() == test_set.size());
  CHECK(before.zero_filled.rows.size() == test_set.size());
  TrainConfig cfg;
  cfg.epochs = 15;
  cfg.eval_every = 5;
  OptimizerState st;
  const auto r = train(model, train_set, cfg, st, test_set);
  CHECK(r.evals.size() == 3);
  const auto after = evaluate(model, test_set, {});
  CHECK(after.model.ssim > before.model.ssim);
  CHECK(after.model.ssim == r.evals.back().ssim);

  const auto identity = make_data(dir / "full", 3, 32, 1.0, 11);
  const auto base = evaluate(model, identity, {});
  CHECK(base.zero_filled.ssim == doctest::Approx(1.0).epsilon(1e-12));
  CHECK_THROWS_AS(evaluate(model, std::span<const kspace::Pair>{}, {}), std::invalid_argument);
  fs::remove_all(dir);
}

TEST_CASE("training checkpoints") {
  const auto dir = scratch("ckpt");
  const auto data = make_data(dir / "data", 4, 16, 4.0, 12);
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.seed = 13;
  auto model = UNetModel::build(tiny(), RngStream(14, "init"));
  OptimizerState st;
  train(model, data, cfg, st);

  save_training_checkpoint(dir / "a", model, st);
  auto back = load_training_checkpoint(dir / "a");
  CHECK(back.state.step == st.step);
  save_training_checkpoint(dir / "b", back.model, back.state);
  for (const auto& e : fs::recursive_directory_iterator(dir / "a")) {
    if (e.is_regular_file()) {
      CHECK(slurp(e.path()) == slurp(dir / "b" / fs::relative(e.path(), dir / "a")));
    }
  }

  // One more step from the restored state equals the uninterrupted run.
  const Tensor x = stack(std::vector<Tensor>{data[0].input, data[1].input});
  const Tensor y = stack(std::vector<Tensor>{data[0].target, data[1].target});
  const double l1 = train_step(model, x, y, st, cfg);
  const double l2 = train_step(back.model, x, y, back.state, cfg);
  CHECK(l1 == l2);
  CHECK(same_params(model, back.model));
  for (std::size_t i = 0; i < st.m.size(); ++i) {
    CHECK(st.m[i].storage() == back.state.m[i].storage());
    CHECK(st.v[i].storage() == back.state.v[i].storage());
  }

  // Corrupt the magic of one tensor file.
  const auto victim = dir / "a" / "tensors" / "00000.ten";
  {
    std::fstream f(victim, std::ios::in | std::ios::out | std::ios::binary);
    f.write("XXXX", 4);
  }
  CHECK_THROWS_WITH(load_training_checkpoint(dir / "a"), doctest::Contains("magic"));
  fs::remove_all(dir);
}

TEST_CASE("train config") {
  TrainConfig cfg;
  cfg.batch_size = 3;
  CHECK_THROWS_WITH(cfg.validate(2), doctest::Contains("batch_size"));
  CHECK_THROWS_WITH(TrainConfig::from_json({{"lr", 1}}), doctest::Contains("unknown setting"));
  const auto back = TrainConfig::from_json(TrainConfig{}.to_json());
  CHECK(back.to_json() == TrainConfig{}.to_json());
  std::ostringstream out;
  write_loss_csv(out, {0.5, 0.25});
  CHECK(out.str() == "step,loss\n0,0.5\n1,0.25\n");
}
