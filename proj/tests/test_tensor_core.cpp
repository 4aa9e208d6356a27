#include <cmath>
#include <filesystem>

#include "doctest.h"

#include "cmr/gradcheck.hpp"
#include "cmr/ops.hpp"
#include "cmr/tenfile.hpp"
#include "helpers.hpp"

using namespace cmr;
using cmr::testing::random_tensor;

namespace {

Tensor no_bias() { return Tensor(); }

const Shape kShapes[3] = {{1, 2, 4, 4}, {2, 3, 6, 4}, {3, 1, 2, 8}};

} // namespace

TEST_CASE("conv2d hand examples") {
  const Tensor x = Tensor::full({1, 1, 3, 3}, 1.0);
  const Tensor k = Tensor::full({1, 1, 3, 3}, 1.0);
  const Tensor y = ops::conv2d(x, k, Tensor::zeros({1, 1, 1, 1}), 1, 1);
  REQUIRE(y.shape() == Shape{1, 1, 3, 3});
  CHECK(y.at(0, 0, 1, 1) == 9.0);
  CHECK(y.at(0, 0, 0, 0) == 4.0);
  CHECK(y.at(0, 0, 2, 2) == 4.0);
  CHECK(y.at(0, 0, 0, 1) == 6.0);

  const Tensor r = random_tensor({2, 1, 5, 7}, 3);
  const Tensor id = ops::conv2d(r, Tensor::full({1, 1, 1, 1}, 1.0), Tensor::zeros({1, 1, 1, 1}));
  CHECK(cmr::testing::max_abs_diff(id, r) == 0.0);

  const Tensor z = ops::conv2d(random_tensor({2, 3, 5, 5}, 4), Tensor::zeros({4, 3, 3, 3}), Tensor::zeros({1, 4, 1, 1}),
                               1, 1);
  for (double v : z.data()) {
    CHECK(v == 0.0);
  }
}

TEST_CASE("conv2d output size and errors") {
  const Tensor x = random_tensor({1, 2, 9, 7}, 5);
  const Tensor y = ops::conv2d(x, random_tensor({3, 2, 3, 3}, 6), no_bias(), 2, 1);
  CHECK(y.shape() == Shape{1, 3, 5, 4});
  CHECK_THROWS_WITH_AS(ops::conv2d(x, random_tensor({3, 4, 3, 3}, 7), no_bias()),
                       doctest::Contains("in_channels"), std::invalid_argument);
  CHECK_THROWS_AS(ops::conv2d(x, random_tensor({3, 2, 2, 2}, 7), no_bias()), std::invalid_argument);
  CHECK_THROWS_AS(ops::conv2d(x, random_tensor({3, 2, 3, 3}, 7), Tensor::zeros({1, 2, 1, 1})),
                  std::invalid_argument);
}

TEST_CASE("conv_transpose2d hand examples and adjointness") {
  const Tensor y = ops::conv_transpose2d(Tensor::full({1, 1, 1, 1}, 1.0), Tensor::full({1, 1, 2, 2}, 1.0),
                                         Tensor::zeros({1, 1, 1, 1}), 2);
  REQUIRE(y.shape() == Shape{1, 1, 2, 2});
  for (double v : y.data()) {
    CHECK(v == 1.0);
  }
  const Tensor z = ops::conv_transpose2d(Tensor::zeros({2, 3, 4, 4}), random_tensor({3, 2, 2, 2}, 1),
                                         Tensor::zeros({1, 2, 1, 1}), 2);
  CHECK(z.shape() == Shape{2, 2, 8, 8});
  for (double v : z.data()) {
    CHECK(v == 0.0);
  }

  for (int trial = 0; trial < 5; ++trial) {
    const Tensor x = random_tensor({2, 3, 7, 6}, 100 + trial);
    const Tensor k = random_tensor({4, 3, 3, 3}, 200 + trial);
    const Tensor cx = ops::conv2d(x, k, no_bias());
    const Tensor yv = random_tensor(cx.shape(), 300 + trial);
    const Tensor ty = ops::conv_transpose2d(yv, k, no_bias(), 1);
    REQUIRE(ty.shape() == x.shape());
    CHECK(std::abs(cmr::testing::inner(cx, yv) - cmr::testing::inner(x, ty)) < 1e-9);
  }
}

TEST_CASE("batch_norm2d cases") {
  auto state = ops::BatchNormState::fresh(2);
  const Tensor x = Tensor::full({2, 2, 3, 3}, 0.7);
  const Tensor y = ops::batch_norm2d(x, Tensor::full({1, 2, 1, 1}, 1.7), Tensor::full({1, 2, 1, 1}, 0.3), state,
                                     Mode::Train);
  for (double v : y.data()) {
    CHECK(v == doctest::Approx(0.3).epsilon(1e-12));
  }

  // Standardized data passes through unchanged.
  std::vector<double> v(2 * 1 * 2 * 2);
  const double s[] = {-1.5, -0.5, 0.5, 1.5};
  const double sd = std::sqrt(1.25);
  for (std::size_t i = 0; i < v.size(); ++i) {
    v[i] = s[i % 4] / sd * ((i / 4) % 2 == 0 ? 1.0 : -1.0);
  }
  const Tensor xs({2, 1, 2, 2}, v);
  auto st1 = ops::BatchNormState::fresh(1);
  const Tensor ys = ops::batch_norm2d(xs, Tensor::full({1, 1, 1, 1}, 1.0), Tensor::zeros({1, 1, 1, 1}), st1,
                                      Mode::Train, 0.1, 1e-12);
  CHECK(cmr::testing::max_abs_diff(xs, ys) < 1e-9);

  ops::BatchNormState blank;
  CHECK_THROWS_AS(ops::batch_norm2d(x, Tensor::full({1, 2, 1, 1}, 1.0), Tensor::zeros({1, 2, 1, 1}), blank,
                                    Mode::Eval),
                  std::logic_error);
  auto init = ops::BatchNormState::fresh(2);
  CHECK_NOTHROW(ops::batch_norm2d(x, Tensor::full({1, 2, 1, 1}, 1.0), Tensor::zeros({1, 2, 1, 1}), init, Mode::Eval));
}

TEST_CASE("batch_norm2d updates running statistics with momentum") {
  auto state = ops::BatchNormState::fresh(1);
  const Tensor x({1, 1, 1, 4}, {1.0, 2.0, 3.0, 4.0});
  ops::batch_norm2d(x, Tensor::full({1, 1, 1, 1}, 1.0), Tensor::zeros({1, 1, 1, 1}), state, Mode::Train);
  CHECK(state.running_mean[0] == doctest::Approx(0.25));
  CHECK(state.running_var[0] == doctest::Approx(0.9 + 0.1 * 1.25));
}

TEST_CASE("max_pool2 cases") {
  const Tensor x({1, 1, 2, 2}, {1, 2, 3, 4});
  CHECK(ops::max_pool2(x).item() == 4.0);
  const Tensor c = Tensor::full({2, 3, 4, 6}, 2.5);
  const Tensor p = ops::max_pool2(c);
  CHECK(p.shape() == Shape{2, 3, 2, 3});
  for (double v : p.data()) {
    CHECK(v == 2.5);
  }
  CHECK_THROWS_AS(ops::max_pool2(Tensor::zeros({1, 1, 3, 4})), std::invalid_argument);

  // Ties route to the first element in scan order.
  Graph g;
  const Tensor t = g.watch(Tensor({1, 1, 2, 2}, {5, 5, 5, 5}));
  const auto grads = g.backward(ops::sum(ops::max_pool2(t)));
  const Tensor gt = grads.of(t);
  CHECK(gt[0] == 1.0);
  CHECK(gt[1] == 0.0);
  CHECK(gt[2] == 0.0);
  CHECK(gt[3] == 0.0);
}

TEST_CASE("max_pool2 gradient is the argmax indicator") {
  const Tensor x = random_tensor({2, 2, 4, 6}, 9);
  Graph g;
  const Tensor t = g.watch(x);
  const Tensor gx = g.backward(ops::sum(ops::max_pool2(t))).of(t);
  CHECK(grad_check([](const Tensor& v) { return ops::sum(ops::max_pool2(v)); }, x) < 1e-6);
  double total = 0.0;
  for (double v : gx.data()) {
    CHECK((v == 0.0 || v == 1.0));
    total += v;
  }
  CHECK(total == doctest::Approx(2 * 2 * 2 * 3));
}

TEST_CASE("dropout cases") {
  const Tensor x = random_tensor({2, 3, 4, 4}, 11);
  RngStream rng(1, "dropout");
  CHECK(cmr::testing::max_abs_diff(ops::dropout(x, 0.0, Mode::Train, rng), x) == 0.0);
  CHECK(cmr::testing::max_abs_diff(ops::dropout(x, 0.5, Mode::Eval, rng), x) == 0.0);
  CHECK_THROWS_AS(ops::dropout(x, 1.0, Mode::Train, rng), std::invalid_argument);
  CHECK_THROWS_AS(ops::dropout(x, -0.1, Mode::Train, rng), std::invalid_argument);

  // Monte-Carlo mean of inverted dropout matches the input.
  const Tensor one({1, 1, 1, 4}, {1.0, -2.0, 0.5, 3.0});
  constexpr int draws = 10000;
  const double p = 0.25;
  RngStream mc(42, "dropout");
  std::vector<double> acc(4, 0.0);
  for (int d = 0; d < draws; ++d) {
    const Tensor y = ops::dropout(one, p, Mode::Train, mc);
    for (std::size_t i = 0; i < 4; ++i) {
      acc[i] += y[i];
    }
  }
  for (std::size_t i = 0; i < 4; ++i) {
    const double mean = acc[i] / draws;
    // Each draw is x/(1-p) w.p. 1-p, else 0.
    const double sd = std::abs(one[i]) * std::sqrt(p / (1.0 - p));
    CHECK(std::abs(mean - one[i]) < 3.0 * sd / std::sqrt(static_cast<double>(draws)));
  }

  RngStream a(5, "dropout");
  RngStream b(5, "dropout");
  CHECK(cmr::testing::max_abs_diff(ops::dropout(x, 0.25, Mode::Train, a), ops::dropout(x, 0.25, Mode::Train, b)) ==
        0.0);
}

TEST_CASE("elementwise suite") {
  CHECK(ops::sigmoid(Tensor::scalar(0.0)).item() == 0.5);
  CHECK(ops::relu(Tensor::scalar(-1.0)).item() == 0.0);
  CHECK(ops::relu(Tensor::scalar(2.0)).item() == 2.0);
  CHECK(ops::var(Tensor({1, 1, 1, 4}, {1, 2, 3, 4})).item() == doctest::Approx(1.25).epsilon(1e-15));

  const Tensor a = Tensor::full({2, 3, 2, 2}, 1.0);
  const Tensor b = Tensor::full({2, 5, 2, 2}, 2.0);
  const Tensor c = ops::concat_channels(a, b);
  REQUIRE(c.shape() == Shape{2, 8, 2, 2});
  for (int n = 0; n < 2; ++n) {
    for (int ch = 0; ch < 8; ++ch) {
      CHECK(c.at(n, ch, 1, 1) == (ch < 3 ? 1.0 : 2.0));
    }
  }
  CHECK_THROWS_WITH_AS(ops::add(a, b), doctest::Contains("channels"), std::invalid_argument);
  CHECK_THROWS_AS(ops::mul(a, Tensor::zeros({2, 3, 2, 3})), std::invalid_argument);
  CHECK_THROWS_AS(ops::concat_channels(a, Tensor::zeros({1, 5, 2, 2})), std::invalid_argument);

  const Tensor x({1, 2, 1, 2}, {1, 3, -2, 6});
  const Tensor gap = ops::global_avg_pool(x);
  CHECK(gap[0] == 2.0);
  CHECK(gap[1] == 2.0);
  const Tensor gmp = ops::global_max_pool(x);
  CHECK(gmp[0] == 3.0);
  CHECK(gmp[1] == 6.0);
  const Tensor cm = ops::channel_mean_map(x);
  CHECK(cm.shape() == Shape{1, 1, 1, 2});
  CHECK(cm[0] == -0.5);
  CHECK(cm[1] == 4.5);
  const Tensor cx = ops::channel_max_map(x);
  CHECK(cx[0] == 1.0);
  CHECK(cx[1] == 6.0);
}

TEST_CASE("backward analytic derivatives") {
  const Tensor x = random_tensor({2, 2, 3, 3}, 21);
  {
    Graph g;
    const Tensor t = g.watch(x);
    const Tensor gx = g.backward(ops::sum(ops::mul(t, t))).of(t);
    for (std::size_t i = 0; i < x.numel(); ++i) {
      CHECK(gx[i] == doctest::Approx(2.0 * x[i]).epsilon(1e-15));
    }
  }
  {
    Graph g;
    const Tensor t = g.watch(x);
    const Tensor gx = g.backward(ops::sum(ops::sigmoid(t))).of(t);
    for (std::size_t i = 0; i < x.numel(); ++i) {
      const double s = 1.0 / (1.0 + std::exp(-x[i]));
      CHECK(gx[i] == doctest::Approx(s * (1.0 - s)).epsilon(1e-12));
    }
  }
  {
    Graph g;
    const Tensor t = g.watch(x);
    const Tensor unused = g.watch(random_tensor({1, 1, 2, 2}, 5));
    const auto grads = g.backward(ops::sum(t));
    const Tensor gu = grads.of(unused);
    for (double v : gu.data()) {
      CHECK(v == 0.0);
    }
    CHECK(g.size() == 0);
  }
  {
    Graph g;
    const Tensor t = g.watch(x);
    CHECK_THROWS_AS(g.backward(ops::relu(t)), std::invalid_argument);
  }
}

TEST_CASE("composite conv-bn-relu graph matches finite differences") {
  const Tensor x = random_tensor({2, 2, 5, 5}, 31);
  const Tensor w = random_tensor({3, 2, 3, 3}, 32, -0.5, 0.5);
  const Tensor b = random_tensor({1, 3, 1, 1}, 33);
  const Tensor gamma = random_tensor({1, 3, 1, 1}, 34, 0.5, 1.5);
  const Tensor beta = random_tensor({1, 3, 1, 1}, 35);
  const std::vector<Tensor> inputs{x, w, b, gamma, beta};
  auto f = [](std::span<const Tensor> in) {
    auto state = ops::BatchNormState::fresh(3);
    const Tensor y = ops::conv2d(in[0], in[1], in[2], 1, 1);
    // Weighted sum so the loss is not invariant to the normalization.
    const Tensor r = ops::relu(ops::batch_norm2d(y, in[3], in[4], state, Mode::Train));
    return ops::sum(ops::mul(r, random_tensor(r.shape(), 36)));
  };
  std::vector<Probe> probes;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    for (std::size_t i = 0; i < inputs[k].numel(); ++i) {
      probes.push_back({k, i});
    }
  }
  CHECK(grad_check(f, inputs, probes) < 1e-6);
}

TEST_CASE("grad_check sanity") {
  const Tensor x = random_tensor({1, 2, 3, 3}, 41);
  // Linear f has no truncation error, so the largest step minimizes rounding.
  CHECK(grad_check([](const Tensor& v) { return ops::sum(v); }, x, 1e-4) < 1e-10);
  const double err =
      grad_check([](const Tensor& v) { return ops::sum(ops::mul(ops::mul(v, v), v)); }, Tensor::scalar(1.0), 1e-5);
  CHECK(err < 1e-9);
  CHECK_THROWS_AS(grad_check([](const Tensor& v) { return ops::sum(v); }, x, 1e-2), std::invalid_argument);
}

TEST_CASE("every differentiable op passes gradient checks at three shapes") {
  std::uint64_t seed = 1000;
  for (const Shape& s : kShapes) {
    CAPTURE(s.str());
    const Tensor x = random_tensor(s, ++seed);
    const Tensor y = random_tensor(s, ++seed);
    const Tensor weights = random_tensor(s, ++seed);
    auto weighted = [weights](const Tensor& t) { return ops::sum(ops::mul(t, weights)); };
    const Shape cs{s.n, s.c, 1, 1};
    const Shape ss{s.n, 1, s.h, s.w};
    const Tensor gate_c = random_tensor(cs, ++seed);
    const Tensor gate_s = random_tensor(ss, ++seed);
    const Tensor wc = random_tensor({s.n, 2 * s.c, s.h, s.w}, ++seed);
    const Tensor wcs = random_tensor(cs, ++seed);
    const Tensor wss = random_tensor(ss, ++seed);

    CHECK(grad_check([&](const Tensor& t) { return weighted(ops::add(t, y)); }, x) < 1e-6);
    CHECK(grad_check([&](const Tensor& t) { return weighted(ops::sub(y, t)); }, x) < 1e-6);
    CHECK(grad_check([&](const Tensor& t) { return weighted(ops::mul(t, y)); }, x) < 1e-6);
    CHECK(grad_check([&](const Tensor& t) { return weighted(ops::scale(t, -1.7)); }, x) < 1e-6);
    CHECK(grad_check([&](const Tensor& t) { return weighted(ops::relu(t)); }, x) < 1e-6);
    CHECK(grad_check([&](const Tensor& t) { return weighted(ops::sigmoid(t)); }, x) < 1e-6);
    CHECK(grad_check(
              [&](const Tensor& t) { return ops::sum(ops::mul(ops::concat_channels(t, ops::scale(t, 2.0)), wc)); },
              x) < 1e-6);
    CHECK(grad_check([&](const Tensor& t) { return ops::sum(ops::mul(ops::global_avg_pool(t), wcs)); }, x) < 1e-6);
    CHECK(grad_check([&](const Tensor& t) { return ops::sum(ops::mul(ops::global_max_pool(t), wcs)); }, x) < 1e-6);
    CHECK(grad_check([&](const Tensor& t) { return ops::sum(ops::mul(ops::channel_mean_map(t), wss)); }, x) < 1e-6);
    CHECK(grad_check([&](const Tensor& t) { return ops::sum(ops::mul(ops::channel_max_map(t), wss)); }, x) < 1e-6);
    CHECK(grad_check([&](const Tensor& t) { return weighted(ops::scale_channels(t, gate_c)); }, x) < 1e-6);
    CHECK(grad_check([&](const Tensor& t) { return weighted(ops::scale_channels(x, ops::sigmoid(t))); }, gate_c) <
          1e-6);
    CHECK(grad_check([&](const Tensor& t) { return weighted(ops::scale_spatial(t, gate_s)); }, x) < 1e-6);
    CHECK(grad_check([&](const Tensor& t) { return weighted(ops::scale_spatial(x, t)); }, gate_s) < 1e-6);
    CHECK(grad_check([&](const Tensor& t) { return ops::mean(ops::mul(t, t)); }, x) < 1e-6);
    CHECK(grad_check([&](const Tensor& t) { return ops::var(t); }, x) < 1e-6);
    CHECK(grad_check([&](const Tensor& t) { return ops::mse_loss(t, y); }, x) < 1e-6);
    CHECK(grad_check([&](const Tensor& t) { return weighted(t.reshaped(s)); }, x) < 1e-6);
    if (s.h % 2 == 0 && s.w % 2 == 0) {
      const Tensor wp = random_tensor({s.n, s.c, s.h / 2, s.w / 2}, ++seed);
      CHECK(grad_check([&](const Tensor& t) { return ops::sum(ops::mul(ops::max_pool2(t), wp)); }, x) < 1e-6);
    }
    {
      RngStream base(seed, "dropout");
      CHECK(grad_check(
                [&](const Tensor& t) {
                  RngStream rng = base;
                  return weighted(ops::dropout(t, 0.25, Mode::Train, rng));
                },
                x) < 1e-6);
    }
    {
      const Tensor gamma = random_tensor({1, s.c, 1, 1}, ++seed, 0.5, 1.5);
      const Tensor beta = random_tensor({1, s.c, 1, 1}, ++seed);
      CHECK(grad_check(
                [&](const Tensor& t) {
                  auto st = ops::BatchNormState::fresh(s.c);
                  return weighted(ops::batch_norm2d(t, gamma, beta, st, Mode::Train));
                },
                x) < 1e-6);
      CHECK(grad_check(
                [&](const Tensor& t) {
                  auto st = ops::BatchNormState::fresh(s.c);
                  st.running_mean.assign(static_cast<std::size_t>(s.c), 0.2);
                  return weighted(ops::batch_norm2d(t, gamma, beta, st, Mode::Eval));
                },
                x) < 1e-6);
    }
    {
      const Tensor k = random_tensor({3, s.c, 3, 3}, ++seed);
      const Tensor bias = random_tensor({1, 3, 1, 1}, ++seed);
      const Tensor probe = random_tensor({s.n, 3, s.h, s.w}, ++seed);
      CHECK(grad_check([&](const Tensor& t) { return ops::sum(ops::mul(ops::conv2d(t, k, bias, 1, 1), probe)); },
                       x) < 1e-6);
      CHECK(grad_check([&](const Tensor& t) { return ops::sum(ops::mul(ops::conv2d(x, t, bias, 1, 1), probe)); },
                       k) < 1e-6);
      CHECK(grad_check([&](const Tensor& t) { return ops::sum(ops::mul(ops::conv2d(x, k, t, 1, 1), probe)); },
                       bias) < 1e-6);
    }
    {
      const Tensor k = random_tensor({s.c, 2, 2, 2}, ++seed);
      const Tensor bias = random_tensor({1, 2, 1, 1}, ++seed);
      const Tensor probe = random_tensor({s.n, 2, 2 * s.h, 2 * s.w}, ++seed);
      auto ct = [&](const Tensor& a, const Tensor& b, const Tensor& c) {
        return ops::sum(ops::mul(ops::conv_transpose2d(a, b, c, 2), probe));
      };
      CHECK(grad_check([&](const Tensor& t) { return ct(t, k, bias); }, x) < 1e-6);
      CHECK(grad_check([&](const Tensor& t) { return ct(x, t, bias); }, k) < 1e-6);
      CHECK(grad_check([&](const Tensor& t) { return ct(x, k, t); }, bias) < 1e-6);
    }
  }
}

TEST_CASE("backward is linear in the loss") {
  const Tensor x = random_tensor({2, 3, 4, 4}, 51);
  const Tensor k = random_tensor({2, 3, 3, 3}, 52);
  auto f = [&](const Tensor& t) { return ops::sum(ops::sigmoid(ops::conv2d(t, k, Tensor(), 1, 1))); };
  auto h = [&](const Tensor& t) { return ops::var(ops::relu(t)); };
  const double a = 1.7;
  const double b = -0.6;
  auto grad = [&](auto fn) {
    Graph g;
    const Tensor t = g.watch(x);
    return g.backward(fn(t)).of(t);
  };
  const Tensor gf = grad(f);
  const Tensor gh = grad(h);
  const Tensor gc = grad([&](const Tensor& t) { return ops::add(ops::scale(f(t), a), ops::scale(h(t), b)); });
  for (std::size_t i = 0; i < x.numel(); ++i) {
    CHECK(std::abs(gc[i] - (a * gf[i] + b * gh[i])) < 1e-10);
  }
}

TEST_CASE("forward ops keep finite values finite") {
  const Tensor x = random_tensor({2, 3, 4, 4}, 61, -50.0, 50.0);
  CHECK(cmr::testing::all_finite(ops::sigmoid(x)));
  CHECK(cmr::testing::all_finite(ops::relu(x)));
  auto st = ops::BatchNormState::fresh(3);
  CHECK(cmr::testing::all_finite(
      ops::batch_norm2d(Tensor::full(x.shape(), 3.0), Tensor::full({1, 3, 1, 1}, 1.0), Tensor::zeros({1, 3, 1, 1}),
                        st, Mode::Train)));
  CHECK(cmr::testing::all_finite(ops::var(x)));
}

TEST_CASE("stale handles behave as constants") {
  Graph g;
  const Tensor t = g.watch(Tensor::scalar(2.0));
  const Tensor y = ops::mul(t, t);
  CHECK(y.tracked());
  g.backward(y);
  CHECK_FALSE(y.tracked());
  CHECK_FALSE(ops::add(y, y).tracked());
}

TEST_CASE("RngStream determinism") {
  RngStream a(7, "init");
  RngStream b(7, "init");
  RngStream c(7, "dropout");
  bool differs = false;
  for (int i = 0; i < 100; ++i) {
    const auto va = a.next_u64();
    CHECK(va == b.next_u64());
    differs |= va != c.next_u64();
  }
  CHECK(differs);
  RngStream u(1, "x");
  for (int i = 0; i < 1000; ++i) {
    const double v = u.uniform();
    CHECK((v >= 0.0 && v < 1.0));
    CHECK(u.below(7) < 7);
  }
}

TEST_CASE("ten file format") {
  const Tensor x = random_tensor({2, 3, 4, 5}, 71);
  const std::string bytes = ten::encode(ten::from_tensor(x));
  CHECK(bytes.substr(0, 4) == "CMRT");
  CHECK(static_cast<unsigned char>(bytes[4]) == 1);
  CHECK(static_cast<unsigned char>(bytes[5]) == 0);
  CHECK(static_cast<unsigned char>(bytes[6]) == 4);
  CHECK(static_cast<unsigned char>(bytes[7]) == 2);
  CHECK(bytes.size() == 7 + 16 + 8 * x.numel());
  const Tensor back = ten::to_tensor(ten::decode(bytes));
  CHECK(back.shape() == x.shape());
  CHECK(cmr::testing::max_abs_diff(back, x) == 0.0);

  std::string bad = bytes;
  bad[0] = 'X';
  CHECK_THROWS_WITH(ten::decode(bad), doctest::Contains("magic"));
  CHECK_THROWS(ten::decode(bytes.substr(0, bytes.size() - 1)));

  const auto path = std::filesystem::temp_directory_path() / "cmr_test_tensor.ten";
  ten::save(path, x);
  CHECK(cmr::testing::max_abs_diff(ten::load(path), x) == 0.0);
  std::filesystem::remove(path);

  const Tensor r2 = ten::to_tensor(ten::Array{{2, 3}, {1, 2, 3, 4, 5, 6}});
  CHECK(r2.shape() == Shape{1, 1, 2, 3});
}
