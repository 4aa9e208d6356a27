#include <cmath>
#include <complex>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <set>

#include "doctest.h"

#include "cmr/kspace.hpp"
#include "cmr/metrics.hpp"
#include "cmr/tenfile.hpp"
#include "helpers.hpp"

using namespace cmr;
using namespace cmr::kspace;
using cmr::testing::max_abs_diff;
using cmr::testing::random_tensor;

namespace {

ComplexImage random_complex(int h, int w, std::uint64_t seed) {
  RngStream rng(seed, "complex");
  ComplexImage img;
  img.h = h;
  img.w = w;
  img.data.resize(static_cast<std::size_t>(h) * w);
  for (auto& v : img.data) {
    v = {rng.uniform(-1, 1), rng.uniform(-1, 1)};
  }
  return img;
}

double energy(const ComplexImage& x) {
  double s = 0.0;
  for (auto v : x.data) {
    s += std::norm(v);
  }
  return s;
}

double max_diff(const ComplexImage& a, const ComplexImage& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    m = std::max(m, std::abs(a.data[i] - b.data[i]));
  }
  return m;
}

// Direct O(N^2) centered DFT of one coefficient.
std::complex<double> direct_dft(const ComplexImage& x, int ku, int kv) {
  std::complex<double> s = 0.0;
  const double pi = std::acos(-1.0);
  for (int r = 0; r < x.h; ++r) {
    for (int c = 0; c < x.w; ++c) {
      const double ph = -2.0 * pi *
                        (static_cast<double>((ku - x.h / 2) * (r - x.h / 2)) / x.h +
                         static_cast<double>((kv - x.w / 2) * (c - x.w / 2)) / x.w);
      s += x.at(r, c) * std::polar(1.0, ph);
    }
  }
  return s / std::sqrt(static_cast<double>(x.h) * x.w);
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

} // namespace

TEST_CASE("fft roundtrip, parseval and linearity") {
  for (int n : {64, 128}) {
    CAPTURE(n);
    const ComplexImage a = random_complex(n, n, 1);
    const ComplexImage b = random_complex(n, n, 2);
    const ComplexImage ka = fft2(a);
    CHECK(ka.domain == Domain::KSpace);
    const ComplexImage back = ifft2(ka);
    CHECK(back.domain == Domain::Image);
    CHECK(max_diff(back, a) < 1e-10);
    CHECK(std::abs(energy(ka) - energy(a)) / energy(a) < 1e-9);

    ComplexImage sum = a;
    for (std::size_t i = 0; i < sum.data.size(); ++i) {
      sum.data[i] += b.data[i];
    }
    const ComplexImage kb = fft2(b);
    ComplexImage ksum = ka;
    for (std::size_t i = 0; i < ksum.data.size(); ++i) {
      ksum.data[i] += kb.data[i];
    }
    CHECK(max_diff(fft2(sum), ksum) < 1e-10);
  }
}

TEST_CASE("fft agrees with a direct centered DFT") {
  const ComplexImage x = random_complex(8, 16, 3);
  const ComplexImage k = fft2(x);
  for (int u = 0; u < 8; ++u) {
    for (int v = 0; v < 16; v += 3) {
      CHECK(std::abs(k.at(u, v) - direct_dft(x, u, v)) < 1e-12);
    }
  }
}

TEST_CASE("constant image has a single centered coefficient") {
  const ComplexImage k = fft2(ComplexImage::from_real(Tensor::full({1, 1, 64, 64}, 1.0)));
  CHECK(std::abs(k.at(32, 32)) == doctest::Approx(64.0).epsilon(1e-14));
  double rest = 0.0;
  for (int r = 0; r < 64; ++r) {
    for (int c = 0; c < 64; ++c) {
      if (r != 32 || c != 32) {
        rest = std::max(rest, std::abs(k.at(r, c)));
      }
    }
  }
  CHECK(rest < 1e-12);
}

TEST_CASE("fft errors") {
  CHECK_THROWS_WITH(fft2(random_complex(48, 64, 1)), doctest::Contains("not a power of two"));
  CHECK_THROWS_AS(ifft2(random_complex(8, 8, 1)), std::invalid_argument);
  CHECK_THROWS_AS(fft2(fft2(random_complex(8, 8, 1))), std::invalid_argument);
}

TEST_CASE("mask construction") {
  RngStream rng(4, "mask");
  const auto full = make_mask(64, 1.0, 16, rng, MaskPattern::Equispaced);
  CHECK(full.kept() == 64);
  CHECK(make_mask(64, 1.0, 0, rng, MaskPattern::Random).kept() == 64);

  // Set-union count of {0, 10, ..., 250} with rows 120..135.
  std::set<int> lines;
  for (int r = 0; r < 256; r += 10) {
    lines.insert(r);
  }
  for (int r = 120; r < 136; ++r) {
    lines.insert(r);
  }
  const auto m = make_mask(256, 10.0, 16, rng, MaskPattern::Equispaced);
  CHECK(m.kept() == static_cast<int>(lines.size()));
  for (int r = 0; r < 256; ++r) {
    CHECK(m.keep[static_cast<std::size_t>(r)] == (lines.count(r) == 1));
  }

  for (double accel : {4.0, 8.0, 10.0}) {
    for (int acs : {0, 8, 16}) {
      RngStream a(9, "m");
      RngStream b(9, "m");
      const auto ra = make_mask(256, accel, acs, a, MaskPattern::Random);
      const auto rb = make_mask(256, accel, acs, b, MaskPattern::Random);
      CHECK(ra.keep == rb.keep);
      CHECK(std::abs(ra.effective_accel() - accel) <= 0.15 * accel);
      for (int r = 128 - acs / 2; r < 128 - acs / 2 + acs; ++r) {
        CHECK(ra.keep[static_cast<std::size_t>(r)]);
      }
    }
  }
  CHECK_THROWS_WITH(make_mask(64, 4.0, 64, rng, MaskPattern::Equispaced), doctest::Contains("acs_lines"));
  CHECK_THROWS_AS(make_mask(64, 0.5, 8, rng, MaskPattern::Equispaced), std::invalid_argument);
}

TEST_CASE("undersampling") {
  RngStream rng(5, "mask");
  const ComplexImage k = fft2(random_complex(32, 32, 6));
  const auto full = make_mask(32, 1.0, 4, rng, MaskPattern::Equispaced);
  CHECK(undersample(k, full).data == k.data);

  SamplingMask acs_only = make_mask(32, 1.0, 8, rng, MaskPattern::Equispaced);
  std::fill(acs_only.keep.begin(), acs_only.keep.end(), false);
  for (int r = 12; r < 20; ++r) {
    acs_only.keep[static_cast<std::size_t>(r)] = true;
  }
  const ComplexImage us = undersample(k, acs_only);
  for (int r = 0; r < 32; ++r) {
    for (int c = 0; c < 32; ++c) {
      if (r >= 12 && r < 20) {
        CHECK(us.at(r, c) == k.at(r, c));
      } else {
        CHECK(us.at(r, c) == std::complex<double>(0.0, 0.0));
      }
    }
  }
  const auto m4 = make_mask(32, 4.0, 4, rng, MaskPattern::Equispaced);
  CHECK(energy(undersample(k, m4)) <= energy(k));
  CHECK_THROWS_AS(undersample(random_complex(32, 32, 1), m4), std::invalid_argument);
  CHECK_THROWS_AS(undersample(fft2(random_complex(16, 16, 1)), m4), std::invalid_argument);
}

TEST_CASE("zero-filled reconstruction") {
  const Tensor gt = normalize_max(phantom({64, 4, 8, 11}));
  const ComplexImage k = fft2(ComplexImage::from_real(gt));
  RngStream rng(6, "mask");
  const Tensor full = zero_filled_recon(undersample(k, make_mask(64, 1.0, 16, rng, MaskPattern::Equispaced)));
  CHECK(max_abs_diff(full, gt) < 1e-8);
  const Tensor aliased = zero_filled_recon(undersample(k, make_mask(64, 4.0, 16, rng, MaskPattern::Equispaced)));
  for (double v : aliased.data()) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
  }
  CHECK(metrics::ssim(aliased, gt) < metrics::ssim(full, gt));

  ComplexImage zero = k;
  std::fill(zero.data.begin(), zero.data.end(), std::complex<double>(0.0, 0.0));
  CHECK_THROWS_WITH(zero_filled_recon(zero), doctest::Contains("all-zero"));
}

TEST_CASE("undersampling never improves ssim over the full recon") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Tensor gt = normalize_max(phantom({64, 4, 8, seed}));
    const ComplexImage k = fft2(ComplexImage::from_real(gt));
    RngStream rng(seed, "mask");
    const Tensor full = zero_filled_recon(k);
    for (double accel : {2.0, 4.0, 8.0}) {
      for (auto pattern : {MaskPattern::Equispaced, MaskPattern::Random}) {
        const Tensor us = zero_filled_recon(undersample(k, make_mask(64, accel, 8, rng, pattern)));
        CHECK(metrics::ssim(us, full) <= 1.0);
        CHECK(metrics::ssim(us, full) < metrics::ssim(full, full));
      }
    }
  }
}

TEST_CASE("phantoms") {
  CHECK(max_abs_diff(phantom({32, 0, 0, 1}), Tensor::zeros({1, 1, 32, 32})) == 0.0);
  double lo = 1.0;
  double hi = 0.0;
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    const Tensor p = phantom({32, 4, 8, seed});
    for (double v : p.data()) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  }
  CHECK(lo >= 0.0);
  CHECK(hi <= 1.0);
  CHECK(hi > 0.5);
  const Tensor a = phantom({64, 4, 8, 42});
  const Tensor b = phantom({64, 4, 8, 42});
  CHECK(a.storage() == b.storage());
  CHECK(a.storage() != phantom({64, 4, 8, 43}).storage());
  CHECK_THROWS_AS(phantom({48, 4, 8, 1}), std::invalid_argument);
}

TEST_CASE("bilinear resize") {
  const Tensor x = random_tensor({1, 1, 5, 7}, 7);
  CHECK(resize_bilinear(x, 5, 7).storage() == x.storage());
  const Tensor c = resize_bilinear(Tensor::full({1, 1, 4, 4}, 0.3), 9, 13);
  for (double v : c.data()) {
    CHECK(v == doctest::Approx(0.3).epsilon(1e-15));
  }
  const Tensor board({1, 1, 2, 2}, {0, 1, 1, 0});
  const Tensor up = resize_bilinear(board, 3, 3);
  CHECK(up.storage() == std::vector<double>{0, 0.5, 1, 0.5, 0.5, 0.5, 1, 0.5, 0});
}

TEST_CASE("dataset generation") {
  const auto dir = std::filesystem::temp_directory_path() / "cmr_kspace_gen";
  std::filesystem::remove_all(dir);
  DatasetSpec spec;
  spec.count = 10;
  spec.size = 32;
  spec.accel = 4.0;
  spec.acs_lines = 8;
  spec.seed = 7;
  spec.prefix = "train";
  const auto manifest = gen_dataset(spec, dir / "a");
  CHECK(manifest.at("items").size() == 10);
  int ten_files = 0;
  for (const auto& e : std::filesystem::directory_iterator(dir / "a")) {
    ten_files += e.path().extension() == ".ten" ? 1 : 0;
  }
  CHECK(ten_files == 20);
  CHECK(std::filesystem::exists(dir / "a" / "train_3_input.ten"));
  CHECK(std::filesystem::exists(dir / "a" / "train_3_target.ten"));

  gen_dataset(spec, dir / "b");
  for (const auto& e : std::filesystem::directory_iterator(dir / "a")) {
    CHECK(slurp(e.path()) == slurp(dir / "b" / e.path().filename()));
  }

  const auto pairs = load_dataset(dir / "a");
  CHECK(pairs.size() == 10);
  for (const auto& p : pairs) {
    for (double v : p.input.data()) {
      CHECK((std::isfinite(v) && v >= 0.0 && v <= 1.0));
    }
    for (double v : p.target.data()) {
      CHECK((std::isfinite(v) && v >= 0.0 && v <= 1.0));
    }
  }

  spec.accel = 1.0;
  gen_dataset(spec, dir / "c");
  for (const auto& p : load_dataset(dir / "c")) {
    CHECK(max_abs_diff(p.input, p.target) < 1e-8);
  }
  std::filesystem::remove_all(dir);
}
