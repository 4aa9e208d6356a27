#include "cmr/kspace.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <stdexcept>

#include <fmt/format.h>

#include "cmr/tenfile.hpp"

namespace cmr::kspace {

namespace fs = std::filesystem;
using cd = std::complex<double>;

namespace {

bool power_of_two(int n) { return n > 0 && (n & (n - 1)) == 0; }

// In-place iterative radix-2 transform, unnormalized. sign -1 forward.
void fft1d(cd* a, int n, int sign) {
  for (int i = 1, j = 0; i < n; ++i) {
    int bit = n >> 1;
    for (; j & bit; bit >>= 1) {
      j ^= bit;
    }
    j ^= bit;
    if (i < j) {
      std::swap(a[i], a[j]);
    }
  }
  for (int len = 2; len <= n; len <<= 1) {
    const double ang = sign * 2.0 * std::numbers::pi / len;
    const cd wl(std::cos(ang), std::sin(ang));
    for (int i = 0; i < n; i += len) {
      cd w(1.0, 0.0);
      for (int k = 0; k < len / 2; ++k) {
        const cd u = a[i + k];
        const cd v = a[i + k + len / 2] * w;
        a[i + k] = u + v;
        a[i + k + len / 2] = u - v;
        w *= wl;
      }
    }
  }
}

// Swap halves along both axes (its own inverse for even sizes).
ComplexImage shifted(const ComplexImage& x) {
  ComplexImage out = x;
  const int sh = x.h / 2;
  const int sw = x.w / 2;
  for (int r = 0; r < x.h; ++r) {
    for (int c = 0; c < x.w; ++c) {
      out.at((r + sh) % x.h, (c + sw) % x.w) = x.at(r, c);
    }
  }
  return out;
}

ComplexImage transform(const ComplexImage& in, int sign) {
  if (!power_of_two(in.h) || !power_of_two(in.w)) {
    throw std::invalid_argument(fmt::format("FFT size {}x{} is not a power of two", in.h, in.w));
  }
  if (in.data.size() != static_cast<std::size_t>(in.h) * in.w) {
    throw std::invalid_argument("complex image data does not match its shape");
  }
  ComplexImage x = shifted(in);
  for (int r = 0; r < x.h; ++r) {
    fft1d(&x.at(r, 0), x.w, sign);
  }
  std::vector<cd> col(static_cast<std::size_t>(x.h));
  for (int c = 0; c < x.w; ++c) {
    for (int r = 0; r < x.h; ++r) {
      col[static_cast<std::size_t>(r)] = x.at(r, c);
    }
    fft1d(col.data(), x.h, sign);
    for (int r = 0; r < x.h; ++r) {
      x.at(r, c) = col[static_cast<std::size_t>(r)];
    }
  }
  const double norm = 1.0 / std::sqrt(static_cast<double>(x.h) * x.w);
  for (auto& v : x.data) {
    v *= norm;
  }
  return shifted(x);
}

} // namespace

ComplexImage ComplexImage::from_real(const Tensor& x) {
  const Shape& s = x.shape();
  if (s.n != 1 || s.c != 1) {
    throw std::invalid_argument(fmt::format("expected a (1, 1, h, w) image, got {}", s.str()));
  }
  ComplexImage img;
  img.h = s.h;
  img.w = s.w;
  img.data.assign(x.data().begin(), x.data().end());
  img.domain = Domain::Image;
  return img;
}

ComplexImage fft2(const ComplexImage& img) {
  if (img.domain != Domain::Image) {
    throw std::invalid_argument("fft2 expects an image-domain input");
  }
  ComplexImage k = transform(img, -1);
  k.domain = Domain::KSpace;
  return k;
}

ComplexImage ifft2(const ComplexImage& k) {
  if (k.domain != Domain::KSpace) {
    throw std::invalid_argument("ifft2 expects a k-space input");
  }
  ComplexImage img = transform(k, +1);
  img.domain = Domain::Image;
  return img;
}

std::string pattern_name(MaskPattern p) { return p == MaskPattern::Equispaced ? "equispaced" : "random"; }

MaskPattern parse_pattern(const std::string& s) {
  if (s == "equispaced") {
    return MaskPattern::Equispaced;
  }
  if (s == "random") {
    return MaskPattern::Random;
  }
  throw std::invalid_argument(fmt::format("unknown mask pattern \"{}\"", s));
}

int SamplingMask::kept() const { return static_cast<int>(std::count(keep.begin(), keep.end(), true)); }

SamplingMask make_mask(int h, double accel, int acs_lines, RngStream& rng, MaskPattern pattern) {
  if (h < 1) {
    throw std::invalid_argument(fmt::format("mask height must be positive (got {})", h));
  }
  if (!(accel >= 1.0)) {
    throw std::invalid_argument(fmt::format("acceleration must be >= 1 (got {})", accel));
  }
  if (acs_lines < 0 || acs_lines >= h) {
    throw std::invalid_argument(fmt::format("acs_lines {} must be in [0, {})", acs_lines, h));
  }
  SamplingMask m;
  m.height = h;
  m.accel = accel;
  m.acs_lines = acs_lines;
  m.keep.assign(static_cast<std::size_t>(h), false);
  const int acs_start = h / 2 - acs_lines / 2;
  for (int r = acs_start; r < acs_start + acs_lines; ++r) {
    m.keep[static_cast<std::size_t>(r)] = true;
  }
  if (pattern == MaskPattern::Equispaced) {
    const int step = static_cast<int>(std::ceil(accel));
    for (int r = 0; r < h; r += step) {
      m.keep[static_cast<std::size_t>(r)] = true;
    }
  } else {
    const int target = std::max(1, static_cast<int>(std::lround(h / accel)));
    std::vector<int> outer;
    for (int r = 0; r < h; ++r) {
      if (!m.keep[static_cast<std::size_t>(r)]) {
        outer.push_back(r);
      }
    }
    // Partial Fisher-Yates draw.
    const int extra = std::clamp(target - acs_lines, 0, static_cast<int>(outer.size()));
    for (int i = 0; i < extra; ++i) {
      const auto j = static_cast<std::size_t>(i) + rng.below(outer.size() - static_cast<std::size_t>(i));
      std::swap(outer[static_cast<std::size_t>(i)], outer[j]);
      m.keep[static_cast<std::size_t>(outer[static_cast<std::size_t>(i)])] = true;
    }
  }
  return m;
}

ComplexImage undersample(const ComplexImage& k, const SamplingMask& mask) {
  if (k.domain != Domain::KSpace) {
    throw std::invalid_argument("undersample expects a k-space input");
  }
  if (mask.height != k.h || mask.keep.size() != static_cast<std::size_t>(k.h)) {
    throw std::invalid_argument(fmt::format("mask height {} does not match k-space height {}", mask.height, k.h));
  }
  ComplexImage out = k;
  for (int r = 0; r < k.h; ++r) {
    if (!mask.keep[static_cast<std::size_t>(r)]) {
      std::fill_n(&out.at(r, 0), k.w, cd(0.0, 0.0));
    }
  }
  return out;
}

Tensor zero_filled_recon(const ComplexImage& k_us) {
  if (k_us.domain != Domain::KSpace) {
    throw std::invalid_argument("zero_filled_recon expects a k-space input");
  }
  const ComplexImage img = ifft2(k_us);
  std::vector<double> mag(img.data.size());
  double peak = 0.0;
  for (std::size_t i = 0; i < mag.size(); ++i) {
    mag[i] = std::abs(img.data[i]);
    peak = std::max(peak, mag[i]);
  }
  if (!(peak > 0.0)) {
    throw std::invalid_argument("zero_filled_recon: all-zero k-space has no maximum to normalize by");
  }
  for (auto& v : mag) {
    v = std::clamp(v / peak, 0.0, 1.0);
  }
  return Tensor({1, 1, img.h, img.w}, std::move(mag));
}

// --- phantoms -----------------------------------------------------------------

namespace {

struct Ellipse {
  double cx, cy, a, b, angle, intensity;
};

Ellipse random_ellipse(RngStream& rng, int layer) {
  Ellipse e{};
  e.angle = rng.uniform(0.0, std::numbers::pi);
  if (layer == 0) {
    // body
    e.cx = rng.uniform(-0.1, 0.1);
    e.cy = rng.uniform(-0.1, 0.1);
    e.a = rng.uniform(0.6, 0.85);
    e.b = rng.uniform(0.5, 0.8);
    e.intensity = rng.uniform(0.25, 0.45);
  } else if (layer == 1) {
    // chamber
    e.cx = rng.uniform(-0.3, 0.3);
    e.cy = rng.uniform(-0.3, 0.3);
    e.a = rng.uniform(0.2, 0.4);
    e.b = rng.uniform(0.15, 0.35);
    e.intensity = rng.uniform(0.3, 0.5);
  } else {
    e.cx = rng.uniform(-0.5, 0.5);
    e.cy = rng.uniform(-0.5, 0.5);
    e.a = rng.uniform(0.04, 0.15);
    e.b = rng.uniform(0.04, 0.15);
    const double mag = rng.uniform(0.1, 0.3);
    e.intensity = rng.uniform() < 0.5 ? -mag : mag;
  }
  return e;
}

constexpr int kSuper = 4;

} // namespace

Tensor phantom(const PhantomSpec& spec) {
  if (!power_of_two(spec.size)) {
    throw std::invalid_argument(fmt::format("phantom size {} is not a power of two", spec.size));
  }
  if (spec.min_ellipses < 0 || spec.max_ellipses < spec.min_ellipses) {
    throw std::invalid_argument(
        fmt::format("invalid ellipse count range [{}, {}]", spec.min_ellipses, spec.max_ellipses));
  }
  RngStream rng(spec.seed, "phantom");
  const int count = spec.min_ellipses + static_cast<int>(rng.below(
                                            static_cast<std::uint64_t>(spec.max_ellipses - spec.min_ellipses + 1)));
  std::vector<Ellipse> ellipses;
  for (int i = 0; i < count; ++i) {
    ellipses.push_back(random_ellipse(rng, i));
  }
  const int n = spec.size;
  std::vector<double> img(static_cast<std::size_t>(n) * n, 0.0);
  for (const auto& e : ellipses) {
    const double ca = std::cos(e.angle);
    const double sa = std::sin(e.angle);
    for (int r = 0; r < n; ++r) {
      for (int c = 0; c < n; ++c) {
        int inside = 0;
        for (int sy = 0; sy < kSuper; ++sy) {
          for (int sx = 0; sx < kSuper; ++sx) {
            const double y = 2.0 * (r + (sy + 0.5) / kSuper) / n - 1.0 - e.cy;
            const double x = 2.0 * (c + (sx + 0.5) / kSuper) / n - 1.0 - e.cx;
            const double u = (x * ca + y * sa) / e.a;
            const double v = (-x * sa + y * ca) / e.b;
            inside += u * u + v * v <= 1.0 ? 1 : 0;
          }
        }
        img[static_cast<std::size_t>(r) * n + c] += e.intensity * inside / (kSuper * kSuper);
      }
    }
  }
  for (auto& v : img) {
    v = std::clamp(v, 0.0, 1.0);
  }
  return Tensor({1, 1, n, n}, std::move(img));
}

Tensor resize_bilinear(const Tensor& x, int out_h, int out_w) {
  if (out_h < 1 || out_w < 1) {
    throw std::invalid_argument(fmt::format("resize target {}x{} must be positive", out_h, out_w));
  }
  const Shape& s = x.shape();
  if (s.h == out_h && s.w == out_w) {
    return x.detach();
  }
  auto coord = [](int i, int in, int out) { return out == 1 ? 0.0 : static_cast<double>(i) * (in - 1) / (out - 1); };
  std::vector<double> out(static_cast<std::size_t>(s.n) * s.c * out_h * out_w);
  std::size_t k = 0;
  for (int n = 0; n < s.n; ++n) {
    for (int c = 0; c < s.c; ++c) {
      for (int i = 0; i < out_h; ++i) {
        const double fy = coord(i, s.h, out_h);
        const int y0 = std::min(static_cast<int>(fy), s.h - 1);
        const int y1 = std::min(y0 + 1, s.h - 1);
        const double ty = fy - y0;
        for (int j = 0; j < out_w; ++j) {
          const double fx = coord(j, s.w, out_w);
          const int x0 = std::min(static_cast<int>(fx), s.w - 1);
          const int x1 = std::min(x0 + 1, s.w - 1);
          const double tx = fx - x0;
          const double top = (1 - tx) * x.at(n, c, y0, x0) + tx * x.at(n, c, y0, x1);
          const double bot = (1 - tx) * x.at(n, c, y1, x0) + tx * x.at(n, c, y1, x1);
          out[k++] = (1 - ty) * top + ty * bot;
        }
      }
    }
  }
  return Tensor({s.n, s.c, out_h, out_w}, std::move(out));
}

Tensor normalize_max(const Tensor& x) {
  const auto d = x.data();
  const double peak = d.empty() ? 0.0 : *std::max_element(d.begin(), d.end());
  if (!(peak > 0.0)) {
    return Tensor::zeros(x.shape());
  }
  std::vector<double> v(d.begin(), d.end());
  for (auto& e : v) {
    e /= peak;
  }
  return Tensor(x.shape(), std::move(v));
}

// --- datasets -----------------------------------------------------------------

nlohmann::json DatasetSpec::to_json() const {
  return nlohmann::json{{"count", count},
                        {"size", size},
                        {"accel", accel},
                        {"acs", acs_lines},
                        {"pattern", pattern_name(pattern)},
                        {"seed", seed},
                        {"prefix", prefix},
                        {"min_ellipses", min_ellipses},
                        {"max_ellipses", max_ellipses}};
}

nlohmann::json gen_dataset(const DatasetSpec& spec, const fs::path& out_dir) {
  if (spec.count < 1) {
    throw std::invalid_argument(fmt::format("dataset count must be positive (got {})", spec.count));
  }
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) {
    throw std::runtime_error(fmt::format("cannot create {}: {}", out_dir.string(), ec.message()));
  }
  nlohmann::json items = nlohmann::json::array();
  double kept_sum = 0.0;
  const RngStream root(spec.seed, "dataset");
  for (int i = 0; i < spec.count; ++i) {
    RngStream item = root.child(std::to_string(i));
    PhantomSpec ps{spec.size, spec.min_ellipses, spec.max_ellipses, item.next_u64()};
    const Tensor target = normalize_max(phantom(ps));
    RngStream mask_rng = item.child("mask");
    const SamplingMask mask = make_mask(spec.size, spec.accel, spec.acs_lines, mask_rng, spec.pattern);
    kept_sum += mask.kept();
    const Tensor input = zero_filled_recon(undersample(fft2(ComplexImage::from_real(target)), mask));
    const std::string in_name = fmt::format("{}_{}_input.ten", spec.prefix, i);
    const std::string tg_name = fmt::format("{}_{}_target.ten", spec.prefix, i);
    ten::save(out_dir / in_name, input);
    ten::save(out_dir / tg_name, target);
    items.push_back({{"index", i}, {"input", in_name}, {"target", tg_name}});
  }
  nlohmann::json manifest = spec.to_json();
  manifest["effective_accel"] = spec.size * spec.count / kept_sum;
  manifest["items"] = items;
  const fs::path path = out_dir / "manifest.json";
  std::ofstream out(path);
  if (!out) {
    throw std::runtime_error(fmt::format("cannot write {}", path.string()));
  }
  out << manifest.dump(2) << '\n';
  if (!out) {
    throw std::runtime_error(fmt::format("write failed for {}", path.string()));
  }
  return manifest;
}

std::vector<Pair> load_dataset(const fs::path& dir) {
  const fs::path path = dir / "manifest.json";
  std::ifstream in(path);
  if (!in) {
    throw std::runtime_error(fmt::format("cannot read {}", path.string()));
  }
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(fmt::format("{}: {}", path.string(), e.what()));
  }
  std::vector<Pair> pairs;
  for (const auto& item : manifest.at("items")) {
    Pair p{ten::load(dir / item.at("input").get<std::string>()), ten::load(dir / item.at("target").get<std::string>())};
    if (p.input.shape() != p.target.shape()) {
      throw std::runtime_error(fmt::format("{}: input and target shapes differ", path.string()));
    }
    pairs.push_back(std::move(p));
  }
  if (pairs.empty()) {
    throw std::runtime_error(fmt::format("{}: dataset is empty", path.string()));
  }
  return pairs;
}

} // namespace cmr::kspace
