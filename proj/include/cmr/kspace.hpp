#pragma once

#include <complex>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "cmr/rng.hpp"
#include "cmr/tensor.hpp"

namespace cmr::kspace {

enum class Domain { Image, KSpace };

// Row-major h x w complex samples (std::complex stores real/imag interleaved).
struct ComplexImage {
  int h = 0;
  int w = 0;
  std::vector<std::complex<double>> data;
  Domain domain = Domain::Image;

  std::complex<double>& at(int r, int c) { return data[static_cast<std::size_t>(r) * w + c]; }
  std::complex<double> at(int r, int c) const { return data[static_cast<std::size_t>(r) * w + c]; }

  // Real image from a (1, 1, h, w) tensor.
  static ComplexImage from_real(const Tensor& x);
};

// Orthonormal centered 2-D DFT: DC sits at (h/2, w/2). Sizes must be powers
// of two.
ComplexImage fft2(const ComplexImage& img);
ComplexImage ifft2(const ComplexImage& k);

enum class MaskPattern { Equispaced, Random };

std::string pattern_name(MaskPattern p);
MaskPattern parse_pattern(const std::string& s);

// Rows are phase-encode lines.
struct SamplingMask {
  int height = 0;
  std::vector<bool> keep;
  double accel = 1.0;
  int acs_lines = 0;

  int kept() const;
  double effective_accel() const { return static_cast<double>(height) / kept(); }
};

// Equispaced keeps rows 0, ceil(R), 2 ceil(R), ...; random keeps
// round(h / R) rows in total, the non-ACS ones drawn uniformly without
// replacement. Both add the central band rows [h/2 - acs/2, h/2 - acs/2 + acs).
SamplingMask make_mask(int h, double accel, int acs_lines, RngStream& rng, MaskPattern pattern);

ComplexImage undersample(const ComplexImage& k, const SamplingMask& mask);

// |ifft2(k)| / max, as a (1, 1, h, w) tensor in [0, 1].
Tensor zero_filled_recon(const ComplexImage& k_us);

struct PhantomSpec {
  int size = 64;
  // Number of ellipse layers: body, chamber, then lesions.
  int min_ellipses = 4;
  int max_ellipses = 8;
  std::uint64_t seed = 0;
};

// Sum of supersampled ellipse layers, clamped to [0, 1]; (1, 1, size, size).
Tensor phantom(const PhantomSpec& spec);

// Corner-aligned bilinear resampling of every (n, c) plane.
Tensor resize_bilinear(const Tensor& x, int out_h, int out_w);

// x / max(x); all-zero input stays zero.
Tensor normalize_max(const Tensor& x);

struct DatasetSpec {
  int count = 10;
  int size = 64;
  double accel = 4.0;
  int acs_lines = 16;
  MaskPattern pattern = MaskPattern::Equispaced;
  std::uint64_t seed = 0;
  std::string prefix = "item";
  int min_ellipses = 4;
  int max_ellipses = 8;

  nlohmann::json to_json() const;
};

// Writes {prefix}_{index}_input.ten / _target.ten pairs and manifest.json;
// returns the manifest.
nlohmann::json gen_dataset(const DatasetSpec& spec, const std::filesystem::path& out_dir);

struct Pair {
  Tensor input;
  Tensor target;
};

// Loads every pair listed in dir/manifest.json.
std::vector<Pair> load_dataset(const std::filesystem::path& dir);

} // namespace cmr::kspace
