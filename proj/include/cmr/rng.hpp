#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace cmr {

// Deterministic random stream keyed by (seed, label). Draws are produced by
// a SplitMix64-seeded xoshiro256** generator and converted with portable
// arithmetic only, so the same key yields the same sequence everywhere.
class RngStream {
public:
  RngStream(std::uint64_t seed, std::string_view label);

  std::uint64_t seed() const { return seed_; }
  const std::string& label() const { return label_; }

  // Child stream with label "<label>/<suffix>".
  RngStream child(std::string_view suffix) const;

  std::uint64_t next_u64();
  // Uniform on [0, 1).
  double uniform();
  double uniform(double lo, double hi);
  // Standard normal via Box-Muller.
  double normal();
  // Uniform integer in [0, bound).
  std::uint64_t below(std::uint64_t bound);

private:
  std::uint64_t seed_;
  std::string label_;
  std::uint64_t s_[4];
  bool has_spare_ = false;
  double spare_ = 0.0;
};

} // namespace cmr
