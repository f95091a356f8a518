#pragma once

#include <cstdint>
#include <string>
#include <string_view>

#include "falb/tensor.hpp"

namespace falb {

/// Deterministic counter-based random stream.
///
/// The stream state is a 64-bit counter advanced by the splitmix64 golden
/// gamma; each output is the splitmix64 finalizer applied to the counter, so
/// draw i is a pure function of (seed, stream_key, i). Distinct stream keys
/// are decorrelated by hashing the key (FNV-1a) into the starting counter.
/// Gaussians come from the Box-Muller transform on two uniform draws.
///
/// Determinism contract: identical (seed, stream_key) gives an identical
/// sequence within one build. Bitwise equality across implementations is not
/// promised.
class RngStream {
 public:
  static constexpr const char* kAlgorithmId = "splitmix64+box-muller/v1";

  RngStream(uint64_t seed, std::string_view stream_key);

  uint64_t next_u64();
  /// Uniform in (0, 1].
  double next_unit();
  /// Uniform integer in [0, bound). bound must be > 0.
  uint64_t next_below(uint64_t bound);
  /// Standard normal draw.
  double next_gaussian();

  uint64_t seed() const { return seed_; }
  const std::string& stream_key() const { return key_; }

 private:
  uint64_t seed_ = 0;
  std::string key_;
  uint64_t state_ = 0;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

/// Derives a child seed for per-item streams (e.g. one stream per sample).
uint64_t derive_seed(uint64_t seed, std::string_view stream_key);

/// i.i.d. N(0, std^2) tensor, deterministic in (seed, stream_key).
/// std = 0 yields an all-zeros tensor. Zero-extent shapes are rejected.
template <typename T>
Tensor<T> gaussian_init(const Shape& shape, double std, RngStream& rng);

}  // namespace falb
