#include "falb/rng.hpp"

#include <cmath>
#include <stdexcept>

namespace falb {
namespace {

constexpr uint64_t kGamma = 0x9E3779B97F4A7C15ULL;

inline uint64_t mix64(uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

inline uint64_t fnv1a64(std::string_view s) {
  uint64_t h = 0xCBF29CE484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001B3ULL;
  }
  return h;
}

}  // namespace

RngStream::RngStream(uint64_t seed, std::string_view stream_key)
    : seed_(seed), key_(stream_key) {
  // Decouple streams by running the seed and hashed key through the
  // finalizer twice before counting starts.
  state_ = mix64(mix64(seed + kGamma) ^ fnv1a64(stream_key));
}

uint64_t RngStream::next_u64() {
  state_ += kGamma;
  return mix64(state_);
}

double RngStream::next_unit() {
  // 53 random bits; +1 keeps the value in (0, 1] so log() is safe.
  return static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;
}

uint64_t RngStream::next_below(uint64_t bound) {
  if (bound == 0) throw std::invalid_argument("rng: next_below(0)");
  // Rejection sampling to avoid modulo bias.
  uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
  uint64_t x;
  do {
    x = next_u64();
  } while (x >= limit);
  return x % bound;
}

double RngStream::next_gaussian() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double u1 = next_unit();
  double u2 = next_unit();
  double r = std::sqrt(-2.0 * std::log(u1));
  double theta = 2.0 * M_PI * u2;
  spare_ = r * std::sin(theta);
  has_spare_ = true;
  return r * std::cos(theta);
}

uint64_t derive_seed(uint64_t seed, std::string_view stream_key) {
  return mix64(mix64(seed + kGamma) ^ fnv1a64(stream_key));
}

template <typename T>
Tensor<T> gaussian_init(const Shape& shape, double std, RngStream& rng) {
  if (std < 0) throw std::invalid_argument("gaussian_init: negative std");
  Tensor<T> t(shape);  // rejects zero extents
  if (std == 0) return t;
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<T>(std * rng.next_gaussian());
  return t;
}

template Tensor<float> gaussian_init<float>(const Shape&, double, RngStream&);
template Tensor<double> gaussian_init<double>(const Shape&, double, RngStream&);

}  // namespace falb
