#pragma once

#include <cmath>
#include <cstdint>

namespace offnadir {

namespace rngdetail {

constexpr uint64_t kGamma = 0x9E3779B97F4A7C15ULL;
constexpr uint64_t kStreamGamma = 0xD1B54A32D192ED03ULL;
constexpr uint64_t kForkGamma = 0x8CB92BA72F3D8DD7ULL;

// splitmix64 finalizer: bijective avalanche mix
inline uint64_t mix(uint64_t z) {
  z ^= z >> 30;
  z *= 0xBF58476D1CE4E5B9ULL;
  z ^= z >> 27;
  z *= 0x94D049BB133111EBULL;
  z ^= z >> 31;
  return z;
}

inline double to_unit(uint64_t x) {  // [0,1), 53-bit
  return static_cast<double>(x >> 11) * 0x1.0p-53;
}

inline double to_unit_open(uint64_t x) {  // (0,1]
  return static_cast<double>((x >> 11) + 1) * 0x1.0p-53;
}

}  // namespace rngdetail

// Element-addressable random stream: value i is a pure function of (key, i),
// so parallel consumers can draw disjoint index ranges in any order.
struct RngStream {
  uint64_t key = 0;

  uint64_t raw(uint64_t i) const { return rngdetail::mix(key + i * rngdetail::kGamma); }
  double uniform_at(uint64_t i) const { return rngdetail::to_unit(raw(i)); }
  // Box-Muller, cosine branch; consumes logical slots 2i and 2i+1.
  double gaussian_at(uint64_t i) const {
    double u1 = rngdetail::to_unit_open(raw(2 * i));
    double u2 = rngdetail::to_unit(raw(2 * i + 1));
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }
};

// Counter-based generator. A given (seed, stream) pair always produces the
// same sequence regardless of what other Rng instances did.
class Rng {
 public:
  explicit Rng(uint64_t seed, uint64_t stream = 0)
      : seed_(seed),
        base_(rngdetail::mix(rngdetail::mix(seed + rngdetail::kGamma) ^
                             (stream * rngdetail::kStreamGamma + 1))) {}

  uint64_t seed() const { return seed_; }

  uint64_t next_u64() { return stream_for(0).raw(counter_++); }
  double uniform() { return rngdetail::to_unit(next_u64()); }
  double gaussian() {
    uint64_t i = counter_;
    counter_ += 2;
    RngStream s = stream_for(0);
    double u1 = rngdetail::to_unit_open(s.raw(i));
    double u2 = rngdetail::to_unit(s.raw(i + 1));
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }
  // uniform integer in [0, n) by scaling; fine for n << 2^53
  uint64_t uniform_index(uint64_t n) {
    return static_cast<uint64_t>(uniform() * static_cast<double>(n)) % n;
  }

  // Named substream, independent of draws made so far.
  RngStream stream(uint64_t id) const { return stream_for(id + 1); }
  // Sequentially numbered substreams (ids distinct from named ones by usage
  // convention: a given Rng uses either named or sequential streams).
  RngStream next_stream() { return stream_for(1 + stream_counter_++); }

  // Independent child generator for tag; grandchildren of distinct tags differ.
  Rng fork(uint64_t tag) const {
    Rng r(0);
    r.seed_ = seed_;
    r.base_ = rngdetail::mix(base_ + rngdetail::mix(tag + rngdetail::kForkGamma) * rngdetail::kForkGamma);
    return r;
  }

 private:
  RngStream stream_for(uint64_t sid) const {
    return RngStream{rngdetail::mix(base_ + sid * rngdetail::kStreamGamma)};
  }

  uint64_t seed_ = 0;
  uint64_t base_ = 0;
  uint64_t counter_ = 0;
  uint64_t stream_counter_ = 0;
};

}  // namespace offnadir
