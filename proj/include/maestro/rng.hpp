#pragma once

#include <cstdint>
#include <span>
#include <string_view>
#include <utility>

namespace maestro {

// Stream purposes. Each purpose gets an independent stream for the same
// (seed, epoch, tile) triple.
enum class Purpose : std::uint32_t {
  kCrop = 1,
  kTruncate = 2,
  kSelect = 3,
  kD4 = 4,
  kMaskStructured = 5,
  kMaskAdjust = 6,
  kShuffle = 7,
  kInit = 8,
  kSynth = 9,
  kAudit = 10,
};

// Identifies one random stream. Results depend only on the key, never on the
// order in which streams are created.
struct RngKey {
  std::uint64_t seed = 0;
  std::uint64_t epoch = 0;
  std::uint64_t tile = 0;
  Purpose purpose = Purpose::kInit;
  std::uint64_t sub = 0;
};

std::uint64_t splitmix64(std::uint64_t x);
std::uint64_t hash_name(std::string_view name);

// xoshiro256** seeded from a hashed RngKey. All derived distributions are
// implemented here so that sequences are identical across standard libraries.
class Rng {
 public:
  explicit Rng(const RngKey& key);
  explicit Rng(std::uint64_t seed);

  std::uint64_t next_u64();
  // Uniform in [0, n). n must be > 0.
  std::uint64_t uniform_index(std::uint64_t n);
  // Uniform in [0, 1) with 53 bits of resolution.
  double uniform01();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }
  double normal();
  bool bernoulli(double p) { return uniform01() < p; }

  template <typename T>
  void shuffle(std::span<T> items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::size_t j = uniform_index(i);
      std::swap(items[i - 1], items[j]);
    }
  }

 private:
  void seed_state(std::uint64_t seed);
  std::uint64_t s_[4];
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace maestro
