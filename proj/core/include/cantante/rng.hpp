#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

namespace cantante {

/// SplitMix64 finalizer. Stable across platforms and compilers, which is what
/// run reproducibility and resume rely on (no std:: distribution is used
/// anywhere on a seeded path).
constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t hash_combine(std::uint64_t seed, std::uint64_t v) {
  return splitmix64(seed ^ (v + 0x9e3779b97f4a7c15ULL + (seed << 6) + (seed >> 2)));
}

/// FNV-1a over the bytes of `s`.
constexpr std::uint64_t hash_str(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Counter-based deterministic random stream. The full state is (key, counter),
/// so a stream can be persisted and restored exactly by storing two integers.
class SeedStream {
 public:
  explicit SeedStream(std::uint64_t key, std::uint64_t counter = 0)
      : key_(key), counter_(counter) {}

  std::uint64_t next_u64() { return splitmix64(hash_combine(key_, counter_++)); }

  /// Uniform double in [0, 1).
  double next_unit() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  /// Uniform integer in [0, bound). bound must be > 0.
  std::uint64_t next_below(std::uint64_t bound) {
    // Rejection sampling keeps the draw unbiased without __int128 tricks.
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
    std::uint64_t v;
    do {
      v = next_u64();
    } while (v >= limit);
    return v % bound;
  }

  std::uint64_t key() const { return key_; }
  std::uint64_t counter() const { return counter_; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_;
};

inline std::uint64_t derive_seed(std::uint64_t root, std::string_view purpose) {
  return hash_combine(root, hash_str(purpose));
}
inline std::uint64_t derive_seed(std::uint64_t root, std::string_view purpose,
                                 std::uint64_t a) {
  return hash_combine(derive_seed(root, purpose), a);
}
inline std::uint64_t derive_seed(std::uint64_t root, std::string_view purpose,
                                 std::uint64_t a, std::uint64_t b) {
  return hash_combine(derive_seed(root, purpose, a), b);
}
inline std::uint64_t derive_seed(std::uint64_t root, std::string_view purpose,
                                 std::string_view a) {
  return hash_combine(derive_seed(root, purpose), hash_str(a));
}
inline std::uint64_t derive_seed(std::uint64_t root, std::string_view purpose,
                                 std::string_view a, std::uint64_t b) {
  return hash_combine(derive_seed(root, purpose, a), b);
}

/// Fisher-Yates with SeedStream draws; deterministic for a given (key, counter).
template <typename T>
void deterministic_shuffle(std::vector<T>& v, SeedStream& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    std::swap(v[i - 1], v[rng.next_below(i)]);
  }
}

}  // namespace cantante
