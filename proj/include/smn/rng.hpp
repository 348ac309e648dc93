#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace smn {

/// Deterministic random stream derived from a root seed and a stream label.
/// All randomness in the project flows through named sub-streams ("data",
/// "init", "shuffle", ...) so components can be re-seeded independently.
/// Value generation is hand-rolled on top of mt19937_64 so results do not
/// depend on the standard library's distribution implementations.
class RandomStream {
 public:
  RandomStream(uint64_t seed, std::string_view label);

  /// Uniform in [0, 1).
  double uniform();
  /// Uniform in [lo, hi).
  double uniform(double lo, double hi);
  /// Standard normal (Box-Muller).
  double gaussian();
  double gaussian(double mean, double stddev);
  /// Uniform integer in [0, n). n must be > 0.
  uint64_t bounded(uint64_t n);

  uint64_t next_u64() { return gen_(); }

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = static_cast<size_t>(bounded(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::mt19937_64 gen_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

/// FNV-1a hash of a label, used to derive sub-stream seeds.
uint64_t hash_label(std::string_view label);

}  // namespace smn
