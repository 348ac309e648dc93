#include "smn/rng.hpp"

#include <cmath>

#include "smn/error.hpp"

namespace smn {

uint64_t hash_label(std::string_view label) {
  uint64_t h = 0xcbf29ce484222325ull;
  for (char c : label) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ull;
  }
  return h;
}

RandomStream::RandomStream(uint64_t seed, std::string_view label)
    : gen_(seed ^ hash_label(label)) {
  // Burn a few values so streams with nearby seeds decorrelate.
  for (int i = 0; i < 8; ++i) gen_();
}

double RandomStream::uniform() {
  // 53 mantissa bits -> exact double in [0, 1).
  return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
}

double RandomStream::uniform(double lo, double hi) {
  return lo + (hi - lo) * uniform();
}

double RandomStream::gaussian() {
  if (have_spare_) {
    have_spare_ = false;
    return spare_;
  }
  double u1 = uniform();
  double u2 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  double r = std::sqrt(-2.0 * std::log(u1));
  double a = 2.0 * M_PI * u2;
  spare_ = r * std::sin(a);
  have_spare_ = true;
  return r * std::cos(a);
}

double RandomStream::gaussian(double mean, double stddev) {
  return mean + stddev * gaussian();
}

uint64_t RandomStream::bounded(uint64_t n) {
  if (n == 0) throw contract_error("RandomStream::bounded: n must be > 0");
  // Rejection sampling keeps the draw unbiased.
  uint64_t limit = UINT64_MAX - UINT64_MAX % n;
  uint64_t x = gen_();
  while (x >= limit) x = gen_();
  return x % n;
}

}  // namespace smn
