#pragma once
#include <cstdint>
#include <initializer_list>
#include <random>

namespace dflow {

// splitmix64 finalizer; used to derive independent substream seeds from
// (master seed, stream ids).  All randomness in the library flows through
// RngStream so that runs are bitwise reproducible for any thread count.
inline std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline std::uint64_t substream_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> ids) {
  std::uint64_t h = mix64(seed);
  for (auto id : ids) h = mix64(h ^ (id + 0x632be59bd9b4e019ULL));
  return h;
}

class RngStream {
 public:
  explicit RngStream(std::uint64_t seed) : eng_(seed) {}
  static RngStream substream(std::uint64_t seed, std::initializer_list<std::uint64_t> ids) {
    return RngStream(substream_seed(seed, ids));
  }

  // uniform on the open interval (0,1); never returns an endpoint
  double uniform() {
    return (double(eng_() >> 11) + 0.5) * 0x1.0p-53;
  }

  // standard normal via Box-Muller with spare caching
  double gaussian() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    const double u1 = uniform(), u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 6.283185307179586476925287 * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

 private:
  std::mt19937_64 eng_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace dflow
