#ifndef SSRE_RNG_HPP
#define SSRE_RNG_HPP

#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace ssre {

// Seeded random source with hand-rolled distributions. The standard library
// engines are portable but its distributions are not; everything downstream
// of a seed must replay identically across toolchains, so the transforms
// live here.
class Rng {
 public:
  explicit Rng(uint64_t seed) : engine_(seed) {}

  uint64_t next_u64() { return engine_(); }

  // Uniform on [0, 1), 53-bit resolution.
  double uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  // Uniform integer in [0, n).
  uint64_t uniform_index(uint64_t n);

  double normal();                    // standard normal, polar method
  double gamma(double shape);         // Gamma(shape, 1), Marsaglia-Tsang
  double beta(double alpha, double beta);

  // Fisher-Yates shuffle.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = static_cast<size_t>(uniform_index(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
};

// Derive an independent stream seed from a base seed and a role tag, so that
// e.g. batch shuffling and pair sampling never share a stream.
uint64_t derive_seed(uint64_t base, const std::string& tag);

}  // namespace ssre

#endif  // SSRE_RNG_HPP
