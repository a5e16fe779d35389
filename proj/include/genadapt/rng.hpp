#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace genadapt {

std::uint64_t fnv1a64(const std::string& s);
std::uint64_t mix_seed(std::uint64_t seed, const std::string& tag);

// mt19937_64 with hand-rolled value generation so every draw is fully
// specified by the standard (std distributions are implementation-defined).
// State round-trips exactly through serialize()/deserialize().
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  // uniform in [0, 1) with 53 bits of mantissa
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // standard normal via Box-Muller, no cached spare (keeps state = engine state)
  double normal();

  // unbiased integer in [0, n)
  std::uint64_t randint(std::uint64_t n);

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(randint(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  std::string serialize() const;
  void deserialize(const std::string& state);

 private:
  std::mt19937_64 engine_;
};

}  // namespace genadapt
