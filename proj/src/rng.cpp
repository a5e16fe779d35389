#include "genadapt/rng.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

#include "genadapt/errors.hpp"

namespace genadapt {

std::uint64_t fnv1a64(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t mix_seed(std::uint64_t seed, const std::string& tag) {
  // splitmix64 finalizer over (seed, tag hash)
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL + fnv1a64(tag);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

double Rng::normal() {
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::uint64_t Rng::randint(std::uint64_t n) {
  if (n == 0) throw ContractError("randint: n must be positive");
  std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
  std::uint64_t x = engine_();
  while (x >= limit) x = engine_();
  return x % n;
}

std::string Rng::serialize() const {
  std::ostringstream os;
  os << engine_;
  return os.str();
}

void Rng::deserialize(const std::string& state) {
  std::istringstream is(state);
  is >> engine_;
  if (is.fail()) throw FormatError("rng: malformed serialized state");
}

}  // namespace genadapt
