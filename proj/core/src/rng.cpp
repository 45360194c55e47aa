#include "brmil/rng.hpp"

#include <cmath>

namespace brmil {

double RngState::normal() {
  // Box-Muller, cosine branch only; u1 kept away from zero.
  double u1 = uniform();
  double u2 = uniform();
  if (u1 < 1e-300) u1 = 1e-300;
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

std::uint64_t RngState::uniform_int(std::uint64_t n) {
  // Rejection-free modulo is biased for huge n; fine for index draws here,
  // but keep the debiased loop anyway since it is cheap.
  const std::uint64_t limit = ~0ull - (~0ull % n);
  std::uint64_t x = next_u64();
  while (x >= limit) x = next_u64();
  return x % n;
}

}  // namespace brmil
