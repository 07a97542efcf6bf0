#include "focusft/rng.hpp"

#include <cmath>

namespace focusft {

double Rng::normal() {
  if (has_cached_) {
    has_cached_ = false;
    return cached_;
  }
  double u1 = 0.0;
  do {
    u1 = uniform();
  } while (u1 <= 0.0);
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double theta = 2.0 * M_PI * u2;
  cached_ = r * std::sin(theta);
  has_cached_ = true;
  return r * std::cos(theta);
}

uint64_t mix_seed(uint64_t run_seed, uint64_t step_index) {
  Rng rng(run_seed ^ (0xD1B54A32D192ED03ULL * (step_index + 1)));
  return rng.next_u64();
}

}  // namespace focusft
