#include "flowlab/schedule.hpp"

#include <algorithm>
#include <stdexcept>
#include <string>

namespace flowlab {

NoiseSchedule::NoiseSchedule(std::vector<double> betas) : betas_(std::move(betas)) {
  if (betas_.empty()) throw std::invalid_argument("noise schedule needs at least one step");
  double prod = 1.0;
  alpha_bars_.reserve(betas_.size());
  for (double b : betas_) {
    if (!(b >= 0.0 && b <= 1.0)) throw std::invalid_argument("noise schedule beta outside [0,1]");
    prod *= 1.0 - b;
    alpha_bars_.push_back(prod);
  }
}

NoiseSchedule NoiseSchedule::sqrt_schedule(int steps) {
  if (steps < 1) throw std::invalid_argument("noise schedule needs at least one step");
  auto alpha_bar = [](double s) { return 1.0 - std::sqrt(s + 0.0001); };
  std::vector<double> betas;
  betas.reserve(static_cast<std::size_t>(steps));
  for (int i = 0; i < steps; ++i) {
    const double s1 = static_cast<double>(i) / steps;
    const double s2 = static_cast<double>(i + 1) / steps;
    betas.push_back(std::min(1.0 - alpha_bar(s2) / alpha_bar(s1), 0.999));
  }
  return NoiseSchedule(std::move(betas));
}

NoiseSchedule NoiseSchedule::from_betas(std::vector<double> betas) { return NoiseSchedule(std::move(betas)); }

std::size_t NoiseSchedule::checked(int t) const {
  if (t < 1 || t > steps()) {
    throw std::out_of_range("schedule step " + std::to_string(t) + " outside 1.." + std::to_string(steps()));
  }
  return static_cast<std::size_t>(t);
}

NoiseSchedule::Posterior NoiseSchedule::posterior(int t) const {
  const double ab = alpha_bar(t);
  const double ab_prev = alpha_bar(t - 1);
  const double b = beta(t);
  const double denom = 1.0 - ab;
  if (denom <= 0.0) return {0.0, 1.0, 0.0};  // beta == 0 for every step so far: chain is frozen
  return {std::sqrt(ab_prev) * b / denom, std::sqrt(alpha(t)) * (1.0 - ab_prev) / denom,
          (1.0 - ab_prev) / denom * b};
}

double rescale_time(int t_step, int steps, double rescale_max) {
  if (steps < 1 || t_step < 1 || t_step > steps) {
    throw std::out_of_range("rescale_time: t_step " + std::to_string(t_step) + " outside 1.." +
                            std::to_string(steps));
  }
  return rescale_max * static_cast<double>(t_step) / static_cast<double>(steps);
}

}  // namespace flowlab
