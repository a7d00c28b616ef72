#pragma once

// Diffusion noise schedule, the straight flow path, and time bookkeeping.

#include "flowlab/numcore/matrix.hpp"

#include <cmath>
#include <vector>

namespace flowlab {

/// Per-step diffusion coefficients, indexed 1..T (alpha_bar(0) == 1).
class NoiseSchedule {
 public:
  /// alpha_bar(s) = 1 - sqrt(s + 1e-4) on s = t/T, discretized through per-step betas capped at 0.999.
  static NoiseSchedule sqrt_schedule(int steps);
  static NoiseSchedule from_betas(std::vector<double> betas);

  int steps() const { return static_cast<int>(betas_.size()); }
  double beta(int t) const { return betas_.at(checked(t) - 1); }
  double alpha(int t) const { return 1.0 - beta(t); }
  double alpha_bar(int t) const { return t == 0 ? 1.0 : alpha_bars_.at(checked(t) - 1); }

  struct Posterior {
    double coef_z0;
    double coef_zt;
    double variance;
  };
  /// Coefficients of q(z_{t-1} | z_t, z0).
  Posterior posterior(int t) const;

 private:
  explicit NoiseSchedule(std::vector<double> betas);
  std::size_t checked(int t) const;

  std::vector<double> betas_;
  std::vector<double> alpha_bars_;
};

/// Discrete flow grid t_k = k/T, k = 0..T.
struct FlowTimeGrid {
  int steps = 20;
  double rescale_max = 1000.0;

  double t(int k) const { return static_cast<double>(k) / steps; }
  double dt() const { return 1.0 / steps; }
};

/// rescale_max * t_step / T.
double rescale_time(int t_step, int steps, double rescale_max = 1000.0);

/// sqrt(alpha_bar_t) z0 + sqrt(1 - alpha_bar_t) eps.
template <typename Scalar>
Matrix<Scalar> diffusion_forward(const Matrix<Scalar>& z0, const Matrix<Scalar>& eps, int t_step,
                                 const NoiseSchedule& sched) {
  require_same_shape(z0, eps, "diffusion_forward");
  if (t_step < 1 || t_step > sched.steps()) {
    throw std::out_of_range("diffusion_forward: t_step " + std::to_string(t_step) + " outside 1.." +
                            std::to_string(sched.steps()));
  }
  const double ab = sched.alpha_bar(t_step);
  return (static_cast<Scalar>(std::sqrt(ab)) * z0 + static_cast<Scalar>(std::sqrt(1.0 - ab)) * eps).eval();
}

/// t z1 + (1 - t) z0.
template <typename Scalar>
Matrix<Scalar> flow_interpolate(const Matrix<Scalar>& z0, const Matrix<Scalar>& z1, double t) {
  require_same_shape(z0, z1, "flow_interpolate");
  if (!(t >= 0.0 && t <= 1.0)) throw std::out_of_range("flow_interpolate: t outside [0,1]");
  if (t == 0.0) return z0;
  if (t == 1.0) return z1;
  return (static_cast<Scalar>(t) * z1 + static_cast<Scalar>(1.0 - t) * z0).eval();
}

/// One reverse diffusion step; the noise term is dropped at t_step == 1.
template <typename Scalar>
Matrix<Scalar> ancestral_posterior(const Matrix<Scalar>& z_t, const Matrix<Scalar>& z0_pred, int t_step,
                                   const NoiseSchedule& sched, const Matrix<Scalar>& noise) {
  require_same_shape(z_t, z0_pred, "ancestral_posterior");
  if (t_step < 1 || t_step > sched.steps()) {
    throw std::out_of_range("ancestral_posterior: t_step " + std::to_string(t_step) + " outside 1.." +
                            std::to_string(sched.steps()));
  }
  const auto p = sched.posterior(t_step);
  Matrix<Scalar> mean = static_cast<Scalar>(p.coef_z0) * z0_pred + static_cast<Scalar>(p.coef_zt) * z_t;
  if (t_step == 1) return mean;
  require_same_shape(z_t, noise, "ancestral_posterior noise");
  return (mean + static_cast<Scalar>(std::sqrt(p.variance)) * noise).eval();
}

}  // namespace flowlab
