#include "flowlab/random.hpp"
#include "flowlab/schedule.hpp"

#include <gtest/gtest.h>

#include <cmath>

namespace flowlab {
namespace {

using Md = Matrix<double>;

Md row(std::initializer_list<double> v) {
  Md m(1, static_cast<Index>(v.size()));
  Index i = 0;
  for (double x : v) m(0, i++) = x;
  return m;
}

TEST(NoiseSchedule, SqrtScheduleInvariants) {
  const auto s = NoiseSchedule::sqrt_schedule(200);
  EXPECT_EQ(s.steps(), 200);
  double prod = 1.0;
  for (int t = 1; t <= 200; ++t) {
    EXPECT_DOUBLE_EQ(s.alpha(t), 1.0 - s.beta(t));
    prod *= s.alpha(t);
    EXPECT_NEAR(s.alpha_bar(t), prod, 1e-15);
    EXPECT_GT(s.alpha_bar(t), 0.0);
    EXPECT_LT(s.alpha_bar(t), 1.0);
    EXPECT_LT(s.alpha_bar(t), s.alpha_bar(t - 1));
  }
  // telescopes to the closed form over its value at 0, away from the capped tail
  EXPECT_NEAR(s.alpha_bar(100), (1.0 - std::sqrt(0.5 + 1e-4)) / (1.0 - std::sqrt(1e-4)), 1e-12);
  EXPECT_THROW(s.beta(0), std::out_of_range);
  EXPECT_THROW(s.beta(201), std::out_of_range);
}

TEST(DiffusionForward, Limits) {
  const Md z0 = row({1, 0}), eps = row({0, 1});
  const auto clean = NoiseSchedule::from_betas({0.0});
  EXPECT_EQ(diffusion_forward(z0, eps, 1, clean), z0);
  const auto noise = NoiseSchedule::from_betas({1.0});
  EXPECT_EQ(diffusion_forward(z0, eps, 1, noise), eps);
  const auto mid = NoiseSchedule::from_betas({0.36});
  const Md z = diffusion_forward(z0, eps, 1, mid);
  EXPECT_NEAR(z(0, 0), 0.8, 1e-12);
  EXPECT_NEAR(z(0, 1), 0.6, 1e-12);
  EXPECT_THROW(diffusion_forward(z0, eps, 2, mid), std::out_of_range);
}

TEST(DiffusionForward, PreservesUnitVariance) {
  const auto s = NoiseSchedule::sqrt_schedule(200);
  std::mt19937_64 rng(1);
  for (int t : {1, 50, 120, 200}) {
    const Md z0 = gaussian_matrix<double>(1, 10000, rng);
    const Md eps = gaussian_matrix<double>(1, 10000, rng);
    const Md z = diffusion_forward(z0, eps, t, s);
    const double var = (z.array() - z.mean()).square().mean();
    EXPECT_NEAR(var, 1.0, 0.05) << "t=" << t;
  }
}

TEST(FlowInterpolate, EndpointsAndMidpoint) {
  const Md z0 = row({0, 2}), z1 = row({2, 0});
  EXPECT_EQ(flow_interpolate(z0, z1, 0.0), z0);
  EXPECT_EQ(flow_interpolate(z0, z1, 1.0), z1);
  EXPECT_EQ(flow_interpolate(z0, z1, 0.5), row({1, 1}));
  EXPECT_THROW(flow_interpolate(z0, z1, 1.5), std::out_of_range);
  EXPECT_THROW(flow_interpolate(z0, z1, -0.1), std::out_of_range);
}

TEST(FlowInterpolate, AffineOnGrid) {
  std::mt19937_64 rng(2);
  const Md z0 = gaussian_matrix<double>(3, 4, rng), z1 = gaussian_matrix<double>(3, 4, rng);
  const FlowTimeGrid g{20};
  for (int a = 0; a <= 20; a += 2) {
    for (int b = a; b <= 20; b += 2) {
      const Md mid = flow_interpolate(z0, z1, g.t((a + b) / 2));
      const Md avg = 0.5 * (flow_interpolate(z0, z1, g.t(a)) + flow_interpolate(z0, z1, g.t(b)));
      EXPECT_LT((mid - avg).cwiseAbs().maxCoeff(), 1e-12);
    }
  }
  EXPECT_DOUBLE_EQ(g.dt() * g.steps, 1.0);
}

TEST(RescaleTime, Values) {
  EXPECT_DOUBLE_EQ(rescale_time(20, 20), 1000.0);
  EXPECT_DOUBLE_EQ(rescale_time(10, 20), 500.0);
  EXPECT_DOUBLE_EQ(rescale_time(1, 20), 50.0);
  EXPECT_THROW(rescale_time(0, 20), std::out_of_range);
  EXPECT_THROW(rescale_time(21, 20), std::out_of_range);
}

TEST(AncestralPosterior, TerminalStepIsMean) {
  const auto s = NoiseSchedule::sqrt_schedule(10);
  const Md zt = row({0.3, -1.0}), z0 = row({1.0, 2.0});
  const auto p = s.posterior(1);
  const Md mean = p.coef_z0 * z0 + p.coef_zt * zt;
  EXPECT_EQ(ancestral_posterior(zt, z0, 1, s, Md(Md::Constant(1, 2, 100.0))), mean);
  // alpha_bar(0) == 1 makes the terminal mean exactly z0_pred
  EXPECT_LT((mean - z0).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(AncestralPosterior, VanishingBetaKeepsState) {
  const auto s = NoiseSchedule::from_betas({0.3, 0.2, 1e-12});
  const Md zt = row({0.3, -1.0}), z0 = row({1.0, 2.0});
  const auto p = s.posterior(3);
  EXPECT_NEAR(p.coef_z0 + p.coef_zt, 1.0, 1e-9);
  EXPECT_NEAR(p.coef_zt, 1.0, 1e-9);
  EXPECT_LT(p.variance, 1e-11);
  const Md next = ancestral_posterior(zt, z0, 3, s, Md(Md::Ones(1, 2)));
  EXPECT_LT((next - zt).cwiseAbs().maxCoeff(), 1e-5);
  const auto frozen = NoiseSchedule::from_betas({0.0, 0.0});
  EXPECT_EQ(ancestral_posterior(zt, z0, 2, frozen, Md(Md::Ones(1, 2))), zt);
}

// q(z_{t-1} | z_t, z0) for scalars by completing the square on
// N(z_{t-1}; sqrt(ab_prev) z0, 1-ab_prev) * N(z_t; sqrt(a_t) z_{t-1}, b_t).
TEST(AncestralPosterior, MatchesGaussianProduct) {
  const auto s = NoiseSchedule::sqrt_schedule(50);
  std::mt19937_64 rng(7);
  std::normal_distribution<double> n(0, 1);
  for (int t : {2, 7, 25, 50}) {
    const double z0 = n(rng), zt = n(rng);
    const double ab_prev = s.alpha_bar(t - 1), a = s.alpha(t), b = s.beta(t);
    const double prec = 1.0 / (1.0 - ab_prev) + a / b;
    const double var = 1.0 / prec;
    const double mean = var * (std::sqrt(ab_prev) * z0 / (1.0 - ab_prev) + std::sqrt(a) * zt / b);
    const auto p = s.posterior(t);
    EXPECT_NEAR(p.variance, var, 1e-10 * std::max(1.0, var)) << t;
    EXPECT_NEAR(p.coef_z0 * z0 + p.coef_zt * zt, mean, 1e-9) << t;
  }
}

// With z_t built from the true (z0, eps), the mean carries z0 with weight
// sqrt(alpha_bar_{t-1}); at eps = 0 it is exactly the clean forward sample at t-1.
TEST(AncestralPosterior, ReconstructsWithTrueNoise) {
  const auto s = NoiseSchedule::sqrt_schedule(40);
  std::mt19937_64 rng(4);
  const Md z0 = gaussian_matrix<double>(2, 3, rng);
  const Md zero = Md::Zero(2, 3);
  for (int t = 2; t <= 40; ++t) {
    const auto p = s.posterior(t);
    EXPECT_NEAR(p.coef_z0 + p.coef_zt * std::sqrt(s.alpha_bar(t)), std::sqrt(s.alpha_bar(t - 1)), 1e-5) << t;
    const Md zt = diffusion_forward(z0, zero, t, s);
    const Md mean = ancestral_posterior(zt, z0, t, s, zero);
    EXPECT_LT((mean - diffusion_forward(z0, zero, t - 1, s)).cwiseAbs().maxCoeff(), 1e-5) << t;
  }
}

}  // namespace
}  // namespace flowlab
