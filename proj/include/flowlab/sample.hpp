#pragma once

// Few-step average-velocity sampling, the instantaneous-velocity variant, and the
// ancestral diffusion baseline.

#include "flowlab/model.hpp"
#include "flowlab/schedule.hpp"

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace flowlab {

enum class SamplerKind { kFlowAvg, kFlowInstant, kDiffusionAncestral };

/// CLI spellings: flow-avg, flow-instant, diffusion.
std::string to_string(SamplerKind kind);
SamplerKind parse_sampler(const std::string& name);

/// Target latents recorded along a sampling run, t decreasing from 1 to 0.
struct Trajectory {
  std::string sampler;
  int steps = 0;
  std::uint64_t seed = 0;
  std::vector<double> t;
  std::vector<Matrix<float>> latents;
};

struct SampleRequest {
  std::vector<int> src;  // already SEP-terminated
  int target_len = 1;
  int steps = 5;
  SamplerKind kind = SamplerKind::kFlowAvg;
  bool record_trajectory = false;
  std::uint64_t seed = 0;
  bool clamp = false;  // snap each predicted z0 to its nearest-by-score embeddings
  double rescale_max = 1000.0;
};

struct SampleResult {
  std::vector<int> ids;  // one id per target row
  std::optional<Trajectory> trajectory;
  int forwards = 0;
  double loop_seconds = 0;  // latent-update loop only
};

class SamplerMismatch : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// (z_t - z0_pred) / t.
template <typename Scalar>
Matrix<Scalar> average_velocity(const Matrix<Scalar>& z_t, const Matrix<Scalar>& z0_pred, double t) {
  require_same_shape(z_t, z0_pred, "average_velocity");
  if (!(t > 0.0)) throw std::domain_error("average_velocity: t must be positive");
  return ((z_t - z0_pred) / static_cast<Scalar>(t)).eval();
}

/// (1 - dt/t) z_t + (dt/t) z0_pred: a convex step toward the predicted endpoint.
template <typename Scalar>
Matrix<Scalar> euler_step_avg(const Matrix<Scalar>& z_t, const Matrix<Scalar>& z0_pred, double t, double dt) {
  require_same_shape(z_t, z0_pred, "euler_step_avg");
  if (!(dt > 0.0) || dt > t) throw std::domain_error("euler_step_avg: need 0 < dt <= t");
  const double w = dt / t;
  if (w == 1.0) return z0_pred;
  return (static_cast<Scalar>(1.0 - w) * z_t + static_cast<Scalar>(w) * z0_pred).eval();
}

SampleResult flowlm_sample(const Predictor& predictor, const EmbeddingTable<float>& table, const SampleRequest& req);
SampleResult instant_velocity_sample(const Predictor& predictor, const EmbeddingTable<float>& table,
                                     const SampleRequest& req);
/// req.steps must equal the schedule length.
SampleResult diffusion_sample(const Predictor& predictor, const EmbeddingTable<float>& table,
                              const NoiseSchedule& sched, const SampleRequest& req);

/// Dispatches on req.kind; `sched` is only read by the diffusion sampler.
SampleResult run_sampler(const Predictor& predictor, const EmbeddingTable<float>& table, const NoiseSchedule& sched,
                         const SampleRequest& req);

/// Seed of candidate `k` for prompt `item` under a run seed.
std::uint64_t candidate_seed(std::uint64_t run_seed, std::size_t item, int k);

/// Endpoint displacement over path length; 1.0 for a degenerate path.
double straightness(const Trajectory& traj);

/// CSV "k,t,dim0,dim1,..." for one target row of every snapshot.
void write_trajectory_csv(std::ostream& out, const Trajectory& traj, Index position);

}  // namespace flowlab
