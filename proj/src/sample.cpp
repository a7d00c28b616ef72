#include "flowlab/sample.hpp"

#include "flowlab/random.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ostream>

namespace flowlab {

std::string to_string(SamplerKind kind) {
  switch (kind) {
    case SamplerKind::kFlowAvg: return "flow-avg";
    case SamplerKind::kFlowInstant: return "flow-instant";
    case SamplerKind::kDiffusionAncestral: return "diffusion";
  }
  return "?";
}

SamplerKind parse_sampler(const std::string& name) {
  for (auto k : {SamplerKind::kFlowAvg, SamplerKind::kFlowInstant, SamplerKind::kDiffusionAncestral}) {
    if (to_string(k) == name) return k;
  }
  throw std::invalid_argument("unknown sampler '" + name + "' (expected flow-avg, flow-instant or diffusion)");
}

namespace {

using Clock = std::chrono::steady_clock;

void check_request(const SampleRequest& req) {
  if (req.steps < 1) throw std::invalid_argument("sampler: step count must be at least 1");
  if (req.target_len < 1) throw std::invalid_argument("sampler: target length must be at least 1");
  if (req.src.empty()) throw std::invalid_argument("sampler: empty source");
}

// Source rows stay clean; only the target block is replaced each step.
class SequenceBuffer {
 public:
  SequenceBuffer(const Matrix<float>& src, Index target_len) : z_(src.rows() + target_len, src.cols()) {
    z_.topRows(src.rows()) = src;
    src_len_ = src.rows();
  }
  const Matrix<float>& with_target(const Matrix<float>& zy) {
    z_.bottomRows(zy.rows()) = zy;
    return z_;
  }
  Index src_len() const { return src_len_; }

 private:
  Matrix<float> z_;
  Index src_len_ = 0;
};

void maybe_record(std::optional<Trajectory>& traj, double t, const Matrix<float>& zy) {
  if (!traj) return;
  traj->t.push_back(t);
  traj->latents.push_back(zy);
}

std::optional<Trajectory> start_trajectory(const SampleRequest& req) {
  if (!req.record_trajectory) return std::nullopt;
  Trajectory t;
  t.sampler = to_string(req.kind);
  t.steps = req.steps;
  t.seed = req.seed;
  return t;
}

template <typename UpdateFn>
SampleResult flow_loop(const Predictor& predictor, const EmbeddingTable<float>& table, const SampleRequest& req,
                       UpdateFn&& update) {
  check_request(req);
  std::mt19937_64 rng(req.seed);
  Matrix<float> zy = gaussian_matrix<float>(req.target_len, table.dim(), rng);
  SequenceBuffer buf(embed(std::span<const int>(req.src), table), req.target_len);

  SampleResult res;
  res.trajectory = start_trajectory(req);
  maybe_record(res.trajectory, 1.0, zy);
  const int n = req.steps;
  const double dt = 1.0 / n;
  const auto start = Clock::now();
  for (int k = n; k >= 1; --k) {
    const double t = static_cast<double>(k) / n;
    Matrix<float> pred = predictor(buf.with_target(zy), buf.src_len(), t * req.rescale_max);
    ++res.forwards;
    zy = update(zy, std::move(pred), t, dt);
    maybe_record(res.trajectory, static_cast<double>(k - 1) / n, zy);
  }
  res.loop_seconds = std::chrono::duration<double>(Clock::now() - start).count();
  res.ids = round_tokens(zy, table);
  return res;
}

}  // namespace

SampleResult flowlm_sample(const Predictor& predictor, const EmbeddingTable<float>& table, const SampleRequest& req) {
  if (predictor.target != PredTarget::kZ0) {
    throw SamplerMismatch("flow-avg sampler needs a Z0-predicting model, got " + to_string(predictor.target));
  }
  return flow_loop(predictor, table, req, [&](const Matrix<float>& zy, Matrix<float> z0_pred, double t, double dt) {
    if (req.clamp) z0_pred = clamp_to_embeddings(z0_pred, table);
    return euler_step_avg(zy, z0_pred, t, dt);
  });
}

SampleResult instant_velocity_sample(const Predictor& predictor, const EmbeddingTable<float>& table,
                                     const SampleRequest& req) {
  if (predictor.target != PredTarget::kVelocity) {
    throw SamplerMismatch("flow-instant sampler needs a VELOCITY-predicting model, got " +
                          to_string(predictor.target));
  }
  return flow_loop(predictor, table, req, [](const Matrix<float>& zy, const Matrix<float>& v, double, double dt) {
    return (zy - static_cast<float>(dt) * v).eval();
  });
}

SampleResult diffusion_sample(const Predictor& predictor, const EmbeddingTable<float>& table,
                              const NoiseSchedule& sched, const SampleRequest& req) {
  check_request(req);
  if (predictor.target != PredTarget::kZ0) {
    throw SamplerMismatch("diffusion sampler needs a Z0-predicting model, got " + to_string(predictor.target));
  }
  if (req.steps != sched.steps()) {
    throw std::invalid_argument("diffusion sampler: step count " + std::to_string(req.steps) +
                                " differs from schedule length " + std::to_string(sched.steps()));
  }
  std::mt19937_64 rng(req.seed);
  Matrix<float> zy = gaussian_matrix<float>(req.target_len, table.dim(), rng);
  SequenceBuffer buf(embed(std::span<const int>(req.src), table), req.target_len);

  SampleResult res;
  res.trajectory = start_trajectory(req);
  maybe_record(res.trajectory, 1.0, zy);
  const int n = sched.steps();
  const auto start = Clock::now();
  Matrix<float> noise;
  for (int k = n; k >= 1; --k) {
    Matrix<float> z0_pred = predictor(buf.with_target(zy), buf.src_len(), rescale_time(k, n, req.rescale_max));
    ++res.forwards;
    if (req.clamp) z0_pred = clamp_to_embeddings(z0_pred, table);
    if (k > 1) noise = gaussian_matrix<float>(zy.rows(), zy.cols(), rng);
    zy = ancestral_posterior(zy, z0_pred, k, sched, noise);
    maybe_record(res.trajectory, static_cast<double>(k - 1) / n, zy);
  }
  res.loop_seconds = std::chrono::duration<double>(Clock::now() - start).count();
  res.ids = round_tokens(zy, table);
  return res;
}

SampleResult run_sampler(const Predictor& predictor, const EmbeddingTable<float>& table, const NoiseSchedule& sched,
                         const SampleRequest& req) {
  switch (req.kind) {
    case SamplerKind::kFlowAvg: return flowlm_sample(predictor, table, req);
    case SamplerKind::kFlowInstant: return instant_velocity_sample(predictor, table, req);
    case SamplerKind::kDiffusionAncestral: return diffusion_sample(predictor, table, sched, req);
  }
  throw std::invalid_argument("unknown sampler kind");
}

std::uint64_t candidate_seed(std::uint64_t run_seed, std::size_t item, int k) {
  // splitmix64 over the packed triple
  std::uint64_t x = run_seed * 0x9e3779b97f4a7c15ull + static_cast<std::uint64_t>(item) * 0xbf58476d1ce4e5b9ull +
                    static_cast<std::uint64_t>(k) * 0x94d049bb133111ebull;
  x ^= x >> 30;
  x *= 0xbf58476d1ce4e5b9ull;
  x ^= x >> 27;
  x *= 0x94d049bb133111ebull;
  x ^= x >> 31;
  return x;
}

double straightness(const Trajectory& traj) {
  if (traj.latents.size() < 2) throw std::invalid_argument("straightness: need at least two snapshots");
  std::vector<Matrix<double>> pts;
  pts.reserve(traj.latents.size());
  for (const auto& z : traj.latents) pts.push_back(z.cast<double>());
  double length = 0;
  for (std::size_t k = 0; k + 1 < pts.size(); ++k) length += (pts[k + 1] - pts[k]).norm();
  if (length == 0.0) return 1.0;
  // rounding can push a collinear path a few ulps past 1
  return std::min(1.0, (pts.back() - pts.front()).norm() / length);
}

void write_trajectory_csv(std::ostream& out, const Trajectory& traj, Index position) {
  if (traj.latents.empty()) throw std::invalid_argument("trajectory is empty");
  const Index dims = traj.latents.front().cols();
  if (position < 0 || position >= traj.latents.front().rows()) {
    throw std::out_of_range("trajectory position " + std::to_string(position) + " out of range");
  }
  out << "# sampler=" << traj.sampler << " steps=" << traj.steps << " seed=" << traj.seed
      << " position=" << position << '\n';
  out << "k,t";
  for (Index d = 0; d < dims; ++d) out << ",dim" << d;
  out << '\n';
  char buf[32];
  for (std::size_t k = 0; k < traj.latents.size(); ++k) {
    std::snprintf(buf, sizeof(buf), "%.9g", traj.t[k]);
    out << k << ',' << buf;
    for (Index d = 0; d < dims; ++d) {
      std::snprintf(buf, sizeof(buf), "%.9g", static_cast<double>(traj.latents[k](position, d)));
      out << ',' << buf;
    }
    out << '\n';
  }
}

}  // namespace flowlab
