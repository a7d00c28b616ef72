#pragma once

// Loss-quartile tables, gradient-norm traces, sampler timing and straightness stats.

#include "flowlab/checkpoint.hpp"
#include "flowlab/sample.hpp"
#include "flowlab/train.hpp"

#include <array>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace flowlab {

struct TimingResult {
  SamplerKind kind = SamplerKind::kFlowAvg;
  int steps = 0;
  int batch = 0;
  int repeats = 0;
  double seconds_per_sample = 0;  // median over repeats
  long forwards_per_repeat = 0;
};

/// Runs the prompts one after another on the calling thread. Only the latent-update
/// loop is timed; source embedding and rounding are outside the clock.
TimingResult time_sampler(const Predictor& predictor, const EmbeddingTable<float>& table, const NoiseSchedule& sched,
                          SamplerKind kind, int steps, std::span<const EncodedPair> prompts, int repeats,
                          std::uint64_t seed);

struct GradNormSummary {
  std::vector<double> series;
  double mean = 0;
  double p95 = 0;  // nearest rank
  double max = 0;
};

/// Reads the tab-separated training log and its grad_norm column.
GradNormSummary grad_norm_trace(std::istream& log);
GradNormSummary summarize_norms(std::vector<double> series);

/// Diffusion checkpoints are probed on their diffusion chain, flow checkpoints on
/// the flow grid; the EMA weights are used.
std::array<double, 4> probe_checkpoint(const Checkpoint& ckpt, std::span<const EncodedPair> probe_set,
                                       std::uint64_t seed);

struct QuartileReport {
  std::array<double, 4> diffusion{};
  std::array<double, 4> flow{};
};

/// Throws VocabMismatch when the two checkpoints were trained on different vocabularies.
QuartileReport quartile_report(const Checkpoint& diffusion, const Checkpoint& flow,
                               std::span<const EncodedPair> probe_set, std::uint64_t seed);

struct StraightnessStats {
  std::vector<double> values;  // one per prompt
  double mean = 0;
  double min = 0;
  double max = 0;
};

/// Trajectory seeds come from candidate_seed(seed, prompt, 0), so two samplers
/// given the same seed start from the same Gaussian draws.
StraightnessStats straightness_report(const Predictor& predictor, const EmbeddingTable<float>& table,
                                      const NoiseSchedule& sched, SamplerKind kind, int steps,
                                      std::span<const EncodedPair> prompts, std::uint64_t seed);

void write_quartile_csv(std::ostream& out, const QuartileReport& r);
void write_timing_csv(std::ostream& out, std::span<const TimingResult> rows);
template <typename T>
struct Labeled {
  std::string label;
  T value;
};

void write_grad_norm_csv(std::ostream& out, std::span<const Labeled<GradNormSummary>> runs);
void write_straightness_csv(std::ostream& out, std::span<const Labeled<StraightnessStats>> runs);

}  // namespace flowlab
