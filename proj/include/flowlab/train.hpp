#pragma once

// Diffusion pretraining, straight-flow fine-tuning, time-step sampling, EMA and
// the optimizer loop.

#include "flowlab/corpus.hpp"
#include "flowlab/model.hpp"
#include "flowlab/schedule.hpp"

#include <array>
#include <cstdint>
#include <deque>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace flowlab {

enum class LossMode { kXLoss, kVWeighted };
enum class TimeStrategy { kUniform, kLogitNormal, kLossAware };

std::string to_string(LossMode mode);
std::string to_string(TimeStrategy strategy);
LossMode parse_loss_mode(const std::string& name);
TimeStrategy parse_time_strategy(const std::string& name);

struct TrainConfig {
  double lr = 1e-3;
  int batch_size = 32;
  int epochs = 1;
  int warmup_steps = 100;
  double dropout = 0.0;
  double ema_decay = 0.999;
  int flow_steps = 20;  // T of the flow grid
  double reg_rate = 0.0;
  LossMode loss_mode = LossMode::kXLoss;
  PredTarget pred_target = PredTarget::kZ0;
  TimeStrategy time_strategy = TimeStrategy::kUniform;
  double logit_mu = 0.0;
  double logit_sigma = 1.0;
  double grad_clip = 1.0;
  std::uint64_t seed = 0;

  void validate() const;
};

struct LossBreakdown {
  double recon = 0;
  double ce = 0;
  double reg = 0;
  double total = 0;
  double t_used = 0;  // mean continuous time of the batch, in (0, 1]
};

struct StepReport {
  long step = 0;
  LossBreakdown loss;
  double grad_norm = 0;  // global norm before clipping
  double lr = 0;
};

/// Running per-bin history of recent losses for loss-aware time sampling.
class LossHistory {
 public:
  static constexpr int kWindow = 10;

  explicit LossHistory(int bins = 1) : bins_(static_cast<std::size_t>(bins)) {}

  void record(int t_step, double loss);
  bool warmed_up() const;
  /// Mean squared loss of bin t_step (1-based) over its window.
  double mean_square(int t_step) const;
  int bins() const { return static_cast<int>(bins_.size()); }

 private:
  std::vector<std::deque<double>> bins_;
};

/// t_step in {1..T}.
int sample_timestep(TimeStrategy strategy, int steps, const LossHistory& history, std::mt19937_64& rng,
                    double mu = 0.0, double sigma = 1.0);

/// ema <- decay ema + (1 - decay) params, elementwise over matching arrays.
void ema_update(std::span<Matrix<float>* const> ema, std::span<const Matrix<float>* const> params, double decay);
void ema_update(LanguageModel& ema, const LanguageModel& params, double decay);

/// Linear warmup from 0 to cfg.lr over warmup_steps, constant afterwards.
double lr_at(long step, const TrainConfig& cfg);

/// Optimizer, EMA and random state for one training run. The single writer of
/// `model` and `ema`.
class TrainState {
 public:
  TrainState(LanguageModel model, const TrainConfig& cfg, int time_bins);

  LanguageModel model;
  LanguageModel ema;
  long step = 0;
  std::mt19937_64 rng;
  LossHistory history;

  /// Adam update with global-norm clipping; returns the pre-clip norm.
  double apply_gradients(const std::vector<Matrix<float>>& grads, double lr, double clip);

 private:
  std::vector<Matrix<float>> m_;
  std::vector<Matrix<float>> v_;
  long adam_t_ = 0;
};

/// Test hooks for a single optimizer step.
struct StepOverrides {
  std::optional<int> t_step;  // force every item's time step
  bool apply = true;          // false: compute losses only, leave parameters untouched
};

/// One diffusion step: noise only the target rows, regress z0, anchor with CE.
StepReport pretrain_diffusion_step(std::span<const EncodedPair> batch, TrainState& state, const NoiseSchedule& sched,
                                   const TrainConfig& cfg, const StepOverrides& overrides = {});

/// One straight-flow fine-tuning step against a frozen reference model.
StepReport flow_finetune_step(std::span<const EncodedPair> batch, TrainState& state, const LanguageModel& reference,
                              const TrainConfig& cfg, const StepOverrides& overrides = {});

using StepLogger = std::function<void(const StepReport&)>;

/// cfg.epochs passes over `data` in seeded shuffled batches.
void pretrain(TrainState& state, std::span<const EncodedPair> data, const NoiseSchedule& sched,
              const TrainConfig& cfg, const StepLogger& log = {});
void finetune(TrainState& state, const LanguageModel& reference, std::span<const EncodedPair> data,
              const TrainConfig& cfg, const StepLogger& log = {});

/// Corruption path a model was trained on, for paired loss probes.
struct ProbePath {
  enum class Kind { kFlow, kDiffusion };
  Kind kind = Kind::kFlow;
  int steps = 20;
  const NoiseSchedule* schedule = nullptr;  // required for kDiffusion

  static ProbePath flow(int steps) { return {Kind::kFlow, steps, nullptr}; }
  static ProbePath diffusion(const NoiseSchedule& s) { return {Kind::kDiffusion, s.steps(), &s}; }
};

/// Mean x-loss in each contiguous quarter of the time steps, q0 nearest clean data.
/// Noise, step choices and examples are fixed by `seed`, so two calls with the same
/// probe set and seed are paired.
std::array<double, 4> loss_quartile_probe(const Predictor& predictor, const EmbeddingTable<float>& table,
                                          const ProbePath& path, std::span<const EncodedPair> probe_set,
                                          std::uint64_t seed = 1234, int draws_per_quarter = 2);

std::string log_header();
std::string format_log_line(const StepReport& report);

}  // namespace flowlab
