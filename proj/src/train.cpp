#include "flowlab/train.hpp"

#include "flowlab/parallel.hpp"
#include "flowlab/random.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

namespace flowlab {

std::string to_string(LossMode mode) { return mode == LossMode::kXLoss ? "X_LOSS" : "V_WEIGHTED"; }

std::string to_string(TimeStrategy strategy) {
  switch (strategy) {
    case TimeStrategy::kUniform: return "UNIFORM";
    case TimeStrategy::kLogitNormal: return "LOGIT_NORMAL";
    case TimeStrategy::kLossAware: return "LOSS_AWARE";
  }
  return "?";
}

LossMode parse_loss_mode(const std::string& name) {
  if (name == "X_LOSS") return LossMode::kXLoss;
  if (name == "V_WEIGHTED") return LossMode::kVWeighted;
  throw std::invalid_argument("unknown loss mode '" + name + "' (expected X_LOSS or V_WEIGHTED)");
}

TimeStrategy parse_time_strategy(const std::string& name) {
  for (auto s : {TimeStrategy::kUniform, TimeStrategy::kLogitNormal, TimeStrategy::kLossAware}) {
    if (to_string(s) == name) return s;
  }
  throw std::invalid_argument("unknown time strategy '" + name + "' (expected UNIFORM, LOGIT_NORMAL or LOSS_AWARE)");
}

void TrainConfig::validate() const {
  if (!(lr > 0)) throw std::invalid_argument("train: lr must be positive");
  if (batch_size < 1) throw std::invalid_argument("train: batch_size must be positive");
  if (epochs < 0) throw std::invalid_argument("train: epochs must be non-negative");
  if (warmup_steps < 0) throw std::invalid_argument("train: warmup_steps must be non-negative");
  if (!(dropout >= 0 && dropout < 1)) throw std::invalid_argument("train: dropout must lie in [0,1)");
  if (!(ema_decay > 0 && ema_decay < 1)) throw std::invalid_argument("train: ema_decay must lie in (0,1)");
  if (flow_steps < 1) throw std::invalid_argument("train: T must be at least 1");
  if (!(reg_rate >= 0)) throw std::invalid_argument("train: reg_rate must be non-negative");
  if (!(logit_sigma > 0)) throw std::invalid_argument("train: logit_sigma must be positive");
  if (!(grad_clip > 0)) throw std::invalid_argument("train: grad_clip must be positive");
}

// ---------------------------------------------------------------------------
// time sampling

void LossHistory::record(int t_step, double loss) {
  auto& bin = bins_.at(static_cast<std::size_t>(t_step - 1));
  bin.push_back(loss);
  if (bin.size() > kWindow) bin.pop_front();
}

bool LossHistory::warmed_up() const {
  return std::all_of(bins_.begin(), bins_.end(), [](const auto& b) { return b.size() >= kWindow; });
}

double LossHistory::mean_square(int t_step) const {
  const auto& bin = bins_.at(static_cast<std::size_t>(t_step - 1));
  if (bin.empty()) return 0.0;
  double s = 0;
  for (double l : bin) s += l * l;
  return s / static_cast<double>(bin.size());
}

int sample_timestep(TimeStrategy strategy, int steps, const LossHistory& history, std::mt19937_64& rng, double mu,
                    double sigma) {
  if (steps < 1) throw std::invalid_argument("sample_timestep: T must be at least 1");
  switch (strategy) {
    case TimeStrategy::kUniform:
      break;
    case TimeStrategy::kLogitNormal: {
      std::normal_distribution<double> n(0.0, 1.0);
      const double u = 1.0 - 1.0 / (1.0 + std::exp(-(mu + sigma * n(rng))));
      return std::clamp(static_cast<int>(std::ceil(u * steps)), 1, steps);
    }
    case TimeStrategy::kLossAware: {
      if (history.bins() != steps || !history.warmed_up()) break;
      std::vector<double> w(static_cast<std::size_t>(steps));
      for (int k = 1; k <= steps; ++k) w[static_cast<std::size_t>(k - 1)] = history.mean_square(k);
      if (std::accumulate(w.begin(), w.end(), 0.0) <= 0.0) break;
      std::discrete_distribution<int> d(w.begin(), w.end());
      return d(rng) + 1;
    }
  }
  std::uniform_int_distribution<int> u(1, steps);
  return u(rng);
}

// ---------------------------------------------------------------------------
// optimizer state

void ema_update(std::span<Matrix<float>* const> ema, std::span<const Matrix<float>* const> params, double decay) {
  if (ema.size() != params.size()) throw ShapeError("ema_update: array count mismatch");
  for (std::size_t i = 0; i < ema.size(); ++i) require_same_shape(*ema[i], *params[i], "ema_update");
  const auto d = static_cast<float>(decay);
  for (std::size_t i = 0; i < ema.size(); ++i) {
    if (decay == 1.0) continue;
    if (decay == 0.0) {
      *ema[i] = *params[i];
      continue;
    }
    *ema[i] = d * *ema[i] + (1.0f - d) * *params[i];
  }
}

void ema_update(LanguageModel& ema, const LanguageModel& params, double decay) {
  auto e = ema.trainables();
  auto p = params.trainables();
  ema_update(std::span<Matrix<float>* const>(e), std::span<const Matrix<float>* const>(p), decay);
}

double lr_at(long step, const TrainConfig& cfg) {
  if (step < 0) throw std::invalid_argument("lr_at: negative step");
  if (cfg.warmup_steps <= 0 || step >= cfg.warmup_steps) return cfg.lr;
  return cfg.lr * static_cast<double>(step) / static_cast<double>(cfg.warmup_steps);
}

TrainState::TrainState(LanguageModel model_in, const TrainConfig& cfg, int time_bins)
    : model(std::move(model_in)), ema(model), rng(cfg.seed), history(time_bins) {
  for (const auto* p : model.trainables()) {
    m_.push_back(Matrix<float>::Zero(p->rows(), p->cols()));
    v_.push_back(Matrix<float>::Zero(p->rows(), p->cols()));
  }
}

double TrainState::apply_gradients(const std::vector<Matrix<float>>& grads, double lr, double clip) {
  auto params = model.trainables();
  if (grads.size() != params.size()) throw ShapeError("apply_gradients: array count mismatch");
  double sq = 0;
  for (const auto& g : grads) sq += static_cast<double>(g.squaredNorm());
  const double norm = std::sqrt(sq);
  const float factor = norm > clip ? static_cast<float>(clip / norm) : 1.0f;

  constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  ++adam_t_;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(adam_t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(adam_t_));
  const float step_size = static_cast<float>(lr / c1);
  const float rc2 = static_cast<float>(1.0 / std::sqrt(c2));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto g = (grads[i] * factor).array();
    m_[i].array() = float(b1) * m_[i].array() + float(1 - b1) * g;
    v_[i].array() = float(b2) * v_[i].array() + float(1 - b2) * g.square();
    params[i]->array() -= step_size * m_[i].array() / (v_[i].array().sqrt() * rc2 + float(eps));
  }
  return norm;
}

// ---------------------------------------------------------------------------
// per-item losses

namespace {

struct ItemDraw {
  int t_step = 1;
  Matrix<float> eps;
  std::uint64_t dropout_seed = 0;
};

struct ItemOutcome {
  double recon = 0;
  double ce = 0;
  double reg = 0;
  std::vector<Matrix<float>> grads;
};

void check_finite_term(double v, const char* term) {
  if (!std::isfinite(v)) throw NumericError(std::string("training loss term '") + term + "' is non-finite");
}

struct ItemContext {
  const LanguageModel& model;
  const TrainConfig& cfg;
  const EncodedPair& ex;
  const ItemDraw& draw;
};

std::vector<Matrix<float>> collect_grads(const Tape<float>& tape, const std::vector<Var<float>>& vars,
                                         const Var<float>& table) {
  std::vector<Matrix<float>> grads;
  grads.reserve(vars.size() + 1);
  for (const auto& v : vars) grads.push_back(tape.grad(v));
  grads.push_back(tape.grad(table));
  return grads;
}

ItemOutcome diffusion_item(const ItemContext& c, const NoiseSchedule& sched, bool want_grads) {
  Tape<float> tape;
  const auto vars = bind(tape, c.model.net.arrays);
  Var<float> table = tape.parameter(c.model.embedding.weights);
  Var<float> zx = embedding(table, std::span<const int>(c.ex.src));
  Var<float> z0 = embedding(table, std::span<const int>(c.ex.tgt));
  const double ab = sched.alpha_bar(c.draw.t_step);
  Var<float> zt = add(scale(z0, static_cast<float>(std::sqrt(ab))),
                      scale(tape.constant(c.draw.eps), static_cast<float>(std::sqrt(1.0 - ab))));
  Var<float> zin = concat_rows(zx, zt);
  DenoiserConfig dc = c.model.net.config;
  dc.dropout = c.cfg.dropout;
  std::mt19937_64 drng(c.draw.dropout_seed);
  const double t_in = rescale_time(c.draw.t_step, sched.steps(), dc.rescale_max);
  Var<float> full = denoiser_forward(tape, dc, std::span<const Var<float>>(vars), zin, t_in,
                                     dc.dropout > 0 ? &drng : nullptr);
  Var<float> pred = extract_target(full, static_cast<Index>(c.ex.src.size()));
  Var<float> recon = mse(z0, pred);
  Var<float> ce = ce_anchor_loss(z0, std::span<const int>(c.ex.tgt), table);
  Var<float> total = add(recon, ce);

  ItemOutcome out;
  out.recon = recon.value()(0, 0);
  out.ce = ce.value()(0, 0);
  check_finite_term(out.recon, "recon");
  check_finite_term(out.ce, "ce");
  if (want_grads) {
    tape.backward(total);
    out.grads = collect_grads(tape, vars, table);
  }
  return out;
}

ItemOutcome flow_item(const ItemContext& c, const LanguageModel& reference, bool want_grads) {
  const TrainConfig& cfg = c.cfg;
  Tape<float> tape;
  const auto vars = bind(tape, c.model.net.arrays);
  Var<float> table = tape.parameter(c.model.embedding.weights);
  Var<float> zx = embedding(table, std::span<const int>(c.ex.src));
  Var<float> z0 = embedding(table, std::span<const int>(c.ex.tgt));
  Var<float> eps = tape.constant(c.draw.eps);
  const double t = static_cast<double>(c.draw.t_step) / cfg.flow_steps;
  Var<float> zt = add(scale(z0, static_cast<float>(1.0 - t)), scale(eps, static_cast<float>(t)));
  Var<float> zin = concat_rows(zx, zt);
  DenoiserConfig dc = c.model.net.config;
  dc.dropout = cfg.dropout;
  std::mt19937_64 drng(c.draw.dropout_seed);
  const double t_in = rescale_time(c.draw.t_step, cfg.flow_steps, dc.rescale_max);
  const auto src_len = static_cast<Index>(c.ex.src.size());
  Var<float> full = denoiser_forward(tape, dc, std::span<const Var<float>>(vars), zin, t_in,
                                     dc.dropout > 0 ? &drng : nullptr);
  Var<float> pred = extract_target(full, src_len);

  const bool velocity = cfg.pred_target == PredTarget::kVelocity;
  const auto inv_t2 = static_cast<float>(1.0 / (t * t));
  Var<float> recon = mse(velocity ? sub(eps, z0) : z0, pred);
  if (cfg.loss_mode == LossMode::kVWeighted) recon = scale(recon, inv_t2);
  Var<float> ce = ce_anchor_loss(z0, std::span<const int>(c.ex.tgt), table);
  Var<float> total = add(recon, ce);

  ItemOutcome out;
  if (cfg.reg_rate > 0) {
    const Matrix<float> ref = extract_target(denoiser_predict(reference.net, zin.value(), t_in), src_len);
    Var<float> reg;
    if (!velocity && reference.net.target == PredTarget::kZ0) {
      reg = scale(mse(tape.constant(ref), pred), static_cast<float>(cfg.reg_rate) * inv_t2);
    } else {
      // compare in velocity space: v = (z_t - z0_hat) / t for z0 predictors
      auto to_velocity = [&](const Matrix<float>& p, PredTarget kind) -> Matrix<float> {
        if (kind == PredTarget::kVelocity) return p;
        return ((zt.value() - p) / static_cast<float>(t)).eval();
      };
      Var<float> v_student = velocity ? pred : scale(sub(zt, pred), static_cast<float>(1.0 / t));
      reg = scale(mse(tape.constant(to_velocity(ref, reference.net.target)), v_student),
                  static_cast<float>(cfg.reg_rate));
    }
    out.reg = reg.value()(0, 0);
    check_finite_term(out.reg, "reg");
    total = add(total, reg);
  }
  out.recon = recon.value()(0, 0);
  out.ce = ce.value()(0, 0);
  check_finite_term(out.recon, "recon");
  check_finite_term(out.ce, "ce");
  if (want_grads) {
    tape.backward(total);
    out.grads = collect_grads(tape, vars, table);
  }
  return out;
}

std::vector<ItemDraw> draw_items(std::span<const EncodedPair> batch, TrainState& state, const TrainConfig& cfg,
                                 int steps, const StepOverrides& overrides) {
  std::vector<ItemDraw> draws;
  draws.reserve(batch.size());
  const Index dim = state.model.embedding.dim();
  for (const auto& ex : batch) {
    ItemDraw d;
    if (overrides.t_step) {
      d.t_step = *overrides.t_step;
      if (d.t_step < 1 || d.t_step > steps) {
        throw std::out_of_range("training t_step " + std::to_string(d.t_step) + " outside 1.." +
                                std::to_string(steps));
      }
    } else {
      d.t_step = sample_timestep(cfg.time_strategy, steps, state.history, state.rng, cfg.logit_mu, cfg.logit_sigma);
    }
    d.eps = gaussian_matrix<float>(static_cast<Index>(ex.tgt.size()), dim, state.rng);
    d.dropout_seed = state.rng();
    draws.push_back(std::move(d));
  }
  return draws;
}

template <typename ItemFn>
StepReport run_step(std::span<const EncodedPair> batch, TrainState& state, const TrainConfig& cfg, int steps,
                    const StepOverrides& overrides, ItemFn&& item_fn) {
  if (batch.empty()) throw std::invalid_argument("training step: empty batch");
  cfg.validate();
  const auto draws = draw_items(batch, state, cfg, steps, overrides);
  std::vector<ItemOutcome> outcomes(batch.size());
  parallel_for(batch.size(), [&](std::size_t i) {
    outcomes[i] = item_fn(ItemContext{state.model, cfg, batch[i], draws[i]}, overrides.apply);
  });

  StepReport report;
  const double n = static_cast<double>(batch.size());
  std::vector<Matrix<float>> grads;
  for (std::size_t i = 0; i < outcomes.size(); ++i) {
    auto& o = outcomes[i];
    report.loss.recon += o.recon / n;
    report.loss.ce += o.ce / n;
    report.loss.reg += o.reg / n;
    report.loss.t_used += static_cast<double>(draws[i].t_step) / steps / n;
    if (!overrides.apply) continue;
    if (grads.empty()) {
      grads = std::move(o.grads);
    } else {
      for (std::size_t k = 0; k < grads.size(); ++k) grads[k] += o.grads[k];
    }
  }
  report.loss.total = report.loss.recon + report.loss.ce + report.loss.reg;
  check_finite_term(report.loss.total, "total");

  for (std::size_t i = 0; i < outcomes.size(); ++i) state.history.record(draws[i].t_step, outcomes[i].recon);

  if (overrides.apply) {
    for (auto& g : grads) g /= static_cast<float>(n);
    report.lr = lr_at(state.step + 1, cfg);
    report.grad_norm = state.apply_gradients(grads, report.lr, cfg.grad_clip);
    ema_update(state.ema, state.model, cfg.ema_decay);
    ++state.step;
  }
  report.step = state.step;
  return report;
}

template <typename StepFn>
void run_epochs(TrainState& state, std::span<const EncodedPair> data, const TrainConfig& cfg, const StepLogger& log,
                StepFn&& step_fn) {
  if (data.empty()) throw std::invalid_argument("training: empty dataset");
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<EncodedPair> batch;
  for (int e = 0; e < cfg.epochs; ++e) {
    std::shuffle(order.begin(), order.end(), state.rng);
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      batch.clear();
      for (std::size_t i = start; i < end; ++i) batch.push_back(data[order[i]]);
      const StepReport r = step_fn(std::span<const EncodedPair>(batch));
      if (log) log(r);
    }
  }
}

}  // namespace

StepReport pretrain_diffusion_step(std::span<const EncodedPair> batch, TrainState& state, const NoiseSchedule& sched,
                                   const TrainConfig& cfg, const StepOverrides& overrides) {
  return run_step(batch, state, cfg, sched.steps(), overrides,
                  [&](const ItemContext& c, bool grads) { return diffusion_item(c, sched, grads); });
}

StepReport flow_finetune_step(std::span<const EncodedPair> batch, TrainState& state, const LanguageModel& reference,
                              const TrainConfig& cfg, const StepOverrides& overrides) {
  if (state.model.net.target != cfg.pred_target) {
    throw std::invalid_argument("flow_finetune_step: model predicts " + to_string(state.model.net.target) +
                                " but config trains " + to_string(cfg.pred_target));
  }
  return run_step(batch, state, cfg, cfg.flow_steps, overrides,
                  [&](const ItemContext& c, bool grads) { return flow_item(c, reference, grads); });
}

void pretrain(TrainState& state, std::span<const EncodedPair> data, const NoiseSchedule& sched,
              const TrainConfig& cfg, const StepLogger& log) {
  run_epochs(state, data, cfg, log,
             [&](std::span<const EncodedPair> b) { return pretrain_diffusion_step(b, state, sched, cfg); });
}

void finetune(TrainState& state, const LanguageModel& reference, std::span<const EncodedPair> data,
              const TrainConfig& cfg, const StepLogger& log) {
  run_epochs(state, data, cfg, log,
             [&](std::span<const EncodedPair> b) { return flow_finetune_step(b, state, reference, cfg); });
}

// ---------------------------------------------------------------------------
// diagnostics hooks

std::array<double, 4> loss_quartile_probe(const Predictor& predictor, const EmbeddingTable<float>& table,
                                          const ProbePath& path, std::span<const EncodedPair> probe_set,
                                          std::uint64_t seed, int draws_per_quarter) {
  if (probe_set.empty()) throw std::invalid_argument("loss_quartile_probe: empty probe set");
  if (path.steps < 4) throw std::invalid_argument("loss_quartile_probe: need at least 4 time steps");
  if (path.kind == ProbePath::Kind::kDiffusion && path.schedule == nullptr) {
    throw std::invalid_argument("loss_quartile_probe: diffusion path needs a schedule");
  }
  struct Draw {
    std::size_t example;
    int quarter;
    double u;
    Matrix<float> eps;
  };
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<Draw> draws;
  for (std::size_t i = 0; i < probe_set.size(); ++i) {
    for (int q = 0; q < 4; ++q) {
      for (int d = 0; d < draws_per_quarter; ++d) {
        const double u = unit(rng);
        draws.push_back({i, q, u, gaussian_matrix<float>(static_cast<Index>(probe_set[i].tgt.size()), table.dim(), rng)});
      }
    }
  }

  const int steps = path.steps;
  std::vector<double> losses(draws.size());
  parallel_for(draws.size(), [&](std::size_t j) {
    const Draw& d = draws[j];
    const EncodedPair& ex = probe_set[d.example];
    const int lo = d.quarter * steps / 4 + 1;
    const int hi = (d.quarter + 1) * steps / 4;
    const int k = std::min(hi, lo + static_cast<int>(d.u * (hi - lo + 1)));
    const Matrix<float> z0 = embed(std::span<const int>(ex.tgt), table);
    Matrix<float> zt;
    double t = static_cast<double>(k) / steps;
    if (path.kind == ProbePath::Kind::kFlow) {
      zt = flow_interpolate(z0, d.eps, t);
    } else {
      zt = diffusion_forward(z0, d.eps, k, *path.schedule);
    }
    Matrix<float> zin(static_cast<Index>(ex.src.size()) + zt.rows(), z0.cols());
    zin.topRows(static_cast<Index>(ex.src.size())) = embed(std::span<const int>(ex.src), table);
    zin.bottomRows(zt.rows()) = zt;
    Matrix<float> pred = predictor(zin, static_cast<Index>(ex.src.size()), rescale_time(k, steps));
    if (predictor.target == PredTarget::kVelocity) pred = (zt - static_cast<float>(t) * pred).eval();
    losses[j] = static_cast<double>((pred - z0).squaredNorm()) / static_cast<double>(z0.size());
  });

  std::array<double, 4> sums{}, counts{};
  for (std::size_t j = 0; j < draws.size(); ++j) {
    sums[static_cast<std::size_t>(draws[j].quarter)] += losses[j];
    counts[static_cast<std::size_t>(draws[j].quarter)] += 1;
  }
  for (std::size_t q = 0; q < 4; ++q) sums[q] /= counts[q];
  return sums;
}

std::string log_header() { return "step\ttotal\trecon\tce\treg\tt_used\tgrad_norm\tlr"; }

std::string format_log_line(const StepReport& r) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%ld\t%.9g\t%.9g\t%.9g\t%.9g\t%.9g\t%.9g\t%.9g", r.step, r.loss.total,
                r.loss.recon, r.loss.ce, r.loss.reg, r.loss.t_used, r.grad_norm, r.lr);
  return buf;
}

}  // namespace flowlab
