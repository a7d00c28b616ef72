#include "flowlab/diagnose.hpp"

#include "flowlab/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <istream>
#include <ostream>
#include <sstream>

namespace flowlab {

namespace {

SampleRequest request_for(const EncodedPair& p, SamplerKind kind, int steps, std::uint64_t seed) {
  SampleRequest req;
  req.src = p.src;
  req.target_len = static_cast<int>(p.tgt.size());
  req.steps = steps;
  req.kind = kind;
  req.seed = seed;
  return req;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

}  // namespace

TimingResult time_sampler(const Predictor& predictor, const EmbeddingTable<float>& table, const NoiseSchedule& sched,
                          SamplerKind kind, int steps, std::span<const EncodedPair> prompts, int repeats,
                          std::uint64_t seed) {
  if (repeats < 3) throw std::invalid_argument("time_sampler: need at least 3 repeats");
  if (prompts.empty()) throw std::invalid_argument("time_sampler: empty prompt batch");
  TimingResult r;
  r.kind = kind;
  r.steps = steps;
  r.batch = static_cast<int>(prompts.size());
  r.repeats = repeats;
  std::vector<double> per_sample;
  for (int rep = 0; rep < repeats; ++rep) {
    double loop = 0;
    long forwards = 0;
    for (std::size_t i = 0; i < prompts.size(); ++i) {
      const auto res = run_sampler(predictor, table, sched, request_for(prompts[i], kind, steps, seed + i));
      loop += res.loop_seconds;
      forwards += res.forwards;
    }
    if (rep > 0 && forwards != r.forwards_per_repeat) throw std::logic_error("time_sampler: forward count drifted");
    r.forwards_per_repeat = forwards;
    per_sample.push_back(loop / static_cast<double>(prompts.size()));
  }
  r.seconds_per_sample = median(per_sample);
  return r;
}

GradNormSummary summarize_norms(std::vector<double> series) {
  if (series.empty()) throw std::invalid_argument("grad-norm trace is empty");
  GradNormSummary s;
  s.series = std::move(series);
  std::vector<double> sorted = s.series;
  std::sort(sorted.begin(), sorted.end());
  double sum = 0;
  for (double v : s.series) sum += v;
  s.mean = sum / static_cast<double>(sorted.size());
  const auto rank = static_cast<std::size_t>(std::ceil(0.95 * static_cast<double>(sorted.size())));
  s.p95 = sorted[std::max<std::size_t>(rank, 1) - 1];
  s.max = sorted.back();
  return s;
}

GradNormSummary grad_norm_trace(std::istream& log) {
  std::string line;
  if (!std::getline(log, line)) throw std::invalid_argument("training log is empty");
  std::vector<std::string> cols;
  {
    std::stringstream ss(line);
    std::string c;
    while (std::getline(ss, c, '\t')) cols.push_back(c);
  }
  const auto it = std::find(cols.begin(), cols.end(), "grad_norm");
  if (it == cols.end()) throw std::invalid_argument("training log line 1: no grad_norm column in header");
  const auto col = static_cast<std::size_t>(it - cols.begin());
  std::vector<double> series;
  int lineno = 1;
  while (std::getline(log, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(ss, cell, '\t')) cells.push_back(cell);
    if (cells.size() != cols.size()) {
      throw std::invalid_argument("training log line " + std::to_string(lineno) + ": expected " +
                                  std::to_string(cols.size()) + " fields, got " + std::to_string(cells.size()));
    }
    std::size_t used = 0;
    double v = 0;
    try {
      v = std::stod(cells[col], &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != cells[col].size() || used == 0) {
      throw std::invalid_argument("training log line " + std::to_string(lineno) + ": bad grad_norm '" + cells[col] +
                                  "'");
    }
    series.push_back(v);
  }
  return summarize_norms(std::move(series));
}

std::array<double, 4> probe_checkpoint(const Checkpoint& ckpt, std::span<const EncodedPair> probe_set,
                                       std::uint64_t seed) {
  const Predictor pred = make_predictor(ckpt.ema.net);
  if (ckpt.stage == "diffusion") {
    const NoiseSchedule sched = NoiseSchedule::sqrt_schedule(ckpt.diffusion_steps);
    return loss_quartile_probe(pred, ckpt.ema.embedding, ProbePath::diffusion(sched), probe_set, seed);
  }
  return loss_quartile_probe(pred, ckpt.ema.embedding, ProbePath::flow(ckpt.flow_steps), probe_set, seed);
}

QuartileReport quartile_report(const Checkpoint& diffusion, const Checkpoint& flow,
                               std::span<const EncodedPair> probe_set, std::uint64_t seed) {
  if (diffusion.vocab_hash != flow.vocab_hash) {
    throw VocabMismatch("checkpoints disagree on vocabulary: " + diffusion.vocab_hash + " vs " + flow.vocab_hash);
  }
  return {probe_checkpoint(diffusion, probe_set, seed), probe_checkpoint(flow, probe_set, seed)};
}

StraightnessStats straightness_report(const Predictor& predictor, const EmbeddingTable<float>& table,
                                      const NoiseSchedule& sched, SamplerKind kind, int steps,
                                      std::span<const EncodedPair> prompts, std::uint64_t seed) {
  if (prompts.empty()) throw std::invalid_argument("straightness_report: no prompts");
  StraightnessStats s;
  s.values.resize(prompts.size());
  parallel_for(prompts.size(), [&](std::size_t i) {
    SampleRequest req = request_for(prompts[i], kind, steps, candidate_seed(seed, i, 0));
    req.record_trajectory = true;
    s.values[i] = straightness(*run_sampler(predictor, table, sched, req).trajectory);
  });
  double sum = 0;
  for (double v : s.values) sum += v;
  s.mean = sum / static_cast<double>(s.values.size());
  s.min = *std::min_element(s.values.begin(), s.values.end());
  s.max = *std::max_element(s.values.begin(), s.values.end());
  return s;
}

void write_quartile_csv(std::ostream& out, const QuartileReport& r) {
  out << "model,q0,q1,q2,q3\n";
  auto row = [&](const char* name, const std::array<double, 4>& q) {
    out << name;
    for (double v : q) out << ',' << fmt(v);
    out << '\n';
  };
  row("diffusion", r.diffusion);
  row("flow", r.flow);
}

void write_timing_csv(std::ostream& out, std::span<const TimingResult> rows) {
  out << "sampler,steps,batch,repeats,seconds_per_sample,forwards_per_repeat\n";
  for (const auto& r : rows) {
    out << to_string(r.kind) << ',' << r.steps << ',' << r.batch << ',' << r.repeats << ','
        << fmt(r.seconds_per_sample) << ',' << r.forwards_per_repeat << '\n';
  }
}

void write_grad_norm_csv(std::ostream& out, std::span<const Labeled<GradNormSummary>> runs) {
  out << "run,steps,mean,p95,max\n";
  for (const auto& [label, s] : runs) {
    out << label << ',' << s.series.size() << ',' << fmt(s.mean) << ',' << fmt(s.p95) << ',' << fmt(s.max) << '\n';
  }
}

void write_straightness_csv(std::ostream& out, std::span<const Labeled<StraightnessStats>> runs) {
  out << "sampler,prompt,straightness\n";
  for (const auto& [label, s] : runs) {
    for (std::size_t i = 0; i < s.values.size(); ++i) out << label << ',' << i << ',' << fmt(s.values[i]) << '\n';
  }
}

}  // namespace flowlab
