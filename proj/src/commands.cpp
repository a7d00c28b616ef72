#include "flowlab/commands.hpp"

#include "flowlab/parallel.hpp"

#include <json.hpp>

#include <algorithm>
#include <fstream>
#include <map>
#include <ostream>

namespace flowlab {

namespace {

using nlohmann::ordered_json;

std::ofstream open_out(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  return out;
}

int checked_tgt_len(const RunConfig& rc, const DataDir& d) {
  const int natural = d.natural_tgt_len();
  const int tgt_len = rc.data.tgt_len > 0 ? rc.data.tgt_len : natural;
  if (tgt_len < natural) {
    throw ConfigError("data.tgt_len " + std::to_string(tgt_len) + " is shorter than the longest target (" +
                      std::to_string(natural) + " with EOS)");
  }
  return tgt_len;
}

std::vector<int> source_ids(const Vocab& vocab, const std::string& src) {
  std::vector<int> ids = vocab.encode(src);
  ids.push_back(Vocab::kSep);
  return ids;
}

void check_fits(std::span<const EncodedPair> data, int max_len) {
  for (const auto& p : data) {
    if (static_cast<int>(p.src.size() + p.tgt.size()) > max_len) {
      throw ConfigError("a source/target pair needs " + std::to_string(p.src.size() + p.tgt.size()) +
                        " positions but model.max_len is " + std::to_string(max_len));
    }
  }
}

StepLogger open_log(const fs::path& path, std::ofstream& file) {
  if (path.empty()) return {};
  file = open_out(path);
  file << log_header() << '\n';
  return [&file](const StepReport& r) { file << format_log_line(r) << '\n'; };
}

std::vector<EncodedPair> first_n(const std::vector<PairRecord>& records, const Vocab& vocab, int tgt_len,
                                 std::size_t n) {
  std::vector<PairRecord> head(records.begin(), records.begin() + std::min(n, records.size()));
  return encode_all(head, vocab, tgt_len);
}

SamplerKind sampler_for(const Checkpoint& c) {
  if (c.stage == "diffusion") return SamplerKind::kDiffusionAncestral;
  return c.model.net.target == PredTarget::kVelocity ? SamplerKind::kFlowInstant : SamplerKind::kFlowAvg;
}

int steps_for(const Checkpoint& c, SamplerKind kind, int flow_steps) {
  return kind == SamplerKind::kDiffusionAncestral ? c.diffusion_steps : flow_steps;
}

}  // namespace

DataDir DataDir::load(const fs::path& dir) {
  DataDir d;
  d.vocab = Vocab::load(dir / "vocab.txt");
  d.train = load_jsonl(dir / "train.jsonl");
  d.valid = load_jsonl(dir / "valid.jsonl");
  d.test = load_jsonl(dir / "test.jsonl");
  if (d.train.empty()) throw DataError(dir.string() + ": train split is empty");
  return d;
}

int DataDir::natural_tgt_len() const {
  std::size_t longest = 0;
  for (const auto* split : {&train, &valid, &test}) {
    for (const auto& r : *split) longest = std::max(longest, split_whitespace(r.trg).size());
  }
  return static_cast<int>(longest) + 1;
}

void cmd_corpus(const RunConfig& rc, const fs::path& out_dir, std::ostream& msg) {
  std::vector<PairRecord> records;
  if (!rc.data.jsonl.empty()) {
    records = load_jsonl(rc.data.jsonl);
  } else {
    records = gen_task(rc.data.task, rc.data.pairs, rc.data.lengths, rc.data.vocab_size,
                       derive_seed(rc.seed, "corpus"), rc.model.max_len);
  }
  if (records.empty()) throw DataError("corpus is empty");
  std::vector<std::string> texts;
  for (const auto& r : records) {
    texts.push_back(r.src);
    texts.push_back(r.trg);
  }
  const Vocab vocab = Vocab::build(texts);
  const Splits s = split(records, rc.data.splits, derive_seed(rc.seed, "split"));
  fs::create_directories(out_dir);
  write_jsonl(out_dir / "train.jsonl", s.train);
  write_jsonl(out_dir / "valid.jsonl", s.valid);
  write_jsonl(out_dir / "test.jsonl", s.test);
  vocab.save(out_dir / "vocab.txt");
  msg << "corpus: " << records.size() << " pairs (train " << s.train.size() << ", valid " << s.valid.size()
      << ", test " << s.test.size() << "), vocab " << vocab.size() << " -> " << out_dir.string() << '\n';
}

Checkpoint cmd_pretrain(const RunConfig& rc, const fs::path& data_dir, const fs::path& out, const fs::path& log_path,
                        std::ostream& msg) {
  const DataDir d = DataDir::load(data_dir);
  const int tgt_len = checked_tgt_len(rc, d);
  const auto data = encode_all(d.train, d.vocab, tgt_len);
  check_fits(data, rc.model.max_len);

  LanguageModel model{DenoiserParams<float>::init(rc.model, PredTarget::kZ0, derive_seed(rc.seed, "init")),
                      EmbeddingTable<float>::random(d.vocab.size(), rc.model.latent_dim,
                                                    derive_seed(rc.seed, "embedding"),
                                                    static_cast<float>(rc.embed_std))};
  const NoiseSchedule sched = NoiseSchedule::sqrt_schedule(rc.diffusion_steps);
  TrainState state(std::move(model), rc.pretrain, rc.diffusion_steps);
  std::ofstream log_file;
  const StepLogger log = open_log(log_path, log_file);
  StepReport last;
  pretrain(state, data, sched, rc.pretrain, [&](const StepReport& r) {
    last = r;
    if (log) log(r);
  });

  Checkpoint c{state.model, state.ema, "diffusion", rc.diffusion_steps, rc.finetune.flow_steps, tgt_len,
               d.vocab.hash_hex(), state.step, rc.seed};
  save_checkpoint(out, c);
  msg << "pretrain: " << state.step << " steps, final loss " << last.loss.total << " -> " << out.string() << '\n';
  return c;
}

Checkpoint cmd_finetune(const RunConfig& rc, const fs::path& data_dir, const fs::path& teacher_path,
                        const fs::path& out, const fs::path& log_path, std::ostream& msg) {
  const DataDir d = DataDir::load(data_dir);
  const Checkpoint teacher = load_checkpoint(teacher_path, d.vocab.hash_hex());
  const auto data = encode_all(d.train, d.vocab, teacher.tgt_len);
  check_fits(data, teacher.model.net.config.max_len);

  LanguageModel student = teacher.ema;
  student.net.target = rc.finetune.pred_target;
  TrainState state(std::move(student), rc.finetune, rc.finetune.flow_steps);
  std::ofstream log_file;
  const StepLogger log = open_log(log_path, log_file);
  StepReport last;
  finetune(state, teacher.ema, data, rc.finetune, [&](const StepReport& r) {
    last = r;
    if (log) log(r);
  });

  Checkpoint c{state.model, state.ema, "flow", teacher.diffusion_steps, rc.finetune.flow_steps, teacher.tgt_len,
               d.vocab.hash_hex(), state.step, rc.seed};
  save_checkpoint(out, c);
  msg << "finetune: " << state.step << " steps, final loss " << last.loss.total << " -> " << out.string() << '\n';
  return c;
}

SampleSummary cmd_sample(const RunConfig& rc, const SampleOptions& opts, std::ostream& msg) {
  const Vocab vocab = Vocab::load(opts.data_dir / "vocab.txt");
  const Checkpoint ckpt = load_checkpoint(opts.checkpoint, vocab.hash_hex());
  const SamplerKind kind = opts.sampler.value_or(rc.sample.sampler);
  const int steps = opts.steps.value_or(kind == SamplerKind::kDiffusionAncestral ? ckpt.diffusion_steps
                                                                                  : rc.sample.steps);
  const int mbr = opts.mbr.value_or(rc.sample.mbr);
  if (mbr < 1) throw ConfigError("--mbr must be at least 1");
  const auto records = load_jsonl(opts.input.empty() ? opts.data_dir / "test.jsonl" : opts.input);

  const NoiseSchedule sched = NoiseSchedule::sqrt_schedule(ckpt.diffusion_steps);
  const Predictor predictor = make_predictor(ckpt.ema.net);
  const std::uint64_t base_seed = derive_seed(rc.seed, "sample");
  const int max_len = ckpt.model.net.config.max_len;

  std::vector<std::vector<int>> sources;
  for (const auto& r : records) {
    sources.push_back(source_ids(vocab, r.src));
    if (static_cast<int>(sources.back().size()) + ckpt.tgt_len > max_len) {
      throw ConfigError("source '" + r.src + "' leaves no room for the target block within model max_len");
    }
  }
  const std::size_t n_items = records.size();
  const std::size_t n_cand = static_cast<std::size_t>(mbr);
  std::vector<TokenSeq> outputs(n_items * n_cand);
  std::vector<int> forwards(n_items * n_cand, 0);
  std::optional<Trajectory> trajectory;
  parallel_for(n_items * n_cand, [&](std::size_t j) {
    const std::size_t i = j / n_cand;
    const int k = static_cast<int>(j % n_cand);
    SampleRequest req;
    req.src = sources[i];
    req.target_len = ckpt.tgt_len;
    req.steps = steps;
    req.kind = kind;
    req.seed = candidate_seed(base_seed, i, k);
    req.clamp = opts.clamp.value_or(rc.sample.clamp);
    req.rescale_max = ckpt.model.net.config.rescale_max;
    req.record_trajectory = j == 0 && !opts.trajectory.empty();
    SampleResult res = run_sampler(predictor, ckpt.ema.embedding, sched, req);
    outputs[j] = strip_target(res.ids);
    forwards[j] = res.forwards;
    if (req.record_trajectory) trajectory = std::move(res.trajectory);
  });

  std::ofstream out = open_out(opts.out);
  SampleSummary summary{n_items, mbr, 0};
  for (int f : forwards) summary.forwards += f;
  for (std::size_t i = 0; i < n_items; ++i) {
    std::vector<TokenSeq> pool(outputs.begin() + static_cast<long>(i * n_cand),
                               outputs.begin() + static_cast<long>((i + 1) * n_cand));
    ordered_json line;
    line["src"] = records[i].src;
    line["trg"] = vocab.decode(pool[mbr_select(pool)]);
    if (mbr > 1) {
      ordered_json cands = ordered_json::array();
      for (const auto& c : pool) cands.push_back(vocab.decode(c));
      line["candidates"] = cands;
    }
    out << line.dump() << '\n';
  }
  if (trajectory) {
    std::ofstream tout = open_out(opts.trajectory);
    write_trajectory_csv(tout, *trajectory, 0);
  }
  msg << "sample: " << n_items << " items, " << mbr << " candidates each, sampler " << to_string(kind) << ", "
      << steps << " steps, forwards " << summary.forwards << " ("
      << (n_items ? summary.forwards / static_cast<long>(n_items * n_cand) : 0) << " per candidate) -> "
      << opts.out.string() << '\n';
  return summary;
}

std::vector<MetricReport> cmd_eval(const fs::path& outputs, const fs::path& references, std::optional<int> mbr,
                                   const fs::path& out_csv, std::ostream& msg) {
  std::ifstream in(outputs);
  if (!in) throw DataError("cannot open " + outputs.string());
  std::map<std::string, int> intern;
  auto ids = [&](const std::string& text) {
    TokenSeq seq;
    for (const auto& tok : split_whitespace(text)) seq.push_back(intern.emplace(tok, intern.size()).first->second);
    return seq;
  };

  std::vector<std::vector<TokenSeq>> pools;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = outputs.string() + ":" + std::to_string(lineno);
    ordered_json j;
    try {
      j = ordered_json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw DataError(where + ": malformed JSON: " + e.what());
    }
    std::vector<TokenSeq> pool;
    if (j.contains("candidates")) {
      if (!j["candidates"].is_array() || j["candidates"].empty()) throw DataError(where + ": bad \"candidates\"");
      for (const auto& c : j["candidates"]) {
        if (!c.is_string()) throw DataError(where + ": non-string candidate");
        pool.push_back(ids(c.get<std::string>()));
      }
    } else if (j.contains("trg") && j["trg"].is_string()) {
      pool.push_back(ids(j["trg"].get<std::string>()));
    } else {
      throw DataError(where + ": missing string field \"trg\"");
    }
    pools.push_back(std::move(pool));
  }
  const auto ref_records = load_jsonl(references);
  if (ref_records.size() != pools.size()) {
    throw DataError("outputs have " + std::to_string(pools.size()) + " lines but references have " +
                    std::to_string(ref_records.size()));
  }
  std::vector<TokenSeq> refs;
  for (const auto& r : ref_records) refs.push_back(ids(r.trg));

  std::size_t smallest = pools.empty() ? 1 : pools.front().size();
  for (const auto& p : pools) smallest = std::min(smallest, p.size());
  const int n_max = mbr.value_or(static_cast<int>(smallest));
  if (n_max < 1 || static_cast<std::size_t>(n_max) > smallest) {
    throw ConfigError("--mbr " + std::to_string(n_max) + " exceeds the " + std::to_string(smallest) +
                      " candidates available per item");
  }
  const auto rows = mbr_sweep(pools, refs, n_max);
  std::ofstream out = open_out(out_csv);
  write_metric_csv(out, rows);
  for (const auto& r : rows) {
    msg << "eval: mbr_n=" << r.mbr_n << " bleu=" << r.bleu << " rouge_l=" << r.rouge_l << " dist1=" << r.dist1
        << " n=" << r.n_samples << '\n';
  }
  return rows;
}

void cmd_diagnose(const RunConfig& rc, const DiagnoseOptions& opts, std::ostream& msg) {
  fs::create_directories(opts.out_dir);

  std::vector<Labeled<GradNormSummary>> norms;
  for (const auto& path : opts.logs) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open training log " + path.string());
    try {
      norms.push_back({path.stem().string(), grad_norm_trace(in)});
    } catch (const std::invalid_argument& e) {
      throw DataError(path.string() + ": " + e.what());
    }
  }
  if (!norms.empty()) {
    std::ofstream out = open_out(opts.out_dir / "grad_norms.csv");
    write_grad_norm_csv(out, norms);
    for (const auto& [label, s] : norms) {
      msg << "grad-norm " << label << ": mean " << s.mean << ", p95 " << s.p95 << ", max " << s.max
          << ", p95/mean " << s.p95 / s.mean << '\n';
    }
  }
  if (opts.teacher.empty() && opts.checkpoint.empty()) return;

  const DataDir d = DataDir::load(opts.data_dir);
  const std::string vocab_hash = d.vocab.hash_hex();
  std::vector<std::pair<std::string, Checkpoint>> ckpts;
  if (!opts.teacher.empty()) ckpts.emplace_back("teacher", load_checkpoint(opts.teacher, vocab_hash));
  if (!opts.checkpoint.empty()) ckpts.emplace_back("checkpoint", load_checkpoint(opts.checkpoint, vocab_hash));
  std::vector<std::string> hashes;
  for (const auto& [role, c] : ckpts) hashes.push_back(parameter_hash(c.ema));

  const int tgt_len = ckpts.front().second.tgt_len;
  const auto probe = first_n(d.train, d.vocab, tgt_len, static_cast<std::size_t>(rc.probe_size));
  const auto prompts = first_n(d.test.empty() ? d.train : d.test, d.vocab, tgt_len, 50);
  const auto timing_batch = std::span<const EncodedPair>(prompts).first(std::min<std::size_t>(16, prompts.size()));
  const std::uint64_t probe_seed = derive_seed(rc.seed, "probe");
  const std::uint64_t traj_seed = derive_seed(rc.seed, "trajectory");

  if (ckpts.size() == 2) {
    const QuartileReport q = quartile_report(ckpts[0].second, ckpts[1].second, probe, probe_seed);
    std::ofstream out = open_out(opts.out_dir / "quartiles.csv");
    write_quartile_csv(out, q);
    auto ratio = [](const std::array<double, 4>& v) {
      return *std::max_element(v.begin(), v.end()) / *std::min_element(v.begin(), v.end());
    };
    msg << "quartiles (" << probe.size() << " probe pairs): teacher max/min " << ratio(q.diffusion)
        << ", checkpoint q3/q0 " << q.flow[3] / q.flow[0] << '\n';
  }

  std::vector<Labeled<StraightnessStats>> straight;
  std::vector<TimingResult> timing;
  for (const auto& [role, c] : ckpts) {
    const NoiseSchedule sched = NoiseSchedule::sqrt_schedule(c.diffusion_steps);
    const Predictor pred = make_predictor(c.ema.net);
    const SamplerKind kind = sampler_for(c);
    const int steps = steps_for(c, kind, c.flow_steps);
    StraightnessStats s = straightness_report(pred, c.ema.embedding, sched, kind, steps, prompts, traj_seed);
    msg << "straightness " << role << " (" << to_string(kind) << ", " << steps << " steps): mean " << s.mean
        << ", min " << s.min << ", max " << s.max << '\n';
    straight.push_back({role + ":" + to_string(kind), std::move(s)});
    if (!opts.timing) continue;
    const std::vector<int> grid = kind == SamplerKind::kDiffusionAncestral ? std::vector<int>{c.diffusion_steps}
                                                                           : std::vector<int>{1, 5};
    for (int n : grid) {
      timing.push_back(time_sampler(pred, c.ema.embedding, sched, kind, n, timing_batch, rc.timing_repeats,
                                    derive_seed(rc.seed, "timing")));
      msg << "timing " << role << " " << to_string(kind) << " N=" << n << ": "
          << timing.back().seconds_per_sample << " s/sample\n";
    }
  }
  {
    std::ofstream out = open_out(opts.out_dir / "straightness.csv");
    write_straightness_csv(out, straight);
  }
  if (straight.size() == 2) {
    std::size_t ahead = 0;
    for (std::size_t i = 0; i < straight[1].value.values.size(); ++i) {
      ahead += straight[1].value.values[i] > straight[0].value.values[i];
    }
    msg << "straightness: checkpoint ahead of teacher on " << ahead << "/" << straight[1].value.values.size()
        << " prompts\n";
  }
  if (opts.timing) {
    std::ofstream out = open_out(opts.out_dir / "timing.csv");
    write_timing_csv(out, timing);
  }
  for (std::size_t i = 0; i < ckpts.size(); ++i) {
    if (parameter_hash(ckpts[i].second.ema) != hashes[i]) throw std::logic_error("diagnostics modified a checkpoint");
  }
}

}  // namespace flowlab
