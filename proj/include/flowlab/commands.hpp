#pragma once

// The six experiment commands behind the flowlab executable. Each reads and writes
// files only; all randomness comes from the run config seed.

#include "flowlab/checkpoint.hpp"
#include "flowlab/config.hpp"
#include "flowlab/diagnose.hpp"
#include "flowlab/eval.hpp"

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <vector>

namespace flowlab {

namespace fs = std::filesystem;

/// A corpus directory as written by cmd_corpus.
struct DataDir {
  Vocab vocab;
  std::vector<PairRecord> train;
  std::vector<PairRecord> valid;
  std::vector<PairRecord> test;

  static DataDir load(const fs::path& dir);
  /// Longest tokenized target plus EOS.
  int natural_tgt_len() const;
};

/// Writes train.jsonl, valid.jsonl, test.jsonl and vocab.txt into `out_dir`.
void cmd_corpus(const RunConfig& rc, const fs::path& out_dir, std::ostream& msg);

/// Diffusion pretraining from scratch. `log_path` may be empty.
Checkpoint cmd_pretrain(const RunConfig& rc, const fs::path& data_dir, const fs::path& out, const fs::path& log_path,
                        std::ostream& msg);

/// Straight-flow fine-tuning. The student starts as a copy of the teacher's EMA
/// weights, which also serve as the frozen reference.
Checkpoint cmd_finetune(const RunConfig& rc, const fs::path& data_dir, const fs::path& teacher, const fs::path& out,
                        const fs::path& log_path, std::ostream& msg);

struct SampleOptions {
  fs::path checkpoint;
  fs::path data_dir;
  fs::path input;  // default: <data_dir>/test.jsonl
  fs::path out;
  fs::path trajectory;            // optional CSV for prompt 0, candidate 0
  std::optional<SamplerKind> sampler;
  std::optional<int> steps;       // diffusion defaults to the checkpoint's chain length
  std::optional<int> mbr;
  std::optional<bool> clamp;
};

struct SampleSummary {
  std::size_t items = 0;
  int candidates = 0;
  long forwards = 0;
};

SampleSummary cmd_sample(const RunConfig& rc, const SampleOptions& opts, std::ostream& msg);

/// `outputs` lines carry "trg" and optionally "candidates"; references carry "trg".
/// Sweeps MBR sizes 1..mbr (mbr defaults to the smallest candidate pool).
std::vector<MetricReport> cmd_eval(const fs::path& outputs, const fs::path& references, std::optional<int> mbr,
                                   const fs::path& out_csv, std::ostream& msg);

struct DiagnoseOptions {
  fs::path data_dir;
  fs::path teacher;      // diffusion checkpoint
  fs::path checkpoint;   // flow checkpoint
  std::vector<fs::path> logs;
  fs::path out_dir;
  bool timing = true;    // wall-clock rows are the only nondeterministic output
};

void cmd_diagnose(const RunConfig& rc, const DiagnoseOptions& opts, std::ostream& msg);

}  // namespace flowlab
