#pragma once

// Synthetic seq2seq tasks, JSONL ingestion, and splitting.

#include "flowlab/textspace.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace flowlab {

struct PairRecord {
  std::string src;
  std::string trg;

  bool operator==(const PairRecord&) const = default;
};

enum class TaskKind { kCopy, kReverse, kSimplify, kParaphrase };

std::string to_string(TaskKind kind);
TaskKind parse_task(const std::string& name);

struct LengthRange {
  int min = 8;
  int max = 12;
};

/// Target ids for one source under a task rule. SIMPLIFY keeps even positions;
/// PARAPHRASE maps each id through `bijection`.
std::vector<int> task_target(TaskKind kind, std::span<const int> src, std::span<const int> bijection = {});

/// `n` pairs over content tokens "w0".."w{vocab_size-1}", deterministic in `seed`.
/// PARAPHRASE maps tokens through a bijection that depends on `seed` only.
std::vector<PairRecord> gen_task(TaskKind kind, int n, LengthRange lengths, int vocab_size, std::uint64_t seed,
                                 int max_len = 64);

std::vector<PairRecord> load_jsonl(const std::filesystem::path& path);
void write_jsonl(const std::filesystem::path& path, const std::vector<PairRecord>& records);

struct Splits {
  std::vector<PairRecord> train;
  std::vector<PairRecord> valid;
  std::vector<PairRecord> test;
};

/// Seeded shuffle, then contiguous slices sized floor(f0 n), floor(f1 n), remainder.
Splits split(const std::vector<PairRecord>& records, std::array<double, 3> fractions, std::uint64_t seed);

/// Token ids ready for the model: source ends in SEP; target is EOS-terminated
/// and PAD-filled to a fixed length.
struct EncodedPair {
  std::vector<int> src;
  std::vector<int> tgt;
};

EncodedPair encode_pair(const PairRecord& record, const Vocab& vocab, int tgt_len);
std::vector<EncodedPair> encode_all(const std::vector<PairRecord>& records, const Vocab& vocab, int tgt_len);

/// Content tokens of a decoded target: everything before the first EOS, PAD dropped.
std::vector<int> strip_target(std::span<const int> ids);

}  // namespace flowlab
