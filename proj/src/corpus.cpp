#include "flowlab/corpus.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

namespace flowlab {

std::string to_string(TaskKind kind) {
  switch (kind) {
    case TaskKind::kCopy: return "COPY";
    case TaskKind::kReverse: return "REVERSE";
    case TaskKind::kSimplify: return "SIMPLIFY";
    case TaskKind::kParaphrase: return "PARAPHRASE";
  }
  return "?";
}

TaskKind parse_task(const std::string& name) {
  for (auto k : {TaskKind::kCopy, TaskKind::kReverse, TaskKind::kSimplify, TaskKind::kParaphrase}) {
    if (to_string(k) == name) return k;
  }
  throw std::invalid_argument("unknown task '" + name + "' (expected COPY, REVERSE, SIMPLIFY or PARAPHRASE)");
}

namespace {

std::string join(const std::vector<std::string>& toks) {
  std::string out;
  for (const auto& t : toks) {
    if (!out.empty()) out += ' ';
    out += t;
  }
  return out;
}

}  // namespace

std::vector<int> task_target(TaskKind kind, std::span<const int> src, std::span<const int> bijection) {
  std::vector<int> trg;
  switch (kind) {
    case TaskKind::kCopy: trg.assign(src.begin(), src.end()); break;
    case TaskKind::kReverse: trg.assign(src.rbegin(), src.rend()); break;
    case TaskKind::kSimplify:
      for (std::size_t j = 0; j < src.size(); j += 2) trg.push_back(src[j]);
      break;
    case TaskKind::kParaphrase:
      for (int t : src) trg.push_back(bijection[static_cast<std::size_t>(t)]);
      break;
  }
  return trg;
}

std::vector<PairRecord> gen_task(TaskKind kind, int n, LengthRange lengths, int vocab_size, std::uint64_t seed,
                                 int max_len) {
  if (n < 1) throw std::invalid_argument("gen_task: n must be positive");
  if (vocab_size < 1) throw std::invalid_argument("gen_task: vocab_size must be positive");
  if (lengths.min < 1 || lengths.min > lengths.max || lengths.max > max_len - 1) {
    throw std::invalid_argument("gen_task: infeasible length range [" + std::to_string(lengths.min) + "," +
                                std::to_string(lengths.max) + "] for max_len " + std::to_string(max_len));
  }
  std::vector<std::string> words(static_cast<std::size_t>(vocab_size));
  for (int i = 0; i < vocab_size; ++i) words[static_cast<std::size_t>(i)] = "w" + std::to_string(i);

  std::vector<int> bijection(static_cast<std::size_t>(vocab_size));
  std::iota(bijection.begin(), bijection.end(), 0);
  {
    std::mt19937_64 perm_rng(seed ^ 0x9e3779b97f4a7c15ull);
    std::shuffle(bijection.begin(), bijection.end(), perm_rng);
  }

  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> len_dist(lengths.min, lengths.max);
  std::uniform_int_distribution<int> tok_dist(0, vocab_size - 1);
  std::vector<PairRecord> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const int len = len_dist(rng);
    std::vector<int> src(static_cast<std::size_t>(len));
    for (auto& t : src) t = tok_dist(rng);
    const std::vector<int> trg = task_target(kind, src, bijection);
    auto words_of = [&](const std::vector<int>& ids) {
      std::vector<std::string> w;
      for (int t : ids) w.push_back(words[static_cast<std::size_t>(t)]);
      return join(w);
    };
    out.push_back({words_of(src), words_of(trg)});
  }
  return out;
}

std::vector<PairRecord> load_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::vector<PairRecord> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json obj;
    try {
      obj = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": malformed JSON: " + e.what());
    }
    auto field = [&](const char* key) {
      if (!obj.is_object() || !obj.contains(key) || !obj[key].is_string()) {
        throw DataError(path.string() + ":" + std::to_string(lineno) + ": missing string field \"" +
                                 key + "\"");
      }
      return obj[key].get<std::string>();
    };
    out.push_back({field("src"), field("trg")});
  }
  return out;
}

void write_jsonl(const std::filesystem::path& path, const std::vector<PairRecord>& records) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  for (const auto& r : records) {
    nlohmann::ordered_json obj;
    obj["src"] = r.src;
    obj["trg"] = r.trg;
    out << obj.dump() << '\n';
  }
}

Splits split(const std::vector<PairRecord>& records, std::array<double, 3> fractions, std::uint64_t seed) {
  const double total = fractions[0] + fractions[1] + fractions[2];
  if (std::abs(total - 1.0) > 1e-9 || std::any_of(fractions.begin(), fractions.end(), [](double f) { return f < 0; })) {
    throw std::invalid_argument("split: fractions must be non-negative and sum to 1");
  }
  std::vector<std::size_t> order(records.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  const auto n = static_cast<double>(records.size());
  const auto n_train = std::min(records.size(), static_cast<std::size_t>(std::floor(fractions[0] * n + 1e-9)));
  const auto n_valid =
      std::min(records.size() - n_train, static_cast<std::size_t>(std::floor(fractions[1] * n + 1e-9)));
  Splits s;
  for (std::size_t i = 0; i < order.size(); ++i) {
    auto& dst = i < n_train ? s.train : (i < n_train + n_valid ? s.valid : s.test);
    dst.push_back(records[order[i]]);
  }
  return s;
}

EncodedPair encode_pair(const PairRecord& record, const Vocab& vocab, int tgt_len) {
  EncodedPair p;
  p.src = vocab.encode(record.src);
  p.src.push_back(Vocab::kSep);
  p.tgt = vocab.encode(record.trg);
  if (static_cast<int>(p.tgt.size()) + 1 > tgt_len) {
    throw std::length_error("target of " + std::to_string(p.tgt.size()) + " tokens does not fit tgt_len " +
                            std::to_string(tgt_len) + " with EOS");
  }
  p.tgt.push_back(Vocab::kEos);
  p.tgt.resize(static_cast<std::size_t>(tgt_len), Vocab::kPad);
  return p;
}

std::vector<EncodedPair> encode_all(const std::vector<PairRecord>& records, const Vocab& vocab, int tgt_len) {
  std::vector<EncodedPair> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back(encode_pair(r, vocab, tgt_len));
  return out;
}

std::vector<int> strip_target(std::span<const int> ids) {
  std::vector<int> out;
  for (int id : ids) {
    if (id == Vocab::kEos) break;
    if (id != Vocab::kPad) out.push_back(id);
  }
  return out;
}

}  // namespace flowlab
