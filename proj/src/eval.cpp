#include "flowlab/eval.hpp"

#include "flowlab/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <ostream>
#include <set>
#include <stdexcept>

namespace flowlab {

namespace {

void require_nonempty(std::span<const int> hyp, std::span<const int> ref, const char* what) {
  if (hyp.empty() || ref.empty()) throw std::invalid_argument(std::string(what) + ": empty input sequence");
}

std::map<std::vector<int>, int> ngram_counts(std::span<const int> seq, std::size_t n) {
  std::map<std::vector<int>, int> counts;
  for (std::size_t i = 0; i + n <= seq.size(); ++i) ++counts[std::vector<int>(seq.begin() + i, seq.begin() + i + n)];
  return counts;
}

std::size_t lcs_length(std::span<const int> a, std::span<const int> b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

double bleu_or_zero(const TokenSeq& hyp, const TokenSeq& ref) {
  return hyp.empty() || ref.empty() ? 0.0 : bleu(hyp, ref);
}

double rouge_or_zero(const TokenSeq& hyp, const TokenSeq& ref) {
  return hyp.empty() || ref.empty() ? 0.0 : rouge_l(hyp, ref);
}

}  // namespace

double bleu(std::span<const int> hyp, std::span<const int> ref) {
  require_nonempty(hyp, ref, "bleu");
  double log_sum = 0;
  for (std::size_t n = 1; n <= 4; ++n) {
    const auto h = ngram_counts(hyp, n);
    const auto r = ngram_counts(ref, n);
    long matched = 0, total = 0;
    for (const auto& [gram, c] : h) {
      total += c;
      auto it = r.find(gram);
      if (it != r.end()) matched += std::min(c, it->second);
    }
    double p;
    if (matched == 0) {
      // unigram misses are not smoothed; a hypothesis too short for this order
      // still gets the add-one mass
      if (n == 1) return 0.0;
      p = 1.0 / static_cast<double>(total + 1);
    } else {
      p = static_cast<double>(matched) / static_cast<double>(total);
    }
    log_sum += std::log(p);
  }
  const double bp = hyp.size() < ref.size()
                        ? std::exp(1.0 - static_cast<double>(ref.size()) / static_cast<double>(hyp.size()))
                        : 1.0;
  return bp * std::exp(log_sum / 4.0);
}

double rouge_l(std::span<const int> hyp, std::span<const int> ref) {
  require_nonempty(hyp, ref, "rouge_l");
  const double lcs = static_cast<double>(lcs_length(hyp, ref));
  if (lcs == 0) return 0.0;
  const double p = lcs / static_cast<double>(hyp.size());
  const double r = lcs / static_cast<double>(ref.size());
  return 2 * p * r / (p + r);
}

double dist1(const std::vector<TokenSeq>& hyps) {
  if (hyps.empty()) throw std::invalid_argument("dist1: empty hypothesis list");
  double sum = 0;
  for (const auto& h : hyps) {
    if (h.empty()) continue;
    sum += static_cast<double>(std::set<int>(h.begin(), h.end()).size()) / static_cast<double>(h.size());
  }
  return sum / static_cast<double>(hyps.size());
}

std::size_t mbr_select(const std::vector<TokenSeq>& candidates) {
  if (candidates.empty()) throw std::invalid_argument("mbr_select: empty candidate set");
  std::size_t best = 0;
  double best_u = -1;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    double u = 0;
    for (std::size_t j = 0; j < candidates.size(); ++j) {
      if (j != i) u += bleu_or_zero(candidates[i], candidates[j]);
    }
    if (u > best_u) {
      best_u = u;
      best = i;
    }
  }
  return best;
}

MetricReport score_outputs(const std::vector<TokenSeq>& hyps, const std::vector<TokenSeq>& refs, int mbr_n) {
  if (hyps.size() != refs.size()) throw std::invalid_argument("score_outputs: hypothesis/reference count mismatch");
  if (hyps.empty()) throw std::invalid_argument("score_outputs: nothing to score");
  MetricReport r;
  r.mbr_n = mbr_n;
  r.n_samples = static_cast<int>(hyps.size());
  for (std::size_t i = 0; i < hyps.size(); ++i) {
    r.bleu += bleu_or_zero(hyps[i], refs[i]);
    r.rouge_l += rouge_or_zero(hyps[i], refs[i]);
  }
  r.bleu /= static_cast<double>(hyps.size());
  r.rouge_l /= static_cast<double>(hyps.size());
  r.dist1 = dist1(hyps);
  return r;
}

std::vector<MetricReport> mbr_sweep(const std::vector<std::vector<TokenSeq>>& pools, const std::vector<TokenSeq>& refs,
                                    int n_max) {
  if (n_max < 1) throw std::invalid_argument("mbr_sweep: n_max must be at least 1");
  if (pools.size() != refs.size()) throw std::invalid_argument("mbr_sweep: pool/reference count mismatch");
  for (const auto& p : pools) {
    if (p.size() < static_cast<std::size_t>(n_max)) {
      throw std::invalid_argument("mbr_sweep: a candidate pool is smaller than n_max");
    }
  }
  std::vector<MetricReport> rows;
  for (int n = 1; n <= n_max; ++n) {
    std::vector<TokenSeq> chosen(pools.size());
    parallel_for(pools.size(), [&](std::size_t i) {
      std::vector<TokenSeq> head(pools[i].begin(), pools[i].begin() + n);
      chosen[i] = head[mbr_select(head)];
    });
    rows.push_back(score_outputs(chosen, refs, n));
  }
  return rows;
}

void write_metric_csv(std::ostream& out, const std::vector<MetricReport>& rows) {
  out << "mbr_n,bleu,rouge_l,dist1,n_samples\n";
  char buf[160];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%d,%.6f,%.6f,%.6f,%d\n", r.mbr_n, r.bleu, r.rouge_l, r.dist1, r.n_samples);
    out << buf;
  }
}

}  // namespace flowlab
