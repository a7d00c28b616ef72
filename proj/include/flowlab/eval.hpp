#pragma once

// Sentence-level BLEU-4, ROUGE-L F1, dist-1, and BLEU-consensus MBR selection.

#include <iosfwd>
#include <span>
#include <vector>

namespace flowlab {

using TokenSeq = std::vector<int>;

/// Smoothed sentence BLEU-4. A zero match count at n >= 2 becomes (0+1)/(c+1).
double bleu(std::span<const int> hyp, std::span<const int> ref);

/// F1 over the longest common subsequence.
double rouge_l(std::span<const int> hyp, std::span<const int> ref);

/// Mean per-sequence ratio of distinct to total unigrams. An empty sequence scores 0.
double dist1(const std::vector<TokenSeq>& hyps);

/// Index maximising summed BLEU against every other candidate; lowest index wins ties.
std::size_t mbr_select(const std::vector<TokenSeq>& candidates);

struct MetricReport {
  int mbr_n = 1;
  double bleu = 0;
  double rouge_l = 0;
  double dist1 = 0;
  int n_samples = 0;
};

/// Averages over items. Empty hypotheses score 0 on BLEU and ROUGE-L rather than erroring,
/// since an untrained model can emit EOS first.
MetricReport score_outputs(const std::vector<TokenSeq>& hyps, const std::vector<TokenSeq>& refs, int mbr_n = 1);

/// pools[i] holds at least n_max candidates for reference i. Row n uses mbr_select over
/// the first n candidates of every pool.
std::vector<MetricReport> mbr_sweep(const std::vector<std::vector<TokenSeq>>& pools, const std::vector<TokenSeq>& refs,
                                    int n_max);

void write_metric_csv(std::ostream& out, const std::vector<MetricReport>& rows);

}  // namespace flowlab
