#pragma once

// Corpus BLEU with exponential smoothing of zero-match orders.

#include "rfadoc/types.hpp"

#include <cstdint>
#include <vector>

namespace rfadoc {

struct NgramStats {
  std::vector<std::int64_t> matches;  // clipped matches per order
  std::vector<std::int64_t> totals;   // hypothesis n-grams per order
  std::int64_t hyp_length = 0;
  std::int64_t ref_length = 0;

  explicit NgramStats(int max_n = 4) : matches(static_cast<std::size_t>(max_n), 0), totals(matches) {}
  int max_n() const { return static_cast<int>(matches.size()); }
  NgramStats& operator+=(const NgramStats& o);
};

NgramStats ngram_stats(const Sentence& hypothesis, const Sentence& reference, int max_n = 4);

struct BleuScore {
  double score = 0;                // 0..100
  std::vector<double> precisions;  // 0..100, after smoothing
  double brevity_penalty = 1;
  std::int64_t hyp_length = 0;
  std::int64_t ref_length = 0;
};

/// Orders with no hypothesis n-grams at all are left out of the geometric
/// mean; a zero-match order contributes 1/(2^k * total) with k counting the
/// zero-match orders so far.
BleuScore bleu_from_stats(const NgramStats& stats);

BleuScore corpus_bleu(const std::vector<Sentence>& hypotheses, const std::vector<Sentence>& references,
                      int max_n = 4);

inline double bleu(const std::vector<Sentence>& hypotheses, const std::vector<Sentence>& references, int max_n = 4) {
  return corpus_bleu(hypotheses, references, max_n).score;
}

}  // namespace rfadoc
