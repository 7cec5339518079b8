#include "rfadoc/bleu.hpp"

#include <algorithm>
#include <cmath>
#include <map>

namespace rfadoc {

NgramStats& NgramStats::operator+=(const NgramStats& o) {
  require_dims(o.max_n() == max_n(), "NgramStats: order mismatch");
  for (std::size_t n = 0; n < matches.size(); ++n) {
    matches[n] += o.matches[n];
    totals[n] += o.totals[n];
  }
  hyp_length += o.hyp_length;
  ref_length += o.ref_length;
  return *this;
}

namespace {

using Counts = std::map<Sentence, std::int64_t>;

Counts count_ngrams(const Sentence& s, std::size_t n) {
  Counts c;
  for (std::size_t i = 0; i + n <= s.size(); ++i) ++c[Sentence(s.begin() + i, s.begin() + i + n)];
  return c;
}

}  // namespace

NgramStats ngram_stats(const Sentence& hypothesis, const Sentence& reference, int max_n) {
  require(max_n >= 1, "bleu: max_n must be >= 1");
  NgramStats st(max_n);
  st.hyp_length = static_cast<std::int64_t>(hypothesis.size());
  st.ref_length = static_cast<std::int64_t>(reference.size());
  for (int n = 1; n <= max_n; ++n) {
    const Counts h = count_ngrams(hypothesis, static_cast<std::size_t>(n));
    const Counts r = count_ngrams(reference, static_cast<std::size_t>(n));
    for (const auto& [gram, count] : h) {
      st.totals[n - 1] += count;
      if (auto it = r.find(gram); it != r.end()) st.matches[n - 1] += std::min(count, it->second);
    }
  }
  return st;
}

BleuScore bleu_from_stats(const NgramStats& st) {
  BleuScore out;
  out.hyp_length = st.hyp_length;
  out.ref_length = st.ref_length;
  out.precisions.assign(st.matches.size(), 0.0);
  if (st.hyp_length == 0) {
    out.brevity_penalty = 0;
    return out;
  }
  double smooth = 1, log_sum = 0;
  int order = 0;
  for (std::size_t n = 0; n < st.matches.size(); ++n) {
    if (st.totals[n] == 0) break;
    double p;
    if (st.matches[n] == 0) {
      smooth *= 2;
      p = 1.0 / (smooth * static_cast<double>(st.totals[n]));
    } else {
      p = static_cast<double>(st.matches[n]) / static_cast<double>(st.totals[n]);
    }
    out.precisions[n] = 100.0 * p;
    log_sum += std::log(p);
    ++order;
  }
  out.brevity_penalty =
      st.hyp_length >= st.ref_length ? 1.0 : std::exp(1.0 - double(st.ref_length) / double(st.hyp_length));
  out.score = 100.0 * out.brevity_penalty * std::exp(log_sum / order);
  return out;
}

BleuScore corpus_bleu(const std::vector<Sentence>& hypotheses, const std::vector<Sentence>& references, int max_n) {
  require(!hypotheses.empty(), "bleu: empty corpus");
  require_dims(hypotheses.size() == references.size(), "bleu: hypothesis/reference count mismatch");
  NgramStats total(max_n);
  for (std::size_t i = 0; i < hypotheses.size(); ++i) total += ngram_stats(hypotheses[i], references[i], max_n);
  return bleu_from_stats(total);
}

}  // namespace rfadoc
