#include "rfadoc/benchmark.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <ostream>
#include <sstream>

namespace rfadoc {

void BenchConfig::validate() const {
  require(!window_sizes.empty(), "bench: no window sizes");
  for (int L : window_sizes) require(L >= 1, "bench: window sizes must be positive");
  require(batch_divisor >= 1, "bench: batch divisor must be >= 1");
  require(repetitions >= 3, "bench: repetitions must be >= 3");
  require(warmup >= 0, "bench: warmup must be >= 0");
  require(!backends.empty(), "bench: backend list is empty");
  require(sentence_length >= 1, "bench: sentence length must be positive");
  for (int p : probe_prefixes) require(p >= 1, "bench: probe prefixes must be positive");
  require(probe_window >= 1, "bench: probe window must be positive");
  require(probe_batch >= 0, "bench: probe batch must be >= 0");
}

int BenchConfig::batch_size(int L) const {
  const auto& table = reference_batch_sizes();
  int base;
  if (auto it = table.find(L); it != table.end()) {
    base = it->second;
  } else {
    // Nearest smaller tabulated window; beyond the table keep the last entry.
    auto up = table.upper_bound(L);
    base = up == table.begin() ? up->second : std::prev(up)->second;
  }
  return std::max(1, base / batch_divisor);
}

std::vector<Sentence> synthetic_windows(int vocab_size, int L, int count, int sentence_length, std::uint64_t seed) {
  require(vocab_size > kNumReserved, "bench: vocabulary has no content tokens");
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<TokenId> tok(kNumReserved, vocab_size - 1);
  std::vector<Sentence> out;
  for (int i = 0; i < count; ++i) {
    std::vector<Sentence> sents(static_cast<std::size_t>(L));
    for (auto& s : sents)
      for (int k = 0; k < sentence_length; ++k) s.push_back(tok(rng));
    out.push_back(join_sentences(sents));
  }
  return out;
}

namespace detail {

double median(std::vector<double> v) { return percentile(std::move(v), 0.5); }

double percentile(std::vector<double> v, double p) {
  require(!v.empty(), "percentile of an empty sample");
  std::sort(v.begin(), v.end());
  const double pos = p * double(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(v.size() - 1, lo + 1);
  return v[lo] + (pos - double(lo)) * (v[hi] - v[lo]);
}

}  // namespace detail

namespace {

std::vector<double> ranks(const std::vector<double>& x) {
  std::vector<std::size_t> idx(x.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> r(x.size());
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && x[idx[j + 1]] == x[idx[i]]) ++j;
    const double avg = 0.5 * double(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
    i = j + 1;
  }
  return r;
}

}  // namespace

double spearman(const std::vector<double>& x, const std::vector<double>& y) {
  require_dims(x.size() == y.size(), "spearman: length mismatch");
  require(x.size() >= 2, "spearman: need at least two points");
  const auto rx = ranks(x), ry = ranks(y);
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / double(rx.size());
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / double(ry.size());
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0 || syy == 0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

SpeedupTable compute_speedup(std::vector<BenchCell>& cells) {
  std::map<int, BenchCell*> exact, rfa;
  for (auto& c : cells) {
    if (c.skipped) continue;
    (c.backend == Backend::Exact ? exact : rfa)[c.L] = &c;
  }
  std::map<int, bool> all;
  for (auto& [L, c] : exact) all[L] = true;
  for (auto& [L, c] : rfa) all[L] = true;
  SpeedupTable t;
  for (auto& [L, unused] : all) {
    if (!exact.count(L) || !rfa.count(L))
      throw InvalidArgument("compute_speedup: missing cell for L=" + std::to_string(L));
    const double ratio = rfa[L]->tokens_per_sec / exact[L]->tokens_per_sec;
    rfa[L]->speedup = ratio;
    t.L.push_back(L);
    t.ratio.push_back(ratio);
  }
  if (t.L.size() >= 2) {
    t.spearman = spearman(std::vector<double>(t.L.begin(), t.L.end()), t.ratio);
    t.increasing = t.spearman > 0.8;
  }
  return t;
}

std::vector<LawCheck> check_scaling_laws(const BenchResult& r) {
  std::vector<LawCheck> out;
  for (const auto& p : r.probes) {
    if (p.prefixes.size() < 2) continue;
    const std::string span = std::to_string(p.prefixes.front()) + "->" + std::to_string(p.prefixes.back());
    if (p.backend == Backend::Rfa)
      out.push_back({"rfa latency ratio " + span, p.ratio(), "<= 1.2", p.ratio() <= 1.2});
    else
      out.push_back({"exact latency ratio " + span, p.ratio(), ">= 5", p.ratio() >= 5.0});
  }
  if (!r.speedup.L.empty())
    out.push_back({"speedup spearman vs L", r.speedup.spearman, "> 0.8", r.speedup.spearman > 0.8});
  return out;
}

std::string format_csv(const BenchResult& r) {
  std::ostringstream os;
  os << "backend,L,batch,tokens_per_sec,p50_latency_us,p95_latency_us,cache_entries_peak,speedup\n";
  os << std::setprecision(6);
  for (const auto& c : r.cells) {
    os << to_string(c.backend) << ',' << c.L << ',' << c.batch << ',';
    if (c.skipped) {
      os << ",,,,\n";
      continue;
    }
    os << c.tokens_per_sec << ',' << c.p50_latency_us << ',' << c.p95_latency_us << ',' << c.cache_entries_peak << ',';
    if (!std::isnan(c.speedup)) os << c.speedup;
    os << '\n';
  }
  return os.str();
}

void emit_report(const BenchResult& r, const std::string& csv_path, std::ostream& summary) {
  require(!r.cells.empty(), "emit_report: no benchmark results");
  const std::string csv = format_csv(r);
  std::ofstream f(csv_path);
  if (!f) throw RuntimeFailure("cannot write " + csv_path);
  f << csv;

  summary << std::setprecision(4);
  for (const auto& c : r.cells)
    if (c.skipped) summary << "skipped " << to_string(c.backend) << " L=" << c.L << ": " << c.error << '\n';
  for (const auto& p : r.probes) {
    summary << to_string(p.backend) << " per-token latency:";
    for (std::size_t i = 0; i < p.prefixes.size(); ++i)
      summary << " prefix " << p.prefixes[i] << " = " << p.latency_us[i] << "us";
    summary << " (ratio " << p.ratio() << ")\n";
  }
  if (!r.speedup.L.empty()) {
    summary << "speedup rfa/exact:";
    for (std::size_t i = 0; i < r.speedup.L.size(); ++i) summary << " L=" << r.speedup.L[i] << ":" << r.speedup.ratio[i];
    summary << "\nspearman(L, speedup) = " << r.speedup.spearman << " -> "
            << (r.speedup.increasing ? "increasing with L" : "not increasing with L") << '\n';
  }
  summary << "reference speedups at L=15 (not asserted): " << kReferenceSpeedupGpu << "x GPU, "
          << kReferenceSpeedupCpu << "x CPU\n";
  summary << "timed region: decoder steps only; encoding, token selection and cache bookkeeping excluded\n";
}

}  // namespace rfadoc
