#pragma once

// Decoding throughput and per-step latency for exact vs RFA backends.

#include "rfadoc/decoding.hpp"
#include "rfadoc/document.hpp"

#include <chrono>
#include <functional>
#include <iosfwd>
#include <limits>
#include <map>
#include <random>
#include <string>

namespace rfadoc {

/// Monotonic clock in seconds. Injectable so tests can drive time by hand.
using Clock = std::function<double()>;

inline double steady_seconds() {
  using namespace std::chrono;
  return duration<double>(steady_clock::now().time_since_epoch()).count();
}

/// Reference batch sizes per window size, before the divisor.
inline const std::map<int, int>& reference_batch_sizes() {
  static const std::map<int, int> table = {{1, 1024}, {2, 512}, {3, 512}, {4, 256}, {5, 256}, {10, 128}, {15, 96}};
  return table;
}

/// Published speedups at L=15, kept as report metadata only.
inline constexpr double kReferenceSpeedupGpu = 2.09;
inline constexpr double kReferenceSpeedupCpu = 19.2;

struct BenchConfig {
  std::vector<int> window_sizes = {1, 2, 3, 4, 5, 10, 15};
  int batch_divisor = 64;
  int repetitions = 3;
  int warmup = 1;
  std::vector<Backend> backends = {Backend::Exact, Backend::Rfa};
  int sentence_length = 20;
  std::vector<int> probe_prefixes = {100, 1000};
  int probe_window = 32;  // steps pooled per probe point
  int probe_batch = 0;    // 0: the batch size used for L=1
  std::uint64_t seed = 1;
  // Test hook: adds `inflate_us_per_prefix * prefix` microseconds to every
  // measured step of `inflate_backend`.
  std::optional<Backend> inflate_backend;
  double inflate_us_per_prefix = 0;

  void validate() const;
  int batch_size(int L) const;
};

struct BenchCell {
  Backend backend = Backend::Exact;
  int L = 1;
  int batch = 1;
  std::size_t tokens = 0;  // per repetition
  double seconds = 0;      // median decode time over repetitions
  double tokens_per_sec = 0;
  double p50_latency_us = 0;  // per token
  double p95_latency_us = 0;
  std::size_t cache_entries_peak = 0;
  double speedup = std::numeric_limits<double>::quiet_NaN();  // RFA rows only
  std::uint64_t output_hash = 0;
  bool skipped = false;
  std::string error;
};

struct PrefixProbe {
  Backend backend = Backend::Exact;
  std::vector<int> prefixes;
  std::vector<double> latency_us;  // median per-token step latency near each prefix

  double ratio() const { return latency_us.back() / latency_us.front(); }
};

struct SpeedupTable {
  std::vector<int> L;
  std::vector<double> ratio;  // RFA tokens/sec over exact tokens/sec
  double spearman = std::numeric_limits<double>::quiet_NaN();
  bool increasing = false;  // spearman > 0.8
};

struct BenchResult {
  std::vector<BenchCell> cells;
  std::vector<PrefixProbe> probes;
  SpeedupTable speedup;
};

/// Spearman rank correlation with average ranks for ties.
double spearman(const std::vector<double>& x, const std::vector<double>& y);

/// Ratio per L; throws when an L lacks either backend. Fills the `speedup`
/// column of the RFA cells.
SpeedupTable compute_speedup(std::vector<BenchCell>& cells);

struct LawCheck {
  std::string name;
  double value = 0;
  std::string bound;
  bool passed = false;
};

/// RFA probe ratio <= 1.2, exact probe ratio >= 5, speedup rank correlation > 0.8.
std::vector<LawCheck> check_scaling_laws(const BenchResult& r);

/// Writes the CSV and prints a summary. Throws before creating the file when
/// there is nothing to report.
void emit_report(const BenchResult& r, const std::string& csv_path, std::ostream& summary);
std::string format_csv(const BenchResult& r);

/// Synthetic source windows: L sentences of `sentence_length` content tokens.
std::vector<Sentence> synthetic_windows(int vocab_size, int L, int count, int sentence_length, std::uint64_t seed);

inline std::uint64_t hash_tokens(std::uint64_t h, const Sentence& s) {
  for (TokenId t : s) h = mix_seed(h ^ static_cast<std::uint64_t>(t));
  return mix_seed(h ^ 0x5e9);
}

namespace detail {

template <typename Scalar>
struct BatchRun {
  std::vector<double> step_seconds;  // one per decoder step over the whole batch
  std::size_t tokens = 0;
  std::size_t peak_entries = 0;
  std::uint64_t output_hash = 0;
};

/// Forced-length decoding of a batch. Only the batched decoder step sits in
/// the timed region; token selection and cache bookkeeping do not.
template <typename Scalar>
BatchRun<Scalar> run_batch(const Model<Scalar>& m, const std::vector<Sentence>& sources, std::size_t length,
                           const Clock& clock, const BenchConfig& cfg) {
  BatchRun<Scalar> run;
  const bool inflate = cfg.inflate_backend && *cfg.inflate_backend == m.config.causal_backend;
  double t0 = 0;
  ForcedDecodeHooks<Scalar> hooks;
  hooks.before_step = [&] { t0 = clock(); };
  hooks.after_step = [&](const std::vector<DecodeCache<Scalar>>& caches) {
    double dt = clock() - t0;
    const double prefix = double(run.step_seconds.size());
    if (inflate) dt += 1e-6 * cfg.inflate_us_per_prefix * prefix * double(caches.size());
    run.step_seconds.push_back(dt);
    std::size_t entries = 0;
    for (const auto& c : caches) entries += c.entries();
    run.peak_entries = std::max(run.peak_entries, entries);
    run.tokens += caches.size();
  };
  const auto outputs = forced_decode_batch(m, sources, length, hooks);
  for (const auto& o : outputs) run.output_hash = hash_tokens(run.output_hash, o);
  return run;
}

double median(std::vector<double> v);
double percentile(std::vector<double> v, double p);

}  // namespace detail

namespace detail {

/// One (backend, L) cell being measured. Repetitions can be interleaved with
/// other cells so that slow phases of the machine spread over every cell.
template <typename Scalar>
class CellRun {
 public:
  CellRun(const Model<Scalar>& m, int L, const BenchConfig& cfg, const Clock& clock)
      : m_(m), cfg_(cfg), clock_(clock) {
    cell_.backend = m.config.causal_backend;
    cell_.L = L;
    cell_.batch = cfg.batch_size(L);
    guarded([&] {
      sources_ = synthetic_windows(m.config.vocab_size, L, cell_.batch, cfg.sentence_length,
                                   derive_seed(cfg.seed, "bench.L" + std::to_string(L)));
      length_ = sources_.front().size();
      for (int w = 0; w < cfg.warmup; ++w) run_batch(m_, sources_, length_, clock_, cfg_);
    });
  }

  void repeat() {
    guarded([&] {
      auto run = run_batch(m_, sources_, length_, clock_, cfg_);
      double total = 0;
      for (double s : run.step_seconds) {
        total += s;
        per_token_.push_back(1e6 * s / double(sources_.size()));
      }
      totals_.push_back(total);
      cell_.tokens = run.tokens;
      cell_.cache_entries_peak = run.peak_entries;
      cell_.output_hash = run.output_hash;
    });
  }

  BenchCell finish() {
    if (cell_.skipped) return cell_;
    cell_.seconds = median(totals_);
    cell_.tokens_per_sec = cell_.seconds > 0 ? double(cell_.tokens) / cell_.seconds : 0.0;
    cell_.p50_latency_us = percentile(per_token_, 0.5);
    cell_.p95_latency_us = percentile(per_token_, 0.95);
    return cell_;
  }

 private:
  template <typename F>
  void guarded(F&& f) {
    if (cell_.skipped) return;
    try {
      f();
    } catch (const std::bad_alloc&) {
      cell_.skipped = true;
      cell_.error = "out of memory";
    }
  }

  const Model<Scalar>& m_;
  const BenchConfig& cfg_;
  const Clock& clock_;
  BenchCell cell_;
  std::vector<Sentence> sources_;
  std::size_t length_ = 0;
  std::vector<double> totals_, per_token_;
};

}  // namespace detail

/// Tokens per second and per-step latency for one (backend, L) cell.
template <typename Scalar>
BenchCell bench_cell(const Model<Scalar>& m, int L, const BenchConfig& cfg, const Clock& clock = steady_seconds) {
  detail::CellRun<Scalar> run(m, L, cfg, clock);
  for (int r = 0; r < cfg.repetitions; ++r) run.repeat();
  return run.finish();
}

/// Median per-token step latency around each probe prefix, decoding long
/// outputs from one-sentence sources.
template <typename Scalar>
PrefixProbe probe_prefix_latency(const Model<Scalar>& m, const BenchConfig& cfg, const Clock& clock = steady_seconds) {
  PrefixProbe probe;
  probe.backend = m.config.causal_backend;
  probe.prefixes = cfg.probe_prefixes;
  const int batch = cfg.probe_batch > 0 ? cfg.probe_batch : cfg.batch_size(1);
  const auto sources =
      synthetic_windows(m.config.vocab_size, 1, batch, cfg.sentence_length, derive_seed(cfg.seed, "probe"));
  const int last = *std::max_element(cfg.probe_prefixes.begin(), cfg.probe_prefixes.end());
  const std::size_t length = static_cast<std::size_t>(last + cfg.probe_window);
  std::vector<std::vector<double>> pooled(cfg.probe_prefixes.size());
  for (int w = 0; w < cfg.warmup; ++w) detail::run_batch(m, sources, length, clock, cfg);
  for (int r = 0; r < cfg.repetitions; ++r) {
    auto run = detail::run_batch(m, sources, length, clock, cfg);
    for (std::size_t i = 0; i < cfg.probe_prefixes.size(); ++i)
      for (int k = 0; k < cfg.probe_window; ++k)
        pooled[i].push_back(1e6 * run.step_seconds[static_cast<std::size_t>(cfg.probe_prefixes[i] + k)] / double(batch));
  }
  for (auto& p : pooled) probe.latency_us.push_back(detail::median(p));
  return probe;
}

/// Runs every backend x L cell plus the prefix probes on the same weights.
/// The exact backend drops gating; RFA keeps the model's gate variant. Cells
/// are timed round-robin, one repetition of each per round.
template <typename Scalar>
BenchResult run_benchmark(const Model<Scalar>& trained, const BenchConfig& cfg, const Clock& clock = steady_seconds) {
  cfg.validate();
  std::vector<Model<Scalar>> models;
  for (Backend b : cfg.backends) {
    const GateVariant gate = b == Backend::Rfa ? trained.config.gate_variant : GateVariant::None;
    models.push_back(with_backends(trained, b, b, gate));
  }
  std::vector<detail::CellRun<Scalar>> runs;
  runs.reserve(models.size() * cfg.window_sizes.size());
  for (const auto& m : models)
    for (int L : cfg.window_sizes) runs.emplace_back(m, L, cfg, clock);
  for (int r = 0; r < cfg.repetitions; ++r)
    for (auto& run : runs) run.repeat();

  BenchResult result;
  for (auto& run : runs) result.cells.push_back(run.finish());
  if (!cfg.probe_prefixes.empty())
    for (const auto& m : models) result.probes.push_back(probe_prefix_latency(m, cfg, clock));
  bool both = false;
  for (Backend b : cfg.backends) both |= b != cfg.backends.front();
  if (both) result.speedup = compute_speedup(result.cells);
  return result;
}

}  // namespace rfadoc
