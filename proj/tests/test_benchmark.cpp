#include "rfadoc/benchmark.hpp"

#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

using namespace rfadoc;

namespace {

Model<double> small_model() {
  ModelConfig c;
  c.vocab_size = 16;
  c.d_model = 16;
  c.n_heads = 2;
  c.d_ff = 32;
  c.n_enc_layers = 1;
  c.n_dec_layers = 1;
  c.d_cross = 8;
  c.d_causal = 8;
  apply_variant(c, "rfa-sgate");
  return make_model<double>(c);
}

// Every call advances one second, so each timed step lasts exactly 1 s.
Clock ticking() {
  auto n = std::make_shared<double>(0);
  return [n] { return (*n)++; };
}

BenchConfig quick() {
  BenchConfig c;
  c.window_sizes = {1, 2};
  c.batch_divisor = 512;  // batch 2 at L=1, 1 at L=2
  c.repetitions = 3;
  c.warmup = 0;
  c.sentence_length = 3;
  c.probe_prefixes = {};
  return c;
}

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / ("rfadoc_test_" + name)).string();
}

}  // namespace

TEST_CASE("tokens per second counts decoded tokens over timed seconds") {
  const auto m = small_model();
  const auto cfg = quick();
  const auto cell = bench_cell(m, 1, cfg, ticking());
  CHECK(cell.batch == 2);
  CHECK(cell.tokens == 2 * 3);
  CHECK(cell.seconds == 3.0);
  CHECK(cell.tokens_per_sec == 2.0);
  CHECK(cell.p50_latency_us == doctest::Approx(0.5e6));
  CHECK(cell.p95_latency_us == doctest::Approx(0.5e6));
  CHECK_FALSE(cell.skipped);
}

TEST_CASE("identical step timings give a latency ratio of one") {
  auto cfg = quick();
  cfg.probe_prefixes = {5, 50};
  cfg.probe_window = 4;
  cfg.probe_batch = 2;
  const auto p = probe_prefix_latency(small_model(), cfg, ticking());
  CHECK(p.latency_us == std::vector<double>{0.5e6, 0.5e6});
  CHECK(p.ratio() == 1.0);
}

TEST_CASE("the inflation hook adds latency proportional to the prefix") {
  auto cfg = quick();
  cfg.probe_prefixes = {10, 100};
  cfg.probe_window = 1;
  cfg.probe_batch = 1;
  cfg.inflate_backend = Backend::Rfa;
  cfg.inflate_us_per_prefix = 1e4;
  const auto p = probe_prefix_latency(small_model(), cfg, ticking());
  CHECK(p.latency_us[0] == doctest::Approx(1e6 + 1e5));
  CHECK(p.latency_us[1] == doctest::Approx(1e6 + 1e6));
}

TEST_CASE("benchmark outputs equal plain forced decoding") {
  const auto m = small_model();
  const auto cfg = quick();
  const auto cell = bench_cell(m, 2, cfg);
  const auto sources = synthetic_windows(m.config.vocab_size, 2, cell.batch, cfg.sentence_length,
                                         derive_seed(cfg.seed, "bench.L2"));
  std::uint64_t h = 0;
  for (const auto& o : forced_decode_batch(m, sources, sources.front().size())) h = hash_tokens(h, o);
  CHECK(cell.output_hash == h);
}

TEST_CASE("the csv has one row per backend and window size") {
  const auto r = run_benchmark(small_model(), quick(), ticking());
  const std::string csv = format_csv(r);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 5);
  CHECK(csv.rfind("backend,L,batch,tokens_per_sec,p50_latency_us,p95_latency_us,cache_entries_peak,speedup\n", 0) == 0);
  CHECK(r.cells.size() == 4);
  CHECK(r.speedup.L == std::vector<int>{1, 2});
  for (const auto& c : r.cells)
    if (c.backend == Backend::Rfa) CHECK(c.speedup == 1.0);
}

TEST_CASE("same seed and clock give byte-identical reports") {
  const auto m = small_model();
  const std::string a = temp_path("a.csv"), b = temp_path("b.csv");
  std::ostringstream sa, sb;
  emit_report(run_benchmark(m, quick(), ticking()), a, sa);
  emit_report(run_benchmark(m, quick(), ticking()), b, sb);
  auto slurp = [](const std::string& p) {
    std::ifstream in(p);
    return std::string(std::istreambuf_iterator<char>(in), {});
  };
  CHECK(slurp(a) == slurp(b));
  CHECK(sa.str() == sb.str());
  CHECK(sa.str().find("decoder steps only") != std::string::npos);
  std::filesystem::remove(a);
  std::filesystem::remove(b);
}

TEST_CASE("empty configurations fail before writing anything") {
  auto cfg = quick();
  cfg.backends = {};
  CHECK_THROWS_AS(run_benchmark(small_model(), cfg), InvalidArgument);
  const std::string path = temp_path("never.csv");
  std::filesystem::remove(path);
  std::ostringstream out;
  CHECK_THROWS_AS(emit_report(BenchResult{}, path, out), InvalidArgument);
  CHECK_FALSE(std::filesystem::exists(path));
}

TEST_CASE("bench configs are validated") {
  auto c = quick();
  c.repetitions = 2;
  CHECK_THROWS_AS(c.validate(), InvalidArgument);
  c = quick();
  c.window_sizes = {0};
  CHECK_THROWS_AS(c.validate(), InvalidArgument);
  c = quick();
  c.batch_divisor = 0;
  CHECK_THROWS_AS(c.validate(), InvalidArgument);
  c = quick();
  c.probe_prefixes = {0};
  CHECK_THROWS_AS(c.validate(), InvalidArgument);
}

TEST_CASE("batch sizes follow the reference table") {
  BenchConfig c;
  c.batch_divisor = 1;
  CHECK(c.batch_size(1) == 1024);
  CHECK(c.batch_size(15) == 96);
  CHECK(c.batch_size(7) == 256);
  CHECK(c.batch_size(40) == 96);
  c.batch_divisor = 64;
  CHECK(c.batch_size(1) == 16);
  CHECK(c.batch_size(15) == 1);
}

TEST_CASE("spearman correlation uses average ranks") {
  CHECK(spearman({1, 2, 3, 4}, {10, 20, 30, 40}) == doctest::Approx(1.0));
  CHECK(spearman({1, 2, 3, 4}, {4, 3, 2, 1}) == doctest::Approx(-1.0));
  // Ranks of y with ties: 1, 2.5, 2.5, 4.
  CHECK(spearman({1, 2, 3, 4}, {1, 5, 5, 9}) == doctest::Approx(4.5 / std::sqrt(5.0 * 4.5)));
  CHECK(spearman({1, 2, 3}, {7, 7, 7}) == 0.0);
  CHECK_THROWS_AS(spearman({1}, {1}), InvalidArgument);
  CHECK_THROWS_AS(spearman({1, 2}, {1}), DimensionMismatch);
}

TEST_CASE("speedups need both backends at every window size") {
  std::vector<BenchCell> cells(3);
  const Backend backends[] = {Backend::Exact, Backend::Rfa, Backend::Exact};
  const int windows[] = {1, 1, 2};
  const double rates[] = {10, 30, 5};
  for (int i = 0; i < 3; ++i) {
    cells[i].backend = backends[i];
    cells[i].L = windows[i];
    cells[i].tokens_per_sec = rates[i];
  }
  CHECK_THROWS_AS(compute_speedup(cells), InvalidArgument);
  cells.pop_back();
  const auto t = compute_speedup(cells);
  CHECK(t.ratio == std::vector<double>{3.0});
  CHECK(cells[1].speedup == 3.0);
}

TEST_CASE("scaling law checks apply their thresholds") {
  BenchResult r;
  r.probes.push_back({Backend::Rfa, {100, 1000}, {10.0, 11.9}});
  r.probes.push_back({Backend::Exact, {100, 1000}, {10.0, 49.0}});
  r.speedup.L = {1, 2, 3};
  r.speedup.spearman = 0.9;
  const auto laws = check_scaling_laws(r);
  REQUIRE(laws.size() == 3);
  CHECK(laws[0].passed);
  CHECK_FALSE(laws[1].passed);
  CHECK(laws[2].passed);
}

TEST_CASE("percentiles interpolate between order statistics") {
  CHECK(detail::percentile({4, 1, 3, 2}, 0.5) == 2.5);
  CHECK(detail::percentile({1, 2, 3, 4, 5}, 0.95) == doctest::Approx(4.8));
  CHECK(detail::median({7}) == 7);
  CHECK_THROWS_AS(detail::median({}), InvalidArgument);
}

TEST_CASE("synthetic windows have L sentences of fixed length") {
  const auto w = synthetic_windows(16, 3, 5, 4, 1);
  REQUIRE(w.size() == 5);
  for (const auto& s : w) {
    CHECK(s.size() == 3 * 4 + 2);
    CHECK(split_sentences(s).size() == 3);
  }
  CHECK(synthetic_windows(16, 3, 5, 4, 1) == w);
  CHECK_THROWS_AS(synthetic_windows(kNumReserved, 1, 1, 1, 1), InvalidArgument);
}
