// rfadoc: corpus generation, training, translation, consistency evaluation
// and decoding benchmarks from one entry point.

#include "rfadoc/benchmark.hpp"
#include "rfadoc/bleu.hpp"
#include "rfadoc/checkpoint.hpp"
#include "rfadoc/decoding.hpp"
#include "rfadoc/run_config.hpp"
#include "rfadoc/training.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

namespace fs = std::filesystem;
using namespace rfadoc;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitRuntime = 2;
constexpr int kExitAssert = 3;
constexpr const char* kOutDirEnv = "RFADOC_OUT_DIR";

using Scalar = float;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

RunConfig base_defaults() {
  RunConfig c;
  if (const char* env = std::getenv(kOutDirEnv); env && *env) c.out_dir = env;
  return c;
}

/// Options that map onto config keys. Only flags present on the command line
/// override the config file.
class Command {
 public:
  Command(CLI::App& parent, const std::string& name, const std::string& description)
      : app_(parent.add_subcommand(name, description)), defaults_(to_key_values(base_defaults())) {
    app_->add_option("--config", config_path_, "key=value config file (flags override it)");
    key("--seed", "seed", "master seed for every random substream");
    key("--out-dir", "out_dir", std::string("output directory (default from $") + kOutDirEnv + ")");
    key("--data-dir", "data_dir", "corpus directory (default <out-dir>/data)");
  }

  CLI::Option* key(const std::string& flag, const std::string& config_key, const std::string& help) {
    CLI::Option* o = app_->add_option(flag, values_[config_key], help);
    if (auto it = defaults_.find(config_key); it != defaults_.end() && !it->second.empty()) o->default_str(it->second);
    bound_.emplace_back(o, config_key);
    return o;
  }

  CLI::App* app() { return app_; }
  bool chosen() const { return app_->parsed(); }

  RunConfig resolve() const {
    RunConfig c = base_defaults();
    if (!config_path_.empty()) apply_key_values(c, read_key_values(config_path_));
    KeyValues flags;
    for (const auto& [opt, k] : bound_)
      if (opt->count() > 0) flags[k] = values_.at(k);
    apply_key_values(c, flags);
    return c;
  }

 private:
  CLI::App* app_;
  KeyValues defaults_;
  std::string config_path_;
  std::map<std::string, std::string> values_;
  std::vector<std::pair<CLI::Option*, std::string>> bound_;
};

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw RuntimeFailure("cannot create directory " + dir + ": " + ec.message());
}

struct CorpusPaths {
  std::string dir;
  std::string src(const std::string& split) const { return dir + "/" + split + ".src"; }
  std::string tgt(const std::string& split) const { return dir + "/" + split + ".tgt"; }
  std::string vocab() const { return dir + "/vocab.txt"; }
  std::string items() const { return dir + "/items.txt"; }
};

// gen-data ------------------------------------------------------------------

int gen_data(const RunConfig& c, bool force) {
  c.data.validate();
  const CorpusPaths p{resolved_data_dir(c)};
  std::vector<std::string> files = {p.vocab()};
  for (const char* split : {"train", "dev", "test"}) {
    files.push_back(p.src(split));
    files.push_back(p.tgt(split));
  }
  if (c.data.task == TaskFamily::Agree) files.push_back(p.items());
  if (!force)
    for (const auto& f : files)
      if (fs::exists(f)) throw RuntimeFailure(f + " exists (use --force to overwrite)");
  ensure_dir(p.dir);

  const SyntheticCorpus corpus = generate_synthetic_corpus(c.data);
  write_vocabulary(p.vocab(), corpus.vocab);
  write_parallel(p.src("train"), p.tgt("train"), corpus.train, corpus.vocab);
  write_parallel(p.src("dev"), p.tgt("dev"), corpus.dev, corpus.vocab);
  write_parallel(p.src("test"), p.tgt("test"), corpus.test, corpus.vocab);
  if (c.data.task == TaskFamily::Agree) {
    std::ofstream f(p.items());
    write_items(f, corpus.items, corpus.vocab);
  }
  std::cout << "task " << to_string(c.data.task) << ": " << corpus.train.size() << " train, " << corpus.dev.size()
            << " dev, " << corpus.test.size() << " test documents, " << corpus.items.size()
            << " consistency items, vocabulary " << corpus.vocab.size() << " -> " << p.dir << "\n";
  return kExitOk;
}

// train ---------------------------------------------------------------------

int train_cmd(RunConfig c) {
  const CorpusPaths p{resolved_data_dir(c)};
  const Vocabulary vocab = read_vocabulary(p.vocab());
  const auto train_docs = read_parallel(p.src("train"), p.tgt("train"), vocab);
  std::vector<ParallelDocument> dev_docs;
  if (fs::exists(p.src("dev"))) dev_docs = read_parallel(p.src("dev"), p.tgt("dev"), vocab);

  apply_variant(c.model, c.variant);
  c.model.vocab_size = vocab.size();
  validate(c.model);
  const auto train_set = make_examples(train_docs, c.L);
  const auto dev_set = make_examples(dev_docs, c.L);

  ensure_dir(c.out_dir);
  const std::string log_path = c.out_dir + "/train_log.csv";
  std::ofstream log(log_path);
  if (!log) throw RuntimeFailure("cannot write " + log_path);
  log << "step,lr,train_loss,dev_loss,dev_accuracy\n";
  const int every = std::max(1, c.train.eval_every);
  auto on_log = [&](const TrainLogEntry& e) {
    log << e.step << ',' << e.lr << ',' << e.train_loss << ',';
    if (!std::isnan(e.dev_loss)) log << e.dev_loss << ',' << e.dev_accuracy;
    else log << ',';
    log << '\n';
    if (e.step % every == 0)
      std::cout << "step " << e.step << " lr " << e.lr << " loss " << e.train_loss << " dev " << e.dev_loss
                << " acc " << e.dev_accuracy << std::endl;
  };

  Model<Scalar> model = make_model(c.model, init_parameters<Scalar>(c.model));
  const auto result = train(std::move(model), train_set, dev_set, c.train, on_log);
  const std::string ckpt = resolved_checkpoint(c);
  if (auto parent = fs::path(ckpt).parent_path(); !parent.empty()) ensure_dir(parent.string());
  save_checkpoint(ckpt, result.model, vocab);
  std::cout << "variant " << c.variant << " L=" << c.L << ": " << result.steps_run << " steps, best step "
            << result.best_step;
  if (!dev_set.empty()) std::cout << " dev loss " << result.best_dev_loss;
  if (result.early_stopped) std::cout << " (early stop)";
  std::cout << "\ncheckpoint " << ckpt << "\nloss curve " << log_path << "\n";
  return kExitOk;
}

// translate -----------------------------------------------------------------

int translate_cmd(const RunConfig& c, bool greedy, const std::string& output, const std::string& split) {
  const auto ckpt = load_checkpoint<Scalar>(resolved_checkpoint(c));
  const CorpusPaths p{resolved_data_dir(c)};
  const auto docs = read_parallel(p.src(split), p.tgt(split), ckpt.vocab);
  require(c.beam >= 1, "--beam must be >= 1");

  const std::string out_path = output.empty() ? c.out_dir + "/translations.txt" : output;
  if (auto parent = fs::path(out_path).parent_path(); !parent.empty()) ensure_dir(parent.string());
  std::ofstream out(out_path);
  if (!out) throw RuntimeFailure("cannot write " + out_path);

  std::vector<Sentence> hyps, refs;
  std::size_t empty = 0;
  for (std::size_t d = 0; d < docs.size(); ++d) {
    if (d) out << '\n';
    const auto windows = make_windows(docs[d].source, c.L);
    for (const auto& w : windows) {
      const Sentence decoded = greedy ? greedy_decode(ckpt.model, w.tokens)
                                      : beam_decode(ckpt.model, w.tokens, static_cast<std::size_t>(c.beam));
      Sentence last = extract_last_sentence(decoded);
      empty += last.empty();
      out << ckpt.vocab.decode(last) << '\n';
      hyps.push_back(std::move(last));
      refs.push_back(docs[d].target.sentences[w.last_sentence]);
    }
  }
  const BleuScore b = corpus_bleu(hyps, refs);
  std::cout << "translated " << hyps.size() << " sentences (" << (greedy ? "greedy" : "beam " + std::to_string(c.beam))
            << ", L=" << c.L << ") -> " << out_path << "\n";
  if (empty) std::cout << "empty extracted sentences: " << empty << "\n";
  std::cout << "BLEU = " << b.score << " (BP " << b.brevity_penalty << ", hyp " << b.hyp_length << ", ref "
            << b.ref_length << ")\n";
  return kExitOk;
}

// eval-consistency ----------------------------------------------------------

int eval_consistency_cmd(const RunConfig& c, const std::string& items_path, const std::string& windows) {
  const auto ckpt = load_checkpoint<Scalar>(resolved_checkpoint(c));
  const std::string path = items_path.empty() ? CorpusPaths{resolved_data_dir(c)}.items() : items_path;
  std::ifstream f(path);
  if (!f) throw RuntimeFailure("cannot read " + path);
  const auto items = read_items(f, ckpt.vocab);
  require(!items.empty(), "items file is empty");
  std::vector<int> Ls = windows.empty() ? std::vector<int>{c.L} : parse_int_list(windows);
  const auto scorer = [&](const Sentence& s, const Sentence& t) { return sequence_log_prob(ckpt.model, s, t); };
  for (int L : Ls) {
    const auto r = consistency_evaluate(items, L, scorer);
    std::cout << "L=" << L << " accuracy " << r.accuracy() << " (" << r.num_correct << "/" << r.num_items
              << ", random baseline " << r.random_baseline << ")\n";
  }
  return kExitOk;
}

// bench ---------------------------------------------------------------------

int bench_cmd(RunConfig c, bool assert_laws, const std::string& csv, const std::string& inflate) {
  if (!inflate.empty()) {
    const auto colon = inflate.find(':');
    require(colon != std::string::npos, "--inflate-latency expects BACKEND:MICROSECONDS");
    c.bench.inflate_backend = parse_backend(inflate.substr(0, colon));
    c.bench.inflate_us_per_prefix = std::stod(inflate.substr(colon + 1));
  }
  c.bench.validate();
  const auto ckpt = load_checkpoint<Scalar>(resolved_checkpoint(c));
  const BenchResult r = run_benchmark(ckpt.model, c.bench);
  const std::string path = csv.empty() ? c.out_dir + "/bench.csv" : csv;
  if (auto parent = fs::path(path).parent_path(); !parent.empty()) ensure_dir(parent.string());
  emit_report(r, path, std::cout);
  std::cout << "csv " << path << "\n";
  if (!assert_laws) return kExitOk;
  bool ok = true;
  for (const auto& law : check_scaling_laws(r)) {
    std::cout << (law.passed ? "PASS " : "FAIL ") << law.name << " = " << law.value << " (" << law.bound << ")\n";
    ok &= law.passed;
  }
  return ok ? kExitOk : kExitAssert;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Random feature attention for document-level translation at desk scale"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "help for every subcommand");

  Command gen(app, "gen-data", "generate a synthetic parallel corpus");
  gen.key("--task", "data.task", "copy or agree");
  gen.key("--docs", "data.train_docs", "training documents");
  gen.key("--dev-docs", "data.dev_docs", "dev documents");
  gen.key("--test-docs", "data.test_docs", "test documents (one consistency item each for agree)");
  gen.key("--min-sentences", "data.min_sentences", "sentences per document, lower bound");
  gen.key("--max-sentences", "data.max_sentences", "sentences per document, upper bound");
  gen.key("--min-length", "data.min_length", "tokens per sentence, lower bound");
  gen.key("--max-length", "data.max_length", "tokens per sentence, upper bound");
  gen.key("--words", "data.num_words", "content vocabulary size");
  bool force = false;
  gen.app()->add_flag("--force", force, "overwrite existing files");

  Command tr(app, "train", "train a model on the generated corpus");
  tr.key("--variant", "variant", "exact, rfa, rfa-sgate or rfa-sgate-avg");
  tr.key("--L", "L", "window size in sentences");
  tr.key("--steps", "train.steps", "optimizer steps");
  tr.key("--batch-size", "train.batch_size", "windows per step");
  tr.key("--lr", "train.peak_lr", "peak learning rate");
  tr.key("--warmup", "train.warmup_steps", "linear warmup steps");
  tr.key("--eval-every", "train.eval_every", "steps between dev evaluations");
  tr.key("--patience", "train.patience", "dev evaluations without improvement before stopping");
  tr.key("--d-model", "model.d_model", "model width");
  tr.key("--heads", "model.n_heads", "attention heads");
  tr.key("--d-ff", "model.d_ff", "feed-forward width");
  tr.key("--enc-layers", "model.n_enc_layers", "encoder layers");
  tr.key("--dec-layers", "model.n_dec_layers", "decoder layers");
  tr.key("--d-cross", "model.d_cross", "random features per head, cross attention");
  tr.key("--d-causal", "model.d_causal", "random features per head, causal attention");
  tr.key("--sigma", "model.sigma", "random feature bandwidth");
  tr.key("--b-f-init", "model.b_f_init", "initial gate bias");
  tr.key("--checkpoint", "checkpoint", "checkpoint path (default <out-dir>/model.ckpt)");

  Command tl(app, "translate", "translate a split with sliding windows and report BLEU");
  tl.key("--checkpoint", "checkpoint", "checkpoint path (default <out-dir>/model.ckpt)");
  tl.key("--L", "L", "window size in sentences");
  tl.key("--beam", "beam", "beam size");
  bool greedy = false;
  std::string translation_out, split = "test";
  tl.app()->add_flag("--greedy", greedy, "greedy decoding instead of beam search");
  tl.app()->add_option("--output", translation_out, "translation file (default <out-dir>/translations.txt)");
  tl.app()->add_option("--split", split, "corpus split")->capture_default_str()->check(CLI::IsMember({"train", "dev", "test"}));

  Command ev(app, "eval-consistency", "contrastive consistency accuracy");
  ev.key("--checkpoint", "checkpoint", "checkpoint path (default <out-dir>/model.ckpt)");
  std::string items_path, eval_windows;
  ev.app()->add_option("--items", items_path, "items file (default <data-dir>/items.txt)");
  ev.app()->add_option("--L", eval_windows, "comma-separated window sizes")->default_str("1");

  Command bn(app, "bench", "decoding speed of exact vs RFA attention");
  bn.key("--checkpoint", "checkpoint", "checkpoint path (default <out-dir>/model.ckpt)");
  bn.key("--L", "bench.windows", "comma-separated window sizes");
  bn.key("--backends", "bench.backends", "comma-separated backends");
  bn.key("--batch-divisor", "bench.batch_divisor", "divides the reference batch size table");
  bn.key("--repetitions", "bench.repetitions", "timed repetitions per cell (>= 3)");
  bn.key("--warmup", "bench.warmup", "untimed warmup runs per cell");
  bn.key("--sentence-length", "bench.sentence_length", "tokens per synthetic sentence");
  bn.key("--probe-prefixes", "bench.probe_prefixes", "prefix lengths for the per-token latency probe");
  bool assert_laws = false;
  std::string bench_csv, inflate;
  bn.app()->add_flag("--assert", assert_laws, "exit 3 when a scaling law fails");
  bn.app()->add_option("--csv", bench_csv, "CSV path (default <out-dir>/bench.csv)");
  bn.app()->add_option("--inflate-latency", inflate, "test hook: BACKEND:US adds US*prefix microseconds per step");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  RunConfig config;
  try {
    for (Command* cmd : {&gen, &tr, &tl, &ev, &bn})
      if (cmd->chosen()) config = cmd->resolve();
    if (gen.chosen()) config.data.validate();
    if (tr.chosen()) {
      config.train.validate();
      ModelConfig probe = config.model;
      apply_variant(probe, config.variant);
      probe.vocab_size = std::max(probe.vocab_size, kNumReserved + 1);
      validate(probe);
      require(config.L >= 1, "--L must be >= 1");
    }
    if (tl.chosen()) require(config.L >= 1 && config.beam >= 1, "--L and --beam must be >= 1");
    if (bn.chosen()) config.bench.validate();
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }

  try {
    if (gen.chosen()) return gen_data(config, force);
    if (tr.chosen()) return train_cmd(config);
    if (tl.chosen()) return translate_cmd(config, greedy, translation_out, split);
    if (ev.chosen()) return eval_consistency_cmd(config, items_path, eval_windows);
    if (bn.chosen()) return bench_cmd(config, assert_laws, bench_csv, inflate);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}
