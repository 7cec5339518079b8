#include "rfadoc/run_config.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>

namespace rfadoc {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& v) {
  T out{};
  const auto r = std::from_chars(v.data(), v.data() + v.size(), out);
  if (r.ec != std::errc{} || r.ptr != v.data() + v.size() || v.empty())
    throw InvalidArgument("config: bad value for " + key + ": '" + v + "'");
  return out;
}

std::string format_double(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

template <typename Range, typename F>
std::string join(const Range& r, F f) {
  std::string out;
  for (const auto& x : r) {
    if (!out.empty()) out += ',';
    out += f(x);
  }
  return out;
}

struct Field {
  std::function<std::string()> get;
  std::function<void(const std::string&)> set;
};

using Fields = std::map<std::string, Field>;

template <typename T>
Field int_field(const std::string& key, T& ref) {
  return {[&ref] { return std::to_string(ref); }, [&ref, key](const std::string& v) { ref = parse_number<T>(key, v); }};
}

Field double_field(const std::string& key, double& ref) {
  return {[&ref] { return format_double(ref); }, [&ref, key](const std::string& v) { ref = parse_number<double>(key, v); }};
}

Field string_field(std::string& ref) {
  return {[&ref] { return ref; }, [&ref](const std::string& v) { ref = v; }};
}

void add_model_fields(Fields& f, ModelConfig& m) {
  f["model.vocab_size"] = int_field("model.vocab_size", m.vocab_size);
  f["model.d_model"] = int_field("model.d_model", m.d_model);
  f["model.n_heads"] = int_field("model.n_heads", m.n_heads);
  f["model.d_ff"] = int_field("model.d_ff", m.d_ff);
  f["model.n_enc_layers"] = int_field("model.n_enc_layers", m.n_enc_layers);
  f["model.n_dec_layers"] = int_field("model.n_dec_layers", m.n_dec_layers);
  f["model.cross_backend"] = {[&m] { return std::string(to_string(m.cross_backend)); },
                              [&m](const std::string& v) { m.cross_backend = parse_backend(v); }};
  f["model.causal_backend"] = {[&m] { return std::string(to_string(m.causal_backend)); },
                               [&m](const std::string& v) { m.causal_backend = parse_backend(v); }};
  f["model.gate_variant"] = {[&m] { return std::string(to_string(m.gate_variant)); },
                             [&m](const std::string& v) { m.gate_variant = parse_gate_variant(v); }};
  f["model.d_cross"] = int_field("model.d_cross", m.d_cross);
  f["model.d_causal"] = int_field("model.d_causal", m.d_causal);
  f["model.sigma"] = double_field("model.sigma", m.sigma);
  f["model.b_f_init"] = double_field("model.b_f_init", m.b_f_init);
  f["model.w_f_init_scale"] = double_field("model.w_f_init_scale", m.w_f_init_scale);
  f["model.master_seed"] = int_field("model.master_seed", m.master_seed);
}

Fields run_fields(RunConfig& c) {
  Fields f;
  f["L"] = int_field("L", c.L);
  f["variant"] = string_field(c.variant);
  f["data_dir"] = string_field(c.data_dir);
  f["out_dir"] = string_field(c.out_dir);
  f["checkpoint"] = string_field(c.checkpoint);
  f["beam"] = int_field("beam", c.beam);
  add_model_fields(f, c.model);

  auto& t = c.train;
  f["train.steps"] = int_field("train.steps", t.steps);
  f["train.batch_size"] = int_field("train.batch_size", t.batch_size);
  f["train.peak_lr"] = double_field("train.peak_lr", t.peak_lr);
  f["train.warmup_steps"] = int_field("train.warmup_steps", t.warmup_steps);
  f["train.beta1"] = double_field("train.beta1", t.beta1);
  f["train.beta2"] = double_field("train.beta2", t.beta2);
  f["train.eps"] = double_field("train.eps", t.eps);
  f["train.eval_every"] = int_field("train.eval_every", t.eval_every);
  f["train.patience"] = int_field("train.patience", t.patience);
  f["train.seed"] = int_field("train.seed", t.seed);

  auto& d = c.data;
  f["data.task"] = {[&d] { return to_string(d.task); }, [&d](const std::string& v) { d.task = parse_task_family(v); }};
  f["data.train_docs"] = int_field("data.train_docs", d.train_docs);
  f["data.dev_docs"] = int_field("data.dev_docs", d.dev_docs);
  f["data.test_docs"] = int_field("data.test_docs", d.test_docs);
  f["data.min_sentences"] = int_field("data.min_sentences", d.min_sentences);
  f["data.max_sentences"] = int_field("data.max_sentences", d.max_sentences);
  f["data.min_length"] = int_field("data.min_length", d.min_length);
  f["data.max_length"] = int_field("data.max_length", d.max_length);
  f["data.num_words"] = int_field("data.num_words", d.num_words);
  f["data.seed"] = int_field("data.seed", d.seed);

  auto& b = c.bench;
  f["bench.windows"] = {[&b] { return join(b.window_sizes, [](int x) { return std::to_string(x); }); },
                        [&b](const std::string& v) { b.window_sizes = parse_int_list(v); }};
  f["bench.batch_divisor"] = int_field("bench.batch_divisor", b.batch_divisor);
  f["bench.repetitions"] = int_field("bench.repetitions", b.repetitions);
  f["bench.warmup"] = int_field("bench.warmup", b.warmup);
  f["bench.backends"] = {[&b] { return join(b.backends, [](Backend x) { return std::string(to_string(x)); }); },
                         [&b](const std::string& v) { b.backends = parse_backend_list(v); }};
  f["bench.sentence_length"] = int_field("bench.sentence_length", b.sentence_length);
  f["bench.probe_prefixes"] = {[&b] { return join(b.probe_prefixes, [](int x) { return std::to_string(x); }); },
                               [&b](const std::string& v) { b.probe_prefixes = parse_int_list(v); }};
  f["bench.probe_window"] = int_field("bench.probe_window", b.probe_window);
  f["bench.probe_batch"] = int_field("bench.probe_batch", b.probe_batch);
  f["bench.seed"] = int_field("bench.seed", b.seed);
  return f;
}

}  // namespace

namespace {

// An all-blank string is the empty list; otherwise every item must be present.
std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  if (trim(s).empty()) return out;
  std::stringstream ss(s + ",");
  for (std::string item; std::getline(ss, item, ',');) {
    item = trim(item);
    if (item.empty()) throw InvalidArgument("empty item in list '" + s + "'");
    out.push_back(item);
  }
  return out;
}

}  // namespace

std::vector<int> parse_int_list(const std::string& s) {
  std::vector<int> out;
  for (const auto& item : split_list(s)) out.push_back(parse_number<int>("list", item));
  return out;
}

std::vector<Backend> parse_backend_list(const std::string& s) {
  std::vector<Backend> out;
  for (const auto& item : split_list(s)) out.push_back(parse_backend(item));
  return out;
}

std::string resolved_data_dir(const RunConfig& c) {
  return c.data_dir.empty() ? c.out_dir + "/data" : c.data_dir;
}

std::string resolved_checkpoint(const RunConfig& c) {
  return c.checkpoint.empty() ? c.out_dir + "/model.ckpt" : c.checkpoint;
}

KeyValues parse_key_values(std::istream& in) {
  KeyValues kv;
  int line_no = 0;
  for (std::string line; std::getline(in, line);) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw InvalidArgument("config line " + std::to_string(line_no) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw InvalidArgument("config line " + std::to_string(line_no) + ": empty key");
    kv[key] = trim(line.substr(eq + 1));
  }
  return kv;
}

KeyValues read_key_values(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw InvalidArgument("cannot read config file " + path);
  return parse_key_values(f);
}

std::string format_key_values(const KeyValues& kv) {
  std::string out;
  for (const auto& [k, v] : kv) out += k + " = " + v + "\n";
  return out;
}

KeyValues to_key_values(const RunConfig& c) {
  RunConfig copy = c;
  KeyValues kv;
  kv["seed"] = std::to_string(copy.seed);
  for (auto& [k, f] : run_fields(copy)) kv[k] = f.get();
  return kv;
}

void apply_key_values(RunConfig& c, const KeyValues& kv) {
  if (auto it = kv.find("seed"); it != kv.end()) {
    c.seed = parse_number<std::uint64_t>("seed", it->second);
    c.model.master_seed = c.train.seed = c.data.seed = c.bench.seed = c.seed;
  }
  Fields fields = run_fields(c);
  for (const auto& [k, v] : kv) {
    if (k == "seed") continue;
    auto it = fields.find(k);
    if (it == fields.end()) throw InvalidArgument("unknown config key: " + k);
    it->second.set(v);
  }
}

KeyValues model_key_values(const ModelConfig& c) {
  ModelConfig copy = c;
  Fields f;
  add_model_fields(f, copy);
  KeyValues kv;
  for (auto& [k, field] : f) kv[k] = field.get();
  return kv;
}

ModelConfig model_config_from(const KeyValues& kv) {
  ModelConfig c;
  Fields f;
  add_model_fields(f, c);
  for (const auto& [k, v] : kv) {
    auto it = f.find(k);
    if (it == f.end()) throw InvalidArgument("unknown model key: " + k);
    it->second.set(v);
  }
  for (const auto& [k, field] : f)
    if (!kv.count(k)) throw InvalidArgument("missing model key: " + k);
  validate(c);
  return c;
}

}  // namespace rfadoc
