#pragma once

// Flat key=value configuration shared by the CLI and checkpoints.
//
//   # comment
//   model.d_model = 32
//   train.steps = 2000
//   bench.windows = 1,2,4

#include "rfadoc/benchmark.hpp"
#include "rfadoc/document.hpp"
#include "rfadoc/model.hpp"
#include "rfadoc/training.hpp"

#include <iosfwd>
#include <map>
#include <string>

namespace rfadoc {

using KeyValues = std::map<std::string, std::string>;

KeyValues parse_key_values(std::istream& in);
KeyValues read_key_values(const std::string& path);
std::string format_key_values(const KeyValues& kv);

struct RunConfig {
  std::uint64_t seed = 1;
  int L = 1;
  std::string variant = "exact";
  std::string out_dir = "rfadoc-out";
  std::string data_dir;    // empty: <out_dir>/data
  std::string checkpoint;  // empty: <out_dir>/model.ckpt
  int beam = 4;

  ModelConfig model;
  TrainConfig train;
  CorpusSpec data;
  BenchConfig bench;
};

std::string resolved_data_dir(const RunConfig& c);
std::string resolved_checkpoint(const RunConfig& c);

/// Every key with its current value.
KeyValues to_key_values(const RunConfig& c);

/// Overrides fields named in `kv`. Unknown keys and malformed values throw.
/// A "seed" key is applied first and reseeds every component (data, model
/// init and feature maps, shuffling, bench); component seed keys then win.
void apply_key_values(RunConfig& c, const KeyValues& kv);

/// Model fields only, under the "model." prefix.
KeyValues model_key_values(const ModelConfig& c);
ModelConfig model_config_from(const KeyValues& kv);

std::vector<int> parse_int_list(const std::string& s);
std::vector<Backend> parse_backend_list(const std::string& s);

}  // namespace rfadoc
