#pragma once

// Versioned binary checkpoint:
//   magic "RFADOCK\0", u32 version, u32 scalar bytes
//   u64 length + model config as key=value text
//   u64 length + vocabulary, one symbol per line
//   u64 tensor count, then per tensor: u64 name length, name, i64 rows, i64 cols, raw column-major data
// Feature maps are not stored; they are re-sampled from the seeds in the config.

#include "rfadoc/document.hpp"
#include "rfadoc/model.hpp"
#include "rfadoc/run_config.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

namespace rfadoc {

inline constexpr char kCheckpointMagic[8] = {'R', 'F', 'A', 'D', 'O', 'C', 'K', '\0'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

template <typename Scalar>
struct Checkpoint {
  Model<Scalar> model;
  Vocabulary vocab;
};

namespace detail {

template <typename T>
void put(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw RuntimeFailure("checkpoint: truncated file");
  return v;
}

inline void put_string(std::ostream& out, const std::string& s) {
  put<std::uint64_t>(out, s.size());
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string get_string(std::istream& in, std::uint64_t limit = 1u << 26) {
  const auto n = get<std::uint64_t>(in);
  if (n > limit) throw RuntimeFailure("checkpoint: corrupt string length");
  std::string s(n, '\0');
  in.read(s.data(), static_cast<std::streamsize>(n));
  if (!in) throw RuntimeFailure("checkpoint: truncated file");
  return s;
}

}  // namespace detail

template <typename Scalar>
void save_checkpoint(const std::string& path, const Model<Scalar>& m, const Vocabulary& vocab) {
  require(vocab.size() == m.config.vocab_size, "checkpoint: vocabulary size differs from the model");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw RuntimeFailure("cannot write checkpoint " + path);
  out.write(kCheckpointMagic, sizeof kCheckpointMagic);
  detail::put<std::uint32_t>(out, kCheckpointVersion);
  detail::put<std::uint32_t>(out, sizeof(Scalar));
  detail::put_string(out, format_key_values(model_key_values(m.config)));
  std::string symbols;
  for (int i = kNumReserved; i < vocab.size(); ++i) symbols += vocab.symbol(i) + "\n";
  detail::put_string(out, symbols);
  const auto tensors = m.params.tensors();
  detail::put<std::uint64_t>(out, tensors.size());
  for (const auto& t : tensors) {
    detail::put_string(out, t.name);
    detail::put<std::int64_t>(out, t.tensor->rows());
    detail::put<std::int64_t>(out, t.tensor->cols());
    out.write(reinterpret_cast<const char*>(t.tensor->data()),
              static_cast<std::streamsize>(t.tensor->size() * sizeof(Scalar)));
  }
  if (!out) throw RuntimeFailure("failed writing checkpoint " + path);
}

template <typename Scalar>
Checkpoint<Scalar> load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw RuntimeFailure("cannot read checkpoint " + path);
  char magic[sizeof kCheckpointMagic];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kCheckpointMagic, sizeof magic) != 0)
    throw RuntimeFailure("not a checkpoint file: " + path);
  const auto version = detail::get<std::uint32_t>(in);
  if (version != kCheckpointVersion) throw RuntimeFailure("unsupported checkpoint version " + std::to_string(version));
  const auto scalar_bytes = detail::get<std::uint32_t>(in);
  if (scalar_bytes != sizeof(Scalar)) throw RuntimeFailure("checkpoint scalar type differs from the requested one");

  std::istringstream config_text(detail::get_string(in));
  const ModelConfig config = model_config_from(parse_key_values(config_text));
  Vocabulary vocab;
  std::istringstream symbols(detail::get_string(in));
  for (std::string line; std::getline(symbols, line);)
    if (!line.empty()) vocab.add(line);
  if (vocab.size() != config.vocab_size) throw RuntimeFailure("checkpoint: vocabulary size differs from config");

  Parameters<Scalar> params = init_parameters<Scalar>(config);
  auto tensors = params.tensors();
  const auto count = detail::get<std::uint64_t>(in);
  if (count != tensors.size()) throw RuntimeFailure("checkpoint: tensor count mismatch");
  for (auto& t : tensors) {
    const std::string name = detail::get_string(in);
    if (name != t.name) throw RuntimeFailure("checkpoint: expected tensor " + t.name + ", found " + name);
    const auto rows = detail::get<std::int64_t>(in);
    const auto cols = detail::get<std::int64_t>(in);
    if (rows != t.tensor->rows() || cols != t.tensor->cols()) throw RuntimeFailure("checkpoint: shape mismatch for " + name);
    in.read(reinterpret_cast<char*>(t.tensor->data()), static_cast<std::streamsize>(t.tensor->size() * sizeof(Scalar)));
    if (!in) throw RuntimeFailure("checkpoint: truncated file");
  }
  return {make_model(config, std::move(params)), std::move(vocab)};
}

}  // namespace rfadoc
