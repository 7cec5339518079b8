#pragma once

#include "rfadoc/attention.hpp"
#include "rfadoc/random_features.hpp"

#include <random>
#include <string>
#include <vector>

namespace rfadoc {

enum class Backend { Exact, Rfa };

inline std::string_view to_string(Backend b) { return b == Backend::Exact ? "exact" : "rfa"; }

inline Backend parse_backend(std::string_view s) {
  if (s == "exact") return Backend::Exact;
  if (s == "rfa") return Backend::Rfa;
  throw InvalidArgument("unknown backend: " + std::string(s));
}

struct ModelConfig {
  int vocab_size = 64;
  int d_model = 64;
  int n_heads = 4;
  int d_ff = 128;
  int n_enc_layers = 2;
  int n_dec_layers = 2;
  Backend cross_backend = Backend::Exact;
  Backend causal_backend = Backend::Exact;
  GateVariant gate_variant = GateVariant::None;
  int d_cross = 128;  // base features per head in cross attention (phi has 2x)
  int d_causal = 64;  // base features per head in causal attention
  double sigma = 1.0;
  double b_f_init = 2.0;
  double w_f_init_scale = 0.01;
  std::uint64_t master_seed = 1;

  int d_head() const { return d_model / n_heads; }
  bool operator==(const ModelConfig&) const = default;
};

inline void validate(const ModelConfig& c) {
  require(c.vocab_size > kNumReserved, "config: vocab_size must exceed the reserved tokens");
  require(c.d_model > 0 && c.n_heads > 0 && c.d_ff > 0, "config: dimensions must be positive");
  require(c.d_model % c.n_heads == 0, "config: d_model must be divisible by n_heads");
  require(c.n_enc_layers >= 1 && c.n_dec_layers >= 1, "config: need at least one layer each");
  require(c.d_cross >= 1 && c.d_causal >= 1, "config: feature dimensions must be positive");
  require(c.sigma > 0, "config: sigma must be positive");
  require(c.w_f_init_scale >= 0, "config: w_f_init_scale must be non-negative");
  require(c.gate_variant == GateVariant::None || c.causal_backend == Backend::Rfa,
          "config: gating requires the RFA causal backend");
}

/// Maps a model-variant name onto backends and gating.
inline void apply_variant(ModelConfig& c, std::string_view variant) {
  if (variant == "exact") {
    c.cross_backend = c.causal_backend = Backend::Exact;
    c.gate_variant = GateVariant::None;
  } else if (variant == "rfa") {
    c.cross_backend = c.causal_backend = Backend::Rfa;
    c.gate_variant = GateVariant::None;
  } else if (variant == "rfa-sgate") {
    c.cross_backend = c.causal_backend = Backend::Rfa;
    c.gate_variant = GateVariant::SGate;
  } else if (variant == "rfa-sgate-avg") {
    c.cross_backend = c.causal_backend = Backend::Rfa;
    c.gate_variant = GateVariant::SGateAvg;
  } else {
    throw InvalidArgument("unknown model variant: " + std::string(variant));
  }
}

template <typename Scalar>
struct Linear {
  Matrix<Scalar> weight;  // in x out
  Matrix<Scalar> bias;    // 1 x out
};

template <typename Scalar>
struct LayerNormParams {
  Matrix<Scalar> gain;  // 1 x d
  Matrix<Scalar> bias;  // 1 x d
};

template <typename Scalar>
struct AttentionParams {
  Linear<Scalar> query, key, value, output;
};

template <typename Scalar>
struct FeedForwardParams {
  Linear<Scalar> hidden, output;
};

template <typename Scalar>
struct EncoderLayerParams {
  LayerNormParams<Scalar> norm_attn, norm_ffn;
  AttentionParams<Scalar> self_attn;
  FeedForwardParams<Scalar> ffn;
};

template <typename Scalar>
struct DecoderLayerParams {
  LayerNormParams<Scalar> norm_self, norm_cross, norm_ffn;
  AttentionParams<Scalar> self_attn, cross_attn;
  FeedForwardParams<Scalar> ffn;
  Matrix<Scalar> gate_w;  // d_model x n_heads, column h is w_f of head h
  Matrix<Scalar> gate_b;  // 1 x n_heads
};

template <typename Scalar>
struct NamedTensor {
  std::string name;
  Matrix<Scalar>* tensor;
};

template <typename Scalar>
struct Parameters {
  Matrix<Scalar> embedding;  // vocab x d_model
  std::vector<EncoderLayerParams<Scalar>> encoder;
  std::vector<DecoderLayerParams<Scalar>> decoder;
  LayerNormParams<Scalar> encoder_norm, decoder_norm;
  Linear<Scalar> output;  // d_model x vocab

  /// Every tensor in a fixed order; the order is the checkpoint layout.
  std::vector<NamedTensor<Scalar>> tensors() {
    std::vector<NamedTensor<Scalar>> out;
    auto add = [&](std::string name, Matrix<Scalar>& m) { out.push_back({std::move(name), &m}); };
    auto add_linear = [&](const std::string& p, Linear<Scalar>& l) {
      add(p + ".weight", l.weight);
      add(p + ".bias", l.bias);
    };
    auto add_norm = [&](const std::string& p, LayerNormParams<Scalar>& n) {
      add(p + ".gain", n.gain);
      add(p + ".bias", n.bias);
    };
    auto add_attn = [&](const std::string& p, AttentionParams<Scalar>& a) {
      add_linear(p + ".query", a.query);
      add_linear(p + ".key", a.key);
      add_linear(p + ".value", a.value);
      add_linear(p + ".output", a.output);
    };
    auto add_ffn = [&](const std::string& p, FeedForwardParams<Scalar>& f) {
      add_linear(p + ".hidden", f.hidden);
      add_linear(p + ".output", f.output);
    };
    add("embedding", embedding);
    for (std::size_t l = 0; l < encoder.size(); ++l) {
      const std::string p = "encoder." + std::to_string(l);
      add_norm(p + ".norm_attn", encoder[l].norm_attn);
      add_attn(p + ".self_attn", encoder[l].self_attn);
      add_norm(p + ".norm_ffn", encoder[l].norm_ffn);
      add_ffn(p + ".ffn", encoder[l].ffn);
    }
    for (std::size_t l = 0; l < decoder.size(); ++l) {
      const std::string p = "decoder." + std::to_string(l);
      add_norm(p + ".norm_self", decoder[l].norm_self);
      add_attn(p + ".self_attn", decoder[l].self_attn);
      add(p + ".gate_w", decoder[l].gate_w);
      add(p + ".gate_b", decoder[l].gate_b);
      add_norm(p + ".norm_cross", decoder[l].norm_cross);
      add_attn(p + ".cross_attn", decoder[l].cross_attn);
      add_norm(p + ".norm_ffn", decoder[l].norm_ffn);
      add_ffn(p + ".ffn", decoder[l].ffn);
    }
    add_norm("encoder_norm", encoder_norm);
    add_norm("decoder_norm", decoder_norm);
    add_linear("output", output);
    return out;
  }

  std::vector<NamedTensor<Scalar>> tensors() const {
    return const_cast<Parameters*>(this)->tensors();
  }

  std::size_t num_scalars() const {
    std::size_t n = 0;
    for (auto& t : tensors()) n += static_cast<std::size_t>(t.tensor->size());
    return n;
  }

  Parameters zeros_like() const {
    Parameters z = *this;
    for (auto& t : z.tensors()) t.tensor->setZero();
    return z;
  }

  template <typename Other>
  Parameters<Other> cast() const {
    Parameters<Other> out;
    out.embedding = embedding.template cast<Other>();
    out.encoder.resize(encoder.size());
    out.decoder.resize(decoder.size());
    auto src = tensors();
    auto dst = out.tensors();
    for (std::size_t i = 0; i < src.size(); ++i) *dst[i].tensor = src[i].tensor->template cast<Other>();
    return out;
  }
};

namespace detail {

template <typename Scalar>
Linear<Scalar> make_linear(int in, int out, std::mt19937_64& rng) {
  const double a = std::sqrt(6.0 / (in + out));
  std::uniform_real_distribution<double> u(-a, a);
  Matrix<double> w(in, out);
  for (Eigen::Index j = 0; j < w.cols(); ++j)
    for (Eigen::Index i = 0; i < w.rows(); ++i) w(i, j) = u(rng);
  return {w.cast<Scalar>(), Matrix<Scalar>::Zero(1, out)};
}

template <typename Scalar>
LayerNormParams<Scalar> make_norm(int d) {
  return {Matrix<Scalar>::Ones(1, d), Matrix<Scalar>::Zero(1, d)};
}

template <typename Scalar>
AttentionParams<Scalar> make_attention(int d, std::mt19937_64& rng) {
  AttentionParams<Scalar> a;
  a.query = make_linear<Scalar>(d, d, rng);
  a.key = make_linear<Scalar>(d, d, rng);
  a.value = make_linear<Scalar>(d, d, rng);
  a.output = make_linear<Scalar>(d, d, rng);
  return a;
}

template <typename Scalar>
FeedForwardParams<Scalar> make_ffn(int d, int d_ff, std::mt19937_64& rng) {
  FeedForwardParams<Scalar> f;
  f.hidden = make_linear<Scalar>(d, d_ff, rng);
  f.output = make_linear<Scalar>(d_ff, d, rng);
  return f;
}

}  // namespace detail

template <typename Scalar>
Parameters<Scalar> init_parameters(const ModelConfig& config) {
  validate(config);
  std::mt19937_64 rng(derive_seed(config.master_seed, "init"));
  const int d = config.d_model;
  Parameters<Scalar> p;
  {
    std::normal_distribution<double> n(0.0, 1.0 / std::sqrt(double(d)));
    Matrix<double> e(config.vocab_size, d);
    for (Eigen::Index j = 0; j < e.cols(); ++j)
      for (Eigen::Index i = 0; i < e.rows(); ++i) e(i, j) = n(rng);
    e.row(kPad).setZero();
    p.embedding = e.cast<Scalar>();
  }
  for (int l = 0; l < config.n_enc_layers; ++l) {
    EncoderLayerParams<Scalar> layer;
    layer.norm_attn = detail::make_norm<Scalar>(d);
    layer.self_attn = detail::make_attention<Scalar>(d, rng);
    layer.norm_ffn = detail::make_norm<Scalar>(d);
    layer.ffn = detail::make_ffn<Scalar>(d, config.d_ff, rng);
    p.encoder.push_back(std::move(layer));
  }
  for (int l = 0; l < config.n_dec_layers; ++l) {
    DecoderLayerParams<Scalar> layer;
    layer.norm_self = detail::make_norm<Scalar>(d);
    layer.self_attn = detail::make_attention<Scalar>(d, rng);
    layer.norm_cross = detail::make_norm<Scalar>(d);
    layer.cross_attn = detail::make_attention<Scalar>(d, rng);
    layer.norm_ffn = detail::make_norm<Scalar>(d);
    layer.ffn = detail::make_ffn<Scalar>(d, config.d_ff, rng);
    Matrix<double> gw(d, config.n_heads);
    std::normal_distribution<double> n(0.0, 1.0);
    for (Eigen::Index j = 0; j < gw.cols(); ++j)
      for (Eigen::Index i = 0; i < gw.rows(); ++i) gw(i, j) = config.w_f_init_scale * n(rng);
    layer.gate_w = gw.cast<Scalar>();
    layer.gate_b = Matrix<Scalar>::Constant(1, config.n_heads, Scalar(config.b_f_init));
    p.decoder.push_back(std::move(layer));
  }
  p.encoder_norm = detail::make_norm<Scalar>(d);
  p.decoder_norm = detail::make_norm<Scalar>(d);
  p.output = detail::make_linear<Scalar>(d, config.vocab_size, rng);
  return p;
}

/// Feature maps of one decoder layer, one per head. Empty for exact backends.
template <typename Scalar>
struct LayerFeatureMaps {
  std::vector<FeatureMap<Scalar>> cross;
  std::vector<FeatureMap<Scalar>> causal;
};

inline FeatureMapSpec head_feature_spec(const ModelConfig& c, int layer, bool cross, int head) {
  FeatureMapSpec s;
  s.input_dim = c.d_head();
  s.num_base_features = cross ? c.d_cross : c.d_causal;
  s.bandwidth = c.sigma;
  s.seed = derive_seed(c.master_seed, "featuremap." + std::to_string(layer) + (cross ? ".cross." : ".causal.") +
                                          std::to_string(head));
  return s;
}

template <typename Scalar>
std::vector<LayerFeatureMaps<Scalar>> sample_model_feature_maps(const ModelConfig& c) {
  std::vector<LayerFeatureMaps<Scalar>> maps(static_cast<std::size_t>(c.n_dec_layers));
  for (int l = 0; l < c.n_dec_layers; ++l) {
    for (int h = 0; h < c.n_heads; ++h) {
      if (c.cross_backend == Backend::Rfa)
        maps[l].cross.push_back(sample_feature_map<Scalar>(head_feature_spec(c, l, true, h)));
      if (c.causal_backend == Backend::Rfa)
        maps[l].causal.push_back(sample_feature_map<Scalar>(head_feature_spec(c, l, false, h)));
    }
  }
  return maps;
}

template <typename Scalar>
struct Model {
  ModelConfig config;
  Parameters<Scalar> params;
  std::vector<LayerFeatureMaps<Scalar>> maps;
};

template <typename Scalar>
Model<Scalar> make_model(const ModelConfig& config, Parameters<Scalar> params) {
  validate(config);
  return {config, std::move(params), sample_model_feature_maps<Scalar>(config)};
}

template <typename Scalar>
Model<Scalar> make_model(const ModelConfig& config) {
  return make_model(config, init_parameters<Scalar>(config));
}

/// Same weights, different attention backends (feature maps re-derived).
template <typename Scalar>
Model<Scalar> with_backends(const Model<Scalar>& m, Backend cross, Backend causal, GateVariant gate) {
  ModelConfig c = m.config;
  c.cross_backend = cross;
  c.causal_backend = causal;
  c.gate_variant = gate;
  return make_model(c, m.params);
}

template <typename To, typename From>
Model<To> cast_model(const Model<From>& m) {
  return make_model(m.config, m.params.template cast<To>());
}

}  // namespace rfadoc
