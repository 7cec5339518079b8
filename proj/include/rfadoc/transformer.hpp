#pragma once

#include "rfadoc/layers.hpp"

#include <optional>
#include <variant>

namespace rfadoc {

/// One translation pair. The decoder reads [BOS] + target and predicts
/// target + [EOS].
struct Example {
  Sentence source;
  Sentence target;
};

struct SequenceBatch {
  std::vector<Sentence> tokens;  // padded with kPad to the batch maximum
  std::vector<std::size_t> lengths;
  std::vector<TokenMeta> meta;

  std::size_t size() const { return tokens.size(); }
  std::size_t max_length() const { return tokens.empty() ? 0 : tokens.front().size(); }
  bool is_pad(std::size_t b, std::size_t t) const { return t >= lengths[b]; }
};

struct Batch {
  SequenceBatch source;
  SequenceBatch target;

  std::size_t size() const { return source.size(); }
};

inline SequenceBatch pad_sequences(const std::vector<Sentence>& seqs) {
  SequenceBatch out;
  std::size_t max_len = 0;
  for (const auto& s : seqs) max_len = std::max(max_len, s.size());
  for (const auto& s : seqs) {
    Sentence padded = s;
    padded.resize(max_len, kPad);
    out.lengths.push_back(s.size());
    out.meta.push_back(sentence_starts(s));
    out.tokens.push_back(std::move(padded));
  }
  return out;
}

inline Batch make_batch(const std::vector<Example>& examples) {
  std::vector<Sentence> src, tgt;
  for (const auto& e : examples) {
    src.push_back(e.source);
    tgt.push_back(e.target);
  }
  return {pad_sequences(src), pad_sequences(tgt)};
}

inline Sentence unpadded(const SequenceBatch& b, std::size_t i) {
  return Sentence(b.tokens[i].begin(), b.tokens[i].begin() + static_cast<std::ptrdiff_t>(b.lengths[i]));
}

inline Sentence decoder_input(const Sentence& target) {
  Sentence in;
  in.reserve(target.size() + 1);
  in.push_back(kBos);
  in.insert(in.end(), target.begin(), target.end());
  return in;
}

inline Sentence decoder_labels(const Sentence& target) {
  Sentence out = target;
  out.push_back(kEos);
  return out;
}

template <typename Scalar>
struct ForwardResult {
  std::vector<Matrix<Scalar>> logits;  // per example, (target length + 1) x vocab
  Scalar loss = 0;                     // mean token cross-entropy over non-pad positions
  std::size_t num_tokens = 0;
  std::size_t num_correct = 0;         // argmax == label

  double accuracy() const { return num_tokens ? double(num_correct) / double(num_tokens) : 0.0; }
};

namespace detail {

inline void check_tokens(const Sentence& s, int vocab) {
  for (TokenId t : s)
    if (t < 0 || t >= vocab) throw InvalidArgument("token id " + std::to_string(t) + " outside the vocabulary");
}

template <typename Scalar>
Matrix<Scalar> embed(const Parameters<Scalar>& p, const Sentence& tokens, Eigen::Index offset = 0) {
  const Eigen::Index d = p.embedding.cols();
  Matrix<Scalar> x(static_cast<Eigen::Index>(tokens.size()), d);
  const Scalar scale = std::sqrt(Scalar(d));
  for (std::size_t t = 0; t < tokens.size(); ++t) x.row(t) = scale * p.embedding.row(tokens[t]);
  x += layers::sinusoidal_positions<Scalar>(x.rows(), d, offset);
  return x;
}

template <typename Scalar>
void embed_backward(Parameters<Scalar>& g, const Sentence& tokens, const Matrix<Scalar>& dx) {
  const Scalar scale = std::sqrt(Scalar(dx.cols()));
  for (std::size_t t = 0; t < tokens.size(); ++t) g.embedding.row(tokens[t]) += scale * dx.row(t);
}

template <typename Scalar>
struct EncoderLayerCache {
  layers::LayerNormCache<Scalar> norm_attn, norm_ffn;
  layers::ExactAttentionCache<Scalar> attn;
  layers::FeedForwardCache<Scalar> ffn;
};

template <typename Scalar>
using CrossCache = std::variant<layers::ExactAttentionCache<Scalar>, layers::RfaCrossCache<Scalar>>;
template <typename Scalar>
using CausalCache = std::variant<layers::ExactAttentionCache<Scalar>, layers::RfaCausalCache<Scalar>>;

template <typename Scalar>
struct DecoderLayerCache {
  layers::LayerNormCache<Scalar> norm_self, norm_cross, norm_ffn;
  CausalCache<Scalar> self_attn;
  CrossCache<Scalar> cross_attn;
  layers::FeedForwardCache<Scalar> ffn;
};

template <typename Scalar>
struct ExampleCache {
  Sentence source, decoder_in;
  std::vector<EncoderLayerCache<Scalar>> encoder;
  layers::LayerNormCache<Scalar> encoder_norm;
  Matrix<Scalar> memory;
  std::vector<DecoderLayerCache<Scalar>> decoder;
  layers::LayerNormCache<Scalar> decoder_norm;
  Matrix<Scalar> decoder_out;
};

}  // namespace detail

template <typename Scalar>
Matrix<Scalar> encode(const Model<Scalar>& m, const Sentence& source, detail::ExampleCache<Scalar>* cache = nullptr) {
  require(!source.empty(), "encode: empty source");
  detail::check_tokens(source, m.config.vocab_size);
  const auto& p = m.params;
  Matrix<Scalar> x = detail::embed(p, source);
  if (cache) {
    cache->source = source;
    cache->encoder.resize(p.encoder.size());
  }
  for (std::size_t l = 0; l < p.encoder.size(); ++l) {
    const auto& lp = p.encoder[l];
    auto* lc = cache ? &cache->encoder[l] : nullptr;
    Matrix<Scalar> a = layers::layer_norm(lp.norm_attn, x, lc ? &lc->norm_attn : nullptr);
    x += layers::exact_attention(lp.self_attn, m.config.n_heads, a, a, false, lc ? &lc->attn : nullptr);
    Matrix<Scalar> b = layers::layer_norm(lp.norm_ffn, x, lc ? &lc->norm_ffn : nullptr);
    x += layers::feed_forward(lp.ffn, b, lc ? &lc->ffn : nullptr);
  }
  Matrix<Scalar> mem = layers::layer_norm(p.encoder_norm, x, cache ? &cache->encoder_norm : nullptr);
  if (cache) cache->memory = mem;
  return mem;
}

/// Decoder logits for every position of `decoder_in` given the encoder memory.
template <typename Scalar>
Matrix<Scalar> decode_full(const Model<Scalar>& m, const Matrix<Scalar>& memory, const Sentence& decoder_in,
                           detail::ExampleCache<Scalar>* cache = nullptr) {
  detail::check_tokens(decoder_in, m.config.vocab_size);
  const auto& p = m.params;
  const auto& c = m.config;
  const TokenMeta meta = sentence_starts(decoder_in);
  Matrix<Scalar> x = detail::embed(p, decoder_in);
  if (cache) {
    cache->decoder_in = decoder_in;
    cache->decoder.resize(p.decoder.size());
  }
  for (std::size_t l = 0; l < p.decoder.size(); ++l) {
    const auto& lp = p.decoder[l];
    auto* lc = cache ? &cache->decoder[l] : nullptr;
    Matrix<Scalar> a = layers::layer_norm(lp.norm_self, x, lc ? &lc->norm_self : nullptr);
    if (c.causal_backend == Backend::Exact) {
      layers::ExactAttentionCache<Scalar> ac;
      x += layers::exact_attention(lp.self_attn, c.n_heads, a, a, true, lc ? &ac : nullptr);
      if (lc) lc->self_attn = std::move(ac);
    } else {
      layers::RfaCausalCache<Scalar> rc;
      x += layers::rfa_causal(lp.self_attn, lp.gate_w, lp.gate_b, c.gate_variant, m.maps[l].causal, a, meta,
                              lc ? &rc : nullptr);
      if (lc) lc->self_attn = std::move(rc);
    }
    Matrix<Scalar> b = layers::layer_norm(lp.norm_cross, x, lc ? &lc->norm_cross : nullptr);
    if (c.cross_backend == Backend::Exact) {
      layers::ExactAttentionCache<Scalar> ac;
      x += layers::exact_attention(lp.cross_attn, c.n_heads, b, memory, false, lc ? &ac : nullptr);
      if (lc) lc->cross_attn = std::move(ac);
    } else {
      layers::RfaCrossCache<Scalar> rc;
      x += layers::rfa_cross(lp.cross_attn, m.maps[l].cross, b, memory, lc ? &rc : nullptr);
      if (lc) lc->cross_attn = std::move(rc);
    }
    Matrix<Scalar> f = layers::layer_norm(lp.norm_ffn, x, lc ? &lc->norm_ffn : nullptr);
    x += layers::feed_forward(lp.ffn, f, lc ? &lc->ffn : nullptr);
  }
  Matrix<Scalar> h = layers::layer_norm(p.decoder_norm, x, cache ? &cache->decoder_norm : nullptr);
  if (cache) cache->decoder_out = h;
  return layers::linear(p.output, h);
}

namespace detail {

/// Accumulates the loss (summed, not averaged) of one example and returns
/// d(sum loss)/d(logits).
template <typename Scalar>
Matrix<Scalar> token_losses(const Matrix<Scalar>& logits, const Sentence& labels, Scalar& loss_sum,
                            std::size_t& correct) {
  Matrix<Scalar> logp = layers::log_softmax_rows(logits);
  Matrix<Scalar> dlogits = logp.array().exp();
  for (std::size_t t = 0; t < labels.size(); ++t) {
    loss_sum -= logp(t, labels[t]);
    dlogits(t, labels[t]) -= Scalar(1);
    Eigen::Index arg;
    logits.row(t).maxCoeff(&arg);
    if (arg == labels[t]) ++correct;
  }
  return dlogits;
}

template <typename Scalar>
void backward_example(const Model<Scalar>& m, const ExampleCache<Scalar>& cache, const Matrix<Scalar>& dlogits,
                      Parameters<Scalar>& g) {
  const auto& p = m.params;
  const auto& c = m.config;
  Matrix<Scalar> dh = layers::linear_backward(p.output, g.output, cache.decoder_out, dlogits);
  Matrix<Scalar> dx = layers::layer_norm_backward(p.decoder_norm, g.decoder_norm, cache.decoder_norm, dh);
  Matrix<Scalar> dmemory = Matrix<Scalar>::Zero(cache.memory.rows(), cache.memory.cols());
  for (std::size_t li = p.decoder.size(); li-- > 0;) {
    const auto& lp = p.decoder[li];
    auto& lg = g.decoder[li];
    const auto& lc = cache.decoder[li];
    dx += layers::layer_norm_backward(lp.norm_ffn, lg.norm_ffn, lc.norm_ffn,
                                      layers::feed_forward_backward(lp.ffn, lg.ffn, lc.ffn, dx));
    layers::AttentionGrads<Scalar> cg;
    if (c.cross_backend == Backend::Exact)
      cg = layers::exact_attention_backward(lp.cross_attn, lg.cross_attn, c.n_heads,
                                            std::get<layers::ExactAttentionCache<Scalar>>(lc.cross_attn), dx);
    else
      cg = layers::rfa_cross_backward(lp.cross_attn, lg.cross_attn, m.maps[li].cross,
                                      std::get<layers::RfaCrossCache<Scalar>>(lc.cross_attn), dx);
    dmemory += cg.d_memory_in;
    dx += layers::layer_norm_backward(lp.norm_cross, lg.norm_cross, lc.norm_cross, cg.d_query_in);
    Matrix<Scalar> da;
    if (c.causal_backend == Backend::Exact) {
      auto sg = layers::exact_attention_backward(lp.self_attn, lg.self_attn, c.n_heads,
                                                 std::get<layers::ExactAttentionCache<Scalar>>(lc.self_attn), dx);
      da = sg.d_query_in + sg.d_memory_in;
    } else {
      da = layers::rfa_causal_backward(lp.self_attn, lg.self_attn, lp.gate_w, lg.gate_w, lg.gate_b,
                                       m.maps[li].causal, std::get<layers::RfaCausalCache<Scalar>>(lc.self_attn),
                                       dx);
    }
    dx += layers::layer_norm_backward(lp.norm_self, lg.norm_self, lc.norm_self, da);
  }
  embed_backward(g, cache.decoder_in, dx);

  Matrix<Scalar> ex = layers::layer_norm_backward(p.encoder_norm, g.encoder_norm, cache.encoder_norm, dmemory);
  for (std::size_t li = p.encoder.size(); li-- > 0;) {
    const auto& lp = p.encoder[li];
    auto& lg = g.encoder[li];
    const auto& lc = cache.encoder[li];
    ex += layers::layer_norm_backward(lp.norm_ffn, lg.norm_ffn, lc.norm_ffn,
                                      layers::feed_forward_backward(lp.ffn, lg.ffn, lc.ffn, ex));
    auto ag = layers::exact_attention_backward(lp.self_attn, lg.self_attn, c.n_heads, lc.attn, ex);
    ex += layers::layer_norm_backward(lp.norm_attn, lg.norm_attn, lc.norm_attn,
                                      Matrix<Scalar>(ag.d_query_in + ag.d_memory_in));
  }
  embed_backward(g, cache.source, ex);
}

template <typename Scalar>
void hash_mask(std::uint64_t& h, const Matrix<Scalar>& values, Scalar threshold) {
  for (Eigen::Index i = 0; i < values.size(); ++i)
    h = mix_seed(h ^ static_cast<std::uint64_t>(values.data()[i] > threshold));
}

/// Hash of every ReLU and denominator-floor decision taken in the forward pass.
template <typename Scalar>
std::uint64_t branch_signature(const ExampleCache<Scalar>& c) {
  std::uint64_t h = 0;
  const Scalar floor = Scalar(kDenominatorFloor);
  for (const auto& l : c.encoder) hash_mask(h, l.ffn.hidden, Scalar(0));
  for (const auto& l : c.decoder) {
    hash_mask(h, l.ffn.hidden, Scalar(0));
    if (const auto* rc = std::get_if<layers::RfaCrossCache<Scalar>>(&l.cross_attn))
      for (const auto& hc : rc->heads) hash_mask(h, Matrix<Scalar>(hc.den), floor);
    if (const auto* rc = std::get_if<layers::RfaCausalCache<Scalar>>(&l.self_attn))
      for (const auto& hc : rc->heads) hash_mask(h, Matrix<Scalar>(hc.den), floor);
  }
  return h;
}

template <typename Scalar>
ForwardResult<Scalar> run(const Model<Scalar>& m, const Batch& batch, Parameters<Scalar>* grads,
                          std::uint64_t* signature = nullptr) {
  ForwardResult<Scalar> r;
  Scalar loss_sum = 0;
  std::vector<Matrix<Scalar>> dlogits;
  const bool keep = grads != nullptr || signature != nullptr;
  std::vector<ExampleCache<Scalar>> caches(keep ? batch.size() : 0);
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const Sentence src = unpadded(batch.source, b);
    const Sentence tgt = unpadded(batch.target, b);
    const Sentence labels = decoder_labels(tgt);
    check_tokens(labels, m.config.vocab_size);
    ExampleCache<Scalar>* cache = keep ? &caches[b] : nullptr;
    Matrix<Scalar> memory = encode(m, src, cache);
    Matrix<Scalar> logits = decode_full(m, memory, decoder_input(tgt), cache);
    dlogits.push_back(token_losses(logits, labels, loss_sum, r.num_correct));
    r.num_tokens += labels.size();
    r.logits.push_back(std::move(logits));
  }
  require(r.num_tokens > 0, "forward: empty batch");
  r.loss = loss_sum / Scalar(r.num_tokens);
  if (!std::isfinite(static_cast<double>(r.loss))) throw RuntimeFailure("forward: non-finite loss");
  if (signature) {
    *signature = 0;
    for (const auto& c : caches) *signature = mix_seed(*signature ^ branch_signature(c));
  }
  if (grads) {
    *grads = m.params.zeros_like();
    const Scalar inv = Scalar(1) / Scalar(r.num_tokens);
    for (std::size_t b = 0; b < batch.size(); ++b) backward_example(m, caches[b], Matrix<Scalar>(dlogits[b] * inv), *grads);
  }
  return r;
}

}  // namespace detail

template <typename Scalar>
ForwardResult<Scalar> forward(const Model<Scalar>& m, const Batch& batch) {
  return detail::run<Scalar>(m, batch, nullptr);
}

/// Identifies the piecewise-smooth region (ReLU and denominator-floor
/// pattern) the forward pass ran in. Finite-difference checks compare it
/// across perturbations to detect kink crossings.
template <typename Scalar>
std::uint64_t forward_branch_signature(const Model<Scalar>& m, const Batch& batch) {
  std::uint64_t sig = 0;
  detail::run<Scalar>(m, batch, nullptr, &sig);
  return sig;
}

template <typename Scalar>
struct LossAndGradients {
  ForwardResult<Scalar> forward;
  Parameters<Scalar> gradients;
};

/// Exact reverse-mode gradients of the mean token loss.
template <typename Scalar>
LossAndGradients<Scalar> backward(const Model<Scalar>& m, const Batch& batch) {
  LossAndGradients<Scalar> out;
  out.forward = detail::run<Scalar>(m, batch, &out.gradients);
  return out;
}

/// Log-probability of `target` followed by EOS given `source`.
template <typename Scalar>
double sequence_log_prob(const Model<Scalar>& m, const Sentence& source, const Sentence& target) {
  Matrix<Scalar> logits = decode_full(m, encode(m, source), decoder_input(target));
  Matrix<Scalar> logp = layers::log_softmax_rows(logits);
  const Sentence labels = decoder_labels(target);
  detail::check_tokens(labels, m.config.vocab_size);
  double total = 0;
  for (std::size_t t = 0; t < labels.size(); ++t) total += static_cast<double>(logp(t, labels[t]));
  return total;
}

}  // namespace rfadoc
