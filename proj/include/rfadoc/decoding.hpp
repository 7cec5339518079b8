#pragma once

// Incremental decoding. Exact attention keeps a growing key/value cache;
// RFA keeps a constant-size (S, z) state per head.

#include "rfadoc/transformer.hpp"

#include <algorithm>
#include <functional>
#include <numeric>

namespace rfadoc {

template <typename Scalar>
struct LayerDecodeState {
  // Exact causal: rows [0, length) hold keys/values of the generated prefix.
  Matrix<Scalar> self_keys, self_values;
  // Exact cross: projected encoder output.
  Matrix<Scalar> cross_keys, cross_values;
  // RFA causal and cross summaries, one per head.
  std::vector<AttentionState<Scalar>> causal_states;
  std::vector<AttentionState<Scalar>> cross_summaries;
  // Self-attention sublayer input at the previous position; read by the gate.
  RowVector<Scalar> prev_input;
};

template <typename Scalar>
struct DecodeCache {
  Backend cross_backend = Backend::Exact;
  Backend causal_backend = Backend::Exact;
  int n_layers = 0;
  std::size_t source_length = 0;
  std::size_t length = 0;  // positions consumed so far
  TokenId last_token = kPad;
  std::vector<LayerDecodeState<Scalar>> layers;

  /// Scalars held for causal attention (grows with length only when exact).
  std::size_t causal_entries() const {
    std::size_t n = 0;
    for (const auto& l : layers) {
      if (causal_backend == Backend::Exact) {
        n += 2 * length * static_cast<std::size_t>(l.self_keys.cols());
      } else {
        for (const auto& s : l.causal_states) n += s.num_scalars();
        n += static_cast<std::size_t>(l.prev_input.size());
      }
    }
    return n;
  }

  std::size_t cross_entries() const {
    std::size_t n = 0;
    for (const auto& l : layers) {
      n += static_cast<std::size_t>(l.cross_keys.size() + l.cross_values.size());
      for (const auto& s : l.cross_summaries) n += s.num_scalars();
    }
    return n;
  }

  std::size_t entries() const { return causal_entries() + cross_entries(); }
  std::size_t byte_size() const { return entries() * sizeof(Scalar); }
};

/// Position `cache.length` starts a sentence iff it is the first position or
/// the previous input token was SEP.
template <typename Scalar>
bool next_position_starts_sentence(const DecodeCache<Scalar>& cache) {
  return cache.length == 0 || cache.last_token == kSep;
}

template <typename Scalar>
DecodeCache<Scalar> init_cache(const Model<Scalar>& m, const Sentence& source) {
  const auto& c = m.config;
  const Eigen::Index dh = c.d_head();
  Matrix<Scalar> memory = encode(m, source);
  DecodeCache<Scalar> cache;
  cache.cross_backend = c.cross_backend;
  cache.causal_backend = c.causal_backend;
  cache.n_layers = c.n_dec_layers;
  cache.source_length = source.size();
  cache.layers.resize(static_cast<std::size_t>(c.n_dec_layers));
  for (int l = 0; l < c.n_dec_layers; ++l) {
    const auto& lp = m.params.decoder[l];
    auto& st = cache.layers[l];
    Matrix<Scalar> k = layers::linear(lp.cross_attn.key, memory);
    Matrix<Scalar> v = layers::linear(lp.cross_attn.value, memory);
    if (c.cross_backend == Backend::Exact) {
      st.cross_keys = std::move(k);
      st.cross_values = std::move(v);
    } else {
      for (int h = 0; h < c.n_heads; ++h) {
        const auto& map = m.maps[l].cross[h];
        Matrix<Scalar> fk = phi_rows(map, normalize_rows(k.middleCols(h * dh, dh)));
        AttentionState<Scalar> s;
        s.S = fk.transpose() * v.middleCols(h * dh, dh);
        s.z = fk.colwise().sum().transpose();
        s.step = source.size();
        st.cross_summaries.push_back(std::move(s));
      }
    }
    if (c.causal_backend == Backend::Exact) {
      st.self_keys.resize(0, c.d_model);
      st.self_values.resize(0, c.d_model);
    } else {
      for (int h = 0; h < c.n_heads; ++h)
        st.causal_states.emplace_back(m.maps[l].causal[h].output_dim(), dh);
      st.prev_input = RowVector<Scalar>::Zero(c.d_model);
    }
  }
  return cache;
}

namespace detail {

template <typename Scalar>
void append_row(Matrix<Scalar>& m, std::size_t length, const Matrix<Scalar>& row) {
  if (static_cast<Eigen::Index>(length) >= m.rows())
    m.conservativeResize(std::max<Eigen::Index>(16, 2 * m.rows()), Eigen::NoChange);
  m.row(static_cast<Eigen::Index>(length)) = row.row(0);
}

template <typename Scalar>
Matrix<Scalar> exact_step_attention(const Matrix<Scalar>& q, const Matrix<Scalar>& keys,
                                    const Matrix<Scalar>& values, Eigen::Index n, int n_heads) {
  const Eigen::Index dh = q.cols() / n_heads;
  const Scalar scale = Scalar(1) / std::sqrt(Scalar(dh));
  Matrix<Scalar> merged(1, q.cols());
  for (int h = 0; h < n_heads; ++h) {
    RowVector<Scalar> s = scale * (q.middleCols(h * dh, dh) * keys.block(0, h * dh, n, dh).transpose());
    s = (s.array() - s.maxCoeff()).exp();
    s /= s.sum();
    merged.middleCols(h * dh, dh) = s * values.block(0, h * dh, n, dh);
  }
  return merged;
}

}  // namespace detail

/// One decoder step for several independent hypotheses. Row b of the result
/// holds next-token logits for caches[b] after consuming tokens[b] at
/// position caches[b]->length. Linear layers run on the stacked rows;
/// attention reads each hypothesis' own cache.
template <typename Scalar>
Matrix<Scalar> decode_step_batch(const Model<Scalar>& m, const std::vector<DecodeCache<Scalar>*>& caches,
                                 const std::vector<TokenId>& tokens, const std::vector<bool>& is_sentence_start) {
  const auto& c = m.config;
  const std::size_t B = caches.size();
  require(B > 0, "decode_step: empty batch");
  require_dims(tokens.size() == B && is_sentence_start.size() == B, "decode_step: batch size mismatch");
  for (const auto* cache : caches)
    if (cache->cross_backend != c.cross_backend || cache->causal_backend != c.causal_backend ||
        cache->n_layers != c.n_dec_layers)
      throw InvalidArgument("decode_step: cache was built for a different model");
  detail::check_tokens(tokens, c.vocab_size);
  const Eigen::Index dh = c.d_head();

  Matrix<Scalar> x(static_cast<Eigen::Index>(B), c.d_model);
  for (std::size_t b = 0; b < B; ++b)
    x.row(b) = detail::embed(m.params, Sentence{tokens[b]}, static_cast<Eigen::Index>(caches[b]->length)).row(0);

  Matrix<Scalar> merged(static_cast<Eigen::Index>(B), c.d_model);
  for (int l = 0; l < c.n_dec_layers; ++l) {
    const auto& lp = m.params.decoder[l];
    Matrix<Scalar> a = layers::layer_norm(lp.norm_self, x);
    Matrix<Scalar> q = layers::linear(lp.self_attn.query, a);
    Matrix<Scalar> k = layers::linear(lp.self_attn.key, a);
    Matrix<Scalar> v = layers::linear(lp.self_attn.value, a);
    for (std::size_t b = 0; b < B; ++b) {
      auto& cache = *caches[b];
      auto& st = cache.layers[l];
      if (c.causal_backend == Backend::Exact) {
        detail::append_row(st.self_keys, cache.length, Matrix<Scalar>(k.row(b)));
        detail::append_row(st.self_values, cache.length, Matrix<Scalar>(v.row(b)));
        merged.row(b) = detail::exact_step_attention(Matrix<Scalar>(q.row(b)), st.self_keys, st.self_values,
                                                     static_cast<Eigen::Index>(cache.length) + 1, c.n_heads);
        continue;
      }
      const bool gated = cache.length > 0 && is_sentence_start[b] && c.gate_variant != GateVariant::None;
      RowVector<Scalar> gates = RowVector<Scalar>::Ones(c.n_heads);
      if (gated) {
        RowVector<Scalar> logits = st.prev_input * lp.gate_w + lp.gate_b.row(0);
        for (int h = 0; h < c.n_heads; ++h) gates(h) = sigmoid(logits(h));
      }
      for (int h = 0; h < c.n_heads; ++h) {
        const auto& map = m.maps[l].causal[h];
        auto& s = st.causal_states[h];
        Matrix<Scalar> fk = phi_rows(map, normalize_rows(k.row(b).segment(h * dh, dh)));
        Matrix<Scalar> fq = phi_rows(map, normalize_rows(q.row(b).segment(h * dh, dh)));
        const Scalar ft = gates(h);
        const Scalar ct = averaging_boundary(c.gate_variant, bool(is_sentence_start[b]), ft) ? Scalar(1) - ft : Scalar(1);
        if (ft != Scalar(1)) {
          s.S *= ft;
          s.z *= ft;
        }
        s.S.noalias() += ct * fk.row(0).transpose() * v.row(b).segment(h * dh, dh);
        s.z += ct * fk.row(0).transpose();
        ++s.step;
        const Scalar den = fq.row(0).dot(s.z);
        merged.row(b).segment(h * dh, dh) = (fq.row(0) * s.S) / stabilized(den);
      }
      st.prev_input = a.row(b);
    }
    x += layers::linear(lp.self_attn.output, merged);

    Matrix<Scalar> cb = layers::layer_norm(lp.norm_cross, x);
    Matrix<Scalar> cq = layers::linear(lp.cross_attn.query, cb);
    for (std::size_t b = 0; b < B; ++b) {
      const auto& st = caches[b]->layers[l];
      if (c.cross_backend == Backend::Exact) {
        merged.row(b) = detail::exact_step_attention(Matrix<Scalar>(cq.row(b)), st.cross_keys, st.cross_values,
                                                     st.cross_keys.rows(), c.n_heads);
        continue;
      }
      for (int h = 0; h < c.n_heads; ++h) {
        const auto& s = st.cross_summaries[h];
        Matrix<Scalar> fq = phi_rows(m.maps[l].cross[h], normalize_rows(cq.row(b).segment(h * dh, dh)));
        const Scalar den = fq.row(0).dot(s.z);
        merged.row(b).segment(h * dh, dh) = (fq.row(0) * s.S) / stabilized(den);
      }
    }
    x += layers::linear(lp.cross_attn.output, merged);

    Matrix<Scalar> f = layers::layer_norm(lp.norm_ffn, x);
    x += layers::feed_forward(lp.ffn, f);
  }
  Matrix<Scalar> h = layers::layer_norm(m.params.decoder_norm, x);
  for (std::size_t b = 0; b < B; ++b) {
    ++caches[b]->length;
    caches[b]->last_token = tokens[b];
  }
  return layers::linear(m.params.output, h);
}

template <typename Scalar>
Matrix<Scalar> decode_step_batch(const Model<Scalar>& m, const std::vector<DecodeCache<Scalar>*>& caches,
                                 const std::vector<TokenId>& tokens) {
  std::vector<bool> starts;
  for (const auto* cache : caches) starts.push_back(next_position_starts_sentence(*cache));
  return decode_step_batch(m, caches, tokens, starts);
}

/// Consumes `token` at position cache.length and returns next-token logits.
template <typename Scalar>
RowVector<Scalar> decode_step(const Model<Scalar>& m, DecodeCache<Scalar>& cache, TokenId token,
                              bool is_sentence_start) {
  return decode_step_batch<Scalar>(m, {&cache}, {token}, {is_sentence_start}).row(0);
}

template <typename Scalar>
RowVector<Scalar> decode_step(const Model<Scalar>& m, DecodeCache<Scalar>& cache, TokenId token) {
  return decode_step(m, cache, token, next_position_starts_sentence(cache));
}

template <typename Scalar>
RowVector<Scalar> log_softmax(const RowVector<Scalar>& logits) {
  return layers::log_softmax_rows(Matrix<Scalar>(logits)).row(0);
}

/// Index of the largest entry; ties resolve to the lowest index.
template <typename Scalar>
TokenId argmax_lowest(const RowVector<Scalar>& v, TokenId excluded = -1) {
  TokenId best = -1;
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (static_cast<TokenId>(i) == excluded) continue;
    if (best < 0 || v(i) > v(best)) best = static_cast<TokenId>(i);
  }
  return best;
}

inline std::size_t default_max_length(const Sentence& source) { return 2 * source.size() + 8; }

template <typename Scalar>
Sentence greedy_decode(const Model<Scalar>& m, const Sentence& source, std::size_t max_len) {
  require(max_len >= 1, "greedy_decode: max_len must be >= 1");
  DecodeCache<Scalar> cache = init_cache(m, source);
  Sentence out;
  TokenId token = kBos;
  for (std::size_t step = 0; step < max_len; ++step) {
    const TokenId next = argmax_lowest<Scalar>(log_softmax<Scalar>(decode_step(m, cache, token)));
    if (next == kEos) break;
    out.push_back(next);
    token = next;
  }
  return out;
}

template <typename Scalar>
Sentence greedy_decode(const Model<Scalar>& m, const Sentence& source) {
  return greedy_decode(m, source, default_max_length(source));
}

/// Optional hooks around each batched step of forced decoding. `after_step`
/// runs as soon as the logits exist, before token selection.
template <typename Scalar>
struct ForcedDecodeHooks {
  std::function<void()> before_step;
  std::function<void(const std::vector<DecodeCache<Scalar>>&)> after_step;
};

/// Decodes exactly `length` tokens per source, never choosing EOS, so every
/// backend emits identical token counts.
template <typename Scalar>
std::vector<Sentence> forced_decode_batch(const Model<Scalar>& m, const std::vector<Sentence>& sources,
                                          std::size_t length, const ForcedDecodeHooks<Scalar>& hooks = {}) {
  std::vector<DecodeCache<Scalar>> caches;
  caches.reserve(sources.size());
  for (const auto& s : sources) caches.push_back(init_cache(m, s));
  std::vector<DecodeCache<Scalar>*> ptrs;
  for (auto& c : caches) ptrs.push_back(&c);
  std::vector<TokenId> last(sources.size(), kBos);
  std::vector<Sentence> out(sources.size());
  for (std::size_t step = 0; step < length; ++step) {
    if (hooks.before_step) hooks.before_step();
    const Matrix<Scalar> logits = decode_step_batch(m, ptrs, last);
    if (hooks.after_step) hooks.after_step(caches);
    for (std::size_t b = 0; b < sources.size(); ++b) {
      last[b] = argmax_lowest<Scalar>(RowVector<Scalar>(logits.row(static_cast<Eigen::Index>(b))), kEos);
      out[b].push_back(last[b]);
    }
  }
  return out;
}

template <typename Scalar>
Sentence forced_decode(const Model<Scalar>& m, const Sentence& source, std::size_t length) {
  return forced_decode_batch(m, std::vector<Sentence>{source}, length).front();
}

/// Length-normalized beam search. Candidates are ranked by (score desc,
/// parent index asc, token id asc); an EOS candidate ranked inside the top
/// `beam` finishes its hypothesis.
template <typename Scalar>
Sentence beam_decode(const Model<Scalar>& m, const Sentence& source, std::size_t beam, std::size_t max_len) {
  require(beam >= 1, "beam_decode: beam must be >= 1");
  require(max_len >= 1, "beam_decode: max_len must be >= 1");
  struct Hypothesis {
    Sentence tokens;
    double score = 0;
    DecodeCache<Scalar> cache;
  };
  struct Finished {
    Sentence tokens;
    double normalized;
  };
  struct Candidate {
    double score;
    std::size_t parent;
    TokenId token;
  };

  std::vector<Hypothesis> alive;
  alive.push_back({{}, 0.0, init_cache(m, source)});
  std::vector<Finished> finished;

  for (std::size_t step = 0; step < max_len && !alive.empty(); ++step) {
    std::vector<Candidate> cands;
    for (std::size_t i = 0; i < alive.size(); ++i) {
      auto& hyp = alive[i];
      const TokenId last = hyp.tokens.empty() ? kBos : hyp.tokens.back();
      RowVector<Scalar> logp = log_softmax<Scalar>(decode_step(m, hyp.cache, last));
      for (Eigen::Index v = 0; v < logp.size(); ++v)
        cands.push_back({hyp.score + static_cast<double>(logp(v)), i, static_cast<TokenId>(v)});
    }
    const std::size_t keep = std::min(cands.size(), 2 * beam);
    std::partial_sort(cands.begin(), cands.begin() + static_cast<std::ptrdiff_t>(keep), cands.end(),
                      [](const Candidate& a, const Candidate& b) {
                        if (a.score != b.score) return a.score > b.score;
                        if (a.parent != b.parent) return a.parent < b.parent;
                        return a.token < b.token;
                      });
    std::vector<Hypothesis> next;
    for (std::size_t r = 0; r < keep && next.size() < beam; ++r) {
      const Candidate& cand = cands[r];
      const Hypothesis& parent = alive[cand.parent];
      if (cand.token == kEos) {
        if (r < beam)
          finished.push_back({parent.tokens, cand.score / static_cast<double>(parent.tokens.size() + 1)});
        continue;
      }
      Hypothesis h{parent.tokens, cand.score, parent.cache};
      h.tokens.push_back(cand.token);
      next.push_back(std::move(h));
    }
    if (finished.size() >= beam) break;
    alive = std::move(next);
  }
  if (finished.empty()) {
    for (const auto& h : alive)
      finished.push_back({h.tokens, h.score / static_cast<double>(std::max<std::size_t>(1, h.tokens.size()))});
  }
  std::size_t best = 0;
  for (std::size_t i = 1; i < finished.size(); ++i)
    if (finished[i].normalized > finished[best].normalized) best = i;
  return finished[best].tokens;
}

template <typename Scalar>
Sentence beam_decode(const Model<Scalar>& m, const Sentence& source, std::size_t beam) {
  return beam_decode(m, source, beam, default_max_length(source));
}

}  // namespace rfadoc
