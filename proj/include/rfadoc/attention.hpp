#pragma once

#include "rfadoc/random_features.hpp"

#include <cmath>
#include <string_view>
#include <utility>

namespace rfadoc {

/// Floor applied to the RFA denominator phi(q).z, which is not guaranteed
/// positive with signed sine/cosine features.
inline constexpr double kDenominatorFloor = 1e-6;

enum class GateVariant { None, SGate, SGateAvg };

inline std::string_view to_string(GateVariant v) {
  switch (v) {
    case GateVariant::None: return "none";
    case GateVariant::SGate: return "sgate";
    case GateVariant::SGateAvg: return "sgate-avg";
  }
  return "none";
}

inline GateVariant parse_gate_variant(std::string_view s) {
  if (s == "none") return GateVariant::None;
  if (s == "sgate") return GateVariant::SGate;
  if (s == "sgate-avg") return GateVariant::SGateAvg;
  throw InvalidArgument("unknown gate variant: " + std::string(s));
}

template <typename Scalar>
struct GateParams {
  Vector<Scalar> w_f;
  Scalar b_f = 0;
  GateVariant variant = GateVariant::None;
};

struct TokenMeta {
  std::vector<bool> is_sentence_start;

  std::size_t size() const { return is_sentence_start.size(); }
  bool operator[](std::size_t i) const { return is_sentence_start[i]; }
  bool operator==(const TokenMeta&) const = default;
};

/// Position 0 and every position right after a SEP token start a sentence.
inline TokenMeta sentence_starts(const Sentence& tokens) {
  TokenMeta meta;
  meta.is_sentence_start.resize(tokens.size(), false);
  for (std::size_t i = 0; i < tokens.size(); ++i)
    meta.is_sentence_start[i] = (i == 0) || tokens[i - 1] == kSep;
  return meta;
}

template <typename Scalar>
Scalar sigmoid(Scalar x) {
  return Scalar(1) / (Scalar(1) + std::exp(-x));
}

template <typename Scalar, typename Derived>
Scalar compute_gate(const GateParams<Scalar>& params, const Eigen::MatrixBase<Derived>& e_prev,
                    bool is_start) {
  if (!is_start || params.variant == GateVariant::None) return Scalar(1);
  require_dims(e_prev.size() == params.w_f.size(), "compute_gate: e_prev has wrong length");
  return sigmoid<Scalar>(params.w_f.dot(e_prev.derived().template cast<Scalar>()) + params.b_f);
}

/// Exact attention: sum_i softmax_i(scale * q.k_i) v_i. Keys and values are rows.
template <typename Scalar, typename DQ, typename DK, typename DV>
Vector<Scalar> softmax_attention(const Eigen::MatrixBase<DQ>& q, const Eigen::MatrixBase<DK>& keys,
                                 const Eigen::MatrixBase<DV>& values, Scalar scale) {
  require(keys.rows() > 0, "softmax_attention: empty key list");
  require_dims(keys.rows() == values.rows(), "softmax_attention: keys/values length mismatch");
  require_dims(keys.cols() == q.size(), "softmax_attention: query/key dimension mismatch");
  require(scale > 0, "softmax_attention: scale must be positive");
  Vector<Scalar> logits = scale * (keys * q.derived().template cast<Scalar>());
  Vector<Scalar> w = (logits.array() - logits.maxCoeff()).exp();
  w /= w.sum();
  return values.transpose() * w;
}

/// l2 normalization of each row. The temperature of the approximated softmax
/// is set by the feature map bandwidth: exp(q.k / sigma^2) on unit vectors.
template <typename Derived>
Matrix<typename Derived::Scalar> normalize_rows(const Eigen::MatrixBase<Derived>& x) {
  using Scalar = typename Derived::Scalar;
  Matrix<Scalar> out = x;
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    const Scalar n = out.row(i).norm();
    if (n > Scalar(0)) out.row(i) /= n;
  }
  return out;
}

template <typename Scalar>
Scalar stabilized(Scalar denominator) {
  return std::max(denominator, Scalar(kDenominatorFloor));
}

template <typename Scalar>
struct AttentionState {
  Matrix<Scalar> S;  // 2D x d_v
  Vector<Scalar> z;  // 2D
  std::size_t step = 0;

  AttentionState() = default;
  AttentionState(Eigen::Index feature_dim, Eigen::Index value_dim)
      : S(Matrix<Scalar>::Zero(feature_dim, value_dim)), z(Vector<Scalar>::Zero(feature_dim)) {}

  std::size_t num_scalars() const { return static_cast<std::size_t>(S.size() + z.size()); }
};

/// Source summary shared by all query positions.
template <typename Scalar, typename DK, typename DV>
AttentionState<Scalar> summarize(const FeatureMap<Scalar>& map, const Eigen::MatrixBase<DK>& keys,
                                 const Eigen::MatrixBase<DV>& values) {
  require(keys.rows() > 0, "rfa: empty source");
  require_dims(keys.rows() == values.rows(), "rfa: keys/values length mismatch");
  Matrix<Scalar> fk = phi_rows(map, normalize_rows(keys));
  AttentionState<Scalar> st;
  st.S = fk.transpose() * values;
  st.z = fk.colwise().sum().transpose();
  st.step = static_cast<std::size_t>(keys.rows());
  return st;
}

template <typename Scalar, typename DQ>
Matrix<Scalar> read_out(const FeatureMap<Scalar>& map, const AttentionState<Scalar>& st,
                        const Eigen::MatrixBase<DQ>& queries) {
  Matrix<Scalar> fq = phi_rows(map, normalize_rows(queries));
  Matrix<Scalar> num = fq * st.S;
  Vector<Scalar> den = fq * st.z;
  for (Eigen::Index t = 0; t < num.rows(); ++t) num.row(t) /= stabilized(den(t));
  return num;
}

template <typename Scalar, typename DQ, typename DK, typename DV>
Matrix<Scalar> rfa_cross_attention(const FeatureMap<Scalar>& map, const Eigen::MatrixBase<DQ>& queries,
                                   const Eigen::MatrixBase<DK>& keys,
                                   const Eigen::MatrixBase<DV>& values) {
  require(queries.rows() > 0, "rfa_cross_attention: no queries");
  require_dims(queries.cols() == map.input_dim() && keys.cols() == map.input_dim(),
               "rfa_cross_attention: query/key dimension mismatch");
  return read_out(map, summarize(map, keys, values), queries);
}

/// True when the SGATE_AVG weighted average replaces additive accumulation.
template <typename Scalar>
bool averaging_boundary(GateVariant variant, bool is_start, Scalar f) {
  return variant == GateVariant::SGateAvg && is_start && f < Scalar(1);
}

template <typename Scalar>
struct CausalStepResult {
  Vector<Scalar> output;
  AttentionState<Scalar> state;
};

template <typename Scalar, typename DQ, typename DK, typename DV>
CausalStepResult<Scalar> rfa_causal_step(const FeatureMap<Scalar>& map, AttentionState<Scalar> state,
                                         const Eigen::MatrixBase<DQ>& q, const Eigen::MatrixBase<DK>& k,
                                         const Eigen::MatrixBase<DV>& v, Scalar f, GateVariant variant,
                                         bool is_start) {
  require(f >= Scalar(0) && f <= Scalar(1), "rfa_causal_step: gate out of [0, 1]");
  require(q.allFinite() && k.allFinite() && v.allFinite(), "rfa_causal_step: non-finite input");
  require_dims(q.size() == map.input_dim() && k.size() == map.input_dim(),
               "rfa_causal_step: query/key dimension mismatch");
  if (state.S.size() == 0) state = AttentionState<Scalar>(map.output_dim(), v.size());
  require_dims(state.S.cols() == v.size(), "rfa_causal_step: value dimension mismatch");

  Vector<Scalar> fk = phi(map, k.derived().normalized());
  const Scalar c = averaging_boundary(variant, is_start, f) ? Scalar(1) - f : Scalar(1);
  state.S = f * state.S + c * fk * v.transpose();
  state.z = f * state.z + c * fk;
  ++state.step;

  Vector<Scalar> fq = phi(map, q.derived().normalized());
  Vector<Scalar> out = state.S.transpose() * fq / stabilized(Scalar(fq.dot(state.z)));
  return {std::move(out), std::move(state)};
}

/// Causal RFA over a whole sequence. Row t of `e_inputs` is the representation
/// the gate reads when position t+1 starts a sentence.
template <typename Scalar, typename DQ, typename DK, typename DV, typename DE>
Matrix<Scalar> rfa_causal_sequence(const FeatureMap<Scalar>& map, const Eigen::MatrixBase<DQ>& queries,
                                   const Eigen::MatrixBase<DK>& keys, const Eigen::MatrixBase<DV>& values,
                                   const Eigen::MatrixBase<DE>& e_inputs, const TokenMeta& meta,
                                   const GateParams<Scalar>& params) {
  const Eigen::Index n = queries.rows();
  require_dims(keys.rows() == n && values.rows() == n && e_inputs.rows() == n &&
                   static_cast<Eigen::Index>(meta.size()) == n,
               "rfa_causal_sequence: length mismatch");
  Matrix<Scalar> out(n, values.cols());
  AttentionState<Scalar> state(map.output_dim(), values.cols());
  for (Eigen::Index t = 0; t < n; ++t) {
    const bool start = meta[static_cast<std::size_t>(t)];
    const Scalar f = t == 0 ? Scalar(1) : compute_gate(params, e_inputs.row(t - 1).transpose(), start);
    auto r = rfa_causal_step(map, std::move(state), queries.row(t).transpose(), keys.row(t).transpose(),
                             values.row(t).transpose(), f, params.variant, start);
    out.row(t) = r.output.transpose();
    state = std::move(r.state);
  }
  return out;
}

}  // namespace rfadoc
