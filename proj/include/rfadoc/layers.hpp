#pragma once

// Differentiable building blocks. Each *_forward fills a cache that the
// matching *_backward consumes; backward accumulates parameter gradients and
// returns the gradient with respect to its inputs. Rows are sequence positions.

#include "rfadoc/model.hpp"

#include <cmath>
#include <limits>

namespace rfadoc::layers {

inline constexpr double kLayerNormEps = 1e-5;

template <typename Scalar>
Matrix<Scalar> linear(const Linear<Scalar>& p, const Matrix<Scalar>& x) {
  Matrix<Scalar> y = x * p.weight;
  y.rowwise() += p.bias.row(0);
  return y;
}

template <typename Scalar>
Matrix<Scalar> linear_backward(const Linear<Scalar>& p, Linear<Scalar>& g, const Matrix<Scalar>& x,
                               const Matrix<Scalar>& dy) {
  g.weight.noalias() += x.transpose() * dy;
  g.bias += dy.colwise().sum();
  return dy * p.weight.transpose();
}

template <typename Scalar>
struct LayerNormCache {
  Matrix<Scalar> xhat;
  Vector<Scalar> rstd;
};

template <typename Scalar>
Matrix<Scalar> layer_norm(const LayerNormParams<Scalar>& p, const Matrix<Scalar>& x,
                          LayerNormCache<Scalar>* cache = nullptr) {
  const Eigen::Index d = x.cols();
  Matrix<Scalar> xhat(x.rows(), d);
  Vector<Scalar> rstd(x.rows());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const Scalar mean = x.row(r).mean();
    const Scalar var = (x.row(r).array() - mean).square().sum() / Scalar(d);
    rstd(r) = Scalar(1) / std::sqrt(var + Scalar(kLayerNormEps));
    xhat.row(r) = (x.row(r).array() - mean) * rstd(r);
  }
  Matrix<Scalar> y = xhat.array().rowwise() * p.gain.row(0).array();
  y.rowwise() += p.bias.row(0);
  if (cache) *cache = {std::move(xhat), std::move(rstd)};
  return y;
}

template <typename Scalar>
Matrix<Scalar> layer_norm_backward(const LayerNormParams<Scalar>& p, LayerNormParams<Scalar>& g,
                                   const LayerNormCache<Scalar>& c, const Matrix<Scalar>& dy) {
  g.gain += (dy.array() * c.xhat.array()).colwise().sum().matrix();
  g.bias += dy.colwise().sum();
  Matrix<Scalar> dxhat = dy.array().rowwise() * p.gain.row(0).array();
  Matrix<Scalar> dx(dy.rows(), dy.cols());
  const Scalar inv_d = Scalar(1) / Scalar(dy.cols());
  for (Eigen::Index r = 0; r < dy.rows(); ++r) {
    const Scalar m1 = dxhat.row(r).sum() * inv_d;
    const Scalar m2 = dxhat.row(r).dot(c.xhat.row(r)) * inv_d;
    dx.row(r) = c.rstd(r) * (dxhat.row(r).array() - m1 - c.xhat.row(r).array() * m2);
  }
  return dx;
}

template <typename Scalar>
struct FeedForwardCache {
  Matrix<Scalar> input, hidden;  // hidden is post-ReLU
};

template <typename Scalar>
Matrix<Scalar> feed_forward(const FeedForwardParams<Scalar>& p, const Matrix<Scalar>& x,
                            FeedForwardCache<Scalar>* cache = nullptr) {
  Matrix<Scalar> h = linear(p.hidden, x).cwiseMax(Scalar(0));
  Matrix<Scalar> y = linear(p.output, h);
  if (cache) *cache = {x, std::move(h)};
  return y;
}

template <typename Scalar>
Matrix<Scalar> feed_forward_backward(const FeedForwardParams<Scalar>& p, FeedForwardParams<Scalar>& g,
                                     const FeedForwardCache<Scalar>& c, const Matrix<Scalar>& dy) {
  Matrix<Scalar> dh = linear_backward(p.output, g.output, c.hidden, dy);
  dh = (c.hidden.array() > Scalar(0)).select(dh, Scalar(0));
  return linear_backward(p.hidden, g.hidden, c.input, dh);
}

// ---------------------------------------------------------------------------
// Row normalization used in front of the feature maps.

template <typename Scalar>
struct RowNormCache {
  Matrix<Scalar> unit;
  Vector<Scalar> norm;
};

template <typename Scalar>
Matrix<Scalar> normalize_rows_cached(const Matrix<Scalar>& x, RowNormCache<Scalar>& c) {
  c.norm = x.rowwise().norm();
  c.unit = x;
  for (Eigen::Index r = 0; r < x.rows(); ++r)
    if (c.norm(r) > Scalar(0)) c.unit.row(r) /= c.norm(r);
  return c.unit;
}

template <typename Scalar>
Matrix<Scalar> normalize_rows_backward(const RowNormCache<Scalar>& c, const Matrix<Scalar>& dy) {
  Matrix<Scalar> dx(dy.rows(), dy.cols());
  for (Eigen::Index r = 0; r < dy.rows(); ++r) {
    if (c.norm(r) <= Scalar(0)) {
      dx.row(r).setZero();
      continue;
    }
    const Scalar proj = c.unit.row(r).dot(dy.row(r));
    dx.row(r) = (dy.row(r) - proj * c.unit.row(r)) / c.norm(r);
  }
  return dx;
}

// ---------------------------------------------------------------------------
// Exact multi-head attention.

template <typename Scalar>
struct ExactAttentionCache {
  Matrix<Scalar> query_in, memory_in, q, k, v, merged;
  std::vector<Matrix<Scalar>> probs;  // per head, T x M
};

template <typename Scalar>
Matrix<Scalar> exact_attention(const AttentionParams<Scalar>& p, int n_heads, const Matrix<Scalar>& x,
                               const Matrix<Scalar>& memory, bool causal,
                               ExactAttentionCache<Scalar>* cache = nullptr) {
  const Eigen::Index dh = x.cols() / n_heads;
  const Scalar scale = Scalar(1) / std::sqrt(Scalar(dh));
  Matrix<Scalar> q = linear(p.query, x);
  Matrix<Scalar> k = linear(p.key, memory);
  Matrix<Scalar> v = linear(p.value, memory);
  Matrix<Scalar> merged(x.rows(), x.cols());
  std::vector<Matrix<Scalar>> probs;
  for (int h = 0; h < n_heads; ++h) {
    Matrix<Scalar> s = scale * (q.middleCols(h * dh, dh) * k.middleCols(h * dh, dh).transpose());
    for (Eigen::Index t = 0; t < s.rows(); ++t) {
      const Eigen::Index visible = causal ? t + 1 : s.cols();
      const Scalar mx = s.row(t).head(visible).maxCoeff();
      s.row(t).head(visible) = (s.row(t).head(visible).array() - mx).exp();
      s.row(t).head(visible) /= s.row(t).head(visible).sum();
      if (visible < s.cols()) s.row(t).tail(s.cols() - visible).setZero();
    }
    merged.middleCols(h * dh, dh) = s * v.middleCols(h * dh, dh);
    if (cache) probs.push_back(std::move(s));
  }
  Matrix<Scalar> out = linear(p.output, merged);
  if (cache) *cache = {x, memory, std::move(q), std::move(k), std::move(v), std::move(merged), std::move(probs)};
  return out;
}

template <typename Scalar>
struct AttentionGrads {
  Matrix<Scalar> d_query_in, d_memory_in;
};

template <typename Scalar>
AttentionGrads<Scalar> exact_attention_backward(const AttentionParams<Scalar>& p, AttentionParams<Scalar>& g,
                                                int n_heads, const ExactAttentionCache<Scalar>& c,
                                                const Matrix<Scalar>& dy) {
  const Eigen::Index dh = c.q.cols() / n_heads;
  const Scalar scale = Scalar(1) / std::sqrt(Scalar(dh));
  Matrix<Scalar> dmerged = linear_backward(p.output, g.output, c.merged, dy);
  Matrix<Scalar> dq(c.q.rows(), c.q.cols()), dk(c.k.rows(), c.k.cols()), dv(c.v.rows(), c.v.cols());
  for (int h = 0; h < n_heads; ++h) {
    const Matrix<Scalar>& P = c.probs[h];
    auto dO = dmerged.middleCols(h * dh, dh);
    Matrix<Scalar> dP = dO * c.v.middleCols(h * dh, dh).transpose();
    dv.middleCols(h * dh, dh) = P.transpose() * dO;
    Vector<Scalar> rs = (dP.array() * P.array()).rowwise().sum();
    Matrix<Scalar> ds = P.array() * (dP.colwise() - rs).array();
    dq.middleCols(h * dh, dh) = scale * ds * c.k.middleCols(h * dh, dh);
    dk.middleCols(h * dh, dh) = scale * ds.transpose() * c.q.middleCols(h * dh, dh);
  }
  AttentionGrads<Scalar> r;
  r.d_query_in = linear_backward(p.query, g.query, c.query_in, dq);
  r.d_memory_in = linear_backward(p.key, g.key, c.memory_in, dk);
  r.d_memory_in += linear_backward(p.value, g.value, c.memory_in, dv);
  return r;
}

// ---------------------------------------------------------------------------
// RFA cross attention: one summary (S, z) of the source per head.

template <typename Scalar>
struct RfaCrossHeadCache {
  RowNormCache<Scalar> qn, kn;
  Matrix<Scalar> fq, fk, S;
  Vector<Scalar> z, den;
};

template <typename Scalar>
struct RfaCrossCache {
  Matrix<Scalar> query_in, memory_in, q, k, v, merged;
  std::vector<RfaCrossHeadCache<Scalar>> heads;
};

template <typename Scalar>
Matrix<Scalar> rfa_cross(const AttentionParams<Scalar>& p, const std::vector<FeatureMap<Scalar>>& maps,
                         const Matrix<Scalar>& x, const Matrix<Scalar>& memory,
                         RfaCrossCache<Scalar>* cache = nullptr) {
  const int n_heads = static_cast<int>(maps.size());
  const Eigen::Index dh = x.cols() / n_heads;
  Matrix<Scalar> q = linear(p.query, x);
  Matrix<Scalar> k = linear(p.key, memory);
  Matrix<Scalar> v = linear(p.value, memory);
  Matrix<Scalar> merged(x.rows(), x.cols());
  std::vector<RfaCrossHeadCache<Scalar>> heads(static_cast<std::size_t>(n_heads));
  for (int h = 0; h < n_heads; ++h) {
    auto& hc = heads[h];
    hc.fq = phi_rows(maps[h], normalize_rows_cached(Matrix<Scalar>(q.middleCols(h * dh, dh)), hc.qn));
    hc.fk = phi_rows(maps[h], normalize_rows_cached(Matrix<Scalar>(k.middleCols(h * dh, dh)), hc.kn));
    hc.S = hc.fk.transpose() * v.middleCols(h * dh, dh);
    hc.z = hc.fk.colwise().sum().transpose();
    hc.den = hc.fq * hc.z;
    Matrix<Scalar> num = hc.fq * hc.S;
    for (Eigen::Index t = 0; t < num.rows(); ++t) num.row(t) /= stabilized(hc.den(t));
    merged.middleCols(h * dh, dh) = num;
  }
  Matrix<Scalar> out = linear(p.output, merged);
  if (cache) *cache = {x, memory, std::move(q), std::move(k), std::move(v), std::move(merged), std::move(heads)};
  return out;
}

template <typename Scalar>
AttentionGrads<Scalar> rfa_cross_backward(const AttentionParams<Scalar>& p, AttentionParams<Scalar>& g,
                                          const std::vector<FeatureMap<Scalar>>& maps,
                                          const RfaCrossCache<Scalar>& c, const Matrix<Scalar>& dy) {
  const int n_heads = static_cast<int>(maps.size());
  const Eigen::Index dh = c.q.cols() / n_heads;
  Matrix<Scalar> dmerged = linear_backward(p.output, g.output, c.merged, dy);
  Matrix<Scalar> dq(c.q.rows(), c.q.cols()), dk(c.k.rows(), c.k.cols()), dv(c.v.rows(), c.v.cols());
  for (int h = 0; h < n_heads; ++h) {
    const auto& hc = c.heads[h];
    const Eigen::Index T = hc.fq.rows();
    Matrix<Scalar> dnum(T, dh);
    Vector<Scalar> dden(T);
    for (Eigen::Index t = 0; t < T; ++t) {
      const Scalar den = stabilized(hc.den(t));
      dnum.row(t) = dmerged.row(t).segment(h * dh, dh) / den;
      dden(t) = hc.den(t) > Scalar(kDenominatorFloor)
                    ? -dmerged.row(t).segment(h * dh, dh).dot(c.merged.row(t).segment(h * dh, dh)) / den
                    : Scalar(0);
    }
    Matrix<Scalar> dfq = dnum * hc.S.transpose() + dden * hc.z.transpose();
    Matrix<Scalar> dS = hc.fq.transpose() * dnum;
    Vector<Scalar> dz = hc.fq.transpose() * dden;
    Matrix<Scalar> dfk = c.v.middleCols(h * dh, dh) * dS.transpose();
    dfk.rowwise() += dz.transpose();
    dv.middleCols(h * dh, dh) = hc.fk * dS;
    dq.middleCols(h * dh, dh) = normalize_rows_backward(hc.qn, phi_rows_backward(maps[h], hc.qn.unit, dfq));
    dk.middleCols(h * dh, dh) = normalize_rows_backward(hc.kn, phi_rows_backward(maps[h], hc.kn.unit, dfk));
  }
  AttentionGrads<Scalar> r;
  r.d_query_in = linear_backward(p.query, g.query, c.query_in, dq);
  r.d_memory_in = linear_backward(p.key, g.key, c.memory_in, dk);
  r.d_memory_in += linear_backward(p.value, g.value, c.memory_in, dv);
  return r;
}

// ---------------------------------------------------------------------------
// RFA causal attention with sentential gating, run as a recurrence.

template <typename Scalar>
struct RfaCausalHeadCache {
  RowNormCache<Scalar> qn, kn;
  Matrix<Scalar> fq, fk;
  std::vector<Matrix<Scalar>> S;  // S_t after each step
  Matrix<Scalar> Z;               // row t is z_t
  Vector<Scalar> den, gate, coeff;
  std::vector<bool> gated;        // gate computed from parameters at t
};

template <typename Scalar>
struct RfaCausalCache {
  Matrix<Scalar> input, q, k, v, merged;
  std::vector<RfaCausalHeadCache<Scalar>> heads;
};

/// Gate values for every head at position t (row of the result). `e` holds
/// the sublayer inputs; position t reads row t-1.
template <typename Scalar>
Matrix<Scalar> gate_values(const Matrix<Scalar>& gate_w, const Matrix<Scalar>& gate_b, GateVariant variant,
                           const Matrix<Scalar>& e, const TokenMeta& meta, std::vector<bool>& gated) {
  const Eigen::Index T = e.rows(), H = gate_w.cols();
  Matrix<Scalar> f = Matrix<Scalar>::Ones(T, H);
  gated.assign(static_cast<std::size_t>(T), false);
  if (variant == GateVariant::None) return f;
  for (Eigen::Index t = 1; t < T; ++t) {
    if (!meta[static_cast<std::size_t>(t)]) continue;
    gated[t] = true;
    RowVector<Scalar> logits = e.row(t - 1) * gate_w + gate_b.row(0);
    for (Eigen::Index h = 0; h < H; ++h) f(t, h) = sigmoid(logits(h));
  }
  return f;
}

template <typename Scalar>
Matrix<Scalar> rfa_causal(const AttentionParams<Scalar>& p, const Matrix<Scalar>& gate_w,
                          const Matrix<Scalar>& gate_b, GateVariant variant,
                          const std::vector<FeatureMap<Scalar>>& maps, const Matrix<Scalar>& x,
                          const TokenMeta& meta, RfaCausalCache<Scalar>* cache = nullptr) {
  const int n_heads = static_cast<int>(maps.size());
  const Eigen::Index dh = x.cols() / n_heads, T = x.rows();
  require_dims(static_cast<Eigen::Index>(meta.size()) == T, "rfa_causal: meta length mismatch");
  Matrix<Scalar> q = linear(p.query, x);
  Matrix<Scalar> k = linear(p.key, x);
  Matrix<Scalar> v = linear(p.value, x);
  std::vector<bool> gated;
  Matrix<Scalar> f = gate_values(gate_w, gate_b, variant, x, meta, gated);
  Matrix<Scalar> merged(T, x.cols());
  std::vector<RfaCausalHeadCache<Scalar>> heads(static_cast<std::size_t>(n_heads));
  for (int h = 0; h < n_heads; ++h) {
    auto& hc = heads[h];
    hc.fq = phi_rows(maps[h], normalize_rows_cached(Matrix<Scalar>(q.middleCols(h * dh, dh)), hc.qn));
    hc.fk = phi_rows(maps[h], normalize_rows_cached(Matrix<Scalar>(k.middleCols(h * dh, dh)), hc.kn));
    const Eigen::Index F = hc.fq.cols();
    Matrix<Scalar> S = Matrix<Scalar>::Zero(F, dh);
    Vector<Scalar> z = Vector<Scalar>::Zero(F);
    hc.gate = f.col(h);
    hc.coeff.resize(T);
    hc.den.resize(T);
    if (cache) {
      hc.S.reserve(static_cast<std::size_t>(T));
      hc.Z.resize(T, F);
      hc.gated = gated;
    }
    for (Eigen::Index t = 0; t < T; ++t) {
      const Scalar ft = hc.gate(t);
      const Scalar ct = averaging_boundary(variant, meta[static_cast<std::size_t>(t)], ft) ? Scalar(1) - ft : Scalar(1);
      hc.coeff(t) = ct;
      auto fk_t = hc.fk.row(t).transpose();
      auto v_t = v.row(t).segment(h * dh, dh);
      if (ft != Scalar(1)) {
        S *= ft;
        z *= ft;
      }
      S.noalias() += ct * fk_t * v_t;
      z += ct * fk_t;
      hc.den(t) = hc.fq.row(t).dot(z);
      merged.row(t).segment(h * dh, dh) = (hc.fq.row(t) * S) / stabilized(hc.den(t));
      if (cache) {
        hc.S.push_back(S);
        hc.Z.row(t) = z.transpose();
      }
    }
  }
  Matrix<Scalar> out = linear(p.output, merged);
  if (cache) *cache = {x, std::move(q), std::move(k), std::move(v), std::move(merged), std::move(heads)};
  return out;
}

template <typename Scalar>
Matrix<Scalar> rfa_causal_backward(const AttentionParams<Scalar>& p, AttentionParams<Scalar>& g,
                                   const Matrix<Scalar>& gate_w, Matrix<Scalar>& g_gate_w,
                                   Matrix<Scalar>& g_gate_b, const std::vector<FeatureMap<Scalar>>& maps,
                                   const RfaCausalCache<Scalar>& c, const Matrix<Scalar>& dy) {
  const int n_heads = static_cast<int>(maps.size());
  const Eigen::Index dh = c.q.cols() / n_heads, T = c.q.rows();
  Matrix<Scalar> dmerged = linear_backward(p.output, g.output, c.merged, dy);
  Matrix<Scalar> dq(T, c.q.cols()), dk(T, c.k.cols()), dv(T, c.v.cols());
  Matrix<Scalar> dx = Matrix<Scalar>::Zero(T, c.input.cols());
  for (int h = 0; h < n_heads; ++h) {
    const auto& hc = c.heads[h];
    const Eigen::Index F = hc.fq.cols();
    Matrix<Scalar> G = Matrix<Scalar>::Zero(F, dh);
    Vector<Scalar> gz = Vector<Scalar>::Zero(F);
    Matrix<Scalar> dfq(T, F), dfk(T, F);
    for (Eigen::Index t = T - 1; t >= 0; --t) {
      const Scalar den = stabilized(hc.den(t));
      RowVector<Scalar> dout = dmerged.row(t).segment(h * dh, dh);
      RowVector<Scalar> dnum = dout / den;
      const Scalar dden = hc.den(t) > Scalar(kDenominatorFloor)
                              ? -dout.dot(c.merged.row(t).segment(h * dh, dh)) / den
                              : Scalar(0);
      dfq.row(t) = dnum * hc.S[t].transpose() + dden * hc.Z.row(t);
      G.noalias() += hc.fq.row(t).transpose() * dnum;
      gz += dden * hc.fq.row(t).transpose();

      const Scalar ct = hc.coeff(t), ft = hc.gate(t);
      RowVector<Scalar> v_t = c.v.row(t).segment(h * dh, dh);
      Vector<Scalar> Gv = G * v_t.transpose();
      dfk.row(t) = ct * (Gv + gz).transpose();
      dv.row(t).segment(h * dh, dh) = ct * (hc.fk.row(t) * G);
      if (hc.gated[t]) {
        Scalar df = 0;
        if (t > 0) df = (G.array() * hc.S[t - 1].array()).sum() + gz.dot(hc.Z.row(t - 1).transpose());
        if (ct != Scalar(1)) df -= hc.fk.row(t).dot(Gv.transpose()) + hc.fk.row(t).dot(gz.transpose());
        const Scalar dlogit = df * ft * (Scalar(1) - ft);
        g_gate_w.col(h) += dlogit * c.input.row(t - 1).transpose();
        g_gate_b(0, h) += dlogit;
        dx.row(t - 1) += dlogit * gate_w.col(h).transpose();
      }
      if (ft != Scalar(1)) {
        G *= ft;
        gz *= ft;
      }
    }
    dq.middleCols(h * dh, dh) = normalize_rows_backward(hc.qn, phi_rows_backward(maps[h], hc.qn.unit, dfq));
    dk.middleCols(h * dh, dh) = normalize_rows_backward(hc.kn, phi_rows_backward(maps[h], hc.kn.unit, dfk));
  }
  dx += linear_backward(p.query, g.query, c.input, dq);
  dx += linear_backward(p.key, g.key, c.input, dk);
  dx += linear_backward(p.value, g.value, c.input, dv);
  return dx;
}

// ---------------------------------------------------------------------------

template <typename Scalar>
Matrix<Scalar> sinusoidal_positions(Eigen::Index length, Eigen::Index d, Eigen::Index offset = 0) {
  Matrix<Scalar> pe(length, d);
  for (Eigen::Index t = 0; t < length; ++t) {
    const double pos = static_cast<double>(t + offset);
    for (Eigen::Index i = 0; i < d; i += 2) {
      const double freq = std::pow(10000.0, -static_cast<double>(i) / static_cast<double>(d));
      pe(t, i) = static_cast<Scalar>(std::sin(pos * freq));
      if (i + 1 < d) pe(t, i + 1) = static_cast<Scalar>(std::cos(pos * freq));
    }
  }
  return pe;
}

template <typename Scalar>
Matrix<Scalar> log_softmax_rows(const Matrix<Scalar>& logits) {
  Matrix<Scalar> out(logits.rows(), logits.cols());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const Scalar mx = logits.row(r).maxCoeff();
    const Scalar lse = mx + std::log((logits.row(r).array() - mx).exp().sum());
    out.row(r) = logits.row(r).array() - lse;
  }
  return out;
}

}  // namespace rfadoc::layers
