#pragma once

// Independent reference implementations used as test oracles. They use plain
// loops over std::vector<double> and share no code paths with the library
// beyond reading parameter values.

#include "rfadoc/model.hpp"

#include <cmath>
#include <map>
#include <vector>

namespace oracle {

using Vec = std::vector<double>;
using Mat = std::vector<Vec>;  // row-major, rows are positions

inline Mat from_eigen(const rfadoc::Matrix<double>& m) {
  Mat out(static_cast<std::size_t>(m.rows()), Vec(static_cast<std::size_t>(m.cols())));
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) out[i][j] = m(i, j);
  return out;
}

inline Vec from_eigen(const rfadoc::Vector<double>& v) { return Vec(v.data(), v.data() + v.size()); }

inline double dot(const Vec& a, const Vec& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline Vec unit(const Vec& a) {
  const double n = std::sqrt(dot(a, a));
  Vec out = a;
  if (n > 0)
    for (double& x : out) x /= n;
  return out;
}

/// sum_i softmax_i(scale q.k_i) v_i by brute force.
inline Vec softmax_attention(const Vec& q, const Mat& keys, const Mat& values, double scale) {
  Vec logits;
  for (const auto& k : keys) logits.push_back(scale * dot(q, k));
  double mx = logits[0];
  for (double l : logits) mx = std::max(mx, l);
  double z = 0;
  for (double& l : logits) z += (l = std::exp(l - mx));
  Vec out(values[0].size(), 0.0);
  for (std::size_t i = 0; i < keys.size(); ++i)
    for (std::size_t j = 0; j < out.size(); ++j) out[j] += logits[i] / z * values[i][j];
  return out;
}

/// Random Fourier features from the projection rows w_i:
/// sqrt(1/D) [sin(w_1.x) .. sin(w_D.x), cos(w_1.x) .. cos(w_D.x)].
inline Vec features(const Mat& w, const Vec& x) {
  const std::size_t D = w.size();
  Vec out(2 * D);
  const double s = std::sqrt(1.0 / double(D));
  for (std::size_t i = 0; i < D; ++i) {
    const double a = dot(w[i], x);
    out[i] = s * std::sin(a);
    out[D + i] = s * std::cos(a);
  }
  return out;
}

/// Causal RFA evaluated from scratch at every position: each output re-sums
/// weight(t, i) phi(q_t).phi(k_i) v_i over i <= t, with unit-normalized q, k.
/// `weight(t, i)` is the product of later gates times the write coefficient.
template <typename WeightFn>
Mat causal_rfa(const Mat& w, const Mat& Q, const Mat& K, const Mat& V, WeightFn weight, double floor = 1e-6) {
  Mat out;
  for (std::size_t t = 0; t < Q.size(); ++t) {
    const Vec fq = features(w, unit(Q[t]));
    Vec num(V[0].size(), 0.0);
    double den = 0;
    for (std::size_t i = 0; i <= t; ++i) {
      const double a = weight(t, i) * dot(fq, features(w, unit(K[i])));
      den += a;
      for (std::size_t j = 0; j < num.size(); ++j) num[j] += a * V[i][j];
    }
    for (double& x : num) x /= std::max(den, floor);
    out.push_back(num);
  }
  return out;
}

inline Mat causal_rfa(const Mat& w, const Mat& Q, const Mat& K, const Mat& V) {
  return causal_rfa(w, Q, K, V, [](std::size_t, std::size_t) { return 1.0; });
}

/// Unrolled gate weights: weight(t, i) = c_i * prod_{j=i+1..t} f_j.
inline Mat unrolled_gate_weights(const Vec& f, const Vec& c) {
  const std::size_t n = f.size();
  Mat w(n, Vec(n, 0.0));
  for (std::size_t t = 0; t < n; ++t)
    for (std::size_t i = 0; i <= t; ++i) {
      double p = c[i];
      for (std::size_t j = i + 1; j <= t; ++j) p *= f[j];
      w[t][i] = p;
    }
  return w;
}

// Reference encoder-decoder forward, exact attention only -------------------

struct RefLinear {
  Mat w;  // in x out
  Vec b;
};

inline RefLinear ref_linear(const rfadoc::Linear<double>& l) { return {from_eigen(l.weight), from_eigen(l.bias)[0]}; }

inline Mat affine(const RefLinear& l, const Mat& x) {
  Mat y;
  for (const auto& row : x) {
    Vec out = l.b;
    for (std::size_t i = 0; i < row.size(); ++i)
      for (std::size_t j = 0; j < out.size(); ++j) out[j] += row[i] * l.w[i][j];
    y.push_back(out);
  }
  return y;
}

inline Mat norm(const rfadoc::LayerNormParams<double>& p, const Mat& x) {
  const Vec g = from_eigen(p.gain)[0], b = from_eigen(p.bias)[0];
  Mat y;
  for (const auto& row : x) {
    double mean = 0, var = 0;
    for (double v : row) mean += v;
    mean /= double(row.size());
    for (double v : row) var += (v - mean) * (v - mean);
    var /= double(row.size());
    Vec out(row.size());
    for (std::size_t i = 0; i < row.size(); ++i) out[i] = (row[i] - mean) / std::sqrt(var + 1e-5) * g[i] + b[i];
    y.push_back(out);
  }
  return y;
}

inline Mat add(Mat a, const Mat& b) {
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < a[i].size(); ++j) a[i][j] += b[i][j];
  return a;
}

inline Mat attention(const rfadoc::AttentionParams<double>& p, int heads, const Mat& x, const Mat& mem, bool causal) {
  const Mat q = affine(ref_linear(p.query), x), k = affine(ref_linear(p.key), mem), v = affine(ref_linear(p.value), mem);
  const std::size_t d = q[0].size(), dh = d / static_cast<std::size_t>(heads);
  Mat merged(x.size(), Vec(d, 0.0));
  for (int h = 0; h < heads; ++h) {
    const std::size_t off = static_cast<std::size_t>(h) * dh;
    for (std::size_t t = 0; t < x.size(); ++t) {
      const std::size_t n = causal ? t + 1 : mem.size();
      Vec qh(q[t].begin() + off, q[t].begin() + off + dh);
      Mat kh, vh;
      for (std::size_t i = 0; i < n; ++i) {
        kh.emplace_back(k[i].begin() + off, k[i].begin() + off + dh);
        vh.emplace_back(v[i].begin() + off, v[i].begin() + off + dh);
      }
      const Vec o = softmax_attention(qh, kh, vh, 1.0 / std::sqrt(double(dh)));
      for (std::size_t j = 0; j < dh; ++j) merged[t][off + j] = o[j];
    }
  }
  return affine(ref_linear(p.output), merged);
}

inline Mat ffn(const rfadoc::FeedForwardParams<double>& p, const Mat& x) {
  Mat h = affine(ref_linear(p.hidden), x);
  for (auto& row : h)
    for (double& v : row) v = std::max(v, 0.0);
  return affine(ref_linear(p.output), h);
}

inline Mat embed(const rfadoc::Parameters<double>& p, const std::vector<int>& tokens) {
  const std::size_t d = static_cast<std::size_t>(p.embedding.cols());
  Mat x;
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    Vec row(d);
    for (std::size_t i = 0; i < d; ++i) {
      const double angle = double(t) / std::pow(10000.0, double(2 * (i / 2)) / double(d));
      row[i] = std::sqrt(double(d)) * p.embedding(tokens[t], static_cast<Eigen::Index>(i)) +
               (i % 2 == 0 ? std::sin(angle) : std::cos(angle));
    }
    x.push_back(row);
  }
  return x;
}

/// Logits for decoder input [BOS] + target, exact attention everywhere.
inline Mat transformer_logits(const rfadoc::Model<double>& m, const std::vector<int>& source,
                              const std::vector<int>& target) {
  const auto& p = m.params;
  const int H = m.config.n_heads;
  Mat x = embed(p, source);
  for (const auto& l : p.encoder) {
    x = add(x, attention(l.self_attn, H, norm(l.norm_attn, x), norm(l.norm_attn, x), false));
    x = add(x, ffn(l.ffn, norm(l.norm_ffn, x)));
  }
  const Mat memory = norm(p.encoder_norm, x);
  std::vector<int> in = {rfadoc::kBos};
  in.insert(in.end(), target.begin(), target.end());
  Mat y = embed(p, in);
  for (const auto& l : p.decoder) {
    const Mat a = norm(l.norm_self, y);
    y = add(y, attention(l.self_attn, H, a, a, true));
    y = add(y, attention(l.cross_attn, H, norm(l.norm_cross, y), memory, false));
    y = add(y, ffn(l.ffn, norm(l.norm_ffn, y)));
  }
  return affine(ref_linear(p.output), norm(p.decoder_norm, y));
}

/// Mean cross-entropy of labels target + [EOS].
inline double transformer_loss(const rfadoc::Model<double>& m, const std::vector<int>& source,
                               const std::vector<int>& target) {
  const Mat logits = transformer_logits(m, source, target);
  std::vector<int> labels = target;
  labels.push_back(rfadoc::kEos);
  double total = 0;
  for (std::size_t t = 0; t < labels.size(); ++t) {
    double mx = logits[t][0];
    for (double v : logits[t]) mx = std::max(mx, v);
    double z = 0;
    for (double v : logits[t]) z += std::exp(v - mx);
    total += -(logits[t][static_cast<std::size_t>(labels[t])] - mx - std::log(z));
  }
  return total / double(labels.size());
}

// BLEU pieces -----------------------------------------------------------------

/// Clipped n-gram matches and hypothesis n-gram count, by exhaustive pairwise
/// comparison of windows.
inline std::pair<long, long> clipped_matches(const std::vector<int>& hyp, const std::vector<int>& ref, std::size_t n) {
  if (hyp.size() < n) return {0, 0};
  const std::size_t H = hyp.size() - n + 1;
  const std::size_t R = ref.size() >= n ? ref.size() - n + 1 : 0;
  auto same = [&](const std::vector<int>& a, std::size_t i, const std::vector<int>& b, std::size_t j) {
    for (std::size_t k = 0; k < n; ++k)
      if (a[i + k] != b[j + k]) return false;
    return true;
  };
  std::vector<bool> used(R, false);
  long matches = 0;
  for (std::size_t i = 0; i < H; ++i)
    for (std::size_t j = 0; j < R; ++j)
      if (!used[j] && same(hyp, i, ref, j)) {
        used[j] = true;
        ++matches;
        break;
      }
  return {matches, static_cast<long>(H)};
}

}  // namespace oracle
