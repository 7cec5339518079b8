#include "rfadoc/attention.hpp"

#include "support/generators.hpp"
#include "support/oracles.hpp"

#include <doctest.h>

using namespace rfadoc;

namespace {

FeatureMap<double> make_map(int d, int D, std::uint64_t seed, double sigma = 1.0) {
  FeatureMapSpec s;
  s.input_dim = d;
  s.num_base_features = D;
  s.bandwidth = sigma;
  s.seed = seed;
  return sample_feature_map(s);
}

oracle::Mat rows(const Matrix<double>& m) { return oracle::from_eigen(m); }

GateParams<double> gate(GateVariant v, const Vector<double>& w, double b) { return {w, b, v}; }

double max_diff(const Matrix<double>& a, const oracle::Mat& b) {
  double worst = 0;
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < a.cols(); ++j) worst = std::max(worst, std::abs(a(i, j) - b[i][j]));
  return worst;
}

}  // namespace

TEST_CASE("softmax attention matches the brute-force sum") {
  gen::Rng rng(1);
  for (int trial = 0; trial < 10; ++trial) {
    const int n = gen::uniform(rng, 1, 12), d = gen::uniform(rng, 1, 6), dv = gen::uniform(rng, 1, 5);
    const auto q = gen::normal_vec(rng, d);
    const auto K = gen::normal(rng, n, d), V = gen::normal(rng, n, dv);
    const Vector<double> got = softmax_attention(q, K, V, 0.7);
    const auto expect = oracle::softmax_attention(oracle::from_eigen(Vector<double>(q)), rows(K), rows(V), 0.7);
    for (int j = 0; j < dv; ++j) CHECK(got(j) == doctest::Approx(expect[j]).epsilon(1e-12));
  }
}

TEST_CASE("softmax attention survives huge logits") {
  Matrix<double> K(2, 1), V(2, 1);
  K << 1000, -1000;
  V << 3, 5;
  Vector<double> q(1);
  q << 1;
  CHECK(softmax_attention(q, K, V, 1.0)(0) == doctest::Approx(3.0));
}

TEST_CASE("softmax attention rejects bad shapes") {
  Vector<double> q = Vector<double>::Ones(2);
  CHECK_THROWS_AS(softmax_attention(q, Matrix<double>(0, 2), Matrix<double>(0, 2), 1.0), InvalidArgument);
  CHECK_THROWS_AS(softmax_attention(q, Matrix<double>::Ones(3, 2), Matrix<double>::Ones(2, 2), 1.0), DimensionMismatch);
  CHECK_THROWS_AS(softmax_attention(q, Matrix<double>::Ones(3, 3), Matrix<double>::Ones(3, 2), 1.0), DimensionMismatch);
  CHECK_THROWS_AS(softmax_attention(q, Matrix<double>::Ones(3, 2), Matrix<double>::Ones(3, 2), 0.0), InvalidArgument);
}

TEST_CASE("normalize_rows leaves zero rows alone") {
  Matrix<double> x(2, 2);
  x << 3, 4, 0, 0;
  const Matrix<double> n = normalize_rows(x);
  CHECK(n(0, 0) == doctest::Approx(0.6));
  CHECK(n(0, 1) == doctest::Approx(0.8));
  CHECK(n.row(1).isZero());
}

TEST_CASE("rfa cross attention matches the per-query feature sum") {
  gen::Rng rng(2);
  const auto map = make_map(4, 16, 3);
  const auto Q = gen::normal(rng, 5, 4), K = gen::normal(rng, 7, 4), V = gen::normal(rng, 7, 3);
  const Matrix<double> got = rfa_cross_attention(map, Q, K, V);
  const auto w = rows(map.projection);
  for (Eigen::Index t = 0; t < Q.rows(); ++t) {
    const auto fq = oracle::features(w, oracle::unit(oracle::from_eigen(Vector<double>(Q.row(t).transpose()))));
    oracle::Vec num(3, 0.0);
    double den = 0;
    for (Eigen::Index i = 0; i < K.rows(); ++i) {
      const double a = oracle::dot(fq, oracle::features(w, oracle::unit(oracle::from_eigen(Vector<double>(K.row(i).transpose())))));
      den += a;
      for (int j = 0; j < 3; ++j) num[j] += a * V(i, j);
    }
    for (int j = 0; j < 3; ++j) CHECK(got(t, j) == doctest::Approx(num[j] / std::max(den, 1e-6)).epsilon(1e-10));
  }
  CHECK_THROWS_AS(rfa_cross_attention(map, Matrix<double>(0, 4), K, V), InvalidArgument);
  CHECK_THROWS_AS(rfa_cross_attention(map, gen::normal(rng, 2, 3), K, V), DimensionMismatch);
}

TEST_CASE("ungated causal recurrence equals the prefix-sum evaluation") {
  gen::Rng rng(5);
  const int n = 40, d = 4;
  const auto map = make_map(d, 24, 6);
  const auto Q = gen::normal(rng, n, d), K = gen::normal(rng, n, d), V = gen::normal(rng, n, 3);
  const Matrix<double> E = gen::normal(rng, n, 5);
  const auto meta = gen::random_meta(rng, n, 0.2);
  const Matrix<double> got = rfa_causal_sequence(map, Q, K, V, E, meta, gate(GateVariant::None, Vector<double>::Zero(5), 0));
  CHECK(max_diff(got, oracle::causal_rfa(rows(map.projection), rows(Q), rows(K), rows(V))) < 1e-10);
}

TEST_CASE("gated recurrences equal their unrolled weighted sums") {
  gen::Rng rng(7);
  const int n = 30, d = 3;
  const auto map = make_map(d, 20, 8);
  for (GateVariant v : {GateVariant::SGate, GateVariant::SGateAvg}) {
    const auto Q = gen::normal(rng, n, d), K = gen::normal(rng, n, d), V = gen::normal(rng, n, 2);
    const Matrix<double> E = gen::normal(rng, n, 4);
    const auto meta = gen::random_meta(rng, n, 0.3);
    const auto params = gate(v, gen::normal_vec(rng, 4), 0.3);
    oracle::Vec f(n, 1.0), c(n, 1.0);
    for (int t = 1; t < n; ++t)
      if (meta[t]) {
        f[t] = 1.0 / (1.0 + std::exp(-(params.w_f.dot(E.row(t - 1).transpose()) + params.b_f)));
        if (v == GateVariant::SGateAvg) c[t] = 1.0 - f[t];
      }
    const auto W = oracle::unrolled_gate_weights(f, c);
    const Matrix<double> got = rfa_causal_sequence(map, Q, K, V, E, meta, params);
    const auto expect = oracle::causal_rfa(rows(map.projection), rows(Q), rows(K), rows(V),
                                           [&](std::size_t t, std::size_t i) { return W[t][i]; });
    CHECK(max_diff(got, expect) < 1e-10);
  }
}

TEST_CASE("a gate of one reduces SGATE to the ungated recurrence") {
  gen::Rng rng(12);
  const int n = 20;
  const auto map = make_map(4, 16, 1);
  const auto Q = gen::normal(rng, n, 4), K = gen::normal(rng, n, 4), V = gen::normal(rng, n, 4);
  AttentionState<double> a, b;
  const auto meta = gen::random_meta(rng, n, 0.4);
  for (int t = 0; t < n; ++t) {
    auto ra = rfa_causal_step(map, a, Q.row(t).transpose(), K.row(t).transpose(), V.row(t).transpose(), 1.0,
                              GateVariant::SGate, meta[t]);
    auto rb = rfa_causal_step(map, b, Q.row(t).transpose(), K.row(t).transpose(), V.row(t).transpose(), 1.0,
                              GateVariant::None, meta[t]);
    CHECK((ra.output - rb.output).cwiseAbs().maxCoeff() == 0.0);
    a = ra.state;
    b = rb.state;
  }
}

TEST_CASE("a zero gate at a boundary restarts the recurrence") {
  gen::Rng rng(13);
  const int n = 24, cut = 9;
  const auto map = make_map(4, 16, 2);
  const auto Q = gen::normal(rng, n, 4), K = gen::normal(rng, n, 4), V = gen::normal(rng, n, 4);
  for (GateVariant v : {GateVariant::SGate, GateVariant::SGateAvg}) {
    AttentionState<double> full, fresh;
    for (int t = 0; t < n; ++t) {
      const double f = t == cut ? 0.0 : 1.0;
      auto r = rfa_causal_step(map, full, Q.row(t).transpose(), K.row(t).transpose(), V.row(t).transpose(), f, v,
                               t == cut);
      full = r.state;
      if (t >= cut) {
        auto s = rfa_causal_step(map, fresh, Q.row(t).transpose(), K.row(t).transpose(), V.row(t).transpose(), 1.0,
                                 GateVariant::None, false);
        fresh = s.state;
        CHECK((r.output - s.output).cwiseAbs().maxCoeff() < 1e-12);
      }
    }
  }
}

TEST_CASE("the recurrent state does not grow with the sequence") {
  gen::Rng rng(14);
  const auto map = make_map(4, 8, 3);
  AttentionState<double> st;
  std::size_t size = 0;
  for (int t = 0; t < 200; ++t) {
    st = rfa_causal_step(map, st, gen::normal_vec(rng, 4), gen::normal_vec(rng, 4), gen::normal_vec(rng, 5), 1.0,
                         GateVariant::None, false)
             .state;
    if (t == 0) size = st.num_scalars();
    CHECK(st.num_scalars() == size);
  }
  CHECK(size == 16 * 5 + 16);
  CHECK(st.step == 200);
}

TEST_CASE("the denominator floor keeps outputs finite") {
  // One key: den = phi(q).phi(k) can be negative or tiny for signed features.
  const auto map = make_map(2, 1, 1);
  gen::Rng rng(15);
  for (int i = 0; i < 200; ++i) {
    auto r = rfa_causal_step(map, AttentionState<double>(), gen::normal_vec(rng, 2), gen::normal_vec(rng, 2),
                             gen::normal_vec(rng, 2), 1.0, GateVariant::None, true);
    CHECK(r.output.allFinite());
  }
  CHECK(stabilized(-3.0) == kDenominatorFloor);
  CHECK(stabilized(2.0) == 2.0);
}

TEST_CASE("causal step rejects bad inputs") {
  const auto map = make_map(3, 4, 1);
  const Vector<double> ok = Vector<double>::Ones(3);
  Vector<double> nan = ok;
  nan(1) = std::nan("");
  CHECK_THROWS_AS(rfa_causal_step(map, AttentionState<double>(), nan, ok, ok, 1.0, GateVariant::None, false), InvalidArgument);
  CHECK_THROWS_AS(rfa_causal_step(map, AttentionState<double>(), ok, ok, ok, 1.5, GateVariant::None, false), InvalidArgument);
  CHECK_THROWS_AS(rfa_causal_step(map, AttentionState<double>(), ok, ok, ok, -0.1, GateVariant::None, false), InvalidArgument);
  CHECK_THROWS_AS(rfa_causal_step(map, AttentionState<double>(), Vector<double>::Ones(2), ok, ok, 1.0, GateVariant::None, false),
                  DimensionMismatch);
  auto st = rfa_causal_step(map, AttentionState<double>(), ok, ok, ok, 1.0, GateVariant::None, false).state;
  CHECK_THROWS_AS(rfa_causal_step(map, st, ok, ok, Vector<double>::Ones(4), 1.0, GateVariant::None, false), DimensionMismatch);
  CHECK_THROWS_AS(rfa_causal_sequence(map, Matrix<double>::Ones(3, 3), Matrix<double>::Ones(2, 3), Matrix<double>::Ones(3, 3),
                                      Matrix<double>::Ones(3, 1), sentence_starts({4, 5, 6}),
                                      gate(GateVariant::None, Vector<double>::Zero(1), 0)),
                  DimensionMismatch);
}

TEST_CASE("gates fire only at sentence starts of gated variants") {
  Vector<double> w(2);
  w << 1, -1;
  Vector<double> e(2);
  e << 0.5, 0.25;
  CHECK(compute_gate(gate(GateVariant::SGate, w, 0.1), e, false) == 1.0);
  CHECK(compute_gate(gate(GateVariant::None, w, 0.1), e, true) == 1.0);
  CHECK(compute_gate(gate(GateVariant::SGate, w, 0.1), e, true) == doctest::Approx(1 / (1 + std::exp(-0.35))));
  CHECK_THROWS_AS(compute_gate(gate(GateVariant::SGate, w, 0.1), Vector<double>::Ones(3), true), DimensionMismatch);
  CHECK(averaging_boundary(GateVariant::SGateAvg, true, 0.5));
  CHECK_FALSE(averaging_boundary(GateVariant::SGateAvg, true, 1.0));
  CHECK_FALSE(averaging_boundary(GateVariant::SGate, true, 0.5));
  CHECK_FALSE(averaging_boundary(GateVariant::SGateAvg, false, 0.5));
}

TEST_CASE("sentence starts follow separators") {
  const auto m = sentence_starts({4, 5, kSep, 6, kSep, kSep, 7});
  CHECK(m.is_sentence_start == std::vector<bool>{true, false, false, true, false, true, true});
  CHECK(sentence_starts({}).size() == 0);
}

TEST_CASE("gate variant names round-trip") {
  for (GateVariant v : {GateVariant::None, GateVariant::SGate, GateVariant::SGateAvg})
    CHECK(parse_gate_variant(to_string(v)) == v);
  CHECK_THROWS_AS(parse_gate_variant("sgate_avg"), InvalidArgument);
}
