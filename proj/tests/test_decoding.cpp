#include "rfadoc/decoding.hpp"

#include "support/generators.hpp"

#include <doctest.h>

#include <cmath>

using namespace rfadoc;

namespace {

ModelConfig config(const std::string& variant, int vocab = 14) {
  ModelConfig c;
  c.vocab_size = vocab;
  c.d_model = 16;
  c.n_heads = 2;
  c.d_ff = 32;
  c.d_cross = 16;
  c.d_causal = 16;
  c.w_f_init_scale = 0.5;
  c.b_f_init = 0.0;
  apply_variant(c, variant);
  return c;
}

const char* kVariants[] = {"exact", "rfa", "rfa-sgate", "rfa-sgate-avg"};

Sentence target_with_separators(gen::Rng& rng, int vocab, std::size_t n) {
  Sentence t;
  while (t.size() < n) {
    const auto s = gen::sentence(rng, vocab, 1, 5);
    for (TokenId x : s)
      if (t.size() < n) t.push_back(x);
    if (t.size() < n) t.push_back(kSep);
  }
  return t;
}

}  // namespace

TEST_CASE("stepwise logits equal the full-prefix forward") {
  gen::Rng rng(1);
  for (const char* variant : kVariants) {
    CAPTURE(variant);
    const auto m = make_model<double>(config(variant));
    const Sentence src = {4, 5, kSep, 6, 7, 8};
    const Sentence tgt = target_with_separators(rng, m.config.vocab_size, 32);
    const Sentence in = decoder_input(tgt);
    const Matrix<double> full = decode_full(m, encode(m, src), in);
    auto cache = init_cache(m, src);
    double worst = 0;
    for (std::size_t t = 0; t < 32; ++t) {
      const RowVector<double> step = decode_step(m, cache, in[t]);
      worst = std::max(worst, (step - full.row(static_cast<Eigen::Index>(t))).cwiseAbs().maxCoeff());
    }
    CHECK(worst < 1e-10);
  }
}

TEST_CASE("gating at decode time follows the separators") {
  // Same tokens, but flagging a non-boundary as a start must change the output
  // of a gated model and leave an ungated one untouched.
  for (const char* variant : {"rfa", "rfa-sgate"}) {
    const auto m = make_model<double>(config(variant));
    auto a = init_cache(m, {4, 5});
    auto b = init_cache(m, {4, 5});
    decode_step(m, a, kBos);
    decode_step(m, b, kBos);
    const RowVector<double> la = decode_step(m, a, 6, false);
    const RowVector<double> lb = decode_step(m, b, 6, true);
    const double diff = (la - lb).cwiseAbs().maxCoeff();
    if (std::string(variant) == "rfa")
      CHECK(diff == 0.0);
    else
      CHECK(diff > 1e-6);
  }
}

TEST_CASE("batched steps equal single steps") {
  gen::Rng rng(2);
  for (const char* variant : kVariants) {
    const auto m = make_model<double>(config(variant));
    const std::vector<Sentence> sources = {{4, 5, 6}, {7, kSep, 8, 9, 10, 11}, {12}};
    std::vector<DecodeCache<double>> batch, single;
    for (const auto& s : sources) {
      batch.push_back(init_cache(m, s));
      single.push_back(init_cache(m, s));
    }
    std::vector<DecodeCache<double>*> ptrs;
    for (auto& c : batch) ptrs.push_back(&c);
    std::vector<TokenId> tokens(3, kBos);
    for (int step = 0; step < 12; ++step) {
      const Matrix<double> logits = decode_step_batch(m, ptrs, tokens);
      for (std::size_t b = 0; b < 3; ++b) {
        const RowVector<double> one = decode_step(m, single[b], tokens[b]);
        CHECK((one - logits.row(static_cast<Eigen::Index>(b))).cwiseAbs().maxCoeff() < 1e-12);
      }
      for (auto& t : tokens) t = gen::uniform(rng, 0, 1) ? kSep : gen::uniform(rng, kNumReserved, 13);
    }
  }
}

TEST_CASE("rfa decoding state stays constant while exact grows linearly") {
  const auto rfa = make_model<double>(config("rfa-sgate"));
  const auto exact = make_model<double>(config("exact"));
  auto rc = init_cache(rfa, {4, 5, 6});
  auto ec = init_cache(exact, {4, 5, 6});
  decode_step(rfa, rc, kBos);
  decode_step(exact, ec, kBos);
  const std::size_t rfa_bytes = rc.byte_size();
  const std::size_t exact_causal = ec.causal_entries();
  for (int t = 1; t < 100; ++t) {
    decode_step(rfa, rc, t % 7 == 0 ? kSep : 4 + t % 9);
    decode_step(exact, ec, 4 + t % 9);
  }
  CHECK(rc.byte_size() == rfa_bytes);
  CHECK(ec.causal_entries() == 100 * exact_causal);
  CHECK(ec.length == 100);
}

TEST_CASE("exact cross cache scales with the source, rfa summary does not") {
  const auto exact = make_model<double>(config("exact"));
  const auto rfa = make_model<double>(config("rfa"));
  CHECK(init_cache(exact, Sentence(20, 4)).cross_entries() == 2 * init_cache(exact, Sentence(10, 4)).cross_entries());
  CHECK(init_cache(rfa, Sentence(20, 4)).cross_entries() == init_cache(rfa, Sentence(10, 4)).cross_entries());
}

TEST_CASE("beam of one reproduces greedy decoding") {
  gen::Rng rng(3);
  for (const char* variant : kVariants) {
    for (std::uint64_t seed = 1; seed <= 4; ++seed) {
      auto c = config(variant);
      c.master_seed = seed;
      const auto m = make_model<double>(c);
      const Sentence src = gen::sentence(rng, c.vocab_size, 2, 6);
      CHECK(beam_decode(m, src, 1) == greedy_decode(m, src));
    }
  }
}

TEST_CASE("wide beam finds the best length-normalized sequence") {
  // With a beam wider than the search tree every sequence ending in EOS is
  // scored, so the result must be the exhaustive optimum.
  auto c = config("rfa-sgate", 6);
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    c.master_seed = seed;
    const auto m = make_model<double>(c);
    const Sentence src = {4, 5};
    Sentence best;
    double best_score = -1e300;
    std::vector<Sentence> frontier = {{}};
    for (int len = 0; len <= 2; ++len) {
      std::vector<Sentence> next;
      for (const auto& s : frontier) {
        const double score = sequence_log_prob(m, src, s) / double(s.size() + 1);
        if (score > best_score) {
          best_score = score;
          best = s;
        }
        for (TokenId t = 0; t < 6; ++t)
          if (t != kEos) {
            Sentence e = s;
            e.push_back(t);
            next.push_back(e);
          }
      }
      frontier = next;
    }
    CHECK(beam_decode(m, src, 1000, 3) == best);
  }
}

TEST_CASE("an immediate EOS gives an empty translation") {
  for (const char* variant : kVariants) {
    auto m = make_model<double>(config(variant));
    m.params.output.bias(0, kEos) = 100.0;
    CHECK(greedy_decode(m, {4, 5}).empty());
    CHECK(beam_decode(m, {4, 5}, 4).empty());
  }
}

TEST_CASE("ties resolve to the lowest token id") {
  RowVector<double> v(5);
  v << 1, 3, 3, 0, 3;
  CHECK(argmax_lowest(v) == 1);
  CHECK(argmax_lowest(v, 1) == 2);

  auto m = make_model<double>(config("exact"));
  m.params.output.weight.setZero();
  m.params.output.bias.setZero();
  m.params.output.bias(0, 9) = 1.0;
  m.params.output.bias(0, 7) = 1.0;
  CHECK(greedy_decode(m, {4}, 3) == Sentence{7, 7, 7});
  CHECK(beam_decode(m, {4}, 3, 3) == Sentence{7, 7, 7});
}

TEST_CASE("decoding stops at the length limit") {
  auto m = make_model<double>(config("rfa"));
  m.params.output.bias(0, kEos) = -100.0;
  CHECK(greedy_decode(m, {4, 5}, 5).size() == 5);
  CHECK(greedy_decode(m, {4, 5}).size() == default_max_length({4, 5}));
  CHECK(beam_decode(m, {4, 5}, 3, 4).size() == 4);
}

TEST_CASE("forced decoding never emits EOS and hits the exact length") {
  auto m = make_model<double>(config("rfa-sgate"));
  m.params.output.bias(0, kEos) = 100.0;
  const auto outs = forced_decode_batch(m, std::vector<Sentence>{{4, 5}, {6}}, 17);
  for (const auto& o : outs) {
    CHECK(o.size() == 17);
    CHECK(std::find(o.begin(), o.end(), kEos) == o.end());
  }
  CHECK(forced_decode(m, {6}, 17) == outs[1]);
}

TEST_CASE("forced decoding hooks run once per step") {
  const auto m = make_model<double>(config("exact"));
  int before = 0, after = 0;
  ForcedDecodeHooks<double> hooks;
  hooks.before_step = [&] { ++before; };
  hooks.after_step = [&](const std::vector<DecodeCache<double>>& caches) {
    ++after;
    CHECK(caches.size() == 2);
    CHECK(caches[0].length == static_cast<std::size_t>(after));
  };
  forced_decode_batch(m, std::vector<Sentence>{{4}, {5}}, 6, hooks);
  CHECK(before == 6);
  CHECK(after == 6);
}

TEST_CASE("decoding validates its inputs") {
  const auto m = make_model<double>(config("exact"));
  CHECK_THROWS_AS(greedy_decode(m, {4}, 0), InvalidArgument);
  CHECK_THROWS_AS(beam_decode(m, {4}, 0), InvalidArgument);
  CHECK_THROWS_AS(init_cache(m, {4, 200}), InvalidArgument);
  auto cache = init_cache(m, {4});
  CHECK_THROWS_AS(decode_step(m, cache, 200), InvalidArgument);
}

TEST_CASE("first position and post-separator positions start sentences") {
  const auto m = make_model<double>(config("rfa-sgate"));
  auto c = init_cache(m, {4});
  CHECK(next_position_starts_sentence(c));
  decode_step(m, c, kBos);
  CHECK_FALSE(next_position_starts_sentence(c));
  decode_step(m, c, kSep);
  CHECK(next_position_starts_sentence(c));
}
