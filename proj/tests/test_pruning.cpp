#include <cmath>
#include <numeric>
#include <random>

#include "doctest.h"
#include "fixtures.hpp"
#include "linpatch/errors.hpp"
#include "linpatch/eval.hpp"
#include "linpatch/pruning.hpp"
#include "oracles.hpp"

using namespace linpatch;

namespace {

Trace random_trace(std::size_t layers, std::size_t batch, std::size_t len, std::size_t c, std::mt19937_64& rng) {
  Trace t{batch, len, {}};
  std::normal_distribution<float> nd;
  t.states.emplace_back(Shape{batch, len, c});
  for (auto& v : t.states[0].values()) v = nd(rng);
  for (std::size_t l = 0; l < layers; ++l) {
    TensorF next = t.states.back();
    const float s = std::uniform_real_distribution<float>(0.05f, 2.0f)(rng);
    for (auto& v : next.values()) v += s * nd(rng);
    t.states.push_back(std::move(next));
  }
  return t;
}

// Per-sample cosine, scalar loops.
double oracle_score(const Trace& t, std::size_t l, std::size_t n) {
  const auto& a = t.states[l];
  const auto& b = t.states[l + n];
  const std::size_t per = a.numel() / t.batch;
  double acc = 0;
  for (std::size_t i = 0; i < t.batch; ++i) {
    long double dot = 0, na = 0, nb = 0;
    for (std::size_t j = 0; j < per; ++j) {
      dot += static_cast<long double>(a[i * per + j]) * b[i * per + j];
      na += static_cast<long double>(a[i * per + j]) * a[i * per + j];
      nb += static_cast<long double>(b[i * per + j]) * b[i * per + j];
    }
    acc += static_cast<double>(dot / std::sqrt(na * nb));
  }
  return acc / static_cast<double>(t.batch);
}

std::size_t brute_force_block(const Trace& t, std::size_t n) {
  std::size_t best = 0;
  double best_score = -2;
  for (std::size_t l = 0; l + n <= t.n_layers(); ++l) {
    const double s = cosine_block_score(t, l, n);
    if (s > best_score) {
      best_score = s;
      best = l;
    }
  }
  return best;
}

}  // namespace

TEST_CASE("cosine score trivial cases") {
  std::mt19937_64 rng(1);
  auto t = random_trace(3, 2, 4, 8, rng);
  t.states[2] = t.states[1];
  CHECK(cosine_block_score(t, 1, 1) == doctest::Approx(1.0).epsilon(1e-12));
  for (auto& v : t.states[2].values()) v = -v;
  CHECK(cosine_block_score(t, 1, 1) == doctest::Approx(-1.0).epsilon(1e-12));
  Trace empty;
  CHECK_THROWS_AS(cosine_block_score(empty, 0, 1), InputError);
  CHECK_THROWS_AS(cosine_block_score(t, 2, 2), InputError);
}

TEST_CASE("cosine score matches scalar oracle") {
  std::mt19937_64 rng(2);
  for (int rep = 0; rep < 10; ++rep) {
    const auto t = random_trace(5, 3, 6, 8, rng);
    for (std::size_t n = 1; n <= 4; ++n)
      for (std::size_t l = 0; l + n <= 5; ++l) CHECK(std::abs(cosine_block_score(t, l, n) - oracle_score(t, l, n)) < 1e-6);
  }
}

TEST_CASE("block selection agrees with brute force and is scale invariant") {
  std::mt19937_64 rng(3);
  for (int rep = 0; rep < 50; ++rep) {
    const std::size_t layers = 2 + rng() % 7;
    const auto t = random_trace(layers, 2, 4, 8, rng);
    for (std::size_t n = 1; n <= std::min<std::size_t>(4, layers - 1); ++n) {
      const auto s = select_prune_block(t, n);
      REQUIRE(s.l_star);
      CHECK(*s.l_star == brute_force_block(t, n));
      CHECK(s.selected.size() == n);
      validate_spec(s, layers);
      Trace scaled = t;
      for (auto& st : scaled.states)
        for (auto& v : st.values()) v *= 4.0f;
      CHECK(select_prune_block(scaled, n).selected == s.selected);
    }
  }
}

TEST_CASE("block selection ties go to the smallest start") {
  std::mt19937_64 rng(4);
  auto t = random_trace(4, 1, 4, 8, rng);
  for (auto& s : t.states) s = t.states[0];
  const auto spec = select_prune_block(t, 2);
  CHECK(*spec.l_star == 0);
  CHECK_THROWS_AS(select_prune_block(t, 4), InputError);
  const auto boundary = select_prune_block(t, 3);
  CHECK(boundary.scores.size() == 2);
}

TEST_CASE("an identity layer is selected") {
  std::mt19937_64 rng(5);
  auto m = fixture::tiny_model<float>(1, 5);
  m.layers[3].wo = TensorF(m.layers[3].wo.shape());
  m.layers[3].w2 = TensorF(m.layers[3].w2.shape());
  const auto [_, trace] = forward_traced(m, fixture::random_tokens(4, 8, 32, rng));
  CHECK(select_prune_block(trace, 1).selected == std::vector<std::size_t>{3});
  m.layers[1].wo = TensorF(m.layers[1].wo.shape());
  m.layers[1].w2 = TensorF(m.layers[1].w2.shape());
  const auto [__, t2] = forward_traced(m, fixture::random_tokens(4, 8, 32, rng));
  CHECK(select_noncontiguous(t2, 2).selected == std::vector<std::size_t>{1, 3});
}

TEST_CASE("noncontiguous selection matches sort oracle") {
  std::mt19937_64 rng(6);
  for (int rep = 0; rep < 50; ++rep) {
    const std::size_t layers = 2 + rng() % 7;
    const auto t = random_trace(layers, 2, 4, 8, rng);
    for (std::size_t n = 0; n <= std::min<std::size_t>(4, layers - 1); ++n) {
      std::vector<std::pair<double, std::size_t>> ranked;
      for (std::size_t l = 0; l < layers; ++l) ranked.push_back({-oracle_score(t, l, 1), l});
      std::sort(ranked.begin(), ranked.end());
      std::vector<std::size_t> expect;
      for (std::size_t i = 0; i < n; ++i) expect.push_back(ranked[i].second);
      std::sort(expect.begin(), expect.end());
      CHECK(select_noncontiguous(t, n).selected == expect);
    }
  }
}

TEST_CASE("prune_layers semantics") {
  std::mt19937_64 rng(7);
  const auto m = fixture::tiny_model<float>(2, 6);
  const auto toks = fixture::random_tokens(2, 8, 32, rng);
  PruneSpec empty;
  empty.source_layers = 6;
  CHECK(forward(prune_layers(m, empty), toks) == forward(m, toks));

  PruneSpec s;
  s.mode = PruneMode::kNoncontiguousCosine;
  s.n = 2;
  s.selected = {1, 4};
  s.source_layers = 6;
  const auto p = prune_layers(m, s);
  CHECK(p.config.n_layers == 4);
  CHECK(p.layers[0] == m.layers[0]);
  CHECK(p.layers[1] == m.layers[2]);
  CHECK(p.layers[2] == m.layers[3]);
  CHECK(p.layers[3] == m.layers[5]);
  // replay: skip the selected layers by hand
  Tape<float> tape;
  const auto b = bind(tape, m, Trainable::kNone);
  std::vector<Var<float>> inputs;
  forward_on_tape(b, toks, &inputs);
  TensorF h = inputs[0].value();
  for (std::size_t l : {0u, 2u, 3u, 5u}) h = add(h, layer_update(m, l, h));
  CHECK(fixture::rel_diff(h, forward_traced(p, toks).second.states.back()) < 1e-6);
  // already applied: identity
  CHECK(prune_layers(p, s) == p);
  s.selected = {1, 6};
  CHECK_THROWS_AS(prune_layers(m, s), InputError);
}

TEST_CASE("spec json round trip and validation") {
  PruneSpec s;
  s.mode = PruneMode::kContiguousCosine;
  s.n = 2;
  s.selected = {3, 4};
  s.l_star = 3;
  s.source_layers = 8;
  s.scores = {0.1, 0.2};
  CHECK(spec_from_json(spec_to_json(s)) == s);
  auto j = spec_to_json(s);
  j["selected"] = {3, 5};
  CHECK_THROWS_AS(spec_from_json(j), InputError);
  j = spec_to_json(s);
  j.erase("mode");
  CHECK_THROWS_AS(spec_from_json(j), FormatError);
  CHECK_THROWS_AS(parse_prune_mode("bogus"), InputError);
}

TEST_CASE("interface slots") {
  PruneSpec s;
  s.mode = PruneMode::kContiguousCosine;
  s.n = 2;
  s.selected = {3, 4};
  s.l_star = 3;
  auto slots = interface_slots(s);
  REQUIRE(slots.size() == 1);
  CHECK(slots[0].layer == 3);
  s.mode = PruneMode::kNoncontiguousCosine;
  s.n = 3;
  s.selected = {1, 2, 5};
  slots = interface_slots(s);
  REQUIRE(slots.size() == 3);
  CHECK((slots[0].layer == 1 && slots[0].order == 0));
  CHECK((slots[1].layer == 1 && slots[1].order == 1));
  CHECK((slots[2].layer == 3 && slots[2].order == 0));
}

TEST_CASE("perplexity greedy selection") {
  std::mt19937_64 rng(8);
  auto m = fixture::tiny_model<float>(3, 4);
  m.layers[2].wo = TensorF(m.layers[2].wo.shape());
  m.layers[2].w2 = TensorF(m.layers[2].w2.shape());
  TokenStream corpus;
  for (int i = 0; i < 400; ++i) corpus.push_back(static_cast<std::uint32_t>(rng() % 32));
  const auto s = select_ppl_greedy(m, corpus, 1, 16);
  // one round equals the exhaustive single-removal sweep
  std::vector<double> sweep;
  for (std::size_t l = 0; l < 4; ++l) {
    PruneSpec one;
    one.mode = PruneMode::kPplGreedy;
    one.n = 1;
    one.selected = {l};
    one.source_layers = 4;
    sweep.push_back(perplexity(prune_layers(m, one), corpus, 16));
  }
  CHECK(s.scores == sweep);
  // removing the identity layer leaves perplexity unchanged
  CHECK(sweep[2] == perplexity(m, corpus, 16));
  const auto best = static_cast<std::size_t>(std::min_element(sweep.begin(), sweep.end()) - sweep.begin());
  CHECK(s.selected == std::vector<std::size_t>{best});
  const auto two = fixture::tiny_model<float>(4, 2);
  const auto s2 = select_ppl_greedy(two, corpus, 1, 16);
  PruneSpec a{PruneMode::kPplGreedy, 1, {0}, std::nullopt, 2, {}};
  PruneSpec b{PruneMode::kPplGreedy, 1, {1}, std::nullopt, 2, {}};
  const double pa = perplexity(prune_layers(two, a), corpus, 16), pb = perplexity(prune_layers(two, b), corpus, 16);
  CHECK(s2.selected.front() == (pa <= pb ? 0u : 1u));
  CHECK_THROWS_AS(select_ppl_greedy(two, corpus, 2, 16), InputError);
}
