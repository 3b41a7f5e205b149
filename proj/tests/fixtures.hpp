#pragma once

#include <random>

#include "linpatch/model.hpp"

namespace fixture {

inline linpatch::ModelConfig tiny_config(std::size_t layers = 4, std::size_t dim = 16, std::size_t vocab = 32) {
  linpatch::ModelConfig c;
  c.n_layers = layers;
  c.hidden_dim = dim;
  c.n_heads = 2;
  c.mlp_dim = 2 * dim;
  c.vocab_size = vocab;
  c.max_seq_len = 16;
  return c;
}

// Init weights are tiny; scale them so layers do visible work.
template <typename T>
linpatch::TransformerModel<T> tiny_model(std::uint64_t seed, std::size_t layers = 4, std::size_t dim = 16,
                                         std::size_t vocab = 32) {
  auto m = linpatch::TransformerModel<T>::init(tiny_config(layers, dim, vocab), seed);
  auto boost = [](linpatch::Tensor<T>& t, T s) {
    for (auto& v : t.values()) v *= s;
  };
  boost(m.token_embedding, T(40));
  boost(m.position_embedding, T(10));
  for (auto& w : m.layers) {
    boost(w.wqkv, T(15));
    boost(w.wo, T(15));
    boost(w.w1, T(15));
    boost(w.w2, T(15));
  }
  boost(m.lm_head, T(20));
  return m;
}

inline linpatch::TokenBatch random_tokens(std::size_t batch, std::size_t len, std::size_t vocab,
                                          std::mt19937_64& rng) {
  linpatch::TokenBatch b{batch, len, {}};
  std::uniform_int_distribution<std::uint32_t> d(0, static_cast<std::uint32_t>(vocab - 1));
  for (std::size_t i = 0; i < batch * len; ++i) b.ids.push_back(d(rng));
  return b;
}

// Relative max-abs difference.
template <typename T>
double rel_diff(const linpatch::Tensor<T>& a, const linpatch::Tensor<T>& b) {
  double m = 0, d = 0;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    m = std::max(m, std::abs(static_cast<double>(a[i])));
    d = std::max(d, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
  }
  return m > 0 ? d / m : d;
}

}  // namespace fixture
