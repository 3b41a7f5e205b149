#include "linpatch/model.hpp"

#include <random>
#include <string>

#include "linpatch/hadamard.hpp"

namespace linpatch {

void ModelConfig::validate() const {
  if (n_layers > 4096 || hidden_dim < 2 || n_heads == 0 || mlp_dim == 0 || vocab_size == 0 || max_seq_len == 0) {
    throw InputError("invalid model config: sizes must be positive and hidden_dim >= 2");
  }
  if (hidden_dim % n_heads != 0) {
    throw InputError("hidden_dim " + std::to_string(hidden_dim) + " is not divisible by n_heads " +
                     std::to_string(n_heads));
  }
  if (!factor_hadamard(hidden_dim)) {
    throw InputError("hidden_dim " + std::to_string(hidden_dim) + " has no supported Hadamard construction");
  }
  if (!(rms_eps > 0)) throw InputError("rms_eps must be positive");
}

template <typename T>
TransformerModel<T> TransformerModel<T>::init(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  const std::size_t c = config.hidden_dim, m = config.mlp_dim, v = config.vocab_size;
  std::mt19937_64 rng(seed);
  constexpr double kStd = 0.02;
  TransformerModel<T> model;
  model.config = config;
  model.token_embedding = Tensor<T>::randn({v, c}, rng, kStd);
  model.position_embedding = Tensor<T>::randn({config.max_seq_len, c}, rng, kStd);
  for (std::size_t l = 0; l < config.n_layers; ++l) {
    LayerWeights<T> w;
    w.attn_norm = Tensor<T>::ones({c});
    w.wqkv = Tensor<T>::randn({c, 3 * c}, rng, kStd);
    w.wo = Tensor<T>::randn({c, c}, rng, kStd);
    w.mlp_norm = Tensor<T>::ones({c});
    w.w1 = Tensor<T>::randn({c, m}, rng, kStd);
    w.w2 = Tensor<T>::randn({m, c}, rng, kStd);
    model.layers.push_back(std::move(w));
  }
  model.final_norm = Tensor<T>::ones({c});
  model.lm_head = Tensor<T>::randn({c, v}, rng, kStd);
  return model;
}

template <typename T>
template <typename U>
TransformerModel<U> TransformerModel<T>::cast() const {
  TransformerModel<U> out;
  out.config = config;
  out.token_embedding = token_embedding.template cast<U>();
  out.position_embedding = position_embedding.template cast<U>();
  for (const auto& w : layers) {
    out.layers.push_back({w.attn_norm.template cast<U>(), w.wqkv.template cast<U>(), w.wo.template cast<U>(),
                          w.mlp_norm.template cast<U>(), w.w1.template cast<U>(), w.w2.template cast<U>()});
  }
  out.final_norm = final_norm.template cast<U>();
  out.lm_head = lm_head.template cast<U>();
  for (const auto& [key, p] : patch_slots) {
    PatchMatrix<U> q;
    q.matrix = p.matrix.template cast<U>();
    if (p.scaling) q.scaling = p.scaling->template cast<U>();
    q.rotated = p.rotated;
    q.trained = p.trained;
    out.patch_slots.emplace(key, std::move(q));
  }
  return out;
}

template <typename T>
std::size_t TransformerModel<T>::parameter_count() const {
  std::size_t n = token_embedding.numel() + position_embedding.numel() + final_norm.numel() + lm_head.numel();
  for (const auto& w : layers)
    n += w.attn_norm.numel() + w.wqkv.numel() + w.wo.numel() + w.mlp_norm.numel() + w.w1.numel() + w.w2.numel();
  return n;
}

void validate_tokens(const ModelConfig& config, const TokenBatch& tokens) {
  if (tokens.ids.size() != tokens.batch * tokens.seq_len) {
    throw InputError("token batch holds " + std::to_string(tokens.ids.size()) + " ids, expected " +
                     std::to_string(tokens.batch) + "x" + std::to_string(tokens.seq_len));
  }
  if (tokens.seq_len > config.max_seq_len) {
    throw InputError("sequence length " + std::to_string(tokens.seq_len) + " exceeds model maximum " +
                     std::to_string(config.max_seq_len));
  }
  for (auto id : tokens.ids) {
    if (id >= config.vocab_size) {
      throw InputError("token id " + std::to_string(id) + " out of range for vocab " +
                       std::to_string(config.vocab_size));
    }
  }
}

template <typename T>
BoundModel<T> bind(Tape<T>& tape, const TransformerModel<T>& model, Trainable trainable) {
  const bool all = trainable == Trainable::kAll;
  BoundModel<T> b;
  b.config = &model.config;
  b.token_embedding = tape.leaf(model.token_embedding, all);
  b.position_embedding = tape.leaf(model.position_embedding, all);
  for (const auto& w : model.layers) {
    b.layers.push_back({tape.leaf(w.attn_norm, all), tape.leaf(w.wqkv, all), tape.leaf(w.wo, all),
                        tape.leaf(w.mlp_norm, all), tape.leaf(w.w1, all), tape.leaf(w.w2, all)});
  }
  b.final_norm = tape.leaf(model.final_norm, all);
  b.lm_head = tape.leaf(model.lm_head, all);
  for (const auto& [key, p] : model.patch_slots) {
    b.patches.emplace(key, tape.leaf(p.matrix, trainable == Trainable::kPatches));
  }
  return b;
}

namespace {

template <typename T>
Var<T> apply_patches(const BoundModel<T>& b, std::size_t layer, Var<T> h) {
  for (auto it = b.patches.lower_bound(SlotKey{layer, 0}); it != b.patches.end() && it->first.layer == layer; ++it) {
    h = matmul(h, it->second);
  }
  return h;
}

template <typename T>
Var<T> apply_layer(const BoundModel<T>& b, std::size_t l, Var<T> h) {
  const auto& w = b.layers[l];
  const ModelConfig& cfg = *b.config;
  Var<T> a = rms_norm(h, w.attn_norm, cfg.rms_eps);
  Var<T> att = causal_attention(matmul(a, w.wqkv), cfg.n_heads);
  h = add(h, matmul(att, w.wo));
  Var<T> m = rms_norm(h, w.mlp_norm, cfg.rms_eps);
  return add(h, matmul(gelu(matmul(m, w.w1)), w.w2));
}

}  // namespace

template <typename T>
Var<T> forward_from_on_tape(const BoundModel<T>& b, Var<T> hidden, std::size_t start,
                            std::vector<Var<T>>* layer_inputs) {
  const std::size_t n = b.layers.size();
  if (start > n) throw InputError("replay start layer " + std::to_string(start) + " beyond " + std::to_string(n));
  if (hidden.value().rank() != 3 || hidden.value().dim(2) != b.config->hidden_dim) {
    throw InputError("hidden state shape " + shape_str(hidden.value().shape()) + " does not match hidden_dim " +
                     std::to_string(b.config->hidden_dim));
  }
  Var<T> h = hidden;
  for (std::size_t l = start; l < n; ++l) {
    if (l > start) h = apply_patches(b, l, h);
    if (layer_inputs) layer_inputs->push_back(h);
    h = apply_layer(b, l, h);
  }
  if (n > start) h = apply_patches(b, n, h);
  if (layer_inputs) layer_inputs->push_back(h);
  return matmul(rms_norm(h, b.final_norm, b.config->rms_eps), b.lm_head);
}

template <typename T>
Var<T> forward_on_tape(const BoundModel<T>& b, const TokenBatch& tokens, std::vector<Var<T>>* layer_inputs) {
  validate_tokens(*b.config, tokens);
  std::vector<std::uint32_t> positions(tokens.ids.size());
  for (std::size_t i = 0; i < positions.size(); ++i) positions[i] = static_cast<std::uint32_t>(i % tokens.seq_len);
  const Shape prefix{tokens.batch, tokens.seq_len};
  Var<T> h = add(embedding(b.token_embedding, tokens.ids, prefix), embedding(b.position_embedding, positions, prefix));
  h = apply_patches(b, 0, h);
  return forward_from_on_tape(b, h, 0, layer_inputs);
}

template <typename T>
Tensor<T> forward(const TransformerModel<T>& model, const TokenBatch& tokens) {
  Tape<T> tape;
  auto b = bind(tape, model, Trainable::kNone);
  return forward_on_tape(b, tokens).value();
}

template <typename T>
std::pair<Tensor<T>, HiddenTrace<T>> forward_traced(const TransformerModel<T>& model, const TokenBatch& tokens) {
  Tape<T> tape;
  auto b = bind(tape, model, Trainable::kNone);
  std::vector<Var<T>> inputs;
  Var<T> logits = forward_on_tape(b, tokens, &inputs);
  HiddenTrace<T> trace;
  trace.batch = tokens.batch;
  trace.seq_len = tokens.seq_len;
  for (const auto& v : inputs) trace.states.push_back(v.value());
  return {logits.value(), std::move(trace)};
}

template <typename T>
Tensor<T> forward_from(const TransformerModel<T>& model, const Tensor<T>& hidden, std::size_t start) {
  Tape<T> tape;
  auto b = bind(tape, model, Trainable::kNone);
  return forward_from_on_tape(b, tape.leaf(hidden), start).value();
}

template <typename T>
Tensor<T> layer_update(const TransformerModel<T>& model, std::size_t layer, const Tensor<T>& hidden) {
  if (layer >= model.layers.size()) throw InputError("layer index " + std::to_string(layer) + " out of range");
  Tape<T> tape;
  auto b = bind(tape, model, Trainable::kNone);
  Var<T> h = tape.leaf(hidden);
  return sub(apply_layer(b, layer, h), h).value();
}

#define LINPATCH_INSTANTIATE(T)                                                                              \
  template struct TransformerModel<T>;                                                                       \
  template BoundModel<T> bind(Tape<T>&, const TransformerModel<T>&, Trainable);                              \
  template Var<T> forward_on_tape(const BoundModel<T>&, const TokenBatch&, std::vector<Var<T>>*);            \
  template Var<T> forward_from_on_tape(const BoundModel<T>&, Var<T>, std::size_t, std::vector<Var<T>>*);     \
  template Tensor<T> forward(const TransformerModel<T>&, const TokenBatch&);                                 \
  template std::pair<Tensor<T>, HiddenTrace<T>> forward_traced(const TransformerModel<T>&, const TokenBatch&); \
  template Tensor<T> forward_from(const TransformerModel<T>&, const Tensor<T>&, std::size_t);                \
  template Tensor<T> layer_update(const TransformerModel<T>&, std::size_t, const Tensor<T>&);

LINPATCH_INSTANTIATE(float)
LINPATCH_INSTANTIATE(double)
#undef LINPATCH_INSTANTIATE

template TransformerModel<double> TransformerModel<float>::cast<double>() const;
template TransformerModel<float> TransformerModel<double>::cast<float>() const;
template TransformerModel<float> TransformerModel<float>::cast<float>() const;
template TransformerModel<double> TransformerModel<double>::cast<double>() const;

}  // namespace linpatch
