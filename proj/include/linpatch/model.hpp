#pragma once

#include <compare>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "linpatch/autodiff.hpp"
#include "linpatch/tensor.hpp"

namespace linpatch {

struct ModelConfig {
  std::size_t n_layers = 8;
  std::size_t hidden_dim = 128;
  std::size_t n_heads = 4;
  std::size_t mlp_dim = 512;
  std::size_t vocab_size = 256;
  std::size_t max_seq_len = 64;
  double rms_eps = 1e-5;

  // Throws InputError on zero sizes, hidden_dim % n_heads != 0, or a hidden
  // size with no Hadamard construction.
  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

template <typename T>
struct LayerWeights {
  Tensor<T> attn_norm;  // [C]
  Tensor<T> wqkv;       // [C, 3C]
  Tensor<T> wo;         // [C, C]
  Tensor<T> mlp_norm;   // [C]
  Tensor<T> w1;         // [C, M]
  Tensor<T> w2;         // [M, C]

  bool operator==(const LayerWeights&) const = default;
};

// Position of a patch in the residual stream: applied to the hidden state right
// before layer `layer` (== n_layers means before the final norm). `order`
// distinguishes several patches stacked at the same interface; they apply in
// increasing order.
struct SlotKey {
  std::size_t layer = 0;
  std::size_t order = 0;
  auto operator<=>(const SlotKey&) const = default;
};

template <typename T>
struct PatchMatrix {
  Tensor<T> matrix;                  // [C, C], hidden <- hidden * matrix
  std::optional<Tensor<T>> scaling;  // d it was fused from, if any
  bool rotated = false;              // matrix == H diag(d) H^T
  bool trained = false;              // symmetry no longer guaranteed

  bool operator==(const PatchMatrix&) const = default;
};

template <typename T>
struct TransformerModel {
  ModelConfig config;
  Tensor<T> token_embedding;     // [V, C]
  Tensor<T> position_embedding;  // [L_max, C]
  std::vector<LayerWeights<T>> layers;
  Tensor<T> final_norm;  // [C]
  Tensor<T> lm_head;     // [C, V]
  std::map<SlotKey, PatchMatrix<T>> patch_slots;

  // Normal(0, 0.02) weights, unit norm gains, no patches.
  static TransformerModel init(const ModelConfig& config, std::uint64_t seed);

  template <typename U>
  TransformerModel<U> cast() const;

  std::size_t parameter_count() const;
  bool operator==(const TransformerModel&) const = default;
};

using Model = TransformerModel<float>;

// Token ids laid out [batch, seq_len].
struct TokenBatch {
  std::size_t batch = 0;
  std::size_t seq_len = 0;
  std::vector<std::uint32_t> ids;
};

// Inputs X^(l) received by every layer plus the final hidden state, each [B, L, C].
template <typename T>
struct HiddenTrace {
  std::size_t batch = 0;
  std::size_t seq_len = 0;
  std::vector<Tensor<T>> states;

  std::size_t n_layers() const { return states.empty() ? 0 : states.size() - 1; }
  std::size_t hidden_dim() const { return states.empty() ? 0 : states.front().dim(2); }
  bool operator==(const HiddenTrace&) const = default;
};

using Trace = HiddenTrace<float>;

enum class Trainable { kNone, kAll, kPatches };

// Model weights recorded as tape leaves.
template <typename T>
struct BoundModel {
  struct Layer {
    Var<T> attn_norm, wqkv, wo, mlp_norm, w1, w2;
  };
  const ModelConfig* config = nullptr;
  Var<T> token_embedding, position_embedding;
  std::vector<Layer> layers;
  Var<T> final_norm, lm_head;
  std::map<SlotKey, Var<T>> patches;
};

template <typename T>
BoundModel<T> bind(Tape<T>& tape, const TransformerModel<T>& model, Trainable trainable);

// Records embedding + all layers + head. When `layer_inputs` is non-null it
// receives one Var per layer input plus the post-final-layer hidden state.
template <typename T>
Var<T> forward_on_tape(const BoundModel<T>& bound, const TokenBatch& tokens,
                       std::vector<Var<T>>* layer_inputs = nullptr);

// Records layers [start, n_layers) and the head starting from the hidden state
// received by layer `start`. Patches at slots <= start are not re-applied.
template <typename T>
Var<T> forward_from_on_tape(const BoundModel<T>& bound, Var<T> hidden, std::size_t start,
                            std::vector<Var<T>>* layer_inputs = nullptr);

// logits [B, L, V]
template <typename T>
Tensor<T> forward(const TransformerModel<T>& model, const TokenBatch& tokens);

template <typename T>
std::pair<Tensor<T>, HiddenTrace<T>> forward_traced(const TransformerModel<T>& model, const TokenBatch& tokens);

// Replays layers [start, n_layers) from the hidden state layer `start` received.
template <typename T>
Tensor<T> forward_from(const TransformerModel<T>& model, const Tensor<T>& hidden, std::size_t start);

// f(X; theta) of one layer, i.e. its residual update.
template <typename T>
Tensor<T> layer_update(const TransformerModel<T>& model, std::size_t layer, const Tensor<T>& hidden);

void validate_tokens(const ModelConfig& config, const TokenBatch& tokens);

}  // namespace linpatch
