#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <span>
#include <vector>

#include "linpatch/tensor.hpp"

namespace linpatch {

template <typename T>
class Tape;

// Handle to a value recorded on a Tape.
template <typename T>
class Var {
 public:
  Var() = default;
  Var(Tape<T>* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape<T>* tape() const { return tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

  const Tensor<T>& value() const { return tape_->value(id_); }
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const { return tape_->requires_grad(id_); }

 private:
  Tape<T>* tape_ = nullptr;
  std::size_t id_ = 0;
};

// Ordered record of differentiable operations. Confined to one thread.
//
// A node requires a gradient iff it is a leaf flagged requires_grad or any of
// its inputs requires one; backward closures are only kept for such nodes, so
// frozen subgraphs cost a forward pass and nothing else.
template <typename T>
class Tape {
 public:
  // Receives the gradient of the node's output; accumulates into its inputs.
  using BackwardFn = std::function<void(Tape&, const Tensor<T>&)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<T> leaf(Tensor<T> value, bool requires_grad = false);
  Var<T> record(const char* op, Tensor<T> value, std::initializer_list<Var<T>> inputs, BackwardFn fn);

  const Tensor<T>& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  // Gradient accumulator of node `id`, allocated as zeros on first use.
  Tensor<T>& grad_buffer(std::size_t id);
  // Gradient of `v` after backward(); nullptr when none flowed into it.
  const Tensor<T>* grad(Var<T> v) const;
  // Gradient of `v`, zeros when none flowed into it.
  Tensor<T> grad_or_zeros(Var<T> v) const;

  // Reverse sweep from a scalar loss. Every recorded node is visited once, in
  // reverse execution order; values used several times sum their gradients.
  void backward(Var<T> loss);

 private:
  struct Node {
    const char* op;
    Tensor<T> value;
    Tensor<T> grad;
    bool requires_grad = false;
    bool has_grad = false;
    BackwardFn backward;
  };
  std::deque<Node> nodes_;
};

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b);
template <typename T>
Var<T> add(Var<T> a, Var<T> b);
template <typename T>
Var<T> sub(Var<T> a, Var<T> b);
template <typename T>
Var<T> mul(Var<T> a, Var<T> b);
template <typename T>
Var<T> scale(Var<T> a, T s);
template <typename T>
Var<T> reshape(Var<T> x, Shape shape);
// tanh-approximated GELU.
template <typename T>
Var<T> gelu(Var<T> x);
// x / sqrt(mean(x^2) + eps) * gain over the last axis.
template <typename T>
Var<T> rms_norm(Var<T> x, Var<T> gain, double eps);
// Rows of `table` gathered by `ids`; result shape is out_prefix + [table cols].
template <typename T>
Var<T> embedding(Var<T> table, std::span<const std::uint32_t> ids, const Shape& out_prefix);
// Multi-head causal scaled dot-product attention over packed qkv [B, L, 3C] -> [B, L, C].
template <typename T>
Var<T> causal_attention(Var<T> qkv, std::size_t n_heads);
// Softmax over the last axis.
template <typename T>
Var<T> softmax(Var<T> x);
template <typename T>
Var<T> sum(Var<T> x);
template <typename T>
Var<T> mean(Var<T> x);
// Mean token cross-entropy of logits [N, V] (any leading dims) against targets.
template <typename T>
Var<T> cross_entropy(Var<T> logits, std::span<const std::uint32_t> targets);
// Mean over rows of KL(teacher || student) restricted to the teacher's top-K
// vocabulary slice. Teacher probabilities are renormalised over the K indices;
// the student distribution is the softmax of its logits gathered at the same
// indices.
template <typename T>
Var<T> kl_topk(Var<T> logits, std::span<const std::uint32_t> indices, std::span<const float> teacher_probs,
               std::size_t k);
// Mean squared error over all elements.
template <typename T>
Var<T> mse(Var<T> a, Var<T> b);

}  // namespace linpatch
