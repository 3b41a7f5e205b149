#include "linpatch/train.hpp"

#include <cmath>
#include <numeric>

namespace linpatch {

namespace {

std::vector<Tensor<float>*> parameter_list(Model& m) {
  std::vector<Tensor<float>*> ps{&m.token_embedding, &m.position_embedding};
  for (auto& w : m.layers) {
    for (auto* p : {&w.attn_norm, &w.wqkv, &w.wo, &w.mlp_norm, &w.w1, &w.w2}) ps.push_back(p);
  }
  ps.push_back(&m.final_norm);
  ps.push_back(&m.lm_head);
  return ps;
}

std::vector<Var<float>> bound_list(const BoundModel<float>& b) {
  std::vector<Var<float>> vs{b.token_embedding, b.position_embedding};
  for (const auto& w : b.layers) {
    for (const auto& v : {w.attn_norm, w.wqkv, w.wo, w.mlp_norm, w.w1, w.w2}) vs.push_back(v);
  }
  vs.push_back(b.final_norm);
  vs.push_back(b.lm_head);
  return vs;
}

}  // namespace

TrainResult train_toy(Model& model, const TokenStream& corpus, const TrainConfig& config,
                      const std::function<void(std::size_t, double)>& on_step) {
  if (config.seq_len == 0 || config.seq_len > model.config.max_seq_len) {
    throw InputError("training seq_len " + std::to_string(config.seq_len) + " must be in [1, " +
                     std::to_string(model.config.max_seq_len) + "]");
  }
  if (corpus.size() < 100 * config.seq_len) {
    throw InputError("corpus has " + std::to_string(corpus.size()) + " tokens; training needs at least " +
                     std::to_string(100 * config.seq_len));
  }
  if (config.batch_size == 0) throw InputError("batch_size must be positive");
  if (!model.patch_slots.empty()) throw ContractError("train_toy expects a model without patch slots");

  auto params = parameter_list(model);
  std::vector<bool> decay;
  for (auto* p : params) decay.push_back(p->rank() >= 2);
  AdamW<float> opt(params, config.adam);

  const auto offsets = random_offsets(corpus.size(), config.seq_len, config.steps * config.batch_size, config.seed);
  TrainResult result;
  for (std::size_t step = 0; step < config.steps; ++step) {
    const std::span<const std::size_t> batch_offsets(offsets.data() + step * config.batch_size, config.batch_size);
    const TokenBatch inputs = window_batch(corpus, batch_offsets, config.seq_len);
    const auto targets = window_targets(corpus, batch_offsets, config.seq_len);

    Tape<float> tape;
    const auto bound = bind(tape, model, Trainable::kAll);
    Var<float> loss = cross_entropy(forward_on_tape(bound, inputs), targets);
    tape.backward(loss);

    const auto vars = bound_list(bound);
    std::vector<Tensor<float>> grads;
    grads.reserve(vars.size());
    for (const auto& v : vars) grads.push_back(tape.grad_or_zeros(v));
    std::vector<Tensor<float>*> gptr;
    std::vector<const Tensor<float>*> gconst;
    for (auto& g : grads) {
      gptr.push_back(&g);
      gconst.push_back(&g);
    }
    if (config.clip > 0) clip_grad_norm(gptr, config.clip);
    const double lr = cosine_lr(static_cast<long>(step), static_cast<long>(config.steps),
                                static_cast<long>(config.warmup), config.lr, config.min_lr);
    opt.step(gconst, lr, decay);

    const double l = loss.value()[0];
    result.losses.push_back(l);
    if (on_step) on_step(step, l);
  }
  if (!result.losses.empty()) {
    result.initial_ppl = std::exp(result.losses.front());
    const std::size_t tail = std::min<std::size_t>(50, result.losses.size());
    const double m =
        std::accumulate(result.losses.end() - static_cast<std::ptrdiff_t>(tail), result.losses.end(), 0.0) /
        static_cast<double>(tail);
    result.final_ppl = std::exp(m);
  }
  return result;
}

}  // namespace linpatch
