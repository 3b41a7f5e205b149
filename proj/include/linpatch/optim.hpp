#pragma once

#include <cmath>
#include <vector>

#include "linpatch/tensor.hpp"

namespace linpatch {

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

// Decoupled-weight-decay Adam over a fixed list of parameter tensors.
template <typename T>
class AdamW {
 public:
  AdamW(std::vector<Tensor<T>*> params, AdamWConfig config) : params_(std::move(params)), config_(config) {
    for (auto* p : params_) {
      m_.emplace_back(p->shape());
      v_.emplace_back(p->shape());
    }
  }

  // `grads[i]` pairs with params[i]; `decay[i]` selects weight decay for it.
  // Entries with mask[i] == nullptr update every element; otherwise only where mask is nonzero.
  void step(const std::vector<const Tensor<T>*>& grads, double lr, const std::vector<bool>& decay,
            const std::vector<const Tensor<T>*>& mask = {}) {
    ++t_;
    const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
      if (!grads[i]) continue;
      Tensor<T>& p = *params_[i];
      const Tensor<T>& g = *grads[i];
      const Tensor<T>* mk = i < mask.size() ? mask[i] : nullptr;
      const double wd = decay[i] ? config_.weight_decay : 0.0;
      for (std::size_t j = 0; j < p.numel(); ++j) {
        if (mk && (*mk)[j] == T(0)) continue;
        const double gj = g[j];
        const double m = config_.beta1 * m_[i][j] + (1.0 - config_.beta1) * gj;
        const double v = config_.beta2 * v_[i][j] + (1.0 - config_.beta2) * gj * gj;
        m_[i][j] = static_cast<T>(m);
        v_[i][j] = static_cast<T>(v);
        const double update = (m / bc1) / (std::sqrt(v / bc2) + config_.eps) + wd * p[j];
        p[j] = static_cast<T>(p[j] - lr * update);
      }
    }
  }

  long steps() const { return t_; }

 private:
  std::vector<Tensor<T>*> params_;
  AdamWConfig config_;
  std::vector<Tensor<T>> m_, v_;
  long t_ = 0;
};

// Cosine decay from base_lr to min_lr over total_steps after a linear warmup.
inline double cosine_lr(long step, long total_steps, long warmup, double base_lr, double min_lr) {
  if (warmup > 0 && step < warmup) return base_lr * static_cast<double>(step + 1) / static_cast<double>(warmup);
  if (total_steps <= warmup) return base_lr;
  const double progress =
      std::min(1.0, static_cast<double>(step - warmup) / static_cast<double>(std::max(1L, total_steps - warmup)));
  return min_lr + 0.5 * (base_lr - min_lr) * (1.0 + std::cos(progress * 3.14159265358979323846));
}

// Scales grads in place so their joint L2 norm is at most max_norm; returns the pre-clip norm.
template <typename T>
double clip_grad_norm(const std::vector<Tensor<T>*>& grads, double max_norm) {
  double ss = 0;
  for (auto* g : grads)
    if (g)
      for (auto v : g->values()) ss += static_cast<double>(v) * v;
  const double norm = std::sqrt(ss);
  if (max_norm > 0 && norm > max_norm) {
    const T s = static_cast<T>(max_norm / norm);
    for (auto* g : grads)
      if (g)
        for (auto& v : g->values()) v *= s;
  }
  return norm;
}

}  // namespace linpatch
