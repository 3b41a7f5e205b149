#include "linpatch/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

namespace linpatch {

template <typename T>
Var<T> Tape<T>::leaf(Tensor<T> value, bool requires_grad) {
  check_finite(value, "leaf");
  nodes_.push_back(Node{"leaf", std::move(value), {}, requires_grad, false, {}});
  return Var<T>(this, nodes_.size() - 1);
}

template <typename T>
Var<T> Tape<T>::record(const char* op, Tensor<T> value, std::initializer_list<Var<T>> inputs, BackwardFn fn) {
  check_finite(value, op);
  bool needs = false;
  for (const auto& in : inputs) {
    if (in.tape() != this) throw ContractError(std::string(op) + ": input recorded on a different tape");
    needs = needs || requires_grad(in.id());
  }
  nodes_.push_back(Node{op, std::move(value), {}, needs, false, needs ? std::move(fn) : BackwardFn{}});
  return Var<T>(this, nodes_.size() - 1);
}

template <typename T>
Tensor<T>& Tape<T>::grad_buffer(std::size_t id) {
  Node& n = nodes_[id];
  if (!n.has_grad) {
    n.grad = Tensor<T>(n.value.shape());
    n.has_grad = true;
  }
  return n.grad;
}

template <typename T>
const Tensor<T>* Tape<T>::grad(Var<T> v) const {
  const Node& n = nodes_[v.id()];
  return n.has_grad ? &n.grad : nullptr;
}

template <typename T>
Tensor<T> Tape<T>::grad_or_zeros(Var<T> v) const {
  const Tensor<T>* g = grad(v);
  return g ? *g : Tensor<T>(value(v.id()).shape());
}

template <typename T>
void Tape<T>::backward(Var<T> loss) {
  if (loss.tape() != this) throw ContractError("backward: loss belongs to a different tape");
  if (value(loss.id()).numel() != 1) {
    throw ContractError("backward requires a scalar loss, got shape " + shape_str(value(loss.id()).shape()));
  }
  if (!requires_grad(loss.id())) return;
  grad_buffer(loss.id())[0] += T(1);
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad || !n.has_grad || !n.backward) continue;
    n.backward(*this, n.grad);
    check_finite(n.grad, n.op);
  }
}

namespace {

template <typename T>
void require_same_shape(const char* op, const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) {
    throw InputError(std::string(op) + " shape mismatch: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

template <typename T>
void axpy(Tensor<T>& dst, const Tensor<T>& src, T alpha) {
  T* d = dst.data();
  const T* s = src.data();
  for (std::size_t i = 0, n = dst.numel(); i < n; ++i) d[i] += alpha * s[i];
}

}  // namespace

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b) {
  const Tensor<T>& av = a.value();
  const Tensor<T>& bv = b.value();
  Tensor<T> out = matmul(av, bv);
  const std::size_t m = av.rows(), k = av.cols(), n = bv.dim(1);
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape()->record("matmul", std::move(out), {a, b}, [=](Tape<T>& t, const Tensor<T>& g) {
    if (t.requires_grad(ia)) gemm<T>(false, true, m, k, n, g.data(), t.value(ib).data(), t.grad_buffer(ia).data(), true);
    if (t.requires_grad(ib)) gemm<T>(true, false, k, n, m, t.value(ia).data(), g.data(), t.grad_buffer(ib).data(), true);
  });
}

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  require_same_shape("add", a.value(), b.value());
  Tensor<T> out = add(a.value(), b.value());
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape()->record("add", std::move(out), {a, b}, [=](Tape<T>& t, const Tensor<T>& g) {
    if (t.requires_grad(ia)) axpy(t.grad_buffer(ia), g, T(1));
    if (t.requires_grad(ib)) axpy(t.grad_buffer(ib), g, T(1));
  });
}

template <typename T>
Var<T> sub(Var<T> a, Var<T> b) {
  require_same_shape("sub", a.value(), b.value());
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] -= b.value()[i];
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape()->record("sub", std::move(out), {a, b}, [=](Tape<T>& t, const Tensor<T>& g) {
    if (t.requires_grad(ia)) axpy(t.grad_buffer(ia), g, T(1));
    if (t.requires_grad(ib)) axpy(t.grad_buffer(ib), g, T(-1));
  });
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  require_same_shape("mul", a.value(), b.value());
  Tensor<T> out = a.value();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] *= b.value()[i];
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape()->record("mul", std::move(out), {a, b}, [=](Tape<T>& t, const Tensor<T>& g) {
    if (t.requires_grad(ia)) {
      Tensor<T>& ga = t.grad_buffer(ia);
      const Tensor<T>& bv = t.value(ib);
      for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * bv[i];
    }
    if (t.requires_grad(ib)) {
      Tensor<T>& gb = t.grad_buffer(ib);
      const Tensor<T>& av = t.value(ia);
      for (std::size_t i = 0; i < g.numel(); ++i) gb[i] += g[i] * av[i];
    }
  });
}

template <typename T>
Var<T> scale(Var<T> a, T s) {
  const std::size_t ia = a.id();
  return a.tape()->record("scale", scale(a.value(), s), {a},
                          [=](Tape<T>& t, const Tensor<T>& g) { axpy(t.grad_buffer(ia), g, s); });
}

template <typename T>
Var<T> reshape(Var<T> x, Shape shape) {
  const std::size_t ix = x.id();
  return x.tape()->record("reshape", x.value().reshaped(std::move(shape)), {x}, [=](Tape<T>& t, const Tensor<T>& g) {
    Tensor<T>& gx = t.grad_buffer(ix);
    for (std::size_t i = 0; i < g.numel(); ++i) gx[i] += g[i];
  });
}

template <typename T>
Var<T> gelu(Var<T> x) {
  constexpr T c = static_cast<T>(0.7978845608028654);  // sqrt(2/pi)
  constexpr T a = static_cast<T>(0.044715);
  const Tensor<T>& xv = x.value();
  Tensor<T> out(xv.shape());
  for (std::size_t i = 0; i < xv.numel(); ++i) {
    const T v = xv[i];
    out[i] = T(0.5) * v * (T(1) + std::tanh(c * (v + a * v * v * v)));
  }
  const std::size_t ix = x.id();
  return x.tape()->record("gelu", std::move(out), {x}, [=](Tape<T>& t, const Tensor<T>& g) {
    const Tensor<T>& xs = t.value(ix);
    Tensor<T>& gx = t.grad_buffer(ix);
    for (std::size_t i = 0; i < xs.numel(); ++i) {
      const T v = xs[i];
      const T th = std::tanh(c * (v + a * v * v * v));
      const T d = T(0.5) * (T(1) + th) + T(0.5) * v * (T(1) - th * th) * c * (T(1) + T(3) * a * v * v);
      gx[i] += g[i] * d;
    }
  });
}

template <typename T>
Var<T> rms_norm(Var<T> x, Var<T> gain, double eps) {
  const Tensor<T>& xv = x.value();
  const Tensor<T>& gv = gain.value();
  const std::size_t n = xv.rows(), c = xv.cols();
  if (gv.numel() != c) {
    throw InputError("rms_norm gain " + shape_str(gv.shape()) + " does not match input " + shape_str(xv.shape()));
  }
  Tensor<T> out(xv.shape());
  std::vector<T> inv(n);
  for (std::size_t r = 0; r < n; ++r) {
    const T* xr = xv.data() + r * c;
    double ss = 0;
    for (std::size_t j = 0; j < c; ++j) ss += static_cast<double>(xr[j]) * xr[j];
    inv[r] = static_cast<T>(1.0 / std::sqrt(ss / static_cast<double>(c) + eps));
    T* o = out.data() + r * c;
    for (std::size_t j = 0; j < c; ++j) o[j] = xr[j] * inv[r] * gv[j];
  }
  const std::size_t ix = x.id(), ig = gain.id();
  return x.tape()->record("rms_norm", std::move(out), {x, gain},
                          [=, inv = std::move(inv)](Tape<T>& t, const Tensor<T>& g) {
                            const Tensor<T>& xs = t.value(ix);
                            const Tensor<T>& gs = t.value(ig);
                            const bool need_x = t.requires_grad(ix), need_g = t.requires_grad(ig);
                            Tensor<T>* gx = need_x ? &t.grad_buffer(ix) : nullptr;
                            Tensor<T>* gg = need_g ? &t.grad_buffer(ig) : nullptr;
                            for (std::size_t r = 0; r < n; ++r) {
                              const T* xr = xs.data() + r * c;
                              const T* gr = g.data() + r * c;
                              if (need_g) {
                                for (std::size_t j = 0; j < c; ++j) (*gg)[j] += gr[j] * xr[j] * inv[r];
                              }
                              if (need_x) {
                                // dx = inv * (g*w - xhat * mean(g*w*xhat))
                                double dot = 0;
                                for (std::size_t j = 0; j < c; ++j)
                                  dot += static_cast<double>(gr[j]) * gs[j] * xr[j] * inv[r];
                                const T m = static_cast<T>(dot / static_cast<double>(c));
                                T* gxr = gx->data() + r * c;
                                for (std::size_t j = 0; j < c; ++j)
                                  gxr[j] += inv[r] * (gr[j] * gs[j] - xr[j] * inv[r] * m);
                              }
                            }
                          });
}

template <typename T>
Var<T> embedding(Var<T> table, std::span<const std::uint32_t> ids, const Shape& out_prefix) {
  const Tensor<T>& tv = table.value();
  if (tv.rank() != 2) throw InputError("embedding table must be a matrix, got " + shape_str(tv.shape()));
  if (shape_numel(out_prefix) != ids.size()) {
    throw InputError("embedding: " + std::to_string(ids.size()) + " ids do not fill shape " + shape_str(out_prefix));
  }
  const std::size_t rows = tv.dim(0), c = tv.dim(1);
  Shape shape = out_prefix;
  shape.push_back(c);
  Tensor<T> out(shape);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] >= rows) {
      throw InputError("embedding id " + std::to_string(ids[i]) + " out of range for table with " +
                       std::to_string(rows) + " rows");
    }
    std::copy_n(tv.data() + ids[i] * c, c, out.data() + i * c);
  }
  const std::size_t it = table.id();
  std::vector<std::uint32_t> idv(ids.begin(), ids.end());
  return table.tape()->record("embedding", std::move(out), {table},
                              [=, idv = std::move(idv)](Tape<T>& t, const Tensor<T>& g) {
                                Tensor<T>& gt = t.grad_buffer(it);
                                for (std::size_t i = 0; i < idv.size(); ++i) {
                                  T* dst = gt.data() + idv[i] * c;
                                  const T* src = g.data() + i * c;
                                  for (std::size_t j = 0; j < c; ++j) dst[j] += src[j];
                                }
                              });
}

template <typename T>
Var<T> causal_attention(Var<T> qkv, std::size_t n_heads) {
  const Tensor<T>& xv = qkv.value();
  if (xv.rank() != 3 || xv.dim(2) % 3 != 0) {
    throw InputError("causal_attention expects packed qkv [B, L, 3C], got " + shape_str(xv.shape()));
  }
  const std::size_t batch = xv.dim(0), len = xv.dim(1), c3 = xv.dim(2), c = c3 / 3;
  if (n_heads == 0 || c % n_heads != 0) {
    throw InputError("hidden size " + std::to_string(c) + " not divisible by " + std::to_string(n_heads) + " heads");
  }
  const std::size_t dh = c / n_heads;
  const T sc = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));
  Tensor<T> out({batch, len, c});
  // probs[b, h, t, s] for s <= t
  std::vector<T> probs(batch * n_heads * len * len, T(0));
  for (std::size_t b = 0; b < batch; ++b) {
    const T* base = xv.data() + b * len * c3;
    for (std::size_t h = 0; h < n_heads; ++h) {
      T* p_bh = probs.data() + (b * n_heads + h) * len * len;
      for (std::size_t tq = 0; tq < len; ++tq) {
        const T* q = base + tq * c3 + h * dh;
        T* p = p_bh + tq * len;
        T mx = -std::numeric_limits<T>::infinity();
        for (std::size_t s = 0; s <= tq; ++s) {
          const T* k = base + s * c3 + c + h * dh;
          T dot = 0;
          for (std::size_t j = 0; j < dh; ++j) dot += q[j] * k[j];
          p[s] = dot * sc;
          mx = std::max(mx, p[s]);
        }
        T sum = 0;
        for (std::size_t s = 0; s <= tq; ++s) {
          p[s] = std::exp(p[s] - mx);
          sum += p[s];
        }
        const T inv = T(1) / sum;
        T* o = out.data() + (b * len + tq) * c + h * dh;
        for (std::size_t s = 0; s <= tq; ++s) {
          p[s] *= inv;
          const T* v = base + s * c3 + 2 * c + h * dh;
          for (std::size_t j = 0; j < dh; ++j) o[j] += p[s] * v[j];
        }
      }
    }
  }
  const std::size_t ix = qkv.id();
  return qkv.tape()->record(
      "causal_attention", std::move(out), {qkv}, [=, probs = std::move(probs)](Tape<T>& t, const Tensor<T>& g) {
        const Tensor<T>& xs = t.value(ix);
        Tensor<T>& gx = t.grad_buffer(ix);
        std::vector<T> dp(len);
        for (std::size_t b = 0; b < batch; ++b) {
          const T* base = xs.data() + b * len * c3;
          T* gbase = gx.data() + b * len * c3;
          for (std::size_t h = 0; h < n_heads; ++h) {
            const T* p_bh = probs.data() + (b * n_heads + h) * len * len;
            for (std::size_t tq = 0; tq < len; ++tq) {
              const T* p = p_bh + tq * len;
              const T* go = g.data() + (b * len + tq) * c + h * dh;
              T weighted = 0;
              for (std::size_t s = 0; s <= tq; ++s) {
                const T* v = base + s * c3 + 2 * c + h * dh;
                T* gv = gbase + s * c3 + 2 * c + h * dh;
                T dot = 0;
                for (std::size_t j = 0; j < dh; ++j) {
                  dot += go[j] * v[j];
                  gv[j] += p[s] * go[j];
                }
                dp[s] = dot;
                weighted += p[s] * dot;
              }
              const T* q = base + tq * c3 + h * dh;
              T* gq = gbase + tq * c3 + h * dh;
              for (std::size_t s = 0; s <= tq; ++s) {
                const T ds = p[s] * (dp[s] - weighted) * sc;
                const T* k = base + s * c3 + c + h * dh;
                T* gk = gbase + s * c3 + c + h * dh;
                for (std::size_t j = 0; j < dh; ++j) {
                  gq[j] += ds * k[j];
                  gk[j] += ds * q[j];
                }
              }
            }
          }
        }
      });
}

template <typename T>
Var<T> softmax(Var<T> x) {
  const Tensor<T>& xv = x.value();
  Tensor<T> out = softmax(xv, xv.rank() - 1);
  const std::size_t ix = x.id(), n = xv.rows(), c = xv.cols();
  const std::size_t self = x.tape()->size();
  return x.tape()->record("softmax", std::move(out), {x}, [=](Tape<T>& t, const Tensor<T>& g) {
    const Tensor<T>& y = t.value(self);
    Tensor<T>& gx = t.grad_buffer(ix);
    for (std::size_t r = 0; r < n; ++r) {
      const T* yr = y.data() + r * c;
      const T* gr = g.data() + r * c;
      T dot = 0;
      for (std::size_t j = 0; j < c; ++j) dot += gr[j] * yr[j];
      T* gxr = gx.data() + r * c;
      for (std::size_t j = 0; j < c; ++j) gxr[j] += yr[j] * (gr[j] - dot);
    }
  });
}

template <typename T>
Var<T> sum(Var<T> x) {
  double s = 0;
  for (auto v : x.value().values()) s += v;
  const std::size_t ix = x.id();
  return x.tape()->record("sum", Tensor<T>(Shape{}, {static_cast<T>(s)}), {x}, [=](Tape<T>& t, const Tensor<T>& g) {
    Tensor<T>& gx = t.grad_buffer(ix);
    for (auto& v : gx.values()) v += g[0];
  });
}

template <typename T>
Var<T> mean(Var<T> x) {
  const std::size_t n = x.value().numel();
  if (n == 0) throw InputError("mean of an empty tensor");
  return scale(sum(x), static_cast<T>(1.0 / static_cast<double>(n)));
}

template <typename T>
Var<T> cross_entropy(Var<T> logits, std::span<const std::uint32_t> targets) {
  const Tensor<T>& z = logits.value();
  const std::size_t n = z.rows(), v = z.cols();
  if (targets.size() != n) {
    throw InputError("cross_entropy: " + std::to_string(targets.size()) + " targets for " + std::to_string(n) +
                     " rows");
  }
  if (n == 0) throw InputError("cross_entropy over zero rows");
  double total = 0;
  for (std::size_t r = 0; r < n; ++r) {
    if (targets[r] >= v) throw InputError("cross_entropy target " + std::to_string(targets[r]) + " >= vocab");
    const T* zr = z.data() + r * v;
    const double mx = *std::max_element(zr, zr + v);
    double s = 0;
    for (std::size_t j = 0; j < v; ++j) s += std::exp(static_cast<double>(zr[j]) - mx);
    total += mx + std::log(s) - static_cast<double>(zr[targets[r]]);
  }
  const std::size_t iz = logits.id();
  std::vector<std::uint32_t> tv(targets.begin(), targets.end());
  return logits.tape()->record(
      "cross_entropy", Tensor<T>(Shape{}, {static_cast<T>(total / static_cast<double>(n))}), {logits},
      [=, tv = std::move(tv)](Tape<T>& t, const Tensor<T>& g) {
        const Tensor<T>& zs = t.value(iz);
        Tensor<T>& gz = t.grad_buffer(iz);
        const double w = static_cast<double>(g[0]) / static_cast<double>(n);
        for (std::size_t r = 0; r < n; ++r) {
          const T* zr = zs.data() + r * v;
          T* gr = gz.data() + r * v;
          const double mx = *std::max_element(zr, zr + v);
          double s = 0;
          for (std::size_t j = 0; j < v; ++j) s += std::exp(static_cast<double>(zr[j]) - mx);
          for (std::size_t j = 0; j < v; ++j) gr[j] += static_cast<T>(w * std::exp(static_cast<double>(zr[j]) - mx) / s);
          gr[tv[r]] -= static_cast<T>(w);
        }
      });
}

template <typename T>
Var<T> kl_topk(Var<T> logits, std::span<const std::uint32_t> indices, std::span<const float> teacher_probs,
               std::size_t k) {
  const Tensor<T>& z = logits.value();
  const std::size_t n = z.rows(), v = z.cols();
  if (k == 0 || indices.size() != n * k || teacher_probs.size() != n * k) {
    throw InputError("kl_topk: expected " + std::to_string(n) + "x" + std::to_string(k) + " teacher entries, got " +
                     std::to_string(indices.size()) + " indices / " + std::to_string(teacher_probs.size()) +
                     " probabilities");
  }
  if (n == 0) throw InputError("kl_topk over zero rows");
  // Per-row teacher distribution (renormalised) and student distribution on the slice.
  std::vector<double> p(n * k), q(n * k);
  double total = 0;
  for (std::size_t r = 0; r < n; ++r) {
    const std::uint32_t* idx = indices.data() + r * k;
    const float* tp = teacher_probs.data() + r * k;
    const T* zr = z.data() + r * v;
    double mass = 0;
    for (std::size_t j = 0; j < k; ++j) {
      if (idx[j] >= v) {
        throw InputError("kl_topk index " + std::to_string(idx[j]) + " out of range for vocab " + std::to_string(v));
      }
      if (!(tp[j] >= 0.0f)) throw ContractError("kl_topk: negative or NaN teacher probability");
      mass += tp[j];
    }
    if (!(mass > 0)) throw ContractError("kl_topk: teacher slice has zero probability mass at row " + std::to_string(r));
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < k; ++j) mx = std::max(mx, static_cast<double>(zr[idx[j]]));
    double s = 0;
    for (std::size_t j = 0; j < k; ++j) s += std::exp(static_cast<double>(zr[idx[j]]) - mx);
    const double log_s = std::log(s);
    double row = 0;
    for (std::size_t j = 0; j < k; ++j) {
      const double pj = tp[j] / mass;
      const double log_q = static_cast<double>(zr[idx[j]]) - mx - log_s;
      p[r * k + j] = pj;
      q[r * k + j] = std::exp(log_q);
      if (pj > 0) row += pj * (std::log(pj) - log_q);
    }
    total += row;
  }
  const std::size_t iz = logits.id();
  std::vector<std::uint32_t> idv(indices.begin(), indices.end());
  return logits.tape()->record(
      "kl_topk", Tensor<T>(Shape{}, {static_cast<T>(total / static_cast<double>(n))}), {logits},
      [=, idv = std::move(idv), p = std::move(p), q = std::move(q)](Tape<T>& t, const Tensor<T>& g) {
        Tensor<T>& gz = t.grad_buffer(iz);
        const double w = static_cast<double>(g[0]) / static_cast<double>(n);
        for (std::size_t r = 0; r < n; ++r) {
          T* gr = gz.data() + r * v;
          for (std::size_t j = 0; j < k; ++j) {
            gr[idv[r * k + j]] += static_cast<T>(w * (q[r * k + j] - p[r * k + j]));
          }
        }
      });
}

template <typename T>
Var<T> mse(Var<T> a, Var<T> b) {
  require_same_shape("mse", a.value(), b.value());
  const std::size_t n = a.value().numel();
  if (n == 0) throw InputError("mse over empty tensors");
  double s = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = static_cast<double>(a.value()[i]) - static_cast<double>(b.value()[i]);
    s += d * d;
  }
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape()->record("mse", Tensor<T>(Shape{}, {static_cast<T>(s / static_cast<double>(n))}), {a, b},
                          [=](Tape<T>& t, const Tensor<T>& g) {
                            const Tensor<T>& av = t.value(ia);
                            const Tensor<T>& bv = t.value(ib);
                            const T w = static_cast<T>(2.0 * static_cast<double>(g[0]) / static_cast<double>(n));
                            if (t.requires_grad(ia)) {
                              Tensor<T>& ga = t.grad_buffer(ia);
                              for (std::size_t i = 0; i < n; ++i) ga[i] += w * (av[i] - bv[i]);
                            }
                            if (t.requires_grad(ib)) {
                              Tensor<T>& gb = t.grad_buffer(ib);
                              for (std::size_t i = 0; i < n; ++i) gb[i] -= w * (av[i] - bv[i]);
                            }
                          });
}

#define LINPATCH_INSTANTIATE(T)                                                                         \
  template class Tape<T>;                                                                               \
  template Var<T> matmul(Var<T>, Var<T>);                                                               \
  template Var<T> add(Var<T>, Var<T>);                                                                  \
  template Var<T> sub(Var<T>, Var<T>);                                                                  \
  template Var<T> mul(Var<T>, Var<T>);                                                                  \
  template Var<T> scale(Var<T>, T);                                                                     \
  template Var<T> reshape(Var<T>, Shape);                                                               \
  template Var<T> gelu(Var<T>);                                                                         \
  template Var<T> rms_norm(Var<T>, Var<T>, double);                                                     \
  template Var<T> embedding(Var<T>, std::span<const std::uint32_t>, const Shape&);                      \
  template Var<T> causal_attention(Var<T>, std::size_t);                                                \
  template Var<T> softmax(Var<T>);                                                                      \
  template Var<T> sum(Var<T>);                                                                          \
  template Var<T> mean(Var<T>);                                                                         \
  template Var<T> cross_entropy(Var<T>, std::span<const std::uint32_t>);                                \
  template Var<T> kl_topk(Var<T>, std::span<const std::uint32_t>, std::span<const float>, std::size_t); \
  template Var<T> mse(Var<T>, Var<T>);

LINPATCH_INSTANTIATE(float)
LINPATCH_INSTANTIATE(double)
#undef LINPATCH_INSTANTIATE

}  // namespace linpatch
