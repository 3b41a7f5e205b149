#include "linpatch/patch.hpp"

#include <cmath>

#include "linpatch/eval.hpp"

namespace linpatch {

std::size_t ScalingVector::floored_count() const {
  std::size_t n = 0;
  for (bool f : floored) n += f;
  return n;
}

namespace {

template <typename T>
void check_block(const HiddenTrace<T>& trace, std::size_t l_star, std::size_t n, const HadamardMatrix* rotation) {
  if (trace.states.empty()) throw InputError("empty hidden-state trace");
  if (l_star + n > trace.n_layers()) {
    throw InputError("interface [" + std::to_string(l_star) + ", " + std::to_string(l_star + n) + "] outside trace of " +
                     std::to_string(trace.n_layers()) + " layers");
  }
  if (rotation && rotation->size != trace.hidden_dim()) {
    throw InputError("rotation of size " + std::to_string(rotation->size) + " does not match trace hidden size " +
                     std::to_string(trace.hidden_dim()));
  }
}

// [N, C] double copy of a trace state, optionally rotated.
template <typename T>
TensorD slab(const Tensor<T>& state, const HadamardMatrix* rotation) {
  const std::size_t c = state.dim(2);
  TensorD x({state.numel() / c, c});
  for (std::size_t i = 0; i < x.numel(); ++i) x[i] = state[i];
  return rotation ? matmul(x, rotation->entries) : x;
}

}  // namespace

template <typename T>
ScalingVector channel_scaling(const HiddenTrace<T>& trace, std::size_t l_star, std::size_t n,
                              const HadamardMatrix* rotation, double eps) {
  check_block(trace, l_star, n, rotation);
  const TensorD in = slab(trace.states[l_star], rotation);
  const TensorD out = slab(trace.states[l_star + n], rotation);
  const std::size_t rows = in.rows(), c = in.cols();
  std::vector<double> num(c, 0.0), den(c, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t k = 0; k < c; ++k) {
      num[k] += std::abs(out[r * c + k]);
      den[k] += std::abs(in[r * c + k]);
    }
  }
  ScalingVector s{TensorD({c}), std::vector<bool>(c, false)};
  for (std::size_t k = 0; k < c; ++k) {
    if (den[k] < eps || num[k] < eps) {
      s.d[k] = 1.0;
      s.floored[k] = true;
    } else {
      s.d[k] = num[k] / den[k];
    }
  }
  return s;
}

template <typename T>
SigmaResult sigma_d(const HiddenTrace<T>& trace, std::size_t l_star, std::size_t n, const HadamardMatrix* rotation,
                    double eps) {
  check_block(trace, l_star, n, rotation);
  const TensorD in = slab(trace.states[l_star], rotation);
  const TensorD out = slab(trace.states[l_star + n], rotation);
  const std::size_t b = trace.batch, len = trace.seq_len, c = in.cols();
  SigmaResult res;
  double total = 0;
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t k = 0; k < c; ++k) {
      double s1 = 0, s2 = 0;
      std::size_t cnt = 0;
      for (std::size_t t = 0; t < len; ++t) {
        const std::size_t idx = (i * len + t) * c + k;
        const double den = std::abs(in[idx]);
        if (den < eps) continue;
        const double r = std::abs(out[idx]) / den;
        s1 += r;
        s2 += r * r;
        ++cnt;
      }
      if (cnt == 0) {
        ++res.skipped;
        continue;
      }
      const double mean = s1 / static_cast<double>(cnt);
      total += std::sqrt(std::max(0.0, s2 / static_cast<double>(cnt) - mean * mean));
      ++res.used;
    }
  }
  res.sigma = res.used ? total / static_cast<double>(res.used) : 0.0;
  return res;
}

template <typename T>
PatchMatrix<T> fuse_patch(const HadamardMatrix& h, const TensorD& d) {
  const std::size_t c = h.size;
  if (d.numel() != c) {
    throw InputError("scaling of length " + std::to_string(d.numel()) + " does not match rotation size " +
                     std::to_string(c));
  }
  for (std::size_t k = 0; k < c; ++k) {
    if (!(d[k] > 0)) throw ContractError("scaling entry " + std::to_string(k) + " is not positive");
  }
  TensorD hd = h.entries;
  for (std::size_t r = 0; r < c; ++r)
    for (std::size_t k = 0; k < c; ++k) hd[r * c + k] *= d[k];
  TensorD p({c, c});
  gemm<double>(false, true, c, c, c, hd.data(), h.entries.data(), p.data(), false);
  for (std::size_t r = 0; r < c; ++r)
    for (std::size_t k = r + 1; k < c; ++k) {
      const double m = 0.5 * (p[r * c + k] + p[k * c + r]);
      p[r * c + k] = p[k * c + r] = m;
    }
  PatchMatrix<T> out;
  out.matrix = p.cast<T>();
  out.scaling = d.cast<T>();
  out.rotated = true;
  return out;
}

template <typename T>
PatchMatrix<T> diagonal_patch(const TensorD& d) {
  const std::size_t c = d.numel();
  Tensor<T> m({c, c});
  for (std::size_t k = 0; k < c; ++k) m[k * c + k] = static_cast<T>(d[k]);
  PatchMatrix<T> out;
  out.matrix = std::move(m);
  out.scaling = d.cast<T>();
  return out;
}

template <typename T>
void insert_patch(TransformerModel<T>& model, SlotKey slot, PatchMatrix<T> patch) {
  const std::size_t c = model.config.hidden_dim;
  if (patch.matrix.shape() != Shape{c, c}) {
    throw InputError("patch matrix " + shape_str(patch.matrix.shape()) + " does not match hidden size " +
                     std::to_string(c));
  }
  if (slot.layer > model.config.n_layers) {
    throw InputError("patch slot before layer " + std::to_string(slot.layer) + " but model has " +
                     std::to_string(model.config.n_layers) + " layers");
  }
  if (model.patch_slots.count(slot)) {
    throw ContractError("patch slot (" + std::to_string(slot.layer) + ", " + std::to_string(slot.order) +
                        ") already registered");
  }
  model.patch_slots.emplace(slot, std::move(patch));
}

std::string to_string(PatchVariant v) {
  switch (v) {
    case PatchVariant::kNone: return "none";
    case PatchVariant::kScaleRaw: return "scale-raw";
    case PatchVariant::kLinearPatch: return "linearpatch";
  }
  return "?";
}

PatchVariant parse_patch_variant(const std::string& name) {
  for (auto v : {PatchVariant::kNone, PatchVariant::kScaleRaw, PatchVariant::kLinearPatch}) {
    if (to_string(v) == name) return v;
  }
  throw InputError("unknown patch variant '" + name + "' (none, scale-raw, linearpatch)");
}

Model build_variant(const Model& dense, const Trace& trace, const PruneSpec& spec, PatchVariant variant) {
  if (trace.n_layers() != dense.config.n_layers || trace.hidden_dim() != dense.config.hidden_dim) {
    throw InputError("trace with " + std::to_string(trace.n_layers()) + " layers of width " +
                     std::to_string(trace.hidden_dim()) + " does not match model with " +
                     std::to_string(dense.config.n_layers) + " layers of width " +
                     std::to_string(dense.config.hidden_dim));
  }
  Model pruned = prune_layers(dense, spec);
  if (variant == PatchVariant::kNone || spec.selected.empty()) return pruned;
  const auto slots = interface_slots(spec);
  std::optional<HadamardMatrix> h;
  if (variant == PatchVariant::kLinearPatch) h = build_hadamard(dense.config.hidden_dim);
  const HadamardMatrix* rot = h ? &*h : nullptr;
  auto patch_for = [&](std::size_t from, std::size_t span) {
    const ScalingVector s = channel_scaling(trace, from, span, rot);
    return rot ? fuse_patch<float>(*rot, s.d) : diagonal_patch<float>(s.d);
  };
  if (spec.mode == PruneMode::kContiguousCosine) {
    insert_patch(pruned, slots.front(), patch_for(spec.selected.front(), spec.n));
  } else {
    for (std::size_t i = 0; i < spec.selected.size(); ++i) insert_patch(pruned, slots[i], patch_for(spec.selected[i], 1));
  }
  return pruned;
}

std::vector<AlphaRow> alpha_sweep(const Model& pruned, SlotKey slot, const TensorD& d,
                                  const std::vector<double>& alphas, const TokenStream& eval_corpus,
                                  std::size_t seq_len, std::size_t max_windows) {
  std::vector<AlphaRow> rows;
  for (double a : alphas) {
    if (!(a > 0)) throw InputError("alpha values must be positive, got " + std::to_string(a));
    TensorD scaled = d;
    for (auto& v : scaled.values()) v *= a;
    Model m = pruned;
    PatchMatrix<float> p = diagonal_patch<float>(scaled);
    p.scaling = d.cast<float>();
    insert_patch(m, slot, std::move(p));
    rows.push_back({a, perplexity(m, eval_corpus, seq_len, max_windows)});
  }
  return rows;
}

std::vector<std::vector<double>> channel_magnitudes(const Trace& trace) {
  std::vector<std::vector<double>> out;
  for (const auto& s : trace.states) {
    const std::size_t c = s.dim(2), rows = s.numel() / c;
    std::vector<double> m(c, 0.0);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t k = 0; k < c; ++k) m[k] += std::abs(static_cast<double>(s[r * c + k]));
    for (auto& v : m) v /= static_cast<double>(rows);
    out.push_back(std::move(m));
  }
  return out;
}

#define LINPATCH_INSTANTIATE(T)                                                                                     \
  template ScalingVector channel_scaling(const HiddenTrace<T>&, std::size_t, std::size_t, const HadamardMatrix*,     \
                                         double);                                                                   \
  template SigmaResult sigma_d(const HiddenTrace<T>&, std::size_t, std::size_t, const HadamardMatrix*, double);      \
  template PatchMatrix<T> fuse_patch(const HadamardMatrix&, const TensorD&);                                        \
  template PatchMatrix<T> diagonal_patch(const TensorD&);                                                           \
  template void insert_patch(TransformerModel<T>&, SlotKey, PatchMatrix<T>);

LINPATCH_INSTANTIATE(float)
LINPATCH_INSTANTIATE(double)
#undef LINPATCH_INSTANTIATE

}  // namespace linpatch
