#pragma once

#include <string>
#include <vector>

#include "linpatch/corpus.hpp"
#include "linpatch/hadamard.hpp"
#include "linpatch/model.hpp"
#include "linpatch/pruning.hpp"

namespace linpatch {

inline constexpr double kScalingEps = 1e-8;

struct ScalingVector {
  TensorD d;                  // [C], every entry > 0
  std::vector<bool> floored;  // denominator below eps, d_k set to 1

  std::size_t floored_count() const;
};

// d_k = |X^(l*+n)_{:,k}|_1 / |X^(l*)_{:,k}|_1 over all pooled positions. When
// `rotation` is given both slabs are first multiplied by it.
template <typename T>
ScalingVector channel_scaling(const HiddenTrace<T>& trace, std::size_t l_star, std::size_t n,
                              const HadamardMatrix* rotation, double eps = kScalingEps);

struct SigmaResult {
  double sigma = 0;
  std::size_t used = 0;     // (sample, channel) pairs that entered the mean
  std::size_t skipped = 0;  // pairs where every position had a denominator below eps
};

// Mean over (sample, channel) of the population std of the per-token ratios
// |out| / |in|, positions with |in| < eps left out.
template <typename T>
SigmaResult sigma_d(const HiddenTrace<T>& trace, std::size_t l_star, std::size_t n, const HadamardMatrix* rotation,
                    double eps = kScalingEps);

// P = H diag(d) H^T.
template <typename T>
PatchMatrix<T> fuse_patch(const HadamardMatrix& h, const TensorD& d);

// P = diag(d), no rotation.
template <typename T>
PatchMatrix<T> diagonal_patch(const TensorD& d);

template <typename T>
void insert_patch(TransformerModel<T>& model, SlotKey slot, PatchMatrix<T> patch);

enum class PatchVariant { kNone, kScaleRaw, kLinearPatch };

std::string to_string(PatchVariant v);
PatchVariant parse_patch_variant(const std::string& name);

// Prunes `dense` per `spec` and, unless kNone, inserts one patch per interface
// slot computed from the dense model's trace.
Model build_variant(const Model& dense, const Trace& trace, const PruneSpec& spec, PatchVariant variant);

struct AlphaRow {
  double alpha = 0;
  double perplexity = 0;
};

// Perplexity with X -> alpha * (X . d) applied at `slot` of a copy of `pruned`.
std::vector<AlphaRow> alpha_sweep(const Model& pruned, SlotKey slot, const TensorD& d,
                                  const std::vector<double>& alphas, const TokenStream& eval_corpus,
                                  std::size_t seq_len, std::size_t max_windows = 0);

// Mean |x| per channel of every traced state, [n_states][C].
std::vector<std::vector<double>> channel_magnitudes(const Trace& trace);

struct DiagnosticsReport {
  SigmaResult sigma_raw;
  SigmaResult sigma_rotated;
  std::vector<AlphaRow> alpha_rows;
  std::vector<std::vector<double>> magnitudes;
};

}  // namespace linpatch
