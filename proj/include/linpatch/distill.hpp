#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "linpatch/corpus.hpp"
#include "linpatch/model.hpp"
#include "linpatch/optim.hpp"

namespace linpatch {

inline constexpr char kCacheMagic[4] = {'L', 'P', 'L', '1'};
inline constexpr std::uint32_t kCacheVersion = 1;
// magic + version + K + V + sequence count + sequence length
inline constexpr std::size_t kCacheHeaderBytes = 4 + 4 + 4 + 4 + 8 + 4;

// Teacher top-K slices for every position of `sequences` windows of `seq_len`.
struct LogitsCache {
  std::uint32_t k = 0;
  std::uint32_t vocab = 0;
  std::uint64_t sequences = 0;
  std::uint32_t seq_len = 0;
  std::vector<std::uint32_t> indices;  // [positions, K], descending probability
  std::vector<float> probs;            // [positions, K]

  std::size_t positions() const { return static_cast<std::size_t>(sequences) * seq_len; }
  std::span<const std::uint32_t> indices_at(std::size_t position, std::size_t count = 1) const;
  std::span<const float> probs_at(std::size_t position, std::size_t count = 1) const;
  bool operator==(const LogitsCache&) const = default;
};

// Bytes the cache file occupies: header + positions * K * (4 + 4).
std::size_t cache_file_bytes(std::size_t positions, std::size_t k);

std::vector<std::uint8_t> encode_logits_cache(const LogitsCache& cache);
LogitsCache decode_logits_cache(const std::vector<std::uint8_t>& bytes);
void write_logits_cache(const LogitsCache& cache, const std::string& path);
LogitsCache read_logits_cache(const std::string& path);

// Top-k of the full softmax of each row of `logits` [N, V], appended to the cache.
template <typename T>
void append_topk(LogitsCache& cache, const Tensor<T>& logits);

// Runs the teacher on the first `sequences` non-overlapping windows of `corpus`.
LogitsCache build_logits_cache(const Model& teacher, const TokenStream& corpus, std::size_t k, std::size_t sequences,
                               std::size_t seq_len, std::size_t batch_size = 16);
void cache_teacher_logits(const Model& teacher, const TokenStream& corpus, std::size_t k, std::size_t sequences,
                          std::size_t seq_len, const std::string& path);

// KL(renormalised teacher slice || student softmax over the same indices) for one position.
double kl_topk_loss(std::span<const std::uint32_t> indices, std::span<const float> probs,
                    std::span<const double> student_logits);

template <typename T>
Var<T> mse_feature_loss(Var<T> teacher_output, Var<T> student_output);

enum class DistillLoss { kKl, kMse };

std::string to_string(DistillLoss loss);
DistillLoss parse_distill_loss(const std::string& name);

struct DistillConfig {
  std::size_t k = 100;
  double lr = 1e-4;
  std::size_t epochs = 1;
  std::size_t samples = 5000;
  std::size_t batch_size = 8;
  DistillLoss loss = DistillLoss::kKl;
  bool diagonal_only = false;
  AdamWConfig adam;
  std::uint64_t seed = 1;  // window order within each epoch
};

struct DistillResult {
  std::vector<double> step_losses;
  std::vector<double> epoch_losses;  // mean step loss per epoch
  std::size_t samples = 0;
};

// Feature target for the MSE mode: the dense model and, per student patch
// slot layer, the dense layer whose input the patched state should match.
struct FeatureTeacher {
  const Model* model = nullptr;
  std::size_t teacher_layer = 0;
};

// Trains only the student's patch matrices. Windows are the first
// min(samples, cache.sequences) non-overlapping windows of `corpus`, which must
// be the corpus the cache was built from.
DistillResult distill_patch(Model& student, const LogitsCache& cache, const TokenStream& corpus,
                            const DistillConfig& config, const FeatureTeacher& feature = {});

// Mean top-K KL of `model` on a batch of cached windows, as a tape loss so its
// gradient with respect to trainable patches is available.
template <typename T>
Var<T> distill_batch_loss(const BoundModel<T>& bound, const LogitsCache& cache, const TokenStream& corpus,
                          std::span<const std::size_t> windows, std::size_t k);

}  // namespace linpatch
