#pragma once

#include <functional>
#include <vector>

#include "linpatch/corpus.hpp"
#include "linpatch/model.hpp"
#include "linpatch/optim.hpp"

namespace linpatch {

struct TrainConfig {
  std::size_t steps = 2000;
  std::size_t batch_size = 16;
  std::size_t seq_len = 64;
  std::size_t warmup = 50;
  double lr = 3e-3;
  double min_lr = 3e-4;
  double clip = 0.0;  // max global grad norm; 0 disables clipping
  AdamWConfig adam;
  std::uint64_t seed = 1;
};

struct TrainResult {
  std::vector<double> losses;  // per-step mean cross-entropy (nats)
  double initial_ppl = 0;      // exp(first step loss)
  double final_ppl = 0;        // exp(mean of the last min(50, steps) losses)
};

// Next-token training of every weight on random windows of `corpus`.
// Requires corpus.size() >= 100 * seq_len.
TrainResult train_toy(Model& model, const TokenStream& corpus, const TrainConfig& config,
                      const std::function<void(std::size_t, double)>& on_step = {});

}  // namespace linpatch
