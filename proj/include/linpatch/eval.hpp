#pragma once

#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "linpatch/corpus.hpp"
#include "linpatch/model.hpp"

namespace linpatch {

struct PerplexityResult {
  double perplexity = 0;
  double nll_sum = 0;  // nats
  std::size_t tokens = 0;
};

// exp(mean next-token NLL) over non-overlapping windows of seq_len.
// `max_windows` == 0 evaluates every full window; `batch_size` only groups work.
template <typename T>
PerplexityResult evaluate_perplexity(const TransformerModel<T>& model, const TokenStream& corpus, std::size_t seq_len,
                                     std::size_t max_windows = 0, std::size_t batch_size = 16);

template <typename T>
double perplexity(const TransformerModel<T>& model, const TokenStream& corpus, std::size_t seq_len,
                  std::size_t max_windows = 0, std::size_t batch_size = 16) {
  return evaluate_perplexity(model, corpus, seq_len, max_windows, batch_size).perplexity;
}

struct EvalReport {
  std::string label;
  double perplexity = 0;
  std::size_t tokens = 0;
  double retained = 0;  // dense_ppl / perplexity
};

struct Variant {
  std::string label;
  const Model* model = nullptr;
};

// First row is the dense model itself.
std::vector<EvalReport> compare_variants(const Model& dense, const std::vector<Variant>& variants,
                                         const TokenStream& corpus, std::size_t seq_len, std::size_t max_windows = 0);

nlohmann::json reports_to_json(const std::vector<EvalReport>& rows);
std::string reports_to_table(const std::vector<EvalReport>& rows);

}  // namespace linpatch
