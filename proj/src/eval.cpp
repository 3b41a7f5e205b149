#include "linpatch/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace linpatch {

template <typename T>
PerplexityResult evaluate_perplexity(const TransformerModel<T>& model, const TokenStream& corpus, std::size_t seq_len,
                                     std::size_t max_windows, std::size_t batch_size) {
  if (seq_len == 0) throw InputError("evaluation seq_len must be positive");
  if (batch_size == 0) batch_size = 1;
  const auto offsets = sequential_offsets(corpus.size(), seq_len, max_windows);
  if (offsets.empty()) {
    throw InputError("evaluation corpus of " + std::to_string(corpus.size()) + " tokens has no full window of " +
                     std::to_string(seq_len));
  }
  const std::size_t v = model.config.vocab_size;
  PerplexityResult r;
  for (std::size_t first = 0; first < offsets.size(); first += batch_size) {
    const std::size_t count = std::min(batch_size, offsets.size() - first);
    const std::span<const std::size_t> chunk(offsets.data() + first, count);
    const Tensor<T> logits = forward(model, window_batch(corpus, chunk, seq_len));
    const auto targets = window_targets(corpus, chunk, seq_len);
    for (std::size_t p = 0; p < targets.size(); ++p) {
      const T* z = logits.data() + p * v;
      const double mx = *std::max_element(z, z + v);
      double s = 0;
      for (std::size_t j = 0; j < v; ++j) s += std::exp(static_cast<double>(z[j]) - mx);
      r.nll_sum += mx + std::log(s) - static_cast<double>(z[targets[p]]);
    }
    r.tokens += targets.size();
  }
  r.perplexity = std::exp(r.nll_sum / static_cast<double>(r.tokens));
  if (!std::isfinite(r.perplexity)) throw NumericError("perplexity is not finite");
  return r;
}

std::vector<EvalReport> compare_variants(const Model& dense, const std::vector<Variant>& variants,
                                         const TokenStream& corpus, std::size_t seq_len, std::size_t max_windows) {
  std::vector<EvalReport> rows;
  const auto base = evaluate_perplexity(dense, corpus, seq_len, max_windows);
  rows.push_back({"dense", base.perplexity, base.tokens, 1.0});
  for (const auto& var : variants) {
    if (!var.model) throw InputError("variant '" + var.label + "' has no model");
    if (var.model->config.vocab_size != dense.config.vocab_size) {
      throw InputError("variant '" + var.label + "' vocab " + std::to_string(var.model->config.vocab_size) +
                       " differs from dense vocab " + std::to_string(dense.config.vocab_size));
    }
    const auto r = evaluate_perplexity(*var.model, corpus, seq_len, max_windows);
    rows.push_back({var.label, r.perplexity, r.tokens, base.perplexity / r.perplexity});
  }
  return rows;
}

nlohmann::json reports_to_json(const std::vector<EvalReport>& rows) {
  auto out = nlohmann::json::array();
  for (const auto& r : rows) {
    out.push_back({{"variant", r.label}, {"perplexity", r.perplexity}, {"tokens", r.tokens}, {"retained", r.retained}});
  }
  return out;
}

std::string reports_to_table(const std::vector<EvalReport>& rows) {
  std::size_t w = 7;
  for (const auto& r : rows) w = std::max(w, r.label.size());
  std::string out;
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-*s %12s %10s %8s\n", static_cast<int>(w), "variant", "perplexity", "tokens", "RP");
  out += buf;
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%-*s %12.4f %10zu %7.2f%%\n", static_cast<int>(w), r.label.c_str(), r.perplexity,
                  r.tokens, 100.0 * r.retained);
    out += buf;
  }
  return out;
}

template PerplexityResult evaluate_perplexity(const TransformerModel<float>&, const TokenStream&, std::size_t,
                                              std::size_t, std::size_t);
template PerplexityResult evaluate_perplexity(const TransformerModel<double>&, const TokenStream&, std::size_t,
                                              std::size_t, std::size_t);

}  // namespace linpatch
