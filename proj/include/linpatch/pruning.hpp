#pragma once

#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "linpatch/corpus.hpp"
#include "linpatch/model.hpp"

namespace linpatch {

enum class PruneMode { kContiguousCosine, kNoncontiguousCosine, kPplGreedy };

std::string to_string(PruneMode mode);
PruneMode parse_prune_mode(const std::string& name);

struct PruneSpec {
  PruneMode mode = PruneMode::kContiguousCosine;
  std::size_t n = 0;
  std::vector<std::size_t> selected;  // ascending indices into the source model
  std::optional<std::size_t> l_star;  // contiguous mode only
  std::size_t source_layers = 0;      // n_layers of the model the spec was selected on
  std::vector<double> scores;         // per candidate: block start, single layer, or last greedy round's layers

  bool operator==(const PruneSpec&) const = default;
};

// Throws InputError unless the spec is well formed for a model with `n_layers` layers.
void validate_spec(const PruneSpec& spec, std::size_t n_layers);

nlohmann::json spec_to_json(const PruneSpec& spec);
PruneSpec spec_from_json(const nlohmann::json& j);

// Mean over samples of cos(flatten(X_i^(l)), flatten(X_i^(l+n))), accumulated in double.
template <typename T>
double cosine_block_score(const HiddenTrace<T>& trace, std::size_t l, std::size_t n);

// Contiguous block [l*, l*+n) with the highest score; ties go to the smallest l.
template <typename T>
PruneSpec select_prune_block(const HiddenTrace<T>& trace, std::size_t n);

// The n layers with the highest single-layer score; ties go to the smaller index.
template <typename T>
PruneSpec select_noncontiguous(const HiddenTrace<T>& trace, std::size_t n);

// n rounds, each removing the remaining layer whose removal gives the lowest perplexity.
PruneSpec select_ppl_greedy(const Model& model, const TokenStream& eval_corpus, std::size_t n, std::size_t seq_len,
                            std::size_t max_windows = 0);

// Removes the selected layers. A model that already has the spec applied
// (n_layers == source_layers - |selected|) is returned unchanged.
template <typename T>
TransformerModel<T> prune_layers(const TransformerModel<T>& model, const PruneSpec& spec);

// Where each removed layer's interface lands in the pruned model, in ascending
// order of removed index. Stacked entries share `layer` and count up `order`.
std::vector<SlotKey> interface_slots(const PruneSpec& spec);

}  // namespace linpatch
