#include "linpatch/pruning.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "linpatch/eval.hpp"

namespace linpatch {

std::string to_string(PruneMode mode) {
  switch (mode) {
    case PruneMode::kContiguousCosine: return "contiguous-cosine";
    case PruneMode::kNoncontiguousCosine: return "noncontiguous-cosine";
    case PruneMode::kPplGreedy: return "ppl-greedy";
  }
  return "?";
}

PruneMode parse_prune_mode(const std::string& name) {
  for (auto m : {PruneMode::kContiguousCosine, PruneMode::kNoncontiguousCosine, PruneMode::kPplGreedy}) {
    if (to_string(m) == name) return m;
  }
  throw InputError("unknown prune mode '" + name + "' (contiguous-cosine, noncontiguous-cosine, ppl-greedy)");
}

void validate_spec(const PruneSpec& spec, std::size_t n_layers) {
  if (spec.selected.size() != spec.n) {
    throw InputError("prune spec lists " + std::to_string(spec.selected.size()) + " layers but n = " +
                     std::to_string(spec.n));
  }
  for (std::size_t i = 0; i < spec.selected.size(); ++i) {
    if (spec.selected[i] >= n_layers) {
      throw InputError("prune index " + std::to_string(spec.selected[i]) + " out of range for " +
                       std::to_string(n_layers) + " layers");
    }
    if (i > 0 && spec.selected[i] <= spec.selected[i - 1]) {
      throw InputError("prune indices must be unique and ascending");
    }
  }
  if (spec.mode == PruneMode::kContiguousCosine && spec.n > 0) {
    if (!spec.l_star) throw InputError("contiguous prune spec without l_star");
    for (std::size_t i = 0; i < spec.n; ++i) {
      if (spec.selected[i] != *spec.l_star + i) throw InputError("contiguous prune spec is not [l*, l*+n)");
    }
  }
}

nlohmann::json spec_to_json(const PruneSpec& spec) {
  nlohmann::json j{{"mode", to_string(spec.mode)},
                   {"n", spec.n},
                   {"selected", spec.selected},
                   {"source_layers", spec.source_layers},
                   {"scores", spec.scores}};
  j["l_star"] = spec.l_star ? nlohmann::json(*spec.l_star) : nlohmann::json(nullptr);
  return j;
}

PruneSpec spec_from_json(const nlohmann::json& j) {
  PruneSpec s;
  try {
    s.mode = parse_prune_mode(j.at("mode").get<std::string>());
    s.n = j.at("n").get<std::size_t>();
    s.selected = j.at("selected").get<std::vector<std::size_t>>();
    s.source_layers = j.value("source_layers", std::size_t{0});
    if (j.contains("scores")) s.scores = j.at("scores").get<std::vector<double>>();
    if (j.contains("l_star") && !j.at("l_star").is_null()) s.l_star = j.at("l_star").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("prune spec: ") + e.what());
  }
  if (s.source_layers > 0) validate_spec(s, s.source_layers);
  return s;
}

namespace {

template <typename T>
void check_trace(const HiddenTrace<T>& trace) {
  if (trace.states.empty() || trace.batch == 0) throw InputError("empty hidden-state trace");
}

}  // namespace

template <typename T>
double cosine_block_score(const HiddenTrace<T>& trace, std::size_t l, std::size_t n) {
  check_trace(trace);
  if (l + n > trace.n_layers()) {
    throw InputError("block [" + std::to_string(l) + ", " + std::to_string(l + n) + ") exceeds " +
                     std::to_string(trace.n_layers()) + " traced layers");
  }
  const Tensor<T>& a = trace.states[l];
  const Tensor<T>& b = trace.states[l + n];
  const std::size_t per = a.numel() / trace.batch;
  double total = 0;
  for (std::size_t i = 0; i < trace.batch; ++i) {
    double dot = 0, na = 0, nb = 0;
    for (std::size_t j = i * per; j < (i + 1) * per; ++j) {
      const double x = a[j], y = b[j];
      dot += x * y;
      na += x * x;
      nb += y * y;
    }
    if (na == 0 || nb == 0) {
      total += (na == nb) ? 1.0 : 0.0;
    } else {
      total += dot / (std::sqrt(na) * std::sqrt(nb));
    }
  }
  return total / static_cast<double>(trace.batch);
}

template <typename T>
PruneSpec select_prune_block(const HiddenTrace<T>& trace, std::size_t n) {
  check_trace(trace);
  const std::size_t layers = trace.n_layers();
  if (n >= layers) {
    throw InputError("cannot remove " + std::to_string(n) + " of " + std::to_string(layers) + " layers");
  }
  PruneSpec s;
  s.mode = PruneMode::kContiguousCosine;
  s.n = n;
  s.source_layers = layers;
  if (n == 0) return s;
  std::size_t best = 0;
  for (std::size_t l = 0; l + n <= layers; ++l) {
    s.scores.push_back(cosine_block_score(trace, l, n));
    if (s.scores[l] > s.scores[best]) best = l;
  }
  s.l_star = best;
  for (std::size_t i = 0; i < n; ++i) s.selected.push_back(best + i);
  return s;
}

template <typename T>
PruneSpec select_noncontiguous(const HiddenTrace<T>& trace, std::size_t n) {
  check_trace(trace);
  const std::size_t layers = trace.n_layers();
  if (n >= layers) {
    throw InputError("cannot remove " + std::to_string(n) + " of " + std::to_string(layers) + " layers");
  }
  PruneSpec s;
  s.mode = PruneMode::kNoncontiguousCosine;
  s.n = n;
  s.source_layers = layers;
  for (std::size_t l = 0; l < layers; ++l) s.scores.push_back(cosine_block_score(trace, l, 1));
  std::vector<std::size_t> order(layers);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto x, auto y) { return s.scores[x] > s.scores[y]; });
  s.selected.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n));
  std::sort(s.selected.begin(), s.selected.end());
  return s;
}

namespace {

template <typename T>
TransformerModel<T> remove_layers(const TransformerModel<T>& model, const std::vector<std::size_t>& drop) {
  if (!model.patch_slots.empty()) throw ContractError("layers must be pruned before patches are inserted");
  const std::set<std::size_t> gone(drop.begin(), drop.end());
  TransformerModel<T> out;
  out.config = model.config;
  out.token_embedding = model.token_embedding;
  out.position_embedding = model.position_embedding;
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    if (!gone.count(l)) out.layers.push_back(model.layers[l]);
  }
  out.config.n_layers = out.layers.size();
  out.final_norm = model.final_norm;
  out.lm_head = model.lm_head;
  return out;
}

}  // namespace

PruneSpec select_ppl_greedy(const Model& model, const TokenStream& eval_corpus, std::size_t n, std::size_t seq_len,
                            std::size_t max_windows) {
  const std::size_t layers = model.config.n_layers;
  if (n >= layers) {
    throw InputError("cannot remove " + std::to_string(n) + " of " + std::to_string(layers) + " layers");
  }
  PruneSpec s;
  s.mode = PruneMode::kPplGreedy;
  s.n = n;
  s.source_layers = layers;
  std::vector<std::size_t> removed;
  for (std::size_t round = 0; round < n; ++round) {
    std::optional<std::size_t> best;
    double best_ppl = 0;
    s.scores.clear();
    for (std::size_t l = 0; l < layers; ++l) {
      if (std::find(removed.begin(), removed.end(), l) != removed.end()) continue;
      auto trial = removed;
      trial.push_back(l);
      const double ppl = perplexity(remove_layers(model, trial), eval_corpus, seq_len, max_windows);
      s.scores.push_back(ppl);
      if (!best || ppl < best_ppl) {
        best = l;
        best_ppl = ppl;
      }
    }
    removed.push_back(*best);
  }
  std::sort(removed.begin(), removed.end());
  s.selected = removed;
  return s;
}

template <typename T>
TransformerModel<T> prune_layers(const TransformerModel<T>& model, const PruneSpec& spec) {
  const std::size_t layers = model.config.n_layers;
  if (spec.source_layers > 0 && spec.source_layers != layers) {
    if (spec.source_layers >= spec.selected.size() && layers == spec.source_layers - spec.selected.size()) {
      return model;
    }
    throw InputError("prune spec was selected on a " + std::to_string(spec.source_layers) +
                     "-layer model, got " + std::to_string(layers) + " layers");
  }
  validate_spec(spec, layers);
  if (spec.selected.empty()) return model;
  return remove_layers(model, spec.selected);
}

std::vector<SlotKey> interface_slots(const PruneSpec& spec) {
  std::vector<SlotKey> out;
  if (spec.selected.empty()) return out;
  if (spec.mode == PruneMode::kContiguousCosine) {
    out.push_back({spec.selected.front(), 0});
    return out;
  }
  for (std::size_t i = 0; i < spec.selected.size(); ++i) {
    const std::size_t layer = spec.selected[i] - i;
    const std::size_t order = (!out.empty() && out.back().layer == layer) ? out.back().order + 1 : 0;
    out.push_back({layer, order});
  }
  return out;
}

#define LINPATCH_INSTANTIATE(T)                                                     \
  template double cosine_block_score(const HiddenTrace<T>&, std::size_t, std::size_t); \
  template PruneSpec select_prune_block(const HiddenTrace<T>&, std::size_t);          \
  template PruneSpec select_noncontiguous(const HiddenTrace<T>&, std::size_t);        \
  template TransformerModel<T> prune_layers(const TransformerModel<T>&, const PruneSpec&);

LINPATCH_INSTANTIATE(float)
LINPATCH_INSTANTIATE(double)
#undef LINPATCH_INSTANTIATE

}  // namespace linpatch
