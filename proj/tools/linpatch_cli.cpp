#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "linpatch/checkpoint.hpp"
#include "linpatch/distill.hpp"
#include "linpatch/errors.hpp"
#include "linpatch/eval.hpp"
#include "linpatch/patch.hpp"
#include "linpatch/pruning.hpp"
#include "linpatch/train.hpp"

using namespace linpatch;
using nlohmann::json;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitInput = 3;
constexpr int kExitNumeric = 4;

// Held-out split shared by every subcommand taking --split.
constexpr std::size_t kSplitChunk = 4096;
constexpr std::size_t kSplitEvery = 10;

bool g_json = false;

// Missing flag combinations CLI11 cannot express.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void emit(const json& j, const std::string& text) {
  if (g_json) std::cout << j.dump(2) << "\n";
  else std::cout << text;
}

TokenStream corpus_part(const std::string& path, const std::string& split) {
  auto tokens = load_corpus(path);
  if (split == "all") return tokens;
  auto [train, held] = split_interleaved(tokens, kSplitChunk, kSplitEvery);
  return split == "train" ? train : held;
}

void check_dims(const Model& m, const std::string& model_path, const Trace& t, const std::string& trace_path) {
  if (t.hidden_dim() != m.config.hidden_dim || t.n_layers() != m.config.n_layers)
    throw InputError("trace " + trace_path + " (" + std::to_string(t.n_layers()) + " layers, C=" +
                     std::to_string(t.hidden_dim()) + ") does not match model " + model_path + " (" +
                     std::to_string(m.config.n_layers) + " layers, C=" + std::to_string(m.config.hidden_dim) + ")");
}

PruneSpec read_spec(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FileError("cannot open spec " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw FormatError("spec " + path + ": " + e.what());
  }
  return spec_from_json(j);
}

void check_spec(const Model& m, const std::string& model_path, const PruneSpec& s, const std::string& spec_path) {
  if (s.source_layers != 0 && s.source_layers != m.config.n_layers)
    throw InputError("spec " + spec_path + " was selected on " + std::to_string(s.source_layers) +
                     " layers but model " + model_path + " has " + std::to_string(m.config.n_layers));
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out || !(out << text)) throw FileError("cannot write " + path);
}

std::size_t model_seq_len(const Model& m, std::size_t requested) {
  return requested == 0 ? m.config.max_seq_len : std::min(requested, m.config.max_seq_len);
}

std::string csv_double(double v) {
  std::ostringstream s;
  s.precision(9);
  s << v;
  return s.str();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Layer pruning with a fused Hadamard/scaling patch for toy transformer LMs"};
  app.require_subcommand(1);
  app.add_flag("--json", g_json, "machine-readable JSON on stdout");

  // train-toy
  auto* train = app.add_subcommand("train-toy", "train a dense byte-level model");
  std::string t_corpus, t_out, t_split = "all";
  ModelConfig t_cfg;
  std::size_t t_mlp = 0;
  TrainConfig t_train;
  train->add_option("--corpus", t_corpus)->required();
  train->add_option("--split", t_split)->check(CLI::IsMember({"all", "train", "held"}));
  train->add_option("--layers", t_cfg.n_layers)->capture_default_str();
  train->add_option("--dim", t_cfg.hidden_dim)->capture_default_str();
  train->add_option("--heads", t_cfg.n_heads)->capture_default_str();
  train->add_option("--mlp-dim", t_mlp, "default 4 * dim");
  train->add_option("--seq-len", t_cfg.max_seq_len)->capture_default_str();
  train->add_option("--steps", t_train.steps)->capture_default_str();
  train->add_option("--batch", t_train.batch_size)->capture_default_str();
  train->add_option("--lr", t_train.lr)->capture_default_str();
  train->add_option("--warmup", t_train.warmup)->capture_default_str();
  train->add_option("--seed", t_train.seed)->capture_default_str();
  train->add_option("--out", t_out)->required();

  // trace
  auto* trace = app.add_subcommand("trace", "capture layer inputs on calibration windows");
  std::string tr_model, tr_calib, tr_out, tr_split = "all";
  std::size_t tr_samples = 128, tr_len = 2048;
  std::uint64_t tr_seed = 1;
  trace->add_option("--model", tr_model)->required();
  trace->add_option("--calib", tr_calib)->required();
  trace->add_option("--split", tr_split)->check(CLI::IsMember({"all", "train", "held"}));
  trace->add_option("--samples", tr_samples)->capture_default_str();
  trace->add_option("--seq-len", tr_len, "capped to the model's context")->capture_default_str();
  trace->add_option("--seed", tr_seed)->capture_default_str();
  trace->add_option("--out", tr_out)->required();

  // select
  auto* select = app.add_subcommand("select", "choose layers to prune");
  std::string s_trace, s_model, s_corpus, s_mode = "contiguous-cosine", s_out, s_split = "all";
  std::size_t s_n = 1, s_len = 0, s_windows = 0;
  select->add_option("--trace", s_trace);
  select->add_option("--model", s_model);
  select->add_option("--corpus", s_corpus, "evaluation text for ppl-greedy");
  select->add_option("--split", s_split)->check(CLI::IsMember({"all", "train", "held"}));
  select->add_option("--mode", s_mode)
      ->check(CLI::IsMember({"contiguous-cosine", "noncontiguous-cosine", "ppl-greedy"}))
      ->capture_default_str();
  select->add_option("--n", s_n)->required();
  select->add_option("--seq-len", s_len, "ppl-greedy window length, default model context");
  select->add_option("--max-windows", s_windows, "ppl-greedy windows per evaluation, 0 = all");
  select->add_option("--out", s_out, "write the spec here instead of stdout");

  // prune
  auto* prune = app.add_subcommand("prune", "remove the selected layers");
  std::string p_model, p_spec, p_out;
  prune->add_option("--model", p_model)->required();
  prune->add_option("--spec", p_spec)->required();
  prune->add_option("--out", p_out)->required();

  // patch
  auto* patch = app.add_subcommand("patch", "prune and insert interface patches");
  std::string pa_model, pa_trace, pa_spec, pa_variant = "linearpatch", pa_out;
  patch->add_option("--model", pa_model, "dense model")->required();
  patch->add_option("--trace", pa_trace, "trace of the dense model")->required();
  patch->add_option("--spec", pa_spec)->required();
  patch->add_option("--variant", pa_variant)
      ->check(CLI::IsMember({"none", "scale-raw", "linearpatch"}))
      ->capture_default_str();
  patch->add_option("--out", pa_out)->required();

  // cache-logits
  auto* cache = app.add_subcommand("cache-logits", "store teacher top-K probabilities");
  std::string c_teacher, c_corpus, c_out, c_split = "all";
  std::size_t c_k = 100, c_samples = 5000, c_len = 0;
  cache->add_option("--teacher", c_teacher)->required();
  cache->add_option("--corpus", c_corpus)->required();
  cache->add_option("--split", c_split)->check(CLI::IsMember({"all", "train", "held"}));
  cache->add_option("--k", c_k, "capped to the vocabulary")->capture_default_str();
  cache->add_option("--samples", c_samples, "windows, capped to the corpus")->capture_default_str();
  cache->add_option("--seq-len", c_len, "default model context");
  cache->add_option("--out", c_out)->required();

  // distill
  auto* distill = app.add_subcommand("distill", "fine-tune only the patch matrices");
  std::string d_model, d_cache, d_corpus, d_out, d_loss = "kl", d_teacher, d_spec, d_split = "all";
  DistillConfig d_cfg;
  distill->add_option("--model", d_model, "patched model")->required();
  distill->add_option("--cache", d_cache)->required();
  distill->add_option("--corpus", d_corpus, "text the cache was built from")->required();
  distill->add_option("--split", d_split)->check(CLI::IsMember({"all", "train", "held"}));
  distill->add_option("--k", d_cfg.k)->capture_default_str();
  distill->add_option("--lr", d_cfg.lr)->capture_default_str();
  distill->add_option("--epochs", d_cfg.epochs)->capture_default_str();
  distill->add_option("--samples", d_cfg.samples)->capture_default_str();
  distill->add_option("--batch", d_cfg.batch_size)->capture_default_str();
  distill->add_option("--loss", d_loss)->check(CLI::IsMember({"kl", "mse"}))->capture_default_str();
  distill->add_option("--teacher", d_teacher, "dense model, mse loss only");
  distill->add_option("--spec", d_spec, "pruning spec, mse loss only");
  distill->add_flag("--diagonal", d_cfg.diagonal_only, "train only the patch diagonal");
  distill->add_option("--seed", d_cfg.seed)->capture_default_str();
  distill->add_option("--out", d_out)->required();

  // eval
  auto* eval = app.add_subcommand("eval", "held-out perplexity and retained performance");
  std::vector<std::string> e_models;
  std::string e_corpus, e_split = "all";
  std::size_t e_len = 0, e_windows = 0;
  eval->add_option("--models", e_models, "first is the dense reference; label=path or path")->required();
  eval->add_option("--corpus", e_corpus)->required();
  eval->add_option("--split", e_split)->check(CLI::IsMember({"all", "train", "held"}));
  eval->add_option("--seq-len", e_len, "default model context");
  eval->add_option("--max-windows", e_windows, "0 = all");

  // analyze
  auto* analyze = app.add_subcommand("analyze", "activation diagnostics as CSV");
  analyze->require_subcommand(1);
  auto* mags = analyze->add_subcommand("magnitudes", "mean |activation| per layer input and channel");
  std::string a_trace, a_spec, a_model, a_corpus, a_split = "all";
  mags->add_option("--trace", a_trace)->required();
  auto* sigma = analyze->add_subcommand("sigma", "raw and rotated sigma_d at the pruning interface");
  std::size_t a_lstar = 0, a_n = 0;
  sigma->add_option("--trace", a_trace)->required();
  auto* lstar_opt = sigma->add_option("--l-star", a_lstar);
  sigma->add_option("--n", a_n);
  sigma->add_option("--spec", a_spec, "take l* and n from a contiguous spec")->excludes(lstar_opt);
  auto* alpha = analyze->add_subcommand("alpha", "perplexity under X -> alpha (X . d) at the interface");
  std::vector<double> a_alphas{0.5, 0.75, 0.9, 1.0, 1.1, 1.25, 1.5};
  std::size_t a_len = 0, a_windows = 0;
  alpha->add_option("--model", a_model, "dense model")->required();
  alpha->add_option("--trace", a_trace, "trace of the dense model")->required();
  alpha->add_option("--spec", a_spec, "contiguous spec")->required();
  alpha->add_option("--corpus", a_corpus)->required();
  alpha->add_option("--split", a_split)->check(CLI::IsMember({"all", "train", "held"}));
  alpha->add_option("--alphas", a_alphas)->capture_default_str();
  alpha->add_option("--seq-len", a_len);
  alpha->add_option("--max-windows", a_windows);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (*train) {
      t_cfg.mlp_dim = t_mlp ? t_mlp : 4 * t_cfg.hidden_dim;
      t_train.seq_len = t_cfg.max_seq_len;
      t_cfg.validate();
      const auto tokens = corpus_part(t_corpus, t_split);
      auto model = Model::init(t_cfg, t_train.seed);
      const auto r = train_toy(model, tokens, t_train);
      save_checkpoint(model, t_out);
      char buf[256];
      std::snprintf(buf, sizeof buf, "trained %zu steps: ppl %.3f -> %.3f, wrote %s\n", t_train.steps, r.initial_ppl,
                    r.final_ppl, t_out.c_str());
      emit({{"steps", t_train.steps},
            {"initial_ppl", r.initial_ppl},
            {"final_ppl", r.final_ppl},
            {"backbone_digest", backbone_digest(model)},
            {"out", t_out}},
           buf);
    } else if (*trace) {
      const auto model = load_checkpoint(tr_model);
      const auto tokens = corpus_part(tr_calib, tr_split);
      const std::size_t len = model_seq_len(model, tr_len);
      if (tr_samples == 0) throw InputError("--samples must be positive");
      const auto offsets = random_offsets(tokens.size(), len, tr_samples, tr_seed);
      const auto t = forward_traced(model, window_batch(tokens, offsets, len)).second;
      save_trace(t, tr_out);
      emit({{"samples", t.batch}, {"seq_len", t.seq_len}, {"states", t.states.size()}, {"out", tr_out}},
           "traced " + std::to_string(t.batch) + " x " + std::to_string(t.seq_len) + " tokens, wrote " + tr_out + "\n");
    } else if (*select) {
      const auto mode = parse_prune_mode(s_mode);
      PruneSpec spec;
      if (mode == PruneMode::kPplGreedy) {
        if (s_model.empty() || s_corpus.empty()) throw UsageError("ppl-greedy needs --model and --corpus");
        const auto model = load_checkpoint(s_model);
        spec = select_ppl_greedy(model, corpus_part(s_corpus, s_split), s_n, model_seq_len(model, s_len), s_windows);
      } else {
        Trace t;
        if (!s_trace.empty()) {
          t = load_trace(s_trace);
        } else {
          if (s_model.empty() || s_corpus.empty()) throw UsageError("select needs --trace or --model with --corpus");
          const auto model = load_checkpoint(s_model);
          const auto tokens = corpus_part(s_corpus, s_split);
          const std::size_t len = model_seq_len(model, s_len);
          t = forward_traced(model, window_batch(tokens, random_offsets(tokens.size(), len, 128, 1), len)).second;
        }
        spec = mode == PruneMode::kContiguousCosine ? select_prune_block(t, s_n) : select_noncontiguous(t, s_n);
      }
      const auto j = spec_to_json(spec);
      if (!s_out.empty()) write_text(s_out, j.dump(2) + "\n");
      std::string text = "selected layers:";
      for (auto l : spec.selected) text += " " + std::to_string(l);
      emit(j, s_out.empty() ? j.dump(2) + "\n" : text + "\n");
    } else if (*prune) {
      const auto model = load_checkpoint(p_model);
      const auto spec = read_spec(p_spec);
      check_spec(model, p_model, spec, p_spec);
      const auto pruned = prune_layers(model, spec);
      save_checkpoint(pruned, p_out);
      emit({{"layers", pruned.config.n_layers}, {"out", p_out}},
           "pruned to " + std::to_string(pruned.config.n_layers) + " layers, wrote " + p_out + "\n");
    } else if (*patch) {
      const auto model = load_checkpoint(pa_model);
      const auto t = load_trace(pa_trace);
      check_dims(model, pa_model, t, pa_trace);
      const auto spec = read_spec(pa_spec);
      check_spec(model, pa_model, spec, pa_spec);
      const auto out = build_variant(model, t, spec, parse_patch_variant(pa_variant));
      save_checkpoint(out, pa_out);
      json slots = json::array();
      for (const auto& [k, _] : out.patch_slots) slots.push_back({k.layer, k.order});
      emit({{"variant", pa_variant}, {"layers", out.config.n_layers}, {"slots", slots}, {"out", pa_out}},
           pa_variant + ": " + std::to_string(out.patch_slots.size()) + " patch slot(s), wrote " + pa_out + "\n");
    } else if (*cache) {
      const auto teacher = load_checkpoint(c_teacher);
      const auto tokens = corpus_part(c_corpus, c_split);
      const std::size_t len = model_seq_len(teacher, c_len);
      const std::size_t k = std::min(c_k, teacher.config.vocab_size);
      const std::size_t seqs = std::min(c_samples, count_windows(tokens.size(), len));
      cache_teacher_logits(teacher, tokens, k, seqs, len, c_out);
      const std::size_t bytes = cache_file_bytes(seqs * len, k);
      const std::size_t full = cache_file_bytes(seqs * len, teacher.config.vocab_size);
      char buf[256];
      std::snprintf(buf, sizeof buf, "cached K=%zu for %zu windows x %zu: %zu bytes (full distribution %zu bytes)\n", k,
                    seqs, len, bytes, full);
      emit({{"k", k},
            {"sequences", seqs},
            {"seq_len", len},
            {"bytes", bytes},
            {"full_bytes", full},
            {"payload_ratio", static_cast<double>(teacher.config.vocab_size) / static_cast<double>(k)},
            {"out", c_out}},
           buf);
    } else if (*distill) {
      auto student = load_checkpoint(d_model);
      const auto lc = read_logits_cache(d_cache);
      if (lc.vocab != student.config.vocab_size)
        throw InputError("cache " + d_cache + " has V=" + std::to_string(lc.vocab) + " but model " + d_model +
                         " has V=" + std::to_string(student.config.vocab_size));
      const auto tokens = corpus_part(d_corpus, d_split);
      d_cfg.loss = parse_distill_loss(d_loss);
      d_cfg.k = std::min<std::size_t>(d_cfg.k, lc.k);
      FeatureTeacher feature;
      Model teacher;
      if (d_cfg.loss == DistillLoss::kMse) {
        if (d_teacher.empty() || d_spec.empty()) throw UsageError("--loss mse needs --teacher and --spec");
        teacher = load_checkpoint(d_teacher);
        const auto spec = read_spec(d_spec);
        check_spec(teacher, d_teacher, spec, d_spec);
        if (!spec.l_star) throw InputError("--loss mse needs a contiguous spec");
        feature = {&teacher, *spec.l_star + spec.n};
      }
      const auto r = distill_patch(student, lc, tokens, d_cfg, feature);
      save_checkpoint(student, d_out);
      char buf[256];
      std::snprintf(buf, sizeof buf, "%zu steps on %zu windows, loss %.5f -> %.5f, wrote %s\n", r.step_losses.size(),
                    r.samples, r.step_losses.empty() ? 0.0 : r.step_losses.front(),
                    r.step_losses.empty() ? 0.0 : r.step_losses.back(), d_out.c_str());
      emit({{"steps", r.step_losses.size()},
            {"samples", r.samples},
            {"epoch_losses", r.epoch_losses},
            {"patch_digest", patch_digest(student)},
            {"backbone_digest", backbone_digest(student)},
            {"out", d_out}},
           buf);
    } else if (*eval) {
      std::vector<std::pair<std::string, Model>> loaded;
      for (const auto& arg : e_models) {
        const auto eq = arg.find('=');
        const std::string label = eq == std::string::npos ? std::filesystem::path(arg).stem().string() : arg.substr(0, eq);
        const std::string path = eq == std::string::npos ? arg : arg.substr(eq + 1);
        loaded.emplace_back(label, load_checkpoint(path));
      }
      const auto tokens = corpus_part(e_corpus, e_split);
      const auto& dense = loaded.front().second;
      std::vector<Variant> variants;
      for (std::size_t i = 1; i < loaded.size(); ++i) variants.push_back({loaded[i].first, &loaded[i].second});
      auto rows = compare_variants(dense, variants, tokens, model_seq_len(dense, e_len), e_windows);
      rows.front().label = loaded.front().first;
      emit(reports_to_json(rows), reports_to_table(rows));
    } else if (*mags) {
      const auto t = load_trace(a_trace);
      const auto m = channel_magnitudes(t);
      std::string csv = "layer_index,channel_index,mean_abs_activation\n";
      json j = json::array();
      for (std::size_t l = 0; l < m.size(); ++l)
        for (std::size_t c = 0; c < m[l].size(); ++c) {
          csv += std::to_string(l) + "," + std::to_string(c) + "," + csv_double(m[l][c]) + "\n";
          j.push_back({{"layer_index", l}, {"channel_index", c}, {"mean_abs_activation", m[l][c]}});
        }
      emit(j, csv);
    } else if (*sigma) {
      const auto t = load_trace(a_trace);
      if (!a_spec.empty()) {
        const auto spec = read_spec(a_spec);
        if (!spec.l_star) throw InputError("analyze sigma needs a contiguous spec");
        a_lstar = *spec.l_star;
        a_n = spec.n;
      }
      if (a_n == 0) throw UsageError("analyze sigma needs --n or --spec");
      const auto h = build_hadamard(t.hidden_dim());
      const auto raw = sigma_d(t, a_lstar, a_n, nullptr), rot = sigma_d(t, a_lstar, a_n, &h);
      if (raw.skipped || rot.skipped)
        std::cerr << "warning: skipped " << raw.skipped << " raw and " << rot.skipped
                  << " rotated (sample, channel) pairs with no usable positions\n";
      emit({{"l_star", a_lstar},
            {"n", a_n},
            {"sigma_raw", raw.sigma},
            {"sigma_rotated", rot.sigma},
            {"skipped_raw", raw.skipped},
            {"skipped_rotated", rot.skipped}},
           "l_star,n,sigma_raw,sigma_rotated\n" + std::to_string(a_lstar) + "," + std::to_string(a_n) + "," +
               csv_double(raw.sigma) + "," + csv_double(rot.sigma) + "\n");
    } else if (*alpha) {
      const auto model = load_checkpoint(a_model);
      const auto t = load_trace(a_trace);
      check_dims(model, a_model, t, a_trace);
      const auto spec = read_spec(a_spec);
      check_spec(model, a_model, spec, a_spec);
      if (!spec.l_star) throw InputError("analyze alpha needs a contiguous spec");
      const auto d = channel_scaling(t, *spec.l_star, spec.n, nullptr).d;
      const auto rows = alpha_sweep(prune_layers(model, spec), {*spec.l_star, 0}, d, a_alphas,
                                    corpus_part(a_corpus, a_split), model_seq_len(model, a_len), a_windows);
      std::string csv = "alpha,perplexity\n";
      json j = json::array();
      for (const auto& r : rows) {
        csv += csv_double(r.alpha) + "," + csv_double(r.perplexity) + "\n";
        j.push_back({{"alpha", r.alpha}, {"perplexity", r.perplexity}});
      }
      emit(j, csv);
    }
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const InputError& e) {
    std::cerr << "input error: " << e.what() << "\n";
    return kExitInput;
  } catch (const FormatError& e) {
    std::cerr << "format error: " << e.what() << "\n";
    return kExitInput;
  } catch (const FileError& e) {
    std::cerr << "file error: " << e.what() << "\n";
    return kExitInput;
  } catch (const ContractError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitInput;
  }
  return 0;
}
