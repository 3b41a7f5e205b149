#include "linpatch/distill.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numeric>
#include <random>

namespace linpatch {

std::span<const std::uint32_t> LogitsCache::indices_at(std::size_t position, std::size_t count) const {
  if ((position + count) * k > indices.size()) throw InputError("cache position " + std::to_string(position) + " out of range");
  return {indices.data() + position * k, count * k};
}

std::span<const float> LogitsCache::probs_at(std::size_t position, std::size_t count) const {
  if ((position + count) * k > probs.size()) throw InputError("cache position " + std::to_string(position) + " out of range");
  return {probs.data() + position * k, count * k};
}

std::size_t cache_file_bytes(std::size_t positions, std::size_t k) {
  return kCacheHeaderBytes + positions * k * (sizeof(std::uint32_t) + sizeof(float));
}

namespace {

template <typename U>
void put(std::vector<std::uint8_t>& out, U v) {
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_f32(std::vector<std::uint8_t>& out, float f) {
  std::uint32_t u;
  std::memcpy(&u, &f, 4);
  put(out, u);
}

struct Reader {
  const std::vector<std::uint8_t>& b;
  std::size_t pos = 0;

  void need(std::size_t n, const char* field) const {
    if (pos + n > b.size()) throw FormatError(std::string("logits cache truncated at ") + field);
  }
  template <typename U>
  U get(const char* field) {
    need(sizeof(U), field);
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(static_cast<U>(b[pos + i]) << (8 * i));
    pos += sizeof(U);
    return v;
  }
  float get_f32(const char* field) {
    const std::uint32_t u = get<std::uint32_t>(field);
    float f;
    std::memcpy(&f, &u, 4);
    return f;
  }
};

}  // namespace

std::vector<std::uint8_t> encode_logits_cache(const LogitsCache& c) {
  const std::size_t n = c.positions();
  if (c.indices.size() != n * c.k || c.probs.size() != n * c.k) {
    throw ContractError("logits cache payload does not match its header");
  }
  std::vector<std::uint8_t> out;
  out.reserve(cache_file_bytes(n, c.k));
  out.insert(out.end(), kCacheMagic, kCacheMagic + 4);
  put(out, kCacheVersion);
  put(out, c.k);
  put(out, c.vocab);
  put(out, c.sequences);
  put(out, c.seq_len);
  for (std::size_t p = 0; p < n; ++p) {
    for (std::size_t j = 0; j < c.k; ++j) put(out, c.indices[p * c.k + j]);
    for (std::size_t j = 0; j < c.k; ++j) put_f32(out, c.probs[p * c.k + j]);
  }
  return out;
}

LogitsCache decode_logits_cache(const std::vector<std::uint8_t>& bytes) {
  Reader r{bytes};
  r.need(4, "magic");
  if (std::memcmp(bytes.data(), kCacheMagic, 4) != 0) throw FormatError("logits cache: bad magic");
  r.pos = 4;
  const auto version = r.get<std::uint32_t>("version");
  if (version != kCacheVersion) throw FormatError("logits cache: unsupported version " + std::to_string(version));
  LogitsCache c;
  c.k = r.get<std::uint32_t>("K");
  c.vocab = r.get<std::uint32_t>("V");
  c.sequences = r.get<std::uint64_t>("sequence count");
  c.seq_len = r.get<std::uint32_t>("sequence length");
  if (c.k == 0 || c.k > c.vocab) {
    throw FormatError("logits cache: K = " + std::to_string(c.k) + " invalid for V = " + std::to_string(c.vocab));
  }
  const std::size_t n = c.positions();
  if (bytes.size() != cache_file_bytes(n, c.k)) {
    throw FormatError("logits cache: payload is " + std::to_string(bytes.size() - kCacheHeaderBytes) +
                      " bytes, header implies " + std::to_string(cache_file_bytes(n, c.k) - kCacheHeaderBytes));
  }
  c.indices.resize(n * c.k);
  c.probs.resize(n * c.k);
  for (std::size_t p = 0; p < n; ++p) {
    for (std::size_t j = 0; j < c.k; ++j) {
      const auto idx = r.get<std::uint32_t>("indices");
      if (idx >= c.vocab) throw FormatError("logits cache: index " + std::to_string(idx) + " >= V");
      c.indices[p * c.k + j] = idx;
    }
    for (std::size_t j = 0; j < c.k; ++j) c.probs[p * c.k + j] = r.get_f32("probabilities");
  }
  return c;
}

void write_logits_cache(const LogitsCache& cache, const std::string& path) {
  const auto bytes = encode_logits_cache(cache);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FileError("cannot open '" + path + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FileError("failed writing '" + path + "'");
}

LogitsCache read_logits_cache(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FileError("cannot open logits cache '" + path + "'");
  std::vector<std::uint8_t> bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  return decode_logits_cache(bytes);
}

template <typename T>
void append_topk(LogitsCache& cache, const Tensor<T>& logits) {
  const std::size_t v = logits.cols(), rows = logits.rows(), k = cache.k;
  if (v != cache.vocab) throw InputError("logits width " + std::to_string(v) + " != cache vocab " + std::to_string(cache.vocab));
  std::vector<double> p(v);
  std::vector<std::uint32_t> order(v);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* z = logits.data() + r * v;
    const double mx = *std::max_element(z, z + v);
    double s = 0;
    for (std::size_t j = 0; j < v; ++j) s += (p[j] = std::exp(static_cast<double>(z[j]) - mx));
    for (auto& x : p) x /= s;
    std::iota(order.begin(), order.end(), 0u);
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                      [&](auto a, auto b) { return p[a] > p[b] || (p[a] == p[b] && a < b); });
    for (std::size_t j = 0; j < k; ++j) {
      cache.indices.push_back(order[j]);
      cache.probs.push_back(static_cast<float>(p[order[j]]));
    }
  }
}

LogitsCache build_logits_cache(const Model& teacher, const TokenStream& corpus, std::size_t k, std::size_t sequences,
                               std::size_t seq_len, std::size_t batch_size) {
  const std::size_t v = teacher.config.vocab_size;
  if (k == 0 || k > v) throw InputError("top-K of " + std::to_string(k) + " invalid for vocab " + std::to_string(v));
  if (seq_len == 0 || seq_len > teacher.config.max_seq_len) {
    throw InputError("cache seq_len " + std::to_string(seq_len) + " outside [1, " +
                     std::to_string(teacher.config.max_seq_len) + "]");
  }
  const auto offsets = sequential_offsets(corpus.size(), seq_len, sequences);
  if (offsets.size() < sequences || offsets.empty()) {
    throw InputError("corpus holds " + std::to_string(offsets.size()) + " windows of " + std::to_string(seq_len) +
                     ", " + std::to_string(sequences) + " requested");
  }
  LogitsCache c;
  c.k = static_cast<std::uint32_t>(k);
  c.vocab = static_cast<std::uint32_t>(v);
  c.sequences = offsets.size();
  c.seq_len = static_cast<std::uint32_t>(seq_len);
  c.indices.reserve(c.positions() * k);
  c.probs.reserve(c.positions() * k);
  if (batch_size == 0) batch_size = 1;
  for (std::size_t first = 0; first < offsets.size(); first += batch_size) {
    const std::size_t count = std::min(batch_size, offsets.size() - first);
    const Tensor<float> logits = forward(teacher, window_batch(corpus, {offsets.data() + first, count}, seq_len));
    append_topk(c, logits);
  }
  return c;
}

void cache_teacher_logits(const Model& teacher, const TokenStream& corpus, std::size_t k, std::size_t sequences,
                          std::size_t seq_len, const std::string& path) {
  write_logits_cache(build_logits_cache(teacher, corpus, k, sequences, seq_len), path);
}

double kl_topk_loss(std::span<const std::uint32_t> indices, std::span<const float> probs,
                    std::span<const double> student_logits) {
  Tape<double> tape;
  Var<double> z = tape.leaf(TensorD({1, student_logits.size()}, {student_logits.begin(), student_logits.end()}));
  return kl_topk(z, indices, probs, indices.size()).value()[0];
}

template <typename T>
Var<T> mse_feature_loss(Var<T> teacher_output, Var<T> student_output) {
  return mse(student_output, teacher_output);
}

std::string to_string(DistillLoss loss) { return loss == DistillLoss::kKl ? "kl" : "mse"; }

DistillLoss parse_distill_loss(const std::string& name) {
  if (name == "kl") return DistillLoss::kKl;
  if (name == "mse") return DistillLoss::kMse;
  throw InputError("unknown distillation loss '" + name + "' (kl, mse)");
}

template <typename T>
Var<T> distill_batch_loss(const BoundModel<T>& bound, const LogitsCache& cache, const TokenStream& corpus,
                          std::span<const std::size_t> windows, std::size_t k) {
  if (k == 0 || k > cache.k) throw InputError("top-K " + std::to_string(k) + " exceeds cached K " + std::to_string(cache.k));
  const std::size_t len = cache.seq_len;
  std::vector<std::size_t> offsets;
  std::vector<std::uint32_t> idx;
  std::vector<float> probs;
  for (auto w : windows) {
    if (w >= cache.sequences) throw InputError("window " + std::to_string(w) + " not in cache");
    offsets.push_back(w * len);
    for (std::size_t p = w * len; p < (w + 1) * len; ++p) {
      const auto ci = cache.indices_at(p);
      const auto cp = cache.probs_at(p);
      idx.insert(idx.end(), ci.begin(), ci.begin() + static_cast<std::ptrdiff_t>(k));
      probs.insert(probs.end(), cp.begin(), cp.begin() + static_cast<std::ptrdiff_t>(k));
    }
  }
  Var<T> logits = forward_on_tape(bound, window_batch(corpus, offsets, len));
  const std::size_t v = logits.value().dim(2);
  if (v != cache.vocab) throw InputError("student vocab " + std::to_string(v) + " != cache vocab " + std::to_string(cache.vocab));
  return kl_topk(reshape(logits, {offsets.size() * len, v}), idx, probs, k);
}

DistillResult distill_patch(Model& student, const LogitsCache& cache, const TokenStream& corpus,
                            const DistillConfig& config, const FeatureTeacher& feature) {
  if (student.patch_slots.empty()) throw ContractError("distill_patch needs at least one registered patch");
  if (config.batch_size == 0 || config.epochs == 0) throw InputError("distillation needs positive batch size and epochs");
  const bool kl = config.loss == DistillLoss::kKl;
  const std::size_t k = std::min<std::size_t>(config.k, student.config.vocab_size);
  if (kl) {
    if (cache.vocab != student.config.vocab_size) {
      throw InputError("cache vocab " + std::to_string(cache.vocab) + " != student vocab " +
                       std::to_string(student.config.vocab_size));
    }
    if (k > cache.k) throw InputError("requested K " + std::to_string(k) + " exceeds cached K " + std::to_string(cache.k));
    if (cache.seq_len > student.config.max_seq_len) throw InputError("cache sequence length exceeds student maximum");
    const std::size_t avail = count_windows(corpus.size(), cache.seq_len);
    if (avail < cache.sequences) {
      throw InputError("corpus has " + std::to_string(avail) + " windows but cache covers " +
                       std::to_string(cache.sequences));
    }
  } else {
    if (!feature.model) throw ContractError("MSE distillation needs the dense model as feature teacher");
    if (student.patch_slots.size() != 1) throw ContractError("MSE distillation supports exactly one patch slot");
    if (feature.teacher_layer > feature.model->config.n_layers) throw InputError("feature teacher layer out of range");
    if (cache.seq_len == 0) throw InputError("MSE distillation takes its windows from the cache header");
  }
  const std::size_t n = std::min<std::size_t>(config.samples, cache.sequences);
  if (n == 0) throw InputError("no distillation samples");

  std::vector<Tensor<float>*> params;
  std::vector<Tensor<float>> masks;
  for (auto& [key, p] : student.patch_slots) params.push_back(&p.matrix);
  if (config.diagonal_only) {
    for (auto* p : params) masks.push_back(Tensor<float>::identity(p->rows()));
  }
  std::vector<const Tensor<float>*> mask_ptrs;
  for (auto& m : masks) mask_ptrs.push_back(&m);
  const std::vector<bool> decay(params.size(), true);
  AdamW<float> opt(params, config.adam);

  DistillResult res;
  res.samples = n;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(config.seed);
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_sum = 0;
    std::size_t epoch_steps = 0;
    for (std::size_t first = 0; first < n; first += config.batch_size) {
      const std::size_t count = std::min(config.batch_size, n - first);
      const std::span<const std::size_t> windows(order.data() + first, count);
      Tape<float> tape;
      const auto bound = bind(tape, student, Trainable::kPatches);
      Var<float> loss;
      if (kl) {
        loss = distill_batch_loss(bound, cache, corpus, windows, k);
      } else {
        std::vector<std::size_t> offsets;
        for (auto w : windows) offsets.push_back(w * cache.seq_len);
        const TokenBatch batch = window_batch(corpus, offsets, cache.seq_len);
        std::vector<Var<float>> inputs;
        forward_on_tape(bound, batch, &inputs);
        const SlotKey slot = student.patch_slots.begin()->first;
        const auto [_, trace] = forward_traced(*feature.model, batch);
        loss = mse_feature_loss(tape.leaf(trace.states[feature.teacher_layer]), inputs[slot.layer]);
      }
      tape.backward(loss);
      std::vector<Tensor<float>> grads;
      for (const auto& [key, var] : bound.patches) grads.push_back(tape.grad_or_zeros(var));
      std::vector<const Tensor<float>*> gptr;
      for (auto& g : grads) gptr.push_back(&g);
      if (config.lr != 0) opt.step(gptr, config.lr, decay, mask_ptrs);
      const double l = loss.value()[0];
      res.step_losses.push_back(l);
      epoch_sum += l;
      ++epoch_steps;
    }
    res.epoch_losses.push_back(epoch_sum / static_cast<double>(epoch_steps));
  }
  for (auto& [key, p] : student.patch_slots) p.trained = true;
  return res;
}

template void append_topk(LogitsCache&, const Tensor<float>&);
template void append_topk(LogitsCache&, const Tensor<double>&);
template Var<float> mse_feature_loss(Var<float>, Var<float>);
template Var<double> mse_feature_loss(Var<double>, Var<double>);
template Var<float> distill_batch_loss(const BoundModel<float>&, const LogitsCache&, const TokenStream&,
                                       std::span<const std::size_t>, std::size_t);
template Var<double> distill_batch_loss(const BoundModel<double>&, const LogitsCache&, const TokenStream&,
                                        std::span<const std::size_t>, std::size_t);

}  // namespace linpatch
