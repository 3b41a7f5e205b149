#include "linpatch/corpus.hpp"

#include <fstream>
#include <iterator>
#include <random>

namespace linpatch {

TokenStream load_corpus(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FileError("cannot open corpus '" + path + "'");
  const std::string text{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  return tokens_from_text(text);
}

TokenStream tokens_from_text(std::string_view text) {
  TokenStream out;
  out.reserve(text.size());
  for (char ch : text) out.push_back(static_cast<unsigned char>(ch));
  return out;
}

std::size_t count_windows(std::size_t n_tokens, std::size_t seq_len) {
  if (seq_len == 0 || n_tokens < 2) return 0;
  return (n_tokens - 1) / seq_len;
}

TokenBatch window_batch(const TokenStream& tokens, std::span<const std::size_t> offsets, std::size_t seq_len) {
  TokenBatch b;
  b.batch = offsets.size();
  b.seq_len = seq_len;
  b.ids.reserve(offsets.size() * seq_len);
  for (auto o : offsets) {
    if (o + seq_len > tokens.size()) throw InputError("window at offset " + std::to_string(o) + " runs past corpus end");
    b.ids.insert(b.ids.end(), tokens.begin() + static_cast<std::ptrdiff_t>(o),
                 tokens.begin() + static_cast<std::ptrdiff_t>(o + seq_len));
  }
  return b;
}

std::vector<std::uint32_t> window_targets(const TokenStream& tokens, std::span<const std::size_t> offsets,
                                          std::size_t seq_len) {
  std::vector<std::uint32_t> out;
  out.reserve(offsets.size() * seq_len);
  for (auto o : offsets) {
    if (o + 1 + seq_len > tokens.size()) {
      throw InputError("target window at offset " + std::to_string(o) + " runs past corpus end");
    }
    out.insert(out.end(), tokens.begin() + static_cast<std::ptrdiff_t>(o + 1),
               tokens.begin() + static_cast<std::ptrdiff_t>(o + 1 + seq_len));
  }
  return out;
}

std::vector<std::size_t> sequential_offsets(std::size_t n_tokens, std::size_t seq_len, std::size_t count) {
  std::size_t n = count_windows(n_tokens, seq_len);
  if (count > 0) n = std::min(n, count);
  std::vector<std::size_t> out(n);
  for (std::size_t w = 0; w < n; ++w) out[w] = w * seq_len;
  return out;
}

std::vector<std::size_t> random_offsets(std::size_t n_tokens, std::size_t seq_len, std::size_t count,
                                        std::uint64_t seed) {
  if (n_tokens < seq_len + 1) throw InputError("corpus shorter than one window of " + std::to_string(seq_len + 1));
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> dist(0, n_tokens - seq_len - 1);
  std::vector<std::size_t> out(count);
  for (auto& o : out) o = dist(rng);
  return out;
}

std::pair<TokenStream, TokenStream> split_interleaved(const TokenStream& tokens, std::size_t chunk, std::size_t every) {
  if (chunk == 0 || every < 2) throw InputError("split needs chunk > 0 and every >= 2");
  TokenStream train, held;
  for (std::size_t start = 0, idx = 0; start < tokens.size(); start += chunk, ++idx) {
    const std::size_t end = std::min(tokens.size(), start + chunk);
    auto& dst = (idx % every == every - 1) ? held : train;
    dst.insert(dst.end(), tokens.begin() + static_cast<std::ptrdiff_t>(start),
               tokens.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return {std::move(train), std::move(held)};
}

}  // namespace linpatch
