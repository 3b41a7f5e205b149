#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "linpatch/model.hpp"

namespace linpatch {

// Byte-level token stream (ids 0..255).
using TokenStream = std::vector<std::uint32_t>;

TokenStream load_corpus(const std::string& path);
TokenStream tokens_from_text(std::string_view text);

// Number of non-overlapping next-token windows: floor((n - 1) / seq_len).
std::size_t count_windows(std::size_t n_tokens, std::size_t seq_len);

// Inputs tokens[o, o + seq_len) for each offset o.
TokenBatch window_batch(const TokenStream& tokens, std::span<const std::size_t> offsets, std::size_t seq_len);
// Targets tokens[o + 1, o + 1 + seq_len) for each offset o.
std::vector<std::uint32_t> window_targets(const TokenStream& tokens, std::span<const std::size_t> offsets,
                                          std::size_t seq_len);

// Offsets w * seq_len of the first `count` non-overlapping windows (all when count == 0).
std::vector<std::size_t> sequential_offsets(std::size_t n_tokens, std::size_t seq_len, std::size_t count = 0);
// `count` uniformly drawn window starts leaving room for seq_len + 1 tokens.
std::vector<std::size_t> random_offsets(std::size_t n_tokens, std::size_t seq_len, std::size_t count,
                                        std::uint64_t seed);

// Splits into (train, held_out): every `every`-th chunk of `chunk` tokens is held out.
std::pair<TokenStream, TokenStream> split_interleaved(const TokenStream& tokens, std::size_t chunk, std::size_t every);

}  // namespace linpatch
