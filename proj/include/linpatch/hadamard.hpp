#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "linpatch/tensor.hpp"

namespace linpatch {

// Orthonormal Hadamard matrix: H^T H = I and every |entry| = 1/sqrt(size).
struct HadamardMatrix {
  std::size_t size = 0;
  TensorD entries;  // [size, size]

  template <typename T>
  Tensor<T> as() const {
    return entries.cast<T>();
  }
};

// size = power_of_two * paley_order, paley_order == 1 for the pure Walsh case.
struct HadamardFactorization {
  std::size_t power_of_two = 1;
  std::size_t paley_order = 1;
};

// Sylvester/Walsh construction of size 2^exponent, normalised by 1/sqrt(2) per level.
HadamardMatrix walsh_hadamard(unsigned exponent);

// True when m - 1 is a prime congruent to 3 mod 4.
bool paley_supported(std::size_t m);
std::vector<std::size_t> paley_sizes(std::size_t limit);

// Unnormalised +-1 Paley type-I matrix M of order m, with M^T M = m I. Row-major, m*m entries.
std::vector<std::int32_t> paley_hadamard(std::size_t m);

// Picks the largest power of two 2^a dividing `size` whose cofactor is 1 or a
// Paley order. std::nullopt when none exists.
std::optional<HadamardFactorization> factor_hadamard(std::size_t size);

// H_C = H_{2^a} (x) (M_m / sqrt(m)).
HadamardMatrix build_hadamard(std::size_t size);

// Kronecker product of two matrices.
TensorD kronecker(const TensorD& a, const TensorD& b);

}  // namespace linpatch
