#include "linpatch/hadamard.hpp"

#include <cmath>
#include <sstream>
#include <string>

namespace linpatch {

namespace {

constexpr unsigned kMaxExponent = 16;

bool is_prime(std::size_t n) {
  if (n < 2) return false;
  for (std::size_t d = 2; d * d <= n; ++d)
    if (n % d == 0) return false;
  return true;
}

// Legendre symbol (a | q) for odd prime q, a reduced mod q.
int quadratic_character(std::size_t a, std::size_t q) {
  a %= q;
  if (a == 0) return 0;
  for (std::size_t x = 1; x < q; ++x)
    if ((x * x) % q == a) return 1;
  return -1;
}

std::string supported_list() {
  std::ostringstream os;
  const auto sizes = paley_sizes(100);
  for (std::size_t i = 0; i < sizes.size(); ++i) os << (i ? ", " : "") << sizes[i];
  os << ", ...";
  return os.str();
}

}  // namespace

HadamardMatrix walsh_hadamard(unsigned exponent) {
  if (exponent > kMaxExponent) {
    throw InputError("Walsh-Hadamard size 2^" + std::to_string(exponent) + " exceeds the 2^16 limit");
  }
  const double r = 1.0 / std::sqrt(2.0);
  TensorD h({1, 1}, {1.0});
  const TensorD h2({2, 2}, {r, r, r, -r});
  for (unsigned i = 0; i < exponent; ++i) h = kronecker(h2, h);
  return {h.dim(0), std::move(h)};
}

bool paley_supported(std::size_t m) {
  if (m < 4) return false;
  const std::size_t q = m - 1;
  return q % 4 == 3 && is_prime(q);
}

std::vector<std::size_t> paley_sizes(std::size_t limit) {
  std::vector<std::size_t> out;
  for (std::size_t m = 4; m <= limit; ++m)
    if (paley_supported(m)) out.push_back(m);
  return out;
}

std::vector<std::int32_t> paley_hadamard(std::size_t m) {
  if (!paley_supported(m)) {
    throw InputError("unsupported Paley order " + std::to_string(m) + "; supported orders are m = q + 1 with q prime, "
                     "q = 3 mod 4: " + supported_list());
  }
  const std::size_t q = m - 1;
  // S = [[0, 1^T], [-1, Q]] with Jacobsthal Q_ij = chi(j - i); M = I + S.
  std::vector<std::int32_t> h(m * m, 0);
  for (std::size_t i = 0; i < m; ++i) h[i * m + i] = 1;
  for (std::size_t j = 1; j < m; ++j) {
    h[0 * m + j] += 1;
    h[j * m + 0] -= 1;
  }
  for (std::size_t i = 0; i < q; ++i) {
    for (std::size_t j = 0; j < q; ++j) {
      if (i == j) continue;
      h[(i + 1) * m + (j + 1)] += quadratic_character((j + q - i) % q, q);
    }
  }
  return h;
}

std::optional<HadamardFactorization> factor_hadamard(std::size_t size) {
  if (size == 0) return std::nullopt;
  std::size_t pow2 = 1;
  while (size % (pow2 * 2) == 0) pow2 *= 2;
  for (; pow2 >= 1; pow2 /= 2) {
    const std::size_t m = size / pow2;
    if (m == 1 || paley_supported(m)) return HadamardFactorization{pow2, m};
    if (pow2 == 1) break;
  }
  return std::nullopt;
}

HadamardMatrix build_hadamard(std::size_t size) {
  const auto f = factor_hadamard(size);
  if (!f) {
    throw InputError("no Hadamard construction for size " + std::to_string(size) +
                     "; need 2^a * m with m = 1 or a Paley order (" + supported_list() + ")");
  }
  unsigned exponent = 0;
  while ((std::size_t{1} << exponent) < f->power_of_two) ++exponent;
  HadamardMatrix walsh = walsh_hadamard(exponent);
  if (f->paley_order == 1) return walsh;
  const std::size_t m = f->paley_order;
  const auto raw = paley_hadamard(m);
  TensorD factor({m, m});
  const double norm = 1.0 / std::sqrt(static_cast<double>(m));
  for (std::size_t i = 0; i < m * m; ++i) factor[i] = raw[i] * norm;
  TensorD h = kronecker(walsh.entries, factor);
  return {size, std::move(h)};
}

TensorD kronecker(const TensorD& a, const TensorD& b) {
  if (a.rank() != 2 || b.rank() != 2) throw InputError("kronecker expects matrices");
  const std::size_t ar = a.dim(0), ac = a.dim(1), br = b.dim(0), bc = b.dim(1);
  TensorD out({ar * br, ac * bc});
  for (std::size_t i = 0; i < ar; ++i)
    for (std::size_t j = 0; j < ac; ++j)
      for (std::size_t k = 0; k < br; ++k)
        for (std::size_t l = 0; l < bc; ++l) out.at(i * br + k, j * bc + l) = a.at(i, j) * b.at(k, l);
  return out;
}

}  // namespace linpatch
