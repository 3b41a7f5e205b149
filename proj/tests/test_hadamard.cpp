#include <cmath>
#include <random>

#include "doctest.h"
#include "linpatch/errors.hpp"
#include "linpatch/hadamard.hpp"
#include "oracles.hpp"

using namespace linpatch;

namespace {

double orthogonality_error(const HadamardMatrix& h) {
  const auto hth = oracle::matmul(oracle::transpose(h.entries), h.entries);
  return max_abs_diff(hth, TensorD::identity(h.size));
}

bool is_prime(std::size_t q) {
  if (q < 2) return false;
  for (std::size_t f = 2; f * f <= q; ++f)
    if (q % f == 0) return false;
  return true;
}

}  // namespace

TEST_CASE("walsh base cases") {
  const auto h0 = walsh_hadamard(0);
  CHECK(h0.size == 1);
  CHECK(h0.entries[0] == 1.0);
  const auto h1 = walsh_hadamard(1);
  const double r = 1 / std::sqrt(2.0);
  CHECK(h1.entries[0] == doctest::Approx(r));
  CHECK(h1.entries[1] == doctest::Approx(r));
  CHECK(h1.entries[2] == doctest::Approx(r));
  CHECK(h1.entries[3] == doctest::Approx(-r));
}

TEST_CASE("walsh n=3 orthonormal with equal magnitudes") {
  const auto h = walsh_hadamard(3);
  CHECK(orthogonality_error(h) < 1e-7);
  for (auto v : h.entries.values()) CHECK(std::abs(std::abs(v) - 1 / std::sqrt(8.0)) < 1e-15);
}

TEST_CASE("walsh follows the Sylvester recursion") {
  for (unsigned n = 1; n <= 5; ++n) {
    const auto expect = kronecker(walsh_hadamard(1).entries, walsh_hadamard(n - 1).entries);
    CHECK(max_abs_diff(walsh_hadamard(n).entries, expect) < 1e-15);
  }
}

TEST_CASE("walsh size guard") { CHECK_THROWS_AS(walsh_hadamard(17), InputError); }

TEST_CASE("paley exact integer identity") {
  for (std::size_t m : {4u, 12u, 20u, 24u, 32u, 44u, 48u, 60u}) {
    CAPTURE(m);
    REQUIRE(paley_supported(m));
    const auto M = paley_hadamard(m);
    for (auto v : M) CHECK((v == 1 || v == -1));
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < m; ++j) {
        std::int64_t s = 0;
        for (std::size_t r = 0; r < m; ++r) s += static_cast<std::int64_t>(M[r * m + i]) * M[r * m + j];
        CHECK(s == (i == j ? static_cast<std::int64_t>(m) : 0));
      }
  }
}

TEST_CASE("paley support matches q prime, q = 3 mod 4") {
  for (std::size_t m = 2; m < 200; ++m) {
    CAPTURE(m);
    CHECK(paley_supported(m) == (is_prime(m - 1) && (m - 1) % 4 == 3));
  }
}

TEST_CASE("paley unsupported size lists supported sizes") {
  try {
    paley_hadamard(5);
    FAIL("expected InputError");
  } catch (const InputError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("12") != std::string::npos);
    CHECK(msg.find("20") != std::string::npos);
  }
}

TEST_CASE("factorization picks the largest power of two") {
  auto f = factor_hadamard(96);
  REQUIRE(f);
  CHECK(f->power_of_two == 8);
  CHECK(f->paley_order == 12);
  f = factor_hadamard(128);
  REQUIRE(f);
  CHECK(f->power_of_two == 128);
  CHECK(f->paley_order == 1);
  f = factor_hadamard(20);
  REQUIRE(f);
  CHECK(f->power_of_two == 1);
  CHECK(f->paley_order == 20);
  f = factor_hadamard(40);
  REQUIRE(f);
  CHECK(f->power_of_two * f->paley_order == 40);
  CHECK_FALSE(factor_hadamard(10));
  CHECK_FALSE(factor_hadamard(0));
}

TEST_CASE("build_hadamard orthogonality across sizes") {
  for (std::size_t c : {1u, 2u, 4u, 8u, 16u, 32u, 64u, 128u, 256u, 12u, 24u, 48u, 96u, 192u, 20u, 40u}) {
    CAPTURE(c);
    const auto h = build_hadamard(c);
    CHECK(h.size == c);
    CHECK(orthogonality_error(h) < 1e-6);
    for (auto v : h.entries.values()) CHECK(std::abs(std::abs(v) - 1 / std::sqrt(double(c))) < 1e-12);
  }
  CHECK_THROWS_AS(build_hadamard(10), InputError);
}

TEST_CASE("rotation preserves norms and inverts by transpose") {
  std::mt19937_64 rng(5);
  for (std::size_t c : {8u, 64u, 96u}) {
    const auto h = build_hadamard(c);
    const auto x = oracle::random({10, c}, rng);
    const auto xh = matmul(x, h.entries);
    double n0 = 0, n1 = 0;
    for (auto v : x.values()) n0 += v * v;
    for (auto v : xh.values()) n1 += v * v;
    CHECK(std::abs(std::sqrt(n1) - std::sqrt(n0)) / std::sqrt(n0) < 1e-5);
    const auto back = matmul(xh, transpose(h.entries));
    CHECK(max_abs_diff(back, x) / oracle::max_abs(x) < 1e-5);
  }
}

TEST_CASE("a one-hot spike spreads evenly") {
  const std::size_t c = 64;
  const auto h = build_hadamard(c);
  for (std::size_t k : {0u, 17u, 63u}) {
    TensorD e({1, c});
    e[k] = 1000.0;
    const auto r = matmul(e, h.entries);
    for (auto v : r.values()) CHECK(std::abs(std::abs(v) - 1000.0 / 8.0) < 1e-9);
  }
}
