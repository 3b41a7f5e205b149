#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "doctest.h"
#include "linpatch/autodiff.hpp"
#include "linpatch/errors.hpp"
#include "oracles.hpp"

using namespace linpatch;

TEST_CASE("matmul identity and small cases") {
  const TensorD a({2, 2}, {1, 2, 3, 4});
  CHECK(matmul(a, TensorD::identity(2)) == a);
  const TensorD b({2, 1}, {5, 7});
  CHECK(matmul(TensorD::identity(2), b) == b);
}

TEST_CASE("matmul matches triple loop") {
  std::mt19937_64 rng(7);
  for (int rep = 0; rep < 20; ++rep) {
    const auto a = oracle::random({3, 4}, rng);
    const auto b = oracle::random({4, 2}, rng);
    CHECK(max_abs_diff(matmul(a, b), oracle::matmul(a, b)) < 1e-6);
  }
  const auto a = oracle::random({37, 53}, rng);
  const auto b = oracle::random({53, 29}, rng);
  CHECK(max_abs_diff(matmul(a, b), oracle::matmul(a, b)) < 1e-12);
  const auto af = a.cast<float>(), bf = b.cast<float>();
  CHECK(max_abs_diff(matmul(af, bf).cast<double>(), oracle::matmul(a, b)) < 1e-4);
}

TEST_CASE("matmul over leading dims") {
  std::mt19937_64 rng(8);
  const auto x = oracle::random({2, 3, 4}, rng);
  const auto w = oracle::random({4, 5}, rng);
  const auto y = matmul(x, w);
  CHECK(y.shape() == Shape{2, 3, 5});
  TensorD flat = x;
  flat.reshape({6, 4});
  CHECK(max_abs_diff(y.reshaped({6, 5}), oracle::matmul(flat, w)) < 1e-12);
}

TEST_CASE("matmul shape mismatch names both shapes") {
  const TensorD a({2, 3}), b({4, 2});
  try {
    matmul(a, b);
    FAIL("expected a dimension error");
  } catch (const InputError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2x3]") != std::string::npos);
    CHECK(msg.find("[4x2]") != std::string::npos);
  }
}

TEST_CASE("matmul with identity is bitwise stable") {
  std::mt19937_64 rng(9);
  const auto x = oracle::random({8, 16}, rng).cast<float>();
  const auto w = oracle::random({16, 8}, rng).cast<float>();
  CHECK(matmul(matmul(x, TensorF::identity(16)), w) == matmul(x, w));
}

TEST_CASE("softmax values") {
  auto s = softmax(TensorD({2}, {0, 0}), 0);
  CHECK(s[0] == doctest::Approx(0.5));
  CHECK(s[1] == doctest::Approx(0.5));
  s = softmax(TensorD({2}, {3, -1e9}), 0);
  CHECK(s[0] == doctest::Approx(1.0));
  CHECK(s[1] < 1e-300);
  const auto f = softmax(TensorF({3}, {1, 2, 3}), 0);
  const long double z = std::exp(1.0L) + std::exp(2.0L) + std::exp(3.0L);
  for (int i = 0; i < 3; ++i) CHECK(std::abs(f[i] - static_cast<double>(std::exp(i + 1.0L) / z)) < 1e-7);
}

TEST_CASE("softmax rows sum to one and are permutation equivariant") {
  std::mt19937_64 rng(10);
  const auto x = oracle::random({5, 9}, rng, -20, 20);
  const auto s = softmax(x, 1);
  for (std::size_t r = 0; r < 5; ++r) {
    double t = 0;
    for (std::size_t j = 0; j < 9; ++j) {
      CHECK(s[r * 9 + j] > 0);
      CHECK(s[r * 9 + j] <= 1);
      t += s[r * 9 + j];
    }
    CHECK(std::abs(t - 1) < 1e-6);
  }
  std::vector<std::size_t> perm(9);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  TensorD px({1, 9});
  for (std::size_t j = 0; j < 9; ++j) px[j] = x[perm[j]];
  const auto ps = softmax(px, 1);
  for (std::size_t j = 0; j < 9; ++j) CHECK(ps[j] == doctest::Approx(s[perm[j]]).epsilon(1e-14));
}

TEST_CASE("softmax along axis 0") {
  const TensorD x({2, 2}, {0, 1, 0, 1});
  const auto s = softmax(x, 0);
  for (auto v : s.values()) CHECK(v == doctest::Approx(0.5));
}

TEST_CASE("check_finite names the op") {
  TensorF t({2}, {1.0f, std::numeric_limits<float>::quiet_NaN()});
  try {
    check_finite(t, "probe_op");
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("probe_op") != std::string::npos);
  }
}

TEST_CASE("tape ops refuse to produce NaN") {
  Tape<double> tape;
  auto x = tape.leaf(TensorD({2}, {1e308, 1e308}));
  CHECK_THROWS_AS(add(x, x), NumericError);
}

TEST_CASE("backward basics") {
  Tape<double> tape;
  std::mt19937_64 rng(1);
  auto x = tape.leaf(oracle::random({3, 4}, rng), true);
  tape.backward(sum(x));
  for (auto v : tape.grad(x)->values()) CHECK(v == 1.0);

  Tape<double> t2;
  auto y = t2.leaf(oracle::random({2, 5}, rng), true);
  t2.backward(scale(sum(mul(y, y)), 0.5));
  CHECK(max_abs_diff(*t2.grad(y), y.value()) < 1e-15);
}

TEST_CASE("backward on non-scalar is a contract error") {
  Tape<double> tape;
  auto x = tape.leaf(TensorD({2}, {1, 2}), true);
  CHECK_THROWS_AS(tape.backward(scale(x, 2.0)), ContractError);
}

TEST_CASE("frozen tensors receive no gradient") {
  Tape<double> tape;
  auto a = tape.leaf(TensorD({2, 2}, {1, 2, 3, 4}), true);
  auto b = tape.leaf(TensorD({2, 2}, {5, 6, 7, 8}), false);
  tape.backward(sum(matmul(a, b)));
  CHECK(tape.grad(a) != nullptr);
  CHECK(tape.grad(b) == nullptr);
  CHECK_FALSE(b.requires_grad());
}

TEST_CASE("gradients accumulate for reused values") {
  Tape<double> tape;
  auto x = tape.leaf(TensorD({3}, {1, -2, 3}), true);
  tape.backward(sum(add(add(x, x), x)));
  for (auto v : tape.grad(x)->values()) CHECK(v == 3.0);
}

namespace {

// Weighted sum so every output element contributes a distinct gradient.
double probe(Tape<double>& t, Var<double> out, const TensorD& w) { return sum(mul(out, t.leaf(w))).value()[0]; }

using OpFn = std::function<Var<double>(Tape<double>&, Var<double>)>;

void check_op(const OpFn& op, TensorD x0, std::uint64_t seed, double tol = 1e-4) {
  std::mt19937_64 rng(seed);
  TensorD w;
  {
    Tape<double> t;
    w = oracle::random(op(t, t.leaf(x0)).shape(), rng);
  }
  Tape<double> t;
  auto x = t.leaf(x0, true);
  t.backward(sum(mul(op(t, x), t.leaf(w))));
  const TensorD analytic = t.grad_or_zeros(x);
  const TensorD numeric = oracle::numeric_grad(
      [&](const TensorD& xv) {
        Tape<double> tt;
        return probe(tt, op(tt, tt.leaf(xv)), w);
      },
      x0);
  CHECK(oracle::max_rel_err(analytic, numeric, 1e-4) < tol);
}

}  // namespace

TEST_CASE("finite-difference gradients of every primitive") {
  std::mt19937_64 rng(42);
  const auto b = oracle::random({4, 3}, rng);
  const auto other = oracle::random({2, 4}, rng);
  SUBCASE("matmul lhs") {
    check_op([&](Tape<double>& t, Var<double> x) { return matmul(x, t.leaf(b)); }, oracle::random({2, 4}, rng), 1);
  }
  SUBCASE("matmul rhs") {
    check_op([&](Tape<double>& t, Var<double> x) { return matmul(t.leaf(other), x); }, oracle::random({4, 3}, rng), 2);
  }
  SUBCASE("add / sub / mul") {
    check_op([&](Tape<double>& t, Var<double> x) { return add(x, t.leaf(other)); }, oracle::random({2, 4}, rng), 3);
    check_op([&](Tape<double>& t, Var<double> x) { return sub(t.leaf(other), x); }, oracle::random({2, 4}, rng), 4);
    check_op([&](Tape<double>& t, Var<double> x) { return mul(x, t.leaf(other)); }, oracle::random({2, 4}, rng), 5);
    check_op([&](Tape<double>&, Var<double> x) { return mul(x, x); }, oracle::random({2, 4}, rng), 6);
  }
  SUBCASE("scale / reshape") {
    check_op([&](Tape<double>&, Var<double> x) { return scale(x, -1.5); }, oracle::random({2, 4}, rng), 7);
    check_op([&](Tape<double>&, Var<double> x) { return reshape(x, {4, 2}); }, oracle::random({2, 4}, rng), 8);
  }
  SUBCASE("gelu") {
    check_op([&](Tape<double>&, Var<double> x) { return gelu(x); }, oracle::random({3, 5}, rng, -3, 3), 9);
  }
  SUBCASE("rms_norm input and gain") {
    const auto g = oracle::random({5}, rng, 0.5, 1.5);
    check_op([&](Tape<double>& t, Var<double> x) { return rms_norm(x, t.leaf(g), 1e-5); }, oracle::random({3, 5}, rng),
             10);
    const auto xin = oracle::random({3, 5}, rng);
    check_op([&](Tape<double>& t, Var<double> gv) { return rms_norm(t.leaf(xin), gv, 1e-5); }, g, 11);
  }
  SUBCASE("embedding") {
    const std::vector<std::uint32_t> ids{2, 0, 2, 1};
    check_op([&](Tape<double>&, Var<double> table) { return embedding(table, ids, Shape{2, 2}); },
             oracle::random({3, 4}, rng), 12);
  }
  SUBCASE("causal attention") {
    check_op([&](Tape<double>&, Var<double> qkv) { return causal_attention(qkv, 2); }, oracle::random({2, 5, 12}, rng),
             13);
  }
  SUBCASE("softmax / sum / mean") {
    check_op([&](Tape<double>&, Var<double> x) { return softmax(x); }, oracle::random({3, 6}, rng, -2, 2), 14);
    check_op([&](Tape<double>&, Var<double> x) { return mean(x); }, oracle::random({3, 6}, rng), 15);
  }
  SUBCASE("cross entropy") {
    const std::vector<std::uint32_t> tg{1, 4, 0};
    check_op([&](Tape<double>&, Var<double> z) { return cross_entropy(z, tg); }, oracle::random({3, 6}, rng, -2, 2), 16);
  }
  SUBCASE("top-K KL") {
    const std::vector<std::uint32_t> idx{3, 1, 0, 5, 2, 4};
    const std::vector<float> p{0.5f, 0.3f, 0.1f, 0.6f, 0.2f, 0.15f};
    check_op([&](Tape<double>&, Var<double> z) { return kl_topk(z, idx, p, 3); }, oracle::random({2, 6}, rng, -2, 2),
             17);
  }
  SUBCASE("mse") {
    const auto tgt = oracle::random({3, 4}, rng);
    check_op([&](Tape<double>& t, Var<double> x) { return mse(x, t.leaf(tgt)); }, oracle::random({3, 4}, rng), 18);
  }
}

TEST_CASE("causal attention is causal") {
  std::mt19937_64 rng(3);
  auto qkv = oracle::random({1, 6, 12}, rng);
  Tape<double> t1;
  const auto y1 = causal_attention(t1.leaf(qkv), 2).value();
  for (std::size_t j = 0; j < 12; ++j) qkv[4 * 12 + j] += 1.0;
  Tape<double> t2;
  const auto y2 = causal_attention(t2.leaf(qkv), 2).value();
  for (std::size_t i = 0; i < 4 * 4; ++i) CHECK(y1[i] == y2[i]);
  bool changed = false;
  for (std::size_t i = 4 * 4; i < 6 * 4; ++i) changed |= y1[i] != y2[i];
  CHECK(changed);
}

TEST_CASE("kl_topk hand value and errors") {
  Tape<double> t;
  auto z = t.leaf(TensorD({1, 3}, {0.0, 0.0, 5.0}));
  const std::vector<std::uint32_t> idx{0, 1};
  const std::vector<float> p{0.75f, 0.25f};
  const double expect = 0.75 * std::log(1.5) + 0.25 * std::log(0.5);
  CHECK(kl_topk(z, idx, p, 2).value()[0] == doctest::Approx(expect).epsilon(1e-12));
  CHECK(expect == doctest::Approx(0.13081).epsilon(1e-4));
  const std::vector<float> zero{0.0f, 0.0f};
  CHECK_THROWS_AS(kl_topk(z, idx, zero, 2), ContractError);
  const std::vector<std::uint32_t> bad{0, 7};
  CHECK_THROWS_AS(kl_topk(z, bad, p, 2), InputError);
}
