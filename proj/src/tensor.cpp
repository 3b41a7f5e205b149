#include "linpatch/tensor.hpp"

#include <cblas.h>

#include <algorithm>
#include <cmath>
#include <sstream>

namespace linpatch {

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

template <>
void gemm<float>(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, const float* a,
                 const float* b, float* c, bool accumulate) {
  if (m == 0 || n == 0) return;
  if (k == 0) {
    if (!accumulate) std::fill(c, c + m * n, 0.0f);
    return;
  }
  cblas_sgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans, trans_b ? CblasTrans : CblasNoTrans,
              static_cast<int>(m), static_cast<int>(n), static_cast<int>(k), 1.0f, a,
              static_cast<int>(trans_a ? m : k), b, static_cast<int>(trans_b ? k : n), accumulate ? 1.0f : 0.0f, c,
              static_cast<int>(n));
}

template <>
void gemm<double>(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, const double* a,
                  const double* b, double* c, bool accumulate) {
  if (m == 0 || n == 0) return;
  if (k == 0) {
    if (!accumulate) std::fill(c, c + m * n, 0.0);
    return;
  }
  cblas_dgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans, trans_b ? CblasTrans : CblasNoTrans,
              static_cast<int>(m), static_cast<int>(n), static_cast<int>(k), 1.0, a,
              static_cast<int>(trans_a ? m : k), b, static_cast<int>(trans_b ? k : n), accumulate ? 1.0 : 0.0, c,
              static_cast<int>(n));
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() < 2 || b.rank() != 2 || a.cols() != b.dim(0)) {
    throw InputError("matmul dimension mismatch: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  Shape out_shape = a.shape();
  out_shape.back() = b.dim(1);
  Tensor<T> out(out_shape);
  gemm<T>(false, false, a.rows(), b.dim(1), a.cols(), a.data(), b.data(), out.data(), false);
  return out;
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
  if (a.rank() != 2) throw InputError("transpose expects a matrix, got " + shape_str(a.shape()));
  const std::size_t r = a.dim(0), c = a.dim(1);
  Tensor<T> out({c, r});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = a[i * c + j];
  return out;
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& x, std::size_t axis) {
  if (axis >= x.rank()) throw InputError("softmax axis " + std::to_string(axis) + " out of range");
  std::size_t inner = 1;
  for (std::size_t i = axis + 1; i < x.rank(); ++i) inner *= x.dim(i);
  const std::size_t len = x.dim(axis);
  const std::size_t outer = len == 0 ? 0 : x.numel() / (len * inner);
  Tensor<T> out(x.shape());
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const std::size_t base = o * len * inner + in;
      T mx = x[base];
      for (std::size_t j = 1; j < len; ++j) mx = std::max(mx, x[base + j * inner]);
      T sum = 0;
      for (std::size_t j = 0; j < len; ++j) {
        const T e = std::exp(x[base + j * inner] - mx);
        out[base + j * inner] = e;
        sum += e;
      }
      for (std::size_t j = 0; j < len; ++j) out[base + j * inner] /= sum;
    }
  }
  check_finite(out, "softmax");
  return out;
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) {
    throw InputError("add shape mismatch: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  Tensor<T> out = a;
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] += b[i];
  return out;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T s) {
  Tensor<T> out = a;
  for (auto& v : out.values()) v *= s;
  return out;
}

template <typename T>
void check_finite(const Tensor<T>& t, const char* op) {
  for (std::size_t i = 0; i < t.numel(); ++i) {
    if (!std::isfinite(t[i])) {
      throw NumericError(std::string("non-finite value produced by ") + op + " at flat index " + std::to_string(i) +
                         " of " + shape_str(t.shape()));
    }
  }
}

template <typename T>
double max_abs(const Tensor<T>& t) {
  double m = 0;
  for (auto v : t.values()) m = std::max(m, std::abs(static_cast<double>(v)));
  return m;
}

template <typename T>
double max_abs_diff(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) {
    throw InputError("shape mismatch: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  double m = 0;
  for (std::size_t i = 0; i < a.numel(); ++i)
    m = std::max(m, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
  return m;
}

#define LINPATCH_INSTANTIATE(T)                                   \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&); \
  template Tensor<T> transpose(const Tensor<T>&);                \
  template Tensor<T> softmax(const Tensor<T>&, std::size_t);     \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);    \
  template Tensor<T> scale(const Tensor<T>&, T);                 \
  template void check_finite(const Tensor<T>&, const char*);     \
  template double max_abs(const Tensor<T>&);                     \
  template double max_abs_diff(const Tensor<T>&, const Tensor<T>&);

LINPATCH_INSTANTIATE(float)
LINPATCH_INSTANTIATE(double)
#undef LINPATCH_INSTANTIATE

}  // namespace linpatch
