#include "aufa/kernels.hpp"

#include <algorithm>

#include "aufa/error.hpp"

namespace aufa::kernels {
namespace {

bool g_serial = false;

// Below this many multiply-adds the fork/join overhead dominates.
constexpr std::size_t kParallelWork = 1 << 15;

bool go_parallel(std::size_t work) { return !g_serial && work >= kParallelWork; }

void check(bool ok, const char* op, const Matrix& a, const Matrix& b) {
  if (!ok) {
    throw Error(ErrorKind::DimensionMismatch,
                std::string(op) + ": " + a.shape_string() + " vs " + b.shape_string());
  }
}

void prepare(Matrix& c, std::size_t rows, std::size_t cols, bool accumulate) {
  if (accumulate) {
    if (c.rows() != rows || c.cols() != cols) {
      throw Error(ErrorKind::DimensionMismatch, "accumulate target has shape " + c.shape_string());
    }
  } else if (c.rows() != rows || c.cols() != cols) {
    c = Matrix(rows, cols);
  }
}

// Row-blocked i-k-j product; the innermost loop is contiguous in b and c.
void gemm_rows(const double* a, std::size_t lda, const double* b, double* c, std::size_t m,
               std::size_t k, std::size_t n, bool accumulate) {
  const bool par = go_parallel(m * k * n);
#pragma omp parallel for schedule(static) if (par)
  for (std::ptrdiff_t ii = 0; ii < static_cast<std::ptrdiff_t>(m); ++ii) {
    const auto i = static_cast<std::size_t>(ii);
    double* crow = c + i * n;
    if (!accumulate) std::fill(crow, crow + n, 0.0);
    const double* arow = a + i * lda;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = arow[p];
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
    }
  }
}

}  // namespace

void set_serial(bool serial) { g_serial = serial; }
bool serial() { return g_serial; }

void gemm_nn(const Matrix& a, const Matrix& b, Matrix& c, bool accumulate) {
  check(a.cols() == b.rows(), "gemm_nn", a, b);
  prepare(c, a.rows(), b.cols(), accumulate);
  gemm_rows(a.data(), a.cols(), b.data(), c.data(), a.rows(), a.cols(), b.cols(), accumulate);
}

void gemm_nt(const Matrix& a, const Matrix& b, Matrix& c, bool accumulate) {
  check(a.cols() == b.cols(), "gemm_nt", a, b);
  prepare(c, a.rows(), b.rows(), accumulate);
  const Matrix bt = b.transposed();
  gemm_rows(a.data(), a.cols(), bt.data(), c.data(), a.rows(), a.cols(), b.rows(), accumulate);
}

void gemm_tn(const Matrix& a, const Matrix& b, Matrix& c, bool accumulate) {
  check(a.rows() == b.rows(), "gemm_tn", a, b);
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  prepare(c, k, n, accumulate);
  const bool par = go_parallel(m * k * n);
  const double* ad = a.data();
  const double* bd = b.data();
  double* cd = c.data();
#pragma omp parallel for schedule(static) if (par)
  for (std::ptrdiff_t ii = 0; ii < static_cast<std::ptrdiff_t>(k); ++ii) {
    const auto i = static_cast<std::size_t>(ii);
    double* crow = cd + i * n;
    if (!accumulate) std::fill(crow, crow + n, 0.0);
    for (std::size_t r = 0; r < m; ++r) {
      const double ari = ad[r * k + i];
      const double* brow = bd + r * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += ari * brow[j];
    }
  }
}

void axpy(double alpha, const Matrix& x, Matrix& y) {
  check(x.same_shape(y), "axpy", x, y);
  const std::size_t n = x.size();
  const double* xd = x.data();
  double* yd = y.data();
#pragma omp parallel for schedule(static) if (go_parallel(n))
  for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(n); ++i) yd[i] += alpha * xd[i];
}

namespace reference {

void gemm_nn(const Matrix& a, const Matrix& b, Matrix& c, bool accumulate) {
  check(a.cols() == b.rows(), "gemm_nn", a, b);
  prepare(c, a.rows(), b.cols(), accumulate);
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double s = accumulate ? c(i, j) : 0.0;
      for (std::size_t p = 0; p < a.cols(); ++p) s += a(i, p) * b(p, j);
      c(i, j) = s;
    }
}

void gemm_nt(const Matrix& a, const Matrix& b, Matrix& c, bool accumulate) {
  check(a.cols() == b.cols(), "gemm_nt", a, b);
  prepare(c, a.rows(), b.rows(), accumulate);
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.rows(); ++j) {
      double s = accumulate ? c(i, j) : 0.0;
      for (std::size_t p = 0; p < a.cols(); ++p) s += a(i, p) * b(j, p);
      c(i, j) = s;
    }
}

void gemm_tn(const Matrix& a, const Matrix& b, Matrix& c, bool accumulate) {
  check(a.rows() == b.rows(), "gemm_tn", a, b);
  prepare(c, a.cols(), b.cols(), accumulate);
  for (std::size_t i = 0; i < a.cols(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double s = accumulate ? c(i, j) : 0.0;
      for (std::size_t r = 0; r < a.rows(); ++r) s += a(r, i) * b(r, j);
      c(i, j) = s;
    }
}

}  // namespace reference
}  // namespace aufa::kernels
