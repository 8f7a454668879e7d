#pragma once

#include "aufa/matrix.hpp"

// Dense kernels used by the differentiation engine. The default entry points
// split output rows across OpenMP threads; every output element is produced
// by one thread with a fixed summation order, so results are bitwise
// identical to the serial reference regardless of thread count.
namespace aufa::kernels {

// c = a * b (or c += a * b when accumulate).
void gemm_nn(const Matrix& a, const Matrix& b, Matrix& c, bool accumulate = false);
// c = a * b^T
void gemm_nt(const Matrix& a, const Matrix& b, Matrix& c, bool accumulate = false);
// c = a^T * b
void gemm_tn(const Matrix& a, const Matrix& b, Matrix& c, bool accumulate = false);

// y += alpha * x
void axpy(double alpha, const Matrix& x, Matrix& y);

// Forces single-threaded execution of every kernel (the --serial mode).
void set_serial(bool serial);
bool serial();

// Straightforward triple loops kept as the correctness oracle for the
// parallel kernels and as the benchmark baseline.
namespace reference {
void gemm_nn(const Matrix& a, const Matrix& b, Matrix& c, bool accumulate = false);
void gemm_nt(const Matrix& a, const Matrix& b, Matrix& c, bool accumulate = false);
void gemm_tn(const Matrix& a, const Matrix& b, Matrix& c, bool accumulate = false);
}  // namespace reference

}  // namespace aufa::kernels
