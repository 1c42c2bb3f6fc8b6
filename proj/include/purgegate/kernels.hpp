#pragma once

#include "purgegate/matrix.hpp"

namespace pg {

// Caps OpenMP parallelism from the PURGE_GATE_THREADS env var (once per
// process). Returns the effective thread count.
int configure_threads();

// C = A * B
void matmul(const Matrix& a, const Matrix& b, Matrix& c);
// C = A^T * B
void matmul_tn(const Matrix& a, const Matrix& b, Matrix& c);
// C = A * B^T
void matmul_nt(const Matrix& a, const Matrix& b, Matrix& c);

// In-place row-wise softmax with max-subtraction.
void softmax_rows(Matrix& m);

// y = gamma * (x - mean(x)) / sqrt(var(x) + eps) + beta, per row of x.
// Population variance, matching the transformer convention.
void layer_norm_rows(const Matrix& x, const Vector& gamma, const Vector& beta, double eps, Matrix& out);

// Serial reference implementations, kept for correctness tests and the
// benchmark target. Must stay algorithmically identical to the parallel
// kernels up to floating-point reduction order.
namespace ref {
void matmul(const Matrix& a, const Matrix& b, Matrix& c);
void matmul_tn(const Matrix& a, const Matrix& b, Matrix& c);
void matmul_nt(const Matrix& a, const Matrix& b, Matrix& c);
void softmax_rows(Matrix& m);
void layer_norm_rows(const Matrix& x, const Vector& gamma, const Vector& beta, double eps, Matrix& out);
} // namespace ref

} // namespace pg
