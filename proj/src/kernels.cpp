#include "purgegate/kernels.hpp"

#include <cmath>
#include <cstdlib>
#include <stdexcept>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace pg {

int configure_threads() {
#ifdef _OPENMP
    static const int threads = [] {
        if (const char* env = std::getenv("PURGE_GATE_THREADS")) {
            const int n = std::atoi(env);
            if (n > 0) omp_set_num_threads(n);
        }
        return omp_get_max_threads();
    }();
    return threads;
#else
    return 1;
#endif
}

namespace {

void check_mul(std::size_t ak, std::size_t bk, const char* what) {
    if (ak != bk) throw std::invalid_argument(std::string("matmul shape mismatch in ") + what);
}

} // namespace

// Parallelization is over output rows only, so each element is computed by
// exactly the same serial inner loop as the reference kernels and results
// match bit for bit.
void matmul(const Matrix& a, const Matrix& b, Matrix& c) {
    check_mul(a.cols(), b.rows(), "matmul");
    c = Matrix(a.rows(), b.cols());
    const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
#pragma omp parallel for schedule(static) if (n * m * k > 16384)
    for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(n); ++i) {
        const double* arow = a.row(static_cast<std::size_t>(i));
        double* crow = c.row(static_cast<std::size_t>(i));
        for (std::size_t p = 0; p < k; ++p) {
            const double av = arow[p];
            const double* brow = b.row(p);
            for (std::size_t j = 0; j < m; ++j) crow[j] += av * brow[j];
        }
    }
}

void matmul_tn(const Matrix& a, const Matrix& b, Matrix& c) {
    check_mul(a.rows(), b.rows(), "matmul_tn");
    c = Matrix(a.cols(), b.cols());
    const std::size_t n = a.cols(), k = a.rows(), m = b.cols();
#pragma omp parallel for schedule(static) if (n * m * k > 16384)
    for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(n); ++i) {
        double* crow = c.row(static_cast<std::size_t>(i));
        for (std::size_t p = 0; p < k; ++p) {
            const double av = a(p, static_cast<std::size_t>(i));
            const double* brow = b.row(p);
            for (std::size_t j = 0; j < m; ++j) crow[j] += av * brow[j];
        }
    }
}

void matmul_nt(const Matrix& a, const Matrix& b, Matrix& c) {
    check_mul(a.cols(), b.cols(), "matmul_nt");
    c = Matrix(a.rows(), b.rows());
    const std::size_t n = a.rows(), k = a.cols(), m = b.rows();
#pragma omp parallel for schedule(static) if (n * m * k > 16384)
    for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(n); ++i) {
        const double* arow = a.row(static_cast<std::size_t>(i));
        double* crow = c.row(static_cast<std::size_t>(i));
        for (std::size_t j = 0; j < m; ++j) {
            const double* brow = b.row(j);
            double acc = 0.0;
            for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
            crow[j] = acc;
        }
    }
}

namespace {

inline void softmax_row(double* row, std::size_t n) {
    double mx = row[0];
    for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, row[j]);
    double sum = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
        row[j] = std::exp(row[j] - mx);
        sum += row[j];
    }
    const double inv = 1.0 / sum;
    for (std::size_t j = 0; j < n; ++j) row[j] *= inv;
}

inline void ln_row(const double* x, const double* gamma, const double* beta, double eps, std::size_t d, double* y) {
    double mean = 0.0;
    for (std::size_t j = 0; j < d; ++j) mean += x[j];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
        const double dv = x[j] - mean;
        var += dv * dv;
    }
    var /= static_cast<double>(d);
    const double inv_std = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j) y[j] = gamma[j] * (x[j] - mean) * inv_std + beta[j];
}

} // namespace

void softmax_rows(Matrix& m) {
#pragma omp parallel for schedule(static) if (m.rows() > 8)
    for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(m.rows()); ++i)
        softmax_row(m.row(static_cast<std::size_t>(i)), m.cols());
}

void layer_norm_rows(const Matrix& x, const Vector& gamma, const Vector& beta, double eps, Matrix& out) {
    if (gamma.size() != x.cols() || beta.size() != x.cols())
        throw std::invalid_argument("layer_norm_rows: gamma/beta size mismatch");
    out = Matrix(x.rows(), x.cols());
#pragma omp parallel for schedule(static) if (x.rows() > 8)
    for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(x.rows()); ++i)
        ln_row(x.row(static_cast<std::size_t>(i)), gamma.data(), beta.data(), eps, x.cols(),
               out.row(static_cast<std::size_t>(i)));
}

namespace ref {

void matmul(const Matrix& a, const Matrix& b, Matrix& c) {
    check_mul(a.cols(), b.rows(), "ref::matmul");
    c = Matrix(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        const double* arow = a.row(i);
        double* crow = c.row(i);
        for (std::size_t p = 0; p < a.cols(); ++p) {
            const double av = arow[p];
            const double* brow = b.row(p);
            for (std::size_t j = 0; j < b.cols(); ++j) crow[j] += av * brow[j];
        }
    }
}

void matmul_tn(const Matrix& a, const Matrix& b, Matrix& c) {
    check_mul(a.rows(), b.rows(), "ref::matmul_tn");
    c = Matrix(a.cols(), b.cols());
    for (std::size_t i = 0; i < a.cols(); ++i) {
        double* crow = c.row(i);
        for (std::size_t p = 0; p < a.rows(); ++p) {
            const double av = a(p, i);
            const double* brow = b.row(p);
            for (std::size_t j = 0; j < b.cols(); ++j) crow[j] += av * brow[j];
        }
    }
}

void matmul_nt(const Matrix& a, const Matrix& b, Matrix& c) {
    check_mul(a.cols(), b.cols(), "ref::matmul_nt");
    c = Matrix(a.rows(), b.rows());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        const double* arow = a.row(i);
        double* crow = c.row(i);
        for (std::size_t j = 0; j < b.rows(); ++j) {
            const double* brow = b.row(j);
            double acc = 0.0;
            for (std::size_t p = 0; p < a.cols(); ++p) acc += arow[p] * brow[p];
            crow[j] = acc;
        }
    }
}

void softmax_rows(Matrix& m) {
    for (std::size_t i = 0; i < m.rows(); ++i) softmax_row(m.row(i), m.cols());
}

void layer_norm_rows(const Matrix& x, const Vector& gamma, const Vector& beta, double eps, Matrix& out) {
    if (gamma.size() != x.cols() || beta.size() != x.cols())
        throw std::invalid_argument("ref::layer_norm_rows: gamma/beta size mismatch");
    out = Matrix(x.rows(), x.cols());
    for (std::size_t i = 0; i < x.rows(); ++i)
        ln_row(x.row(i), gamma.data(), beta.data(), eps, x.cols(), out.row(i));
}

} // namespace ref
} // namespace pg
