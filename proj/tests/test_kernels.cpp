#include <doctest.h>

#include <cmath>

#include "purgegate/kernels.hpp"
#include "purgegate/rng.hpp"

using namespace pg;

namespace {

Matrix random_matrix(std::size_t r, std::size_t c, Rng& rng) {
    Matrix m(r, c);
    for (std::size_t i = 0; i < r * c; ++i) m.data()[i] = rng.normal();
    return m;
}

// Naive triple loop, written independently of the kernel's loop order.
Matrix naive_matmul(const Matrix& a, const Matrix& b) {
    Matrix c(a.rows(), b.cols());
    c.fill(0.0);
    for (std::size_t k = 0; k < a.cols(); ++k)
        for (std::size_t i = 0; i < a.rows(); ++i)
            for (std::size_t j = 0; j < b.cols(); ++j) c(i, j) += a(i, k) * b(k, j);
    return c;
}

} // namespace

TEST_CASE("matmul matches a naive oracle") {
    Rng rng(1);
    for (const auto [n, m, k] : {std::array<std::size_t, 3>{3, 5, 4},
                                 std::array<std::size_t, 3>{17, 9, 33},
                                 std::array<std::size_t, 3>{64, 64, 64}}) {
        const Matrix a = random_matrix(n, k, rng);
        const Matrix b = random_matrix(k, m, rng);
        Matrix c;
        matmul(a, b, c);
        const Matrix want = naive_matmul(a, b);
        REQUIRE(c.rows() == want.rows());
        REQUIRE(c.cols() == want.cols());
        for (std::size_t i = 0; i < n * m; ++i)
            CHECK(c.data()[i] == doctest::Approx(want.data()[i]).epsilon(1e-12));
    }
}

TEST_CASE("transposed variants agree with explicit transposition") {
    Rng rng(2);
    const Matrix a = random_matrix(13, 7, rng);
    const Matrix b = random_matrix(13, 11, rng);

    Matrix at(7, 13);
    for (std::size_t i = 0; i < 13; ++i)
        for (std::size_t j = 0; j < 7; ++j) at(j, i) = a(i, j);

    Matrix got, want;
    matmul_tn(a, b, got);
    matmul(at, b, want);
    REQUIRE(got.rows() == want.rows());
    for (std::size_t i = 0; i < got.rows() * got.cols(); ++i)
        CHECK(got.data()[i] == doctest::Approx(want.data()[i]).epsilon(1e-12));

    // A * C^T with C stored untransposed (11 x 7 against a's 13 x 7)
    const Matrix c = random_matrix(11, 7, rng);
    Matrix ct(7, 11);
    for (std::size_t i = 0; i < 11; ++i)
        for (std::size_t j = 0; j < 7; ++j) ct(j, i) = c(i, j);
    Matrix got2, want2;
    matmul_nt(a, c, got2);
    matmul(a, ct, want2);
    for (std::size_t i = 0; i < got2.rows() * got2.cols(); ++i)
        CHECK(got2.data()[i] == doctest::Approx(want2.data()[i]).epsilon(1e-12));
}

TEST_CASE("parallel kernels are bit-identical to the serial reference") {
    Rng rng(3);
    for (const std::size_t n : {8UL, 64UL, 200UL}) {
        const Matrix a = random_matrix(n, n + 3, rng);
        const Matrix b = random_matrix(n + 3, n + 1, rng);
        Matrix c1, c2;
        matmul(a, b, c1);
        ref::matmul(a, b, c2);
        CHECK(c1 == c2);

        Matrix t1, t2;
        matmul_tn(a, a, t1);
        ref::matmul_tn(a, a, t2);
        CHECK(t1 == t2);

        Matrix u1, u2;
        matmul_nt(a, a, u1);
        ref::matmul_nt(a, a, u2);
        CHECK(u1 == u2);

        Matrix s1 = random_matrix(n, 16, rng);
        Matrix s2 = s1;
        softmax_rows(s1);
        ref::softmax_rows(s2);
        CHECK(s1 == s2);

        Vector gamma(n + 3), beta(n + 3);
        for (std::size_t i = 0; i < gamma.size(); ++i) {
            gamma[i] = rng.normal();
            beta[i] = rng.normal();
        }
        Matrix l1, l2;
        layer_norm_rows(a, gamma, beta, 1e-5, l1);
        ref::layer_norm_rows(a, gamma, beta, 1e-5, l2);
        CHECK(l1 == l2);
    }
}

TEST_CASE("softmax rows sum to one and are shift-invariant") {
    Rng rng(4);
    Matrix m = random_matrix(9, 23, rng);
    Matrix shifted = m;
    for (std::size_t i = 0; i < shifted.rows(); ++i)
        for (std::size_t j = 0; j < shifted.cols(); ++j) shifted(i, j) += 1000.0;
    softmax_rows(m);
    softmax_rows(shifted);
    for (std::size_t i = 0; i < m.rows(); ++i) {
        double sum = 0.0;
        for (std::size_t j = 0; j < m.cols(); ++j) {
            CHECK(m(i, j) > 0.0);
            CHECK(m(i, j) == doctest::Approx(shifted(i, j)).epsilon(1e-9));
            sum += m(i, j);
        }
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("layer norm reproduces a hand-computed example") {
    // x = [1, 3]: mean 2, population variance 1 -> normalized [-1, 1]
    Matrix x(1, 2);
    x(0, 0) = 1.0;
    x(0, 1) = 3.0;
    Matrix out;
    layer_norm_rows(x, {1.0, 1.0}, {0.0, 0.0}, 0.0, out);
    CHECK(out(0, 0) == doctest::Approx(-1.0).epsilon(1e-12));
    CHECK(out(0, 1) == doctest::Approx(1.0).epsilon(1e-12));

    // gamma/beta affine: y = 2*xhat + 5
    layer_norm_rows(x, {2.0, 2.0}, {5.0, 5.0}, 0.0, out);
    CHECK(out(0, 0) == doctest::Approx(3.0).epsilon(1e-12));
    CHECK(out(0, 1) == doctest::Approx(7.0).epsilon(1e-12));
}

TEST_CASE("layer norm output has zero mean and unit variance per row") {
    Rng rng(5);
    const Matrix x = random_matrix(6, 31, rng);
    Vector gamma(31, 1.0), beta(31, 0.0);
    Matrix out;
    layer_norm_rows(x, gamma, beta, 0.0, out);
    for (std::size_t i = 0; i < out.rows(); ++i) {
        double mean = 0.0, var = 0.0;
        for (std::size_t j = 0; j < out.cols(); ++j) mean += out(i, j);
        mean /= static_cast<double>(out.cols());
        for (std::size_t j = 0; j < out.cols(); ++j)
            var += (out(i, j) - mean) * (out(i, j) - mean);
        var /= static_cast<double>(out.cols());
        CHECK(std::abs(mean) < 1e-12);
        CHECK(var == doctest::Approx(1.0).epsilon(1e-10));
    }
}
