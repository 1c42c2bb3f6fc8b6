#include "purgegate/purge.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "purgegate/errors.hpp"
#include "purgegate/kernels.hpp"

namespace pg {

void WelfordAccumulator::add_sample(const Matrix& tokens) {
    const std::size_t L = tokens.rows(), d = tokens.cols();
    if (L == 0 || d == 0) throw std::invalid_argument("welford: empty token matrix");
    if (n_ == 0) {
        mu_run_.assign(d, 0.0);
        sigma_run_.assign(d, 0.0);
    } else if (mu_run_.size() != d) {
        throw std::invalid_argument("welford: inconsistent embedding width");
    }

    // per-sample mean and std over the L tokens
    Vector mu(d, 0.0), sigma(d, 0.0);
    for (std::size_t t = 0; t < L; ++t) {
        const double* r = tokens.row(t);
        for (std::size_t c = 0; c < d; ++c) mu[c] += r[c];
    }
    for (std::size_t c = 0; c < d; ++c) mu[c] /= static_cast<double>(L);
    for (std::size_t t = 0; t < L; ++t) {
        const double* r = tokens.row(t);
        for (std::size_t c = 0; c < d; ++c) {
            const double dv = r[c] - mu[c];
            sigma[c] += dv * dv;
        }
    }
    for (std::size_t c = 0; c < d; ++c) sigma[c] = std::sqrt(sigma[c] / static_cast<double>(L));

    // fold into the running means: phi += (phi_i - phi) / n
    ++n_;
    const double inv_n = 1.0 / static_cast<double>(n_);
    for (std::size_t c = 0; c < d; ++c) {
        mu_run_[c] += (mu[c] - mu_run_[c]) * inv_n;
        sigma_run_[c] += (sigma[c] - sigma_run_[c]) * inv_n;
    }
}

SourceStats WelfordAccumulator::finish() const {
    if (n_ == 0) throw std::invalid_argument("welford: empty stream");
    return {mu_run_, sigma_run_, n_, origin_};
}

SourceStats welford_collect(const std::vector<Matrix>& embedding_stream, StatsOrigin origin) {
    WelfordAccumulator acc(origin);
    for (const Matrix& m : embedding_stream) acc.add_sample(m);
    return acc.finish();
}

DivergenceVector mahalanobis_divergence(const Matrix& tokens, const SourceStats& stats) {
    const std::size_t L = tokens.rows(), d = tokens.cols();
    if (stats.mu.size() != d || stats.sigma.size() != d)
        throw std::invalid_argument("mahalanobis_divergence: dimension mismatch");
    constexpr double kSigmaFloor = 1e-6;
    DivergenceVector delta(L, 0.0);
    for (std::size_t t = 0; t < L; ++t) {
        const double* r = tokens.row(t);
        double acc = 0.0;
        for (std::size_t c = 0; c < d; ++c) {
            const double s = std::max(stats.sigma[c], kSigmaFloor);
            const double z = (r[c] - stats.mu[c]) / s;
            acc += z * z;
        }
        delta[t] = std::sqrt(acc);
    }
    return delta;
}

Vector cls_prototype(const ModelWeights& w) {
    const std::size_t d = w.config.d;
    Matrix cls_row(1, d);
    std::copy(w.cls.begin(), w.cls.end(), cls_row.row(0));
    const BlockWeights& b1 = w.blocks.front();
    Matrix normed;
    layer_norm_rows(cls_row, b1.ln1.gamma, b1.ln1.beta, w.config.ln_eps, normed);
    Matrix projected;
    matmul(normed, b1.wq, projected);
    return Vector(projected.row(0), projected.row(0) + d);
}

DivergenceVector cosine_divergence(const Matrix& tokens, const Vector& prototype,
                                   const ModelWeights& w) {
    const std::size_t d = w.config.d;
    if (tokens.cols() != d || prototype.size() != d)
        throw std::invalid_argument("cosine_divergence: dimension mismatch");
    double g_norm = 0.0;
    for (const double v : prototype) g_norm += v * v;
    g_norm = std::sqrt(g_norm);
    if (!(g_norm > 0.0)) throw std::invalid_argument("cosine_divergence: zero-norm prototype");

    const BlockWeights& b1 = w.blocks.front();
    Matrix normed;
    layer_norm_rows(tokens, b1.ln1.gamma, b1.ln1.beta, w.config.ln_eps, normed);
    Matrix keys;
    matmul(normed, b1.wk, keys);

    DivergenceVector delta(tokens.rows(), 0.0);
    for (std::size_t t = 0; t < tokens.rows(); ++t) {
        const double* kr = keys.row(t);
        double dot = 0.0, k_norm = 0.0;
        for (std::size_t c = 0; c < d; ++c) {
            dot += kr[c] * prototype[c];
            k_norm += kr[c] * kr[c];
        }
        k_norm = std::sqrt(k_norm);
        delta[t] = k_norm > 0.0 ? -dot / (k_norm * g_norm) : 0.0;
    }
    return delta;
}

PurgePlan purge_tokens(const DivergenceVector& divergence, std::size_t purge_size) {
    const std::size_t L = divergence.size();
    if (purge_size >= L)
        throw std::invalid_argument("purge_tokens: purge size must be < token count");
    for (const double v : divergence)
        if (!std::isfinite(v)) throw std::invalid_argument("purge_tokens: non-finite divergence");

    // top-k by divergence, ties toward the lower index
    std::vector<std::size_t> order(L);
    std::iota(order.begin(), order.end(), 0);
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(purge_size),
                      order.end(), [&](std::size_t a, std::size_t b) {
                          return divergence[a] != divergence[b] ? divergence[a] > divergence[b]
                                                                : a < b;
                      });

    PurgePlan plan;
    plan.removed_indices.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(purge_size));
    std::vector<char> removed(L, 0);
    for (const std::size_t i : plan.removed_indices) removed[i] = 1;
    plan.keep_indices.reserve(L - purge_size);
    for (std::size_t i = 0; i < L; ++i)
        if (!removed[i]) plan.keep_indices.push_back(i);
    return plan;
}

std::vector<ExtraTensor> stats_to_tensors(const SourceStats& stats) {
    std::vector<ExtraTensor> out;
    out.push_back({"pg.mu_S", {stats.mu.size()}, stats.mu});
    out.push_back({"pg.sigma_S", {stats.sigma.size()}, stats.sigma});
    out.push_back({"pg.n", {1}, {static_cast<double>(stats.n_samples)}});
    out.push_back({"pg.origin", {1}, {stats.origin == StatsOrigin::first_ln_input ? 1.0 : 0.0}});
    return out;
}

bool has_stats_tensors(const std::vector<ExtraTensor>& extras) {
    for (const auto& e : extras)
        if (e.name == "pg.mu_S") return true;
    return false;
}

SourceStats stats_from_tensors(const std::vector<ExtraTensor>& extras) {
    SourceStats stats;
    bool have_mu = false, have_sigma = false;
    for (const auto& e : extras) {
        if (e.name == "pg.mu_S") {
            stats.mu = e.data;
            have_mu = true;
        } else if (e.name == "pg.sigma_S") {
            stats.sigma = e.data;
            have_sigma = true;
        } else if (e.name == "pg.n") {
            stats.n_samples = static_cast<std::size_t>(e.data.at(0));
        } else if (e.name == "pg.origin") {
            stats.origin = e.data.at(0) == 1.0 ? StatsOrigin::first_ln_input
                                               : StatsOrigin::embedding_output;
        }
    }
    if (!have_mu || !have_sigma)
        throw FormatError("weights container has no purge statistics (pg.mu_S / pg.sigma_S)");
    return stats;
}

} // namespace pg
