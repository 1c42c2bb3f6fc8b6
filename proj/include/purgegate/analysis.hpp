#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "purgegate/adapt.hpp"
#include "purgegate/matrix.hpp"
#include "purgegate/model.hpp"
#include "purgegate/purge.hpp"

namespace pg {

// Empirical checks of the attention-under-shift propositions, plus the
// purge-size/entropy sweep. Every result is a pure function of (inputs,
// seed).

struct LipschitzResult {
    std::size_t d = 0;
    std::size_t n_pairs = 0;
    double sigma_min = 0.0;
    double analytic_bound = 0.0; // 2 * max|gamma| / sqrt(sigma_min^2 + eps)
    double max_ratio = 0.0;
    double mean_ratio = 0.0;
    std::size_t violations = 0;
};

// Samples pairs with per-vector std >= sigma_min and checks
// ||LN(u) - LN(v)|| <= M * ||u - v|| for every pair.
LipschitzResult check_ln_lipschitz(std::size_t d, std::size_t n_pairs, double sigma_min,
                                   const Vector& gamma, double eps, std::uint64_t seed);

struct SphereConcentrationPoint {
    std::size_t d = 0;
    std::size_t n_pairs = 0;
    double mean_dot = 0.0;
    double var_dot = 0.0; // expected ~ 1/d
};

std::vector<SphereConcentrationPoint> check_sphere_orthogonality(
    const std::vector<std::size_t>& dims, std::size_t n_pairs, std::uint64_t seed);

struct UniformityPoint {
    double noise_scale = 0.0;
    double mean_abs_dev = 0.0; // mean_ij |A_ij - 1/n| at block 1, replicate mean
    double var_abs_dev = 0.0;
    std::size_t replicates = 0;
};

// Injects i.i.d. Gaussian noise of each scale into the token embeddings
// before block 1 and measures how far block 1's attention is from uniform.
std::vector<UniformityPoint> check_attention_uniformity(const ModelWeights& w,
                                                        const std::vector<TokenizedSample>& clean_batch,
                                                        const std::vector<double>& noise_scales,
                                                        std::size_t replicates, std::uint64_t seed);

struct PurgeSweepPoint {
    std::size_t purge_size = 0;
    double accuracy = 0.0;
    double mean_entropy = 0.0;
};

struct PurgeSweepResult {
    std::vector<PurgeSweepPoint> points;
    double spearman_entropy_accuracy = 0.0;
};

// Fixed-purge-size accuracy and mean entropy over a corrupted stream,
// one point per size in [0, max_purge].
PurgeSweepResult purge_size_sweep(const ModelWeights& w, const SourceStats& stats,
                                  const std::vector<PointCloud>& clouds, std::size_t max_purge,
                                  const TtaOptions& base_options);

// Spearman rank correlation (average ranks for ties).
double spearman_correlation(const Vector& a, const Vector& b);

} // namespace pg
