#pragma once

#include <cstddef>
#include <vector>

#include "purgegate/matrix.hpp"
#include "purgegate/model.hpp"

namespace pg {

enum class StatsOrigin {
    embedding_output, // statistics of the token embeddings (default)
    first_ln_input,   // accumulated by a wrapped first LayerNorm
};

// Per-dimension source statistics: running means of the per-sample token
// mean and std vectors.
struct SourceStats {
    Vector mu;    // d
    Vector sigma; // d, per-dimension std (>= 0)
    std::size_t n_samples = 0;
    StatsOrigin origin = StatsOrigin::embedding_output;
};

// Per-token divergence scores; higher = more shifted.
using DivergenceVector = Vector;

struct PurgePlan {
    std::vector<std::size_t> keep_indices;    // sorted, size L_t - L_pg
    std::vector<std::size_t> removed_indices; // size L_pg
};

// Single-pass fold over per-sample token-embedding matrices (each L_t x d):
// per sample compute the mean and std over its tokens, then fold both into
// running means. O(d) memory beyond the input.
SourceStats welford_collect(const std::vector<Matrix>& embedding_stream,
                            StatsOrigin origin = StatsOrigin::embedding_output);

class WelfordAccumulator {
public:
    explicit WelfordAccumulator(StatsOrigin origin = StatsOrigin::embedding_output)
        : origin_(origin) {}
    void add_sample(const Matrix& token_embeddings);
    SourceStats finish() const; // throws if no samples were added

private:
    StatsOrigin origin_;
    Vector mu_run_, sigma_run_;
    std::size_t n_ = 0;
};

// Diagonal-covariance Mahalanobis distance of each token row to the source
// statistics. sigma is floored at 1e-6 before inversion.
DivergenceVector mahalanobis_divergence(const Matrix& tokens, const SourceStats& stats);

// Source-free prototype: block 1's LN applied to the learned CLS token,
// projected into query space.
Vector cls_prototype(const ModelWeights& w);

// delta_t = -cos(LN(x_t) W_K, G) using block 1's LN1 and W_K; range [-1, 1],
// higher = more divergent. Zero-norm projected tokens score 0 (neutral).
DivergenceVector cosine_divergence(const Matrix& tokens, const Vector& prototype,
                                   const ModelWeights& w);

// Removes the purge_size largest-divergence tokens. Ties break toward the
// lower token index; keep order is preserved.
PurgePlan purge_tokens(const DivergenceVector& divergence, std::size_t purge_size);

// SourceStats <-> extra tensors in the PGW1 container ("pg.mu_S",
// "pg.sigma_S", "pg.n", "pg.origin").
std::vector<ExtraTensor> stats_to_tensors(const SourceStats& stats);
SourceStats stats_from_tensors(const std::vector<ExtraTensor>& extras);
bool has_stats_tensors(const std::vector<ExtraTensor>& extras);

} // namespace pg
