#pragma once

// Forward/backward caches shared between model.cpp and train.cpp. Internal;
// not part of the library surface.

#include "purgegate/matrix.hpp"
#include "purgegate/model.hpp"

namespace pg {

struct LnCache {
    Matrix xhat;
    Vector inv_std;
};

struct EmbedCache {
    Matrix offsets;   // (B*L*K) x 3
    Matrix xhat;      // BN-normalized pre-activations
    Vector inv_std;   // per channel
    Matrix act;       // post-BN, post-ReLU
    std::vector<std::size_t> argmax; // max-pool winner per (token, channel)
    Matrix centers;   // (B*L) x 3
    Matrix pos_hidden;
    bool batch_stats = true;
};

struct EmbedOut {
    std::vector<Matrix> tokens; // per sample, L x d
    Vector batch_mean;          // BN batch statistics (batch-stats modes)
    Vector batch_var;
};

struct BlockCache {
    Matrix x_in;
    Matrix xn;
    LnCache ln1;
    Matrix q, k, v;
    std::vector<Matrix> attn; // per head
    Matrix ctx;
    Matrix x1;
    Matrix yn;
    LnCache ln2;
    Matrix f1;
};

struct TransformerCache {
    std::vector<BlockCache> blocks;
    Matrix x0;
    LnCache head_ln;
    Matrix z;
};

Matrix ln_forward(const Matrix& x, const LayerNormParams& p, double eps, LnCache* cache);
Matrix ln_backward(const Matrix& dy, const LnCache& cache, const LayerNormParams& p,
                   Vector& dgamma, Vector& dbeta);

EmbedOut embed_forward(const std::vector<TokenizedSample>& batch, const ModelWeights& w,
                       BnMode bn_mode, EmbedCache* cache);
void embed_backward(const std::vector<Matrix>& d_tokens, const EmbedCache& cache,
                    const ModelWeights& w, ModelWeights& g);

ForwardResult transformer_forward_cached(const Matrix& tokens, const ModelWeights& w,
                                         const std::vector<std::size_t>* keep,
                                         TransformerCache* cache);
Matrix transformer_backward(const Vector& dlogits, const TransformerCache& cache,
                            const ForwardResult& fwd, const ModelWeights& w, ModelWeights& g,
                            std::size_t token_rows);

// grads += as a flat axpy over learnable parameters
void accumulate_params(ModelWeights& dst, const ModelWeights& src, double scale = 1.0);

} // namespace pg
