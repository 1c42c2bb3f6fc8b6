#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "purgegate/matrix.hpp"
#include "purgegate/tokenizer.hpp"

namespace pg {

struct ModelConfig {
    std::size_t d = 64;
    std::size_t n_blocks = 3;
    std::size_t n_heads = 4;
    std::size_t token_count = 32; // tokens per sample
    std::size_t k = 16;           // neighborhood size
    std::size_t n_classes = 4;
    double ln_eps = 1e-5;

    std::size_t embed_hidden() const { return d / 2; }
    std::size_t ffn_hidden() const { return 2 * d; }
    std::size_t head_dim() const { return d / n_heads; }

    void validate() const; // throws ConfigError
    bool operator==(const ModelConfig&) const = default;
};

struct LayerNormParams {
    Vector gamma;
    Vector beta;
};

struct BatchNormParams {
    Vector gamma;
    Vector beta;
    Vector running_mean;
    Vector running_var;
    double momentum = 0.1;
};

struct BlockWeights {
    LayerNormParams ln1;
    Matrix wq, wk, wv, wo; // d x d
    LayerNormParams ln2;
    Matrix ffn_w1; // d x ffn_hidden
    Vector ffn_b1;
    Matrix ffn_w2; // ffn_hidden x d
    Vector ffn_b2;
};

struct ModelWeights {
    ModelConfig config;

    // embedding mini-MLP over neighborhood offsets, max-pooled per token
    Matrix embed_w1; // 3 x embed_hidden
    Vector embed_b1;
    BatchNormParams embed_bn; // embed_hidden channels
    Matrix embed_w2; // embed_hidden x d
    Vector embed_b2;

    // positional MLP over token centers
    Matrix pos_w1; // 3 x embed_hidden
    Vector pos_b1;
    Matrix pos_w2; // embed_hidden x d
    Vector pos_b2;

    Vector cls; // learnable CLS token, d

    std::vector<BlockWeights> blocks;

    LayerNormParams head_ln;
    Matrix head_w; // d x n_classes
    Vector head_b;
};

enum class BnMode {
    training,        // batch stats, running stats updated
    frozen,          // stored running stats
    per_batch_reset, // batch stats, running stats neither read nor written
};

// Throws std::invalid_argument when the mode cannot be used with the given
// batch size (per_batch_reset needs at least 2 samples for a defined
// variance across the batch).
void check_bn_batch(BnMode mode, std::size_t batch_size);

// Named view over one parameter or state tensor.
struct TensorView {
    std::string name;
    std::vector<std::size_t> dims;
    double* data;
    std::size_t size;
};

// All learnable parameters, in a fixed order. Excludes BN running stats.
std::vector<TensorView> parameter_views(ModelWeights& w);
// Parameters plus BN running stats; this is the serialized tensor set.
std::vector<TensorView> state_views(ModelWeights& w);

ModelWeights init_weights(const ModelConfig& config, std::uint64_t seed);
ModelWeights zeros_like(const ModelWeights& w);

// Per-sample token embeddings (token_count x d each). BN statistics are
// computed across the whole batch in training / per_batch_reset modes.
// In training mode the running stats of `w` are updated in place (w must be
// non-const at the call site; see the trainer).
std::vector<Matrix> embed_tokens_batch(const std::vector<TokenizedSample>& batch,
                                       const ModelWeights& w, BnMode bn_mode);
Matrix embed_tokens(const TokenizedSample& sample, const ModelWeights& w, BnMode bn_mode);

// Returns, given the embedded tokens of one sample, the indices of tokens to
// KEEP (subset of [0, token_count), sorted). The CLS token is outside the
// hook's jurisdiction and always kept.
using PurgeHook = std::function<std::vector<std::size_t>(const Matrix& tokens)>;

struct ForwardResult {
    Vector logits;
    // Head-averaged attention weights per block; every matrix is exactly
    // (kept+1) x (kept+1) — the purged forward never materializes the full
    // attention square.
    std::vector<Matrix> attention;
    std::vector<std::size_t> kept; // surviving token indices (CLS excluded)
};

// Transformer stack on already-embedded tokens (token_count x d, no CLS).
// `keep` selects the surviving token rows; nullptr keeps all.
ForwardResult transformer_forward(const Matrix& tokens, const ModelWeights& w,
                                  const std::vector<std::size_t>* keep = nullptr);

ForwardResult forward(const TokenizedSample& sample, const ModelWeights& w, BnMode bn_mode,
                      const PurgeHook* purge_hook = nullptr);
std::vector<ForwardResult> forward_batch(const std::vector<TokenizedSample>& batch,
                                         const ModelWeights& w, BnMode bn_mode,
                                         const PurgeHook* purge_hook = nullptr);

// Mean cross-entropy over the batch; accumulates analytic gradients into
// `grads` (same shape as the weights, BN running stats unused). Training-mode
// BN without running-stat updates, so the loss is a pure function of
// (weights, batch) and finite differences are well-defined.
double loss_and_gradients(const std::vector<TokenizedSample>& batch, const std::vector<int>& labels,
                          const ModelWeights& w, ModelWeights& grads);

struct TrainHyperparams {
    std::size_t epochs = 50;
    std::size_t batch_size = 32;
    double lr = 0.01;
    double momentum = 0.9;
    std::uint64_t seed = 0;
};

struct LabeledSample {
    TokenizedSample tokens;
    int label = 0;
};

// SGD with momentum and a cosine-decayed step size. Deterministic given
// hyperparams.seed. Throws NumericError if the loss becomes non-finite.
ModelWeights train_source(const std::vector<LabeledSample>& data, const ModelConfig& config,
                          const TrainHyperparams& hp);

int predict(const Vector& logits);

// Weights container, magic "PGW1". Extra named tensors (e.g. purge
// statistics) ride along untouched.
struct ExtraTensor {
    std::string name;
    std::vector<std::size_t> dims;
    Vector data;
};

void save_weights(const ModelWeights& w, const std::string& path,
                  const std::vector<ExtraTensor>& extras = {});
struct LoadedWeights {
    ModelWeights weights;
    std::vector<ExtraTensor> extras;
};
LoadedWeights load_weights(const std::string& path);

// FNV-1a over the serialized bytes; used by the statelessness checks.
std::uint64_t weights_checksum(const ModelWeights& w);

} // namespace pg
