#include <algorithm>
#include <cmath>
#include <numeric>

#include "purgegate/errors.hpp"
#include "purgegate/kernels.hpp"
#include "purgegate/model.hpp"
#include "purgegate/model_internal.hpp"
#include "purgegate/rng.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace pg {

namespace {

void push(std::vector<TensorView>& v, const std::string& name, Matrix& m) {
    v.push_back({name, {m.rows(), m.cols()}, m.data(), m.size()});
}

void push(std::vector<TensorView>& v, const std::string& name, Vector& x) {
    v.push_back({name, {x.size()}, x.data(), x.size()});
}

} // namespace

std::vector<TensorView> parameter_views(ModelWeights& w) {
    std::vector<TensorView> v;
    push(v, "embed.w1", w.embed_w1);
    push(v, "embed.b1", w.embed_b1);
    push(v, "embed.bn.gamma", w.embed_bn.gamma);
    push(v, "embed.bn.beta", w.embed_bn.beta);
    push(v, "embed.w2", w.embed_w2);
    push(v, "embed.b2", w.embed_b2);
    push(v, "pos.w1", w.pos_w1);
    push(v, "pos.b1", w.pos_b1);
    push(v, "pos.w2", w.pos_w2);
    push(v, "pos.b2", w.pos_b2);
    push(v, "cls", w.cls);
    for (std::size_t i = 0; i < w.blocks.size(); ++i) {
        const std::string p = "blocks." + std::to_string(i) + ".";
        BlockWeights& b = w.blocks[i];
        push(v, p + "ln1.gamma", b.ln1.gamma);
        push(v, p + "ln1.beta", b.ln1.beta);
        push(v, p + "wq", b.wq);
        push(v, p + "wk", b.wk);
        push(v, p + "wv", b.wv);
        push(v, p + "wo", b.wo);
        push(v, p + "ln2.gamma", b.ln2.gamma);
        push(v, p + "ln2.beta", b.ln2.beta);
        push(v, p + "ffn.w1", b.ffn_w1);
        push(v, p + "ffn.b1", b.ffn_b1);
        push(v, p + "ffn.w2", b.ffn_w2);
        push(v, p + "ffn.b2", b.ffn_b2);
    }
    push(v, "head.ln.gamma", w.head_ln.gamma);
    push(v, "head.ln.beta", w.head_ln.beta);
    push(v, "head.w", w.head_w);
    push(v, "head.b", w.head_b);
    return v;
}

std::vector<TensorView> state_views(ModelWeights& w) {
    std::vector<TensorView> v = parameter_views(w);
    push(v, "embed.bn.running_mean", w.embed_bn.running_mean);
    push(v, "embed.bn.running_var", w.embed_bn.running_var);
    return v;
}

ModelWeights init_weights(const ModelConfig& config, std::uint64_t seed) {
    config.validate();
    Rng rng = Rng::derive(seed, "init");
    ModelWeights w;
    w.config = config;
    const std::size_t d = config.d, h1 = config.embed_hidden(), fh = config.ffn_hidden();

    auto glorot = [&rng](std::size_t rows, std::size_t cols) {
        Matrix m(rows, cols);
        const double scale = std::sqrt(2.0 / static_cast<double>(rows + cols));
        for (std::size_t i = 0; i < m.size(); ++i) m.data()[i] = rng.normal(0.0, scale);
        return m;
    };

    w.embed_w1 = glorot(3, h1);
    w.embed_b1.assign(h1, 0.0);
    w.embed_bn = {Vector(h1, 1.0), Vector(h1, 0.0), Vector(h1, 0.0), Vector(h1, 1.0), 0.1};
    w.embed_w2 = glorot(h1, d);
    w.embed_b2.assign(d, 0.0);
    w.pos_w1 = glorot(3, h1);
    w.pos_b1.assign(h1, 0.0);
    w.pos_w2 = glorot(h1, d);
    w.pos_b2.assign(d, 0.0);
    w.cls.assign(d, 0.0);
    for (auto& c : w.cls) c = rng.normal(0.0, 0.02);
    w.blocks.resize(config.n_blocks);
    for (auto& b : w.blocks) {
        b.ln1 = {Vector(d, 1.0), Vector(d, 0.0)};
        b.wq = glorot(d, d);
        b.wk = glorot(d, d);
        b.wv = glorot(d, d);
        b.wo = glorot(d, d);
        b.ln2 = {Vector(d, 1.0), Vector(d, 0.0)};
        b.ffn_w1 = glorot(d, fh);
        b.ffn_b1.assign(fh, 0.0);
        b.ffn_w2 = glorot(fh, d);
        b.ffn_b2.assign(d, 0.0);
    }
    w.head_ln = {Vector(d, 1.0), Vector(d, 0.0)};
    w.head_w = glorot(d, config.n_classes);
    w.head_b.assign(config.n_classes, 0.0);
    return w;
}

ModelWeights zeros_like(const ModelWeights& w) {
    ModelWeights z = w;
    for (TensorView& t : state_views(z)) std::fill(t.data, t.data + t.size, 0.0);
    return z;
}

void accumulate_params(ModelWeights& dst, const ModelWeights& src, double scale) {
    auto dv = parameter_views(dst);
    auto sv = parameter_views(const_cast<ModelWeights&>(src));
    for (std::size_t i = 0; i < dv.size(); ++i)
        for (std::size_t j = 0; j < dv[i].size; ++j) dv[i].data[j] += scale * sv[i].data[j];
}

namespace {

double loss_and_gradients_impl(const std::vector<TokenizedSample>& batch,
                               const std::vector<int>& labels, const ModelWeights& w,
                               ModelWeights& grads, Vector* bn_mean, Vector* bn_var) {
    if (batch.empty() || batch.size() != labels.size())
        throw std::invalid_argument("loss_and_gradients: batch/label size mismatch");
    const std::size_t B = batch.size();

    EmbedCache ecache;
    EmbedOut emb = embed_forward(batch, w, BnMode::training, &ecache);
    if (bn_mean) *bn_mean = emb.batch_mean;
    if (bn_var) *bn_var = emb.batch_var;

    std::vector<Matrix> d_tokens(B);
    double loss = 0.0;

#ifdef _OPENMP
    const int max_threads = omp_get_max_threads();
#else
    const int max_threads = 1;
#endif
    std::vector<ModelWeights> local(static_cast<std::size_t>(max_threads));
    std::vector<char> local_used(static_cast<std::size_t>(max_threads), 0);

#pragma omp parallel for schedule(dynamic) reduction(+ : loss) if (B > 1)
    for (std::ptrdiff_t ii = 0; ii < static_cast<std::ptrdiff_t>(B); ++ii) {
        const std::size_t i = static_cast<std::size_t>(ii);
#ifdef _OPENMP
        const std::size_t tid = static_cast<std::size_t>(omp_get_thread_num());
#else
        const std::size_t tid = 0;
#endif
        if (!local_used[tid]) {
            local[tid] = zeros_like(w);
            local_used[tid] = 1;
        }

        TransformerCache tc;
        ForwardResult fwd = transformer_forward_cached(emb.tokens[i], w, nullptr, &tc);

        // softmax cross-entropy
        Vector p = fwd.logits;
        const double mx = *std::max_element(p.begin(), p.end());
        double sum = 0.0;
        for (double& v : p) {
            v = std::exp(v - mx);
            sum += v;
        }
        for (double& v : p) v /= sum;
        loss += -std::log(std::max(p[static_cast<std::size_t>(labels[i])], 1e-300)) /
                static_cast<double>(B);

        Vector dlogits = p;
        dlogits[static_cast<std::size_t>(labels[i])] -= 1.0;
        for (double& v : dlogits) v /= static_cast<double>(B);

        d_tokens[i] = transformer_backward(dlogits, tc, fwd, w, local[tid], emb.tokens[i].rows());
    }

    for (std::size_t t = 0; t < local.size(); ++t)
        if (local_used[t]) accumulate_params(grads, local[t]);

    embed_backward(d_tokens, ecache, w, grads);

    if (!std::isfinite(loss)) throw NumericError("loss is not finite");
    return loss;
}

} // namespace

double loss_and_gradients(const std::vector<TokenizedSample>& batch, const std::vector<int>& labels,
                          const ModelWeights& w, ModelWeights& grads) {
    return loss_and_gradients_impl(batch, labels, w, grads, nullptr, nullptr);
}

ModelWeights train_source(const std::vector<LabeledSample>& data, const ModelConfig& config,
                          const TrainHyperparams& hp) {
    if (data.empty()) throw std::invalid_argument("train_source: empty dataset");
    {
        std::vector<char> seen(config.n_classes, 0);
        for (const auto& s : data) {
            if (s.label < 0 || static_cast<std::size_t>(s.label) >= config.n_classes)
                throw std::invalid_argument("train_source: label out of range");
            seen[static_cast<std::size_t>(s.label)] = 1;
        }
        // a single-sample dataset (memorization smoke test) is allowed; a
        // multi-class dataset must actually contain at least 2 classes
        if (data.size() > 1 && std::count(seen.begin(), seen.end(), 1) < 2)
            throw std::invalid_argument("train_source: need at least 2 classes present");
    }

    configure_threads();
    ModelWeights w = init_weights(config, hp.seed);
    ModelWeights velocity = zeros_like(w);
    Rng shuffle_rng = Rng::derive(hp.seed, "shuffle");

    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), 0);

    const std::size_t bs = std::max<std::size_t>(1, std::min(hp.batch_size, data.size()));

    for (std::size_t epoch = 0; epoch < hp.epochs; ++epoch) {
        // cosine-decayed step size
        const double lr = 0.5 * hp.lr *
                          (1.0 + std::cos(3.14159265358979323846 * static_cast<double>(epoch) /
                                          static_cast<double>(hp.epochs)));
        for (std::size_t i = data.size(); i > 1; --i)
            std::swap(order[i - 1], order[shuffle_rng.index(i)]);

        for (std::size_t start = 0; start < data.size(); start += bs) {
            const std::size_t end = std::min(start + bs, data.size());
            std::vector<TokenizedSample> batch;
            std::vector<int> labels;
            batch.reserve(end - start);
            for (std::size_t i = start; i < end; ++i) {
                batch.push_back(data[order[i]].tokens);
                labels.push_back(data[order[i]].label);
            }

            ModelWeights grads = zeros_like(w);
            Vector bn_mean, bn_var;
            double loss;
            try {
                loss = loss_and_gradients_impl(batch, labels, w, grads, &bn_mean, &bn_var);
            } catch (const NumericError&) {
                throw NumericError("training diverged (non-finite loss) at epoch " +
                                   std::to_string(epoch) + ", batch offset " + std::to_string(start));
            }
            (void)loss;

            // running BN statistics, updated with momentum
            const double m = w.embed_bn.momentum;
            for (std::size_t c = 0; c < bn_mean.size(); ++c) {
                w.embed_bn.running_mean[c] = (1.0 - m) * w.embed_bn.running_mean[c] + m * bn_mean[c];
                w.embed_bn.running_var[c] = (1.0 - m) * w.embed_bn.running_var[c] + m * bn_var[c];
            }

            auto wv = parameter_views(w);
            auto gv = parameter_views(grads);
            auto vv = parameter_views(velocity);
            for (std::size_t t = 0; t < wv.size(); ++t)
                for (std::size_t j = 0; j < wv[t].size; ++j) {
                    vv[t].data[j] = hp.momentum * vv[t].data[j] - lr * gv[t].data[j];
                    wv[t].data[j] += vv[t].data[j];
                }
        }
    }
    return w;
}

} // namespace pg
