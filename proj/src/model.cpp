#include "purgegate/model.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "purgegate/errors.hpp"
#include "purgegate/kernels.hpp"
#include "purgegate/model_internal.hpp"
#include "purgegate/rng.hpp"

namespace pg {

void ModelConfig::validate() const {
    if (d == 0 || n_blocks == 0 || n_heads == 0 || token_count == 0 || k == 0 || n_classes == 0)
        throw ConfigError("ModelConfig: all counts must be positive");
    if (d % n_heads != 0) throw ConfigError("ModelConfig: d must be divisible by n_heads");
    if (d < 2) throw ConfigError("ModelConfig: d must be at least 2");
    if (embed_hidden() == 0) throw ConfigError("ModelConfig: d too small for the embedding MLP");
    if (!(ln_eps > 0.0)) throw ConfigError("ModelConfig: ln_eps must be positive");
}

void check_bn_batch(BnMode mode, std::size_t batch_size) {
    if (batch_size == 0) throw std::invalid_argument("empty batch");
    if (mode == BnMode::per_batch_reset && batch_size < 2)
        throw std::invalid_argument("per_batch_reset BatchNorm needs a batch of at least 2 samples");
}

namespace {

Matrix make_matrix(std::size_t r, std::size_t c) { return Matrix(r, c); }

void add_bias_rows(Matrix& m, const Vector& b) {
    for (std::size_t i = 0; i < m.rows(); ++i) {
        double* row = m.row(i);
        for (std::size_t j = 0; j < m.cols(); ++j) row[j] += b[j];
    }
}

void relu_inplace(Matrix& m) {
    double* p = m.data();
    for (std::size_t i = 0; i < m.size(); ++i) p[i] = std::max(0.0, p[i]);
}

} // namespace

Matrix ln_forward(const Matrix& x, const LayerNormParams& p, double eps, LnCache* cache) {
    const std::size_t d = x.cols();
    Matrix out(x.rows(), d);
    if (cache) {
        cache->xhat = Matrix(x.rows(), d);
        cache->inv_std.assign(x.rows(), 0.0);
    }
    for (std::size_t i = 0; i < x.rows(); ++i) {
        const double* xr = x.row(i);
        double mean = 0.0;
        for (std::size_t j = 0; j < d; ++j) mean += xr[j];
        mean /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            const double dv = xr[j] - mean;
            var += dv * dv;
        }
        var /= static_cast<double>(d);
        const double inv_std = 1.0 / std::sqrt(var + eps);
        double* yr = out.row(i);
        for (std::size_t j = 0; j < d; ++j) {
            const double xhat = (xr[j] - mean) * inv_std;
            yr[j] = p.gamma[j] * xhat + p.beta[j];
            if (cache) cache->xhat(i, j) = xhat;
        }
        if (cache) cache->inv_std[i] = inv_std;
    }
    return out;
}

Matrix ln_backward(const Matrix& dy, const LnCache& cache, const LayerNormParams& p,
                   Vector& dgamma, Vector& dbeta) {
    const std::size_t d = dy.cols();
    Matrix dx(dy.rows(), d);
    for (std::size_t i = 0; i < dy.rows(); ++i) {
        const double* dyr = dy.row(i);
        const double* xh = cache.xhat.row(i);
        double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            dgamma[j] += dyr[j] * xh[j];
            dbeta[j] += dyr[j];
            const double dxhat = dyr[j] * p.gamma[j];
            sum_dxhat += dxhat;
            sum_dxhat_xhat += dxhat * xh[j];
        }
        const double inv_n = 1.0 / static_cast<double>(d);
        const double inv_std = cache.inv_std[i];
        double* dxr = dx.row(i);
        for (std::size_t j = 0; j < d; ++j) {
            const double dxhat = dyr[j] * p.gamma[j];
            dxr[j] = inv_std * (dxhat - inv_n * sum_dxhat - xh[j] * inv_n * sum_dxhat_xhat);
        }
    }
    return dx;
}

Matrix head_slice(const Matrix& m, std::size_t head, std::size_t head_dim) {
    Matrix out(m.rows(), head_dim);
    for (std::size_t i = 0; i < m.rows(); ++i) {
        const double* src = m.row(i) + head * head_dim;
        std::copy(src, src + head_dim, out.row(i));
    }
    return out;
}

void head_insert(Matrix& m, const Matrix& sub, std::size_t head, std::size_t head_dim) {
    for (std::size_t i = 0; i < m.rows(); ++i)
        std::copy(sub.row(i), sub.row(i) + head_dim, m.row(i) + head * head_dim);
}

// ---------------------------------------------------------------------------
// embedding

EmbedOut embed_forward(const std::vector<TokenizedSample>& batch, const ModelWeights& w,
                       BnMode bn_mode, EmbedCache* cache) {
    const ModelConfig& cfg = w.config;
    check_bn_batch(bn_mode, batch.size());
    const std::size_t B = batch.size(), L = cfg.token_count, K = cfg.k;
    const std::size_t h1 = cfg.embed_hidden(), d = cfg.d;

    for (const auto& s : batch) {
        if (s.tokens.size() != L)
            throw std::invalid_argument("embed: sample token count does not match config");
        for (const auto& t : s.tokens)
            if (t.neighborhood.size() != K)
                throw std::invalid_argument("embed: neighborhood size does not match config");
    }

    Matrix offsets(B * L * K, 3);
    Matrix centers(B * L, 3);
    for (std::size_t b = 0; b < B; ++b) {
        for (std::size_t t = 0; t < L; ++t) {
            const Token& tok = batch[b].tokens[t];
            for (int a = 0; a < 3; ++a) centers(b * L + t, a) = tok.center[a];
            for (std::size_t j = 0; j < K; ++j)
                for (int a = 0; a < 3; ++a) offsets((b * L + t) * K + j, a) = tok.neighborhood[j][a];
        }
    }

    Matrix pre_bn;
    matmul(offsets, w.embed_w1, pre_bn);
    add_bias_rows(pre_bn, w.embed_b1);

    // BatchNorm over all (B*L*K) rows, per channel
    const std::size_t rows = pre_bn.rows();
    Vector mean(h1, 0.0), var(h1, 0.0);
    const bool batch_stats = bn_mode != BnMode::frozen;
    if (batch_stats) {
        for (std::size_t i = 0; i < rows; ++i) {
            const double* r = pre_bn.row(i);
            for (std::size_t c = 0; c < h1; ++c) mean[c] += r[c];
        }
        for (std::size_t c = 0; c < h1; ++c) mean[c] /= static_cast<double>(rows);
        for (std::size_t i = 0; i < rows; ++i) {
            const double* r = pre_bn.row(i);
            for (std::size_t c = 0; c < h1; ++c) {
                const double dv = r[c] - mean[c];
                var[c] += dv * dv;
            }
        }
        for (std::size_t c = 0; c < h1; ++c) var[c] /= static_cast<double>(rows);
    } else {
        mean = w.embed_bn.running_mean;
        var = w.embed_bn.running_var;
    }

    constexpr double kBnEps = 1e-5;
    Vector inv_std(h1);
    for (std::size_t c = 0; c < h1; ++c) inv_std[c] = 1.0 / std::sqrt(var[c] + kBnEps);

    Matrix act(rows, h1);
    Matrix xhat_store;
    if (cache) xhat_store = Matrix(rows, h1);
    for (std::size_t i = 0; i < rows; ++i) {
        const double* r = pre_bn.row(i);
        double* a = act.row(i);
        for (std::size_t c = 0; c < h1; ++c) {
            const double xhat = (r[c] - mean[c]) * inv_std[c];
            if (cache) xhat_store(i, c) = xhat;
            a[c] = std::max(0.0, w.embed_bn.gamma[c] * xhat + w.embed_bn.beta[c]);
        }
    }

    Matrix feats;
    matmul(act, w.embed_w2, feats);
    add_bias_rows(feats, w.embed_b2);

    // max-pool over the K neighborhood rows of each token
    std::vector<std::size_t> argmax;
    if (cache) argmax.assign(B * L * d, 0);
    std::vector<Matrix> pooled(B, Matrix(L, d));
    for (std::size_t bt = 0; bt < B * L; ++bt) {
        const std::size_t b = bt / L, t = bt % L;
        double* out = pooled[b].row(t);
        for (std::size_t c = 0; c < d; ++c) {
            double best = feats(bt * K, c);
            std::size_t best_j = 0;
            for (std::size_t j = 1; j < K; ++j) {
                if (feats(bt * K + j, c) > best) {
                    best = feats(bt * K + j, c);
                    best_j = j;
                }
            }
            out[c] = best;
            if (cache) argmax[bt * d + c] = best_j;
        }
    }

    // positional MLP on centers
    Matrix p1;
    matmul(centers, w.pos_w1, p1);
    add_bias_rows(p1, w.pos_b1);
    relu_inplace(p1);
    Matrix p2;
    matmul(p1, w.pos_w2, p2);
    add_bias_rows(p2, w.pos_b2);

    for (std::size_t bt = 0; bt < B * L; ++bt) {
        double* out = pooled[bt / L].row(bt % L);
        const double* pr = p2.row(bt);
        for (std::size_t c = 0; c < d; ++c) out[c] += pr[c];
    }

    if (cache) {
        cache->offsets = std::move(offsets);
        cache->xhat = std::move(xhat_store);
        cache->inv_std = inv_std;
        cache->act = std::move(act);
        cache->argmax = std::move(argmax);
        cache->centers = std::move(centers);
        cache->pos_hidden = std::move(p1);
        cache->batch_stats = batch_stats;
    }

    EmbedOut out;
    out.tokens = std::move(pooled);
    out.batch_mean = std::move(mean);
    out.batch_var = std::move(var);
    return out;
}

void embed_backward(const std::vector<Matrix>& d_tokens, const EmbedCache& cache,
                    const ModelWeights& w, ModelWeights& g) {
    const ModelConfig& cfg = w.config;
    const std::size_t B = d_tokens.size(), L = cfg.token_count, K = cfg.k;
    const std::size_t h1 = cfg.embed_hidden(), d = cfg.d;
    const std::size_t rows = B * L * K;

    // positional branch
    Matrix dp2(B * L, d);
    for (std::size_t bt = 0; bt < B * L; ++bt)
        std::copy(d_tokens[bt / L].row(bt % L), d_tokens[bt / L].row(bt % L) + d, dp2.row(bt));

    Matrix tmp;
    matmul_tn(cache.pos_hidden, dp2, tmp);
    for (std::size_t i = 0; i < tmp.size(); ++i) g.pos_w2.data()[i] += tmp.data()[i];
    for (std::size_t i = 0; i < dp2.rows(); ++i)
        for (std::size_t c = 0; c < d; ++c) g.pos_b2[c] += dp2(i, c);

    Matrix dp1;
    matmul_nt(dp2, w.pos_w2, dp1);
    for (std::size_t i = 0; i < dp1.rows(); ++i)
        for (std::size_t c = 0; c < h1; ++c)
            if (cache.pos_hidden(i, c) <= 0.0) dp1(i, c) = 0.0;
    matmul_tn(cache.centers, dp1, tmp);
    for (std::size_t i = 0; i < tmp.size(); ++i) g.pos_w1.data()[i] += tmp.data()[i];
    for (std::size_t i = 0; i < dp1.rows(); ++i)
        for (std::size_t c = 0; c < h1; ++c) g.pos_b1[c] += dp1(i, c);

    // max-pool routing
    Matrix dfeats(rows, d);
    for (std::size_t bt = 0; bt < B * L; ++bt) {
        const double* dt = d_tokens[bt / L].row(bt % L);
        for (std::size_t c = 0; c < d; ++c) dfeats(bt * K + cache.argmax[bt * d + c], c) += dt[c];
    }

    matmul_tn(cache.act, dfeats, tmp);
    for (std::size_t i = 0; i < tmp.size(); ++i) g.embed_w2.data()[i] += tmp.data()[i];
    for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t c = 0; c < d; ++c) g.embed_b2[c] += dfeats(i, c);

    Matrix dact;
    matmul_nt(dfeats, w.embed_w2, dact);
    // ReLU mask from the stored activations
    for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t c = 0; c < h1; ++c)
            if (cache.act(i, c) <= 0.0) dact(i, c) = 0.0;

    // BatchNorm backward (per channel, over all rows)
    Matrix dpre(rows, h1);
    for (std::size_t c = 0; c < h1; ++c) {
        double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
        for (std::size_t i = 0; i < rows; ++i) {
            const double dy = dact(i, c);
            g.embed_bn.gamma[c] += dy * cache.xhat(i, c);
            g.embed_bn.beta[c] += dy;
            const double dxhat = dy * w.embed_bn.gamma[c];
            sum_dxhat += dxhat;
            sum_dxhat_xhat += dxhat * cache.xhat(i, c);
        }
        const double inv_n = 1.0 / static_cast<double>(rows);
        for (std::size_t i = 0; i < rows; ++i) {
            const double dxhat = dact(i, c) * w.embed_bn.gamma[c];
            if (cache.batch_stats)
                dpre(i, c) = cache.inv_std[c] *
                             (dxhat - inv_n * sum_dxhat - cache.xhat(i, c) * inv_n * sum_dxhat_xhat);
            else
                dpre(i, c) = dxhat * cache.inv_std[c];
        }
    }

    matmul_tn(cache.offsets, dpre, tmp);
    for (std::size_t i = 0; i < tmp.size(); ++i) g.embed_w1.data()[i] += tmp.data()[i];
    for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t c = 0; c < h1; ++c) g.embed_b1[c] += dpre(i, c);
}

std::vector<Matrix> embed_tokens_batch(const std::vector<TokenizedSample>& batch,
                                       const ModelWeights& w, BnMode bn_mode) {
    return embed_forward(batch, w, bn_mode, nullptr).tokens;
}

Matrix embed_tokens(const TokenizedSample& sample, const ModelWeights& w, BnMode bn_mode) {
    return embed_forward({sample}, w, bn_mode, nullptr).tokens.front();
}

// ---------------------------------------------------------------------------
// transformer

ForwardResult transformer_forward_cached(const Matrix& tokens, const ModelWeights& w,
                                         const std::vector<std::size_t>* keep,
                                         TransformerCache* cache) {
    const ModelConfig& cfg = w.config;
    const std::size_t d = cfg.d, heads = cfg.n_heads, dh = cfg.head_dim();
    if (tokens.cols() != d) throw std::invalid_argument("transformer_forward: token width mismatch");

    std::vector<std::size_t> kept;
    if (keep) {
        kept = *keep;
        if (kept.empty()) throw std::runtime_error("purge hook produced an empty token set");
        for (const std::size_t i : kept)
            if (i >= tokens.rows()) throw std::invalid_argument("keep index out of range");
    } else {
        kept.resize(tokens.rows());
        for (std::size_t i = 0; i < kept.size(); ++i) kept[i] = i;
    }

    const std::size_t n = kept.size() + 1; // CLS at row 0
    Matrix x(n, d);
    std::copy(w.cls.begin(), w.cls.end(), x.row(0));
    for (std::size_t i = 0; i < kept.size(); ++i)
        std::copy(tokens.row(kept[i]), tokens.row(kept[i]) + d, x.row(i + 1));

    ForwardResult result;
    result.kept = kept;
    result.attention.reserve(cfg.n_blocks);
    if (cache) cache->blocks.resize(cfg.n_blocks);

    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

    for (std::size_t bi = 0; bi < cfg.n_blocks; ++bi) {
        const BlockWeights& bw = w.blocks[bi];
        BlockCache* bc = cache ? &cache->blocks[bi] : nullptr;
        if (bc) bc->x_in = x;

        LnCache ln1;
        Matrix xn = ln_forward(x, bw.ln1, cfg.ln_eps, bc ? &ln1 : nullptr);

        Matrix q, kk, v;
        matmul(xn, bw.wq, q);
        matmul(xn, bw.wk, kk);
        matmul(xn, bw.wv, v);

        Matrix ctx(n, d);
        Matrix attn_avg(n, n);
        std::vector<Matrix> head_attn;
        if (bc) head_attn.reserve(heads);
        for (std::size_t h = 0; h < heads; ++h) {
            Matrix qh = head_slice(q, h, dh), kh = head_slice(kk, h, dh), vh = head_slice(v, h, dh);
            Matrix scores;
            matmul_nt(qh, kh, scores);
            for (std::size_t i = 0; i < scores.size(); ++i) scores.data()[i] *= scale;
            softmax_rows(scores);
            Matrix oh;
            matmul(scores, vh, oh);
            head_insert(ctx, oh, h, dh);
            for (std::size_t i = 0; i < scores.size(); ++i)
                attn_avg.data()[i] += scores.data()[i] / static_cast<double>(heads);
            if (bc) head_attn.push_back(std::move(scores));
        }

        Matrix attn_out;
        matmul(ctx, bw.wo, attn_out);
        Matrix x1 = x;
        for (std::size_t i = 0; i < x1.size(); ++i) x1.data()[i] += attn_out.data()[i];

        LnCache ln2;
        Matrix yn = ln_forward(x1, bw.ln2, cfg.ln_eps, bc ? &ln2 : nullptr);
        Matrix f1;
        matmul(yn, bw.ffn_w1, f1);
        add_bias_rows(f1, bw.ffn_b1);
        relu_inplace(f1);
        Matrix f2;
        matmul(f1, bw.ffn_w2, f2);
        add_bias_rows(f2, bw.ffn_b2);

        Matrix x2 = x1;
        for (std::size_t i = 0; i < x2.size(); ++i) x2.data()[i] += f2.data()[i];

        if (bc) {
            bc->xn = std::move(xn);
            bc->ln1 = std::move(ln1);
            bc->q = std::move(q);
            bc->k = std::move(kk);
            bc->v = std::move(v);
            bc->attn = std::move(head_attn);
            bc->ctx = std::move(ctx);
            bc->x1 = x1;
            bc->yn = std::move(yn);
            bc->ln2 = std::move(ln2);
            bc->f1 = std::move(f1);
        }

        result.attention.push_back(std::move(attn_avg));
        x = std::move(x2);
    }

    // classification head on the final CLS representation
    Matrix x0(1, d);
    std::copy(x.row(0), x.row(0) + d, x0.row(0));
    LnCache hl;
    Matrix z = ln_forward(x0, w.head_ln, cfg.ln_eps, cache ? &hl : nullptr);
    Matrix logits_m;
    matmul(z, w.head_w, logits_m);
    result.logits.assign(logits_m.row(0), logits_m.row(0) + cfg.n_classes);
    for (std::size_t c = 0; c < cfg.n_classes; ++c) result.logits[c] += w.head_b[c];

    if (cache) {
        cache->x0 = std::move(x0);
        cache->head_ln = std::move(hl);
        cache->z = std::move(z);
    }
    return result;
}

ForwardResult transformer_forward(const Matrix& tokens, const ModelWeights& w,
                                  const std::vector<std::size_t>* keep) {
    return transformer_forward_cached(tokens, w, keep, nullptr);
}

// Backward through the transformer stack for one sample. dlogits is the
// gradient of the loss at the logits; returns the gradient w.r.t. the
// embedded token matrix (only kept rows receive gradient) and accumulates
// parameter gradients into g.
Matrix transformer_backward(const Vector& dlogits, const TransformerCache& cache,
                            const ForwardResult& fwd, const ModelWeights& w, ModelWeights& g,
                            std::size_t token_rows) {
    const ModelConfig& cfg = w.config;
    const std::size_t d = cfg.d, heads = cfg.n_heads, dh = cfg.head_dim();
    const std::size_t n = fwd.kept.size() + 1;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

    // head
    Matrix dlog(1, cfg.n_classes);
    for (std::size_t c = 0; c < cfg.n_classes; ++c) {
        dlog(0, c) = dlogits[c];
        g.head_b[c] += dlogits[c];
    }
    Matrix tmp;
    matmul_tn(cache.z, dlog, tmp);
    for (std::size_t i = 0; i < tmp.size(); ++i) g.head_w.data()[i] += tmp.data()[i];
    Matrix dz;
    matmul_nt(dlog, w.head_w, dz);
    Matrix dx0 = ln_backward(dz, cache.head_ln, w.head_ln, g.head_ln.gamma, g.head_ln.beta);

    Matrix dx(n, d);
    std::copy(dx0.row(0), dx0.row(0) + d, dx.row(0));

    for (std::size_t bi = cfg.n_blocks; bi-- > 0;) {
        const BlockWeights& bw = w.blocks[bi];
        const BlockCache& bc = cache.blocks[bi];
        BlockWeights& gb = g.blocks[bi];

        // x2 = x1 + f2
        Matrix df2 = dx; // alias copy
        // f2 = relu(yn w1 + b1) w2 + b2
        Matrix df1;
        matmul_nt(df2, bw.ffn_w2, df1);
        matmul_tn(bc.f1, df2, tmp);
        for (std::size_t i = 0; i < tmp.size(); ++i) gb.ffn_w2.data()[i] += tmp.data()[i];
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t c = 0; c < d; ++c) gb.ffn_b2[c] += df2(i, c);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t c = 0; c < cfg.ffn_hidden(); ++c)
                if (bc.f1(i, c) <= 0.0) df1(i, c) = 0.0;
        Matrix dyn;
        matmul_nt(df1, bw.ffn_w1, dyn);
        matmul_tn(bc.yn, df1, tmp);
        for (std::size_t i = 0; i < tmp.size(); ++i) gb.ffn_w1.data()[i] += tmp.data()[i];
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t c = 0; c < cfg.ffn_hidden(); ++c) gb.ffn_b1[c] += df1(i, c);

        Matrix dx1 = ln_backward(dyn, bc.ln2, bw.ln2, gb.ln2.gamma, gb.ln2.beta);
        for (std::size_t i = 0; i < dx1.size(); ++i) dx1.data()[i] += dx.data()[i];

        // x1 = x + ctx wo
        Matrix dctx;
        matmul_nt(dx1, bw.wo, dctx);
        matmul_tn(bc.ctx, dx1, tmp);
        for (std::size_t i = 0; i < tmp.size(); ++i) gb.wo.data()[i] += tmp.data()[i];

        Matrix dq(n, d), dk(n, d), dv(n, d);
        for (std::size_t h = 0; h < heads; ++h) {
            Matrix doh = head_slice(dctx, h, dh);
            const Matrix& a = bc.attn[h];
            Matrix vh = head_slice(bc.v, h, dh);
            Matrix qh = head_slice(bc.q, h, dh);
            Matrix kh = head_slice(bc.k, h, dh);

            Matrix da;
            matmul_nt(doh, vh, da);
            Matrix dvh;
            matmul_tn(a, doh, dvh);

            // softmax backward per row
            Matrix ds(n, n);
            for (std::size_t i = 0; i < n; ++i) {
                double dot = 0.0;
                for (std::size_t j = 0; j < n; ++j) dot += da(i, j) * a(i, j);
                for (std::size_t j = 0; j < n; ++j) ds(i, j) = a(i, j) * (da(i, j) - dot) * scale;
            }
            Matrix dqh;
            matmul(ds, kh, dqh);
            Matrix dkh;
            matmul_tn(ds, qh, dkh);
            head_insert(dq, dqh, h, dh);
            head_insert(dk, dkh, h, dh);
            head_insert(dv, dvh, h, dh);
        }

        Matrix dxn(n, d);
        matmul_nt(dq, bw.wq, tmp);
        for (std::size_t i = 0; i < dxn.size(); ++i) dxn.data()[i] += tmp.data()[i];
        matmul_nt(dk, bw.wk, tmp);
        for (std::size_t i = 0; i < dxn.size(); ++i) dxn.data()[i] += tmp.data()[i];
        matmul_nt(dv, bw.wv, tmp);
        for (std::size_t i = 0; i < dxn.size(); ++i) dxn.data()[i] += tmp.data()[i];

        matmul_tn(bc.xn, dq, tmp);
        for (std::size_t i = 0; i < tmp.size(); ++i) gb.wq.data()[i] += tmp.data()[i];
        matmul_tn(bc.xn, dk, tmp);
        for (std::size_t i = 0; i < tmp.size(); ++i) gb.wk.data()[i] += tmp.data()[i];
        matmul_tn(bc.xn, dv, tmp);
        for (std::size_t i = 0; i < tmp.size(); ++i) gb.wv.data()[i] += tmp.data()[i];

        Matrix dx_ln = ln_backward(dxn, bc.ln1, bw.ln1, gb.ln1.gamma, gb.ln1.beta);
        for (std::size_t i = 0; i < dx1.size(); ++i) dx1.data()[i] += dx_ln.data()[i];
        dx = std::move(dx1);
    }

    // split into CLS gradient and token gradients
    for (std::size_t c = 0; c < d; ++c) g.cls[c] += dx(0, c);
    Matrix d_tokens(token_rows, d);
    for (std::size_t i = 0; i < fwd.kept.size(); ++i)
        std::copy(dx.row(i + 1), dx.row(i + 1) + d, d_tokens.row(fwd.kept[i]));
    return d_tokens;
}

ForwardResult forward(const TokenizedSample& sample, const ModelWeights& w, BnMode bn_mode,
                      const PurgeHook* purge_hook) {
    return forward_batch({sample}, w, bn_mode, purge_hook).front();
}

std::vector<ForwardResult> forward_batch(const std::vector<TokenizedSample>& batch,
                                         const ModelWeights& w, BnMode bn_mode,
                                         const PurgeHook* purge_hook) {
    const std::vector<Matrix> embedded = embed_tokens_batch(batch, w, bn_mode);
    std::vector<ForwardResult> out(batch.size());
    std::exception_ptr error;
#pragma omp parallel for schedule(dynamic) if (batch.size() > 1)
    for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(batch.size()); ++i) {
        try {
            const Matrix& tokens = embedded[static_cast<std::size_t>(i)];
            if (purge_hook && *purge_hook) {
                const std::vector<std::size_t> keep = (*purge_hook)(tokens);
                out[static_cast<std::size_t>(i)] = transformer_forward(tokens, w, &keep);
            } else {
                out[static_cast<std::size_t>(i)] = transformer_forward(tokens, w, nullptr);
            }
        } catch (...) {
#pragma omp critical
            if (!error) error = std::current_exception();
        }
    }
    if (error) std::rethrow_exception(error);
    return out;
}

int predict(const Vector& logits) {
    return static_cast<int>(std::max_element(logits.begin(), logits.end()) - logits.begin());
}

} // namespace pg
