#include "purgegate/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "purgegate/kernels.hpp"
#include "purgegate/rng.hpp"

namespace pg {

LipschitzResult check_ln_lipschitz(std::size_t d, std::size_t n_pairs, double sigma_min,
                                   const Vector& gamma, double eps, std::uint64_t seed) {
    if (!(sigma_min > 0.0)) throw std::invalid_argument("check_ln_lipschitz: sigma_min must be > 0");
    if (gamma.size() != d) throw std::invalid_argument("check_ln_lipschitz: gamma size mismatch");
    if (d < 2) throw std::invalid_argument("check_ln_lipschitz: d must be >= 2");

    const double max_gamma = std::accumulate(gamma.begin(), gamma.end(), 0.0,
                                             [](double m, double g) { return std::max(m, std::abs(g)); });
    LipschitzResult result;
    result.d = d;
    result.n_pairs = n_pairs;
    result.sigma_min = sigma_min;
    // valid for any pair in the constraint set, segment excursions included
    result.analytic_bound = 2.0 * max_gamma / std::sqrt(sigma_min * sigma_min + eps);

    const LayerNormParams params{gamma, Vector(d, 0.0)};

    Rng rng = Rng::derive(seed, "lipschitz");
    auto draw = [&] {
        for (;;) {
            Matrix x(1, d);
            for (std::size_t j = 0; j < d; ++j) x(0, j) = rng.normal();
            double mean = 0.0;
            for (std::size_t j = 0; j < d; ++j) mean += x(0, j);
            mean /= static_cast<double>(d);
            double var = 0.0;
            for (std::size_t j = 0; j < d; ++j) var += (x(0, j) - mean) * (x(0, j) - mean);
            var /= static_cast<double>(d);
            if (std::sqrt(var) >= sigma_min) return x;
        }
    };

    double sum_ratio = 0.0;
    for (std::size_t p = 0; p < n_pairs; ++p) {
        const Matrix u = draw();
        // half near pairs, half far pairs, so small-perturbation behavior is
        // covered as well as the bulk
        Matrix v(1, d);
        if (p % 2 == 0) {
            const double scale = rng.uniform(1e-4, 1e-2);
            for (std::size_t j = 0; j < d; ++j) v(0, j) = u(0, j) + scale * rng.normal();
            double mean = 0.0;
            for (std::size_t j = 0; j < d; ++j) mean += v(0, j);
            mean /= static_cast<double>(d);
            double var = 0.0;
            for (std::size_t j = 0; j < d; ++j) var += (v(0, j) - mean) * (v(0, j) - mean);
            var /= static_cast<double>(d);
            if (std::sqrt(var) < sigma_min) v = draw();
        } else {
            v = draw();
        }

        double diff2 = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            const double dv = u(0, j) - v(0, j);
            diff2 += dv * dv;
        }
        if (diff2 == 0.0) continue; // ratio defined as 0

        Matrix lu, lv;
        layer_norm_rows(u, params.gamma, params.beta, eps, lu);
        layer_norm_rows(v, params.gamma, params.beta, eps, lv);
        double ldiff2 = 0.0;
        for (std::size_t j = 0; j < d; ++j) {
            const double dv = lu(0, j) - lv(0, j);
            ldiff2 += dv * dv;
        }
        const double ratio = std::sqrt(ldiff2 / diff2);
        sum_ratio += ratio;
        result.max_ratio = std::max(result.max_ratio, ratio);
        if (ratio > result.analytic_bound) ++result.violations;
    }
    result.mean_ratio = n_pairs ? sum_ratio / static_cast<double>(n_pairs) : 0.0;
    return result;
}

std::vector<SphereConcentrationPoint> check_sphere_orthogonality(
    const std::vector<std::size_t>& dims, std::size_t n_pairs, std::uint64_t seed) {
    std::vector<SphereConcentrationPoint> out;
    for (const std::size_t d : dims) {
        if (d < 2) throw std::invalid_argument("check_sphere_orthogonality: d must be >= 2");
        Rng rng = Rng::derive(seed ^ d, "sphere");
        auto unit = [&] {
            Vector v(d);
            double norm = 0.0;
            do {
                norm = 0.0;
                for (auto& x : v) {
                    x = rng.normal();
                    norm += x * x;
                }
                norm = std::sqrt(norm);
            } while (norm < 1e-12);
            for (auto& x : v) x /= norm;
            return v;
        };

        double sum = 0.0, sum2 = 0.0;
        for (std::size_t p = 0; p < n_pairs; ++p) {
            const Vector u = unit(), v = unit();
            double dot = 0.0;
            for (std::size_t j = 0; j < d; ++j) dot += u[j] * v[j];
            sum += dot;
            sum2 += dot * dot;
        }
        const double mean = sum / static_cast<double>(n_pairs);
        out.push_back({d, n_pairs, mean, sum2 / static_cast<double>(n_pairs) - mean * mean});
    }
    return out;
}

std::vector<UniformityPoint> check_attention_uniformity(const ModelWeights& w,
                                                        const std::vector<TokenizedSample>& clean_batch,
                                                        const std::vector<double>& noise_scales,
                                                        std::size_t replicates, std::uint64_t seed) {
    if (clean_batch.empty()) throw std::invalid_argument("check_attention_uniformity: empty batch");
    if (!std::is_sorted(noise_scales.begin(), noise_scales.end()))
        throw std::invalid_argument("check_attention_uniformity: noise scales must be ascending");

    const std::vector<Matrix> embedded = embed_tokens_batch(clean_batch, w, BnMode::frozen);
    const std::size_t n = w.config.token_count + 1;
    const double uniform = 1.0 / static_cast<double>(n);

    std::vector<UniformityPoint> out;
    for (const double scale : noise_scales) {
        Vector per_replicate(replicates, 0.0);
#pragma omp parallel for schedule(dynamic)
        for (std::ptrdiff_t r = 0; r < static_cast<std::ptrdiff_t>(replicates); ++r) {
            Rng rng = Rng::derive(seed + static_cast<std::uint64_t>(r),
                                  "uniformity" + std::to_string(scale));
            double dev_sum = 0.0;
            for (const Matrix& tokens : embedded) {
                Matrix noisy = tokens;
                if (scale > 0.0)
                    for (std::size_t i = 0; i < noisy.size(); ++i)
                        noisy.data()[i] += scale * rng.normal();
                const ForwardResult fwd = transformer_forward(noisy, w, nullptr);
                const Matrix& attn = fwd.attention.front(); // block 1, the purge point
                double dev = 0.0;
                for (std::size_t i = 0; i < attn.size(); ++i)
                    dev += std::abs(attn.data()[i] - uniform);
                dev_sum += dev / static_cast<double>(attn.size());
            }
            per_replicate[static_cast<std::size_t>(r)] = dev_sum / static_cast<double>(embedded.size());
        }
        double mean = 0.0;
        for (const double v : per_replicate) mean += v;
        mean /= static_cast<double>(replicates);
        double var = 0.0;
        for (const double v : per_replicate) var += (v - mean) * (v - mean);
        var /= static_cast<double>(replicates);
        out.push_back({scale, mean, var, replicates});
    }
    return out;
}

double spearman_correlation(const Vector& a, const Vector& b) {
    if (a.size() != b.size() || a.size() < 2)
        throw std::invalid_argument("spearman_correlation: need two same-length series");
    auto ranks = [](const Vector& v) {
        const std::size_t n = v.size();
        std::vector<std::size_t> order(n);
        std::iota(order.begin(), order.end(), 0);
        std::sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return v[x] < v[y]; });
        Vector r(n, 0.0);
        std::size_t i = 0;
        while (i < n) {
            std::size_t j = i;
            while (j + 1 < n && v[order[j + 1]] == v[order[i]]) ++j;
            const double avg = 0.5 * static_cast<double>(i + j) + 1.0; // average rank of the tie run
            for (std::size_t t = i; t <= j; ++t) r[order[t]] = avg;
            i = j + 1;
        }
        return r;
    };
    const Vector ra = ranks(a), rb = ranks(b);
    const double n = static_cast<double>(a.size());
    double ma = 0.0, mb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ma += ra[i];
        mb += rb[i];
    }
    ma /= n;
    mb /= n;
    double cov = 0.0, va = 0.0, vb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        cov += (ra[i] - ma) * (rb[i] - mb);
        va += (ra[i] - ma) * (ra[i] - ma);
        vb += (rb[i] - mb) * (rb[i] - mb);
    }
    if (va == 0.0 || vb == 0.0) return 0.0;
    return cov / std::sqrt(va * vb);
}

PurgeSweepResult purge_size_sweep(const ModelWeights& w, const SourceStats& stats,
                                  const std::vector<PointCloud>& clouds, std::size_t max_purge,
                                  const TtaOptions& base_options) {
    if (max_purge >= w.config.token_count)
        throw std::invalid_argument("purge_size_sweep: max_purge must be < token count");
    TtaOptions opt = base_options;
    opt.variant = TtaVariant::pg_sp;
    opt.candidates.clear();
    for (std::size_t l = 0; l <= max_purge; ++l) opt.candidates.push_back(l);

    const TtaReport report = tta_evaluate(w, &stats, clouds, opt);

    PurgeSweepResult result;
    Vector acc, ent;
    for (std::size_t l = 0; l <= max_purge; ++l) {
        PurgeSweepPoint p{l, report.fixed_accuracy(l), report.fixed_mean_entropy(l)};
        acc.push_back(p.accuracy);
        ent.push_back(p.mean_entropy);
        result.points.push_back(p);
    }
    result.spearman_entropy_accuracy = spearman_correlation(ent, acc);
    return result;
}

} // namespace pg
