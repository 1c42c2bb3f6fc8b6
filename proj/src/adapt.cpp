#include "purgegate/adapt.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "purgegate/errors.hpp"
#include "purgegate/kernels.hpp"
#include "purgegate/tokenizer.hpp"

namespace pg {

std::string variant_name(TtaVariant v) {
    switch (v) {
    case TtaVariant::source_only: return "source_only";
    case TtaVariant::pg_sp: return "pg_sp";
    case TtaVariant::pg_sf: return "pg_sf";
    }
    throw std::invalid_argument("unknown variant");
}

TtaVariant variant_from_name(const std::string& name) {
    if (name == "source_only" || name == "none") return TtaVariant::source_only;
    if (name == "pg_sp" || name == "sp") return TtaVariant::pg_sp;
    if (name == "pg_sf" || name == "sf") return TtaVariant::pg_sf;
    throw std::invalid_argument("unknown variant name: " + name);
}

double entropy(const Vector& logits) {
    if (logits.empty()) throw std::invalid_argument("entropy: empty logits");
    const double mx = *std::max_element(logits.begin(), logits.end());
    double sum = 0.0;
    for (const double v : logits) sum += std::exp(v - mx);
    const double log_sum = std::log(sum);
    double h = 0.0;
    for (const double v : logits) {
        const double logp = (v - mx) - log_sum;
        h -= std::exp(logp) * logp;
    }
    return std::max(0.0, h);
}

std::size_t select_purge_size(const std::vector<std::pair<std::size_t, Vector>>& per_candidate) {
    if (per_candidate.empty()) throw std::invalid_argument("select_purge_size: empty candidate map");
    std::size_t best_l = per_candidate.front().first;
    double best_h = entropy(per_candidate.front().second);
    for (std::size_t i = 1; i < per_candidate.size(); ++i) {
        const double h = entropy(per_candidate[i].second);
        const std::size_t l = per_candidate[i].first;
        if (h < best_h || (h == best_h && l < best_l)) {
            best_h = h;
            best_l = l;
        }
    }
    return best_l;
}

double TtaReport::accuracy() const {
    if (records.empty()) return 0.0;
    std::size_t correct = 0;
    for (const auto& r : records)
        if (r.selected_pred == r.label) ++correct;
    return static_cast<double>(correct) / static_cast<double>(records.size());
}

double TtaReport::fixed_accuracy(std::size_t purge_size) const {
    std::size_t correct = 0, total = 0;
    for (const auto& r : records)
        for (const auto& c : r.per_candidate)
            if (c.purge_size == purge_size) {
                ++total;
                if (c.pred == r.label) ++correct;
            }
    if (total == 0) throw std::invalid_argument("fixed_accuracy: purge size not in report");
    return static_cast<double>(correct) / static_cast<double>(total);
}

double TtaReport::fixed_mean_entropy(std::size_t purge_size) const {
    double sum = 0.0;
    std::size_t total = 0;
    for (const auto& r : records)
        for (const auto& c : r.per_candidate)
            if (c.purge_size == purge_size) {
                sum += c.entropy;
                ++total;
            }
    if (total == 0) throw std::invalid_argument("fixed_mean_entropy: purge size not in report");
    return sum / static_cast<double>(total);
}

void TtaReport::write_csv(const std::string& path, const std::string& config_hash) const {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open for write: " + path);
    if (!config_hash.empty()) out << "# config_hash=" << config_hash << '\n';
    out << "sample_id,label,variant,corruption,severity,candidate,entropy,pred,selected,correct\n";
    out.precision(12);
    const std::string vname = variant_name(variant);
    for (const auto& r : records) {
        for (const auto& c : r.per_candidate) {
            out << r.sample_id << ',' << r.label << ',' << vname << ',' << corruption << ','
                << severity << ',' << c.purge_size << ',' << c.entropy << ',' << c.pred << ','
                << (c.purge_size == r.selected ? 1 : 0) << ',' << (c.pred == r.label ? 1 : 0)
                << '\n';
        }
    }
    if (!out) throw IoError("write failed: " + path);
}

std::string TtaReport::summary_json() const {
    nlohmann::json j;
    j["variant"] = variant_name(variant);
    j["corruption"] = corruption;
    j["severity"] = severity;
    j["samples"] = records.size();
    j["accuracy"] = accuracy();
    nlohmann::json per_candidate = nlohmann::json::object();
    for (const std::size_t l : candidates) {
        per_candidate[std::to_string(l)] = {{"accuracy", fixed_accuracy(l)},
                                            {"mean_entropy", fixed_mean_entropy(l)}};
    }
    j["per_candidate"] = per_candidate;
    return j.dump(2);
}

namespace {

std::vector<std::size_t> validated_candidates(const TtaOptions& opt, std::size_t token_count) {
    std::vector<std::size_t> c =
        opt.variant == TtaVariant::source_only ? std::vector<std::size_t>{0} : opt.candidates;
    std::sort(c.begin(), c.end());
    if (std::adjacent_find(c.begin(), c.end()) != c.end())
        throw ConfigError("candidate purge sizes must be distinct");
    if (c.empty() || c.front() != 0)
        throw ConfigError("candidate set must contain 0");
    if (c.back() >= token_count)
        throw ConfigError("candidate purge sizes must be < token count (" +
                          std::to_string(token_count) + ")");
    return c;
}

} // namespace

TtaReport tta_evaluate(const ModelWeights& w, const SourceStats* stats,
                       const std::vector<PointCloud>& clouds, const TtaOptions& opt) {
    configure_threads();
    const ModelConfig& cfg = w.config;
    const std::vector<std::size_t> candidates = validated_candidates(opt, cfg.token_count);

    if (opt.variant == TtaVariant::pg_sp && stats == nullptr)
        throw ConfigError("pg_sp requires source statistics");
    if (opt.batch_size < 2 && opt.bn_mode == BnMode::per_batch_reset)
        throw ConfigError("per_batch_reset needs batch_size >= 2");
    if (clouds.empty()) throw std::invalid_argument("tta_evaluate: empty stream");
    if (opt.bn_mode == BnMode::training)
        throw ConfigError("tta_evaluate never trains; use frozen or per_batch_reset");

    const Vector prototype = opt.variant == TtaVariant::pg_sf ? cls_prototype(w) : Vector{};

    // batch boundaries; a trailing batch of 1 is merged backward
    std::vector<std::pair<std::size_t, std::size_t>> batches;
    for (std::size_t start = 0; start < clouds.size(); start += opt.batch_size)
        batches.emplace_back(start, std::min(start + opt.batch_size, clouds.size()));
    if (batches.size() > 1 && batches.back().second - batches.back().first < 2) {
        batches[batches.size() - 2].second = batches.back().second;
        batches.pop_back();
    }

    TtaReport report;
    report.variant = opt.variant;
    report.candidates = candidates;
    report.records.reserve(clouds.size());

    for (const auto& [start, end] : batches) {
        const std::size_t B = end - start;
        std::vector<TokenizedSample> batch(B);
        std::exception_ptr error;
#pragma omp parallel for schedule(dynamic)
        for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(B); ++i) {
            try {
                batch[static_cast<std::size_t>(i)] =
                    tokenize(clouds[start + static_cast<std::size_t>(i)], cfg.token_count, cfg.k,
                             opt.fps_seed_index);
            } catch (...) {
#pragma omp critical
                if (!error) error = std::current_exception();
            }
        }
        if (error) std::rethrow_exception(error);

        const std::vector<Matrix> embedded = embed_tokens_batch(batch, w, opt.bn_mode);

        // per (sample, arm) logits
        std::vector<std::vector<std::pair<std::size_t, Vector>>> arm_logits(B);
        for (auto& v : arm_logits) v.reserve(candidates.size());

        // Divergences are purge-size independent; compute once per sample.
        std::vector<DivergenceVector> divergences(B);
        if (opt.variant != TtaVariant::source_only) {
#pragma omp parallel for schedule(dynamic)
            for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(B); ++i) {
                const auto idx = static_cast<std::size_t>(i);
                divergences[idx] = opt.variant == TtaVariant::pg_sp
                                       ? mahalanobis_divergence(embedded[idx], *stats)
                                       : cosine_divergence(embedded[idx], prototype, w);
            }
        }

        auto run_arm = [&](std::size_t purge_size) {
            std::vector<Vector> logits(B);
#pragma omp parallel for schedule(dynamic) if (!opt.parallel_arms)
            for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(B); ++i) {
                const auto idx = static_cast<std::size_t>(i);
                if (purge_size == 0) {
                    logits[idx] = transformer_forward(embedded[idx], w, nullptr).logits;
                } else {
                    const PurgePlan plan = purge_tokens(divergences[idx], purge_size);
                    logits[idx] = transformer_forward(embedded[idx], w, &plan.keep_indices).logits;
                }
            }
            return logits;
        };

        std::vector<std::vector<Vector>> all_arms(candidates.size());
        if (opt.parallel_arms) {
#pragma omp parallel for schedule(dynamic)
            for (std::ptrdiff_t a = 0; a < static_cast<std::ptrdiff_t>(candidates.size()); ++a)
                all_arms[static_cast<std::size_t>(a)] = run_arm(candidates[static_cast<std::size_t>(a)]);
        } else {
            for (std::size_t a = 0; a < candidates.size(); ++a) all_arms[a] = run_arm(candidates[a]);
        }

        for (std::size_t i = 0; i < B; ++i)
            for (std::size_t a = 0; a < candidates.size(); ++a)
                arm_logits[i].emplace_back(candidates[a], all_arms[a][i]);

        std::size_t batch_selected = 0;
        if (opt.per_batch_selection) {
            // argmin of mean entropy across the batch
            double best = 0.0;
            for (std::size_t a = 0; a < candidates.size(); ++a) {
                double mean_h = 0.0;
                for (std::size_t i = 0; i < B; ++i) mean_h += entropy(all_arms[a][i]);
                mean_h /= static_cast<double>(B);
                if (a == 0 || mean_h < best) {
                    best = mean_h;
                    batch_selected = candidates[a];
                }
            }
        }

        for (std::size_t i = 0; i < B; ++i) {
            TtaRecord rec;
            rec.sample_id = start + i;
            rec.label = clouds[start + i].label.value_or(-1);
            for (const auto& [l, lg] : arm_logits[i])
                rec.per_candidate.push_back({l, entropy(lg), predict(lg)});
            rec.selected = opt.per_batch_selection ? batch_selected : select_purge_size(arm_logits[i]);
            for (const auto& c : rec.per_candidate)
                if (c.purge_size == rec.selected) rec.selected_pred = c.pred;
            report.records.push_back(std::move(rec));
        }
    }
    return report;
}

} // namespace pg
