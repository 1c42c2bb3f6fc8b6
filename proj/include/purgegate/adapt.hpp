#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "purgegate/corruptions.hpp"
#include "purgegate/model.hpp"
#include "purgegate/point_cloud.hpp"
#include "purgegate/purge.hpp"

namespace pg {

enum class TtaVariant { source_only, pg_sp, pg_sf };

std::string variant_name(TtaVariant v);
TtaVariant variant_from_name(const std::string& name);

// Softmax Shannon entropy in nats, max-subtracted for stability.
double entropy(const Vector& logits);

// Per-sample argmin of entropy over the candidate arms; ties break toward
// the smallest purge size. Input pairs are (purge_size, logits).
std::size_t select_purge_size(const std::vector<std::pair<std::size_t, Vector>>& per_candidate);

struct TtaCandidateRecord {
    std::size_t purge_size = 0;
    double entropy = 0.0;
    int pred = -1;
};

struct TtaRecord {
    std::size_t sample_id = 0;
    int label = -1;
    std::vector<TtaCandidateRecord> per_candidate;
    std::size_t selected = 0; // chosen purge size
    int selected_pred = -1;
};

struct TtaReport {
    TtaVariant variant = TtaVariant::source_only;
    std::string corruption = "none";
    int severity = 0;
    std::vector<std::size_t> candidates;
    std::vector<TtaRecord> records;

    double accuracy() const; // of the entropy-selected predictions
    double fixed_accuracy(std::size_t purge_size) const;
    double fixed_mean_entropy(std::size_t purge_size) const;

    // CSV schema: sample_id,label,variant,corruption,severity,candidate,
    // entropy,pred,selected,correct — one row per (sample, candidate).
    void write_csv(const std::string& path, const std::string& config_hash = "") const;
    std::string summary_json() const;
};

struct TtaOptions {
    TtaVariant variant = TtaVariant::pg_sp;
    std::vector<std::size_t> candidates = {0, 2, 4, 8, 16, 24};
    std::size_t batch_size = 32;
    BnMode bn_mode = BnMode::per_batch_reset;
    std::size_t fps_seed_index = 0;
    bool parallel_arms = false; // candidate arms run sequentially by default
    bool per_batch_selection = false; // select one L* per batch instead of per sample
};

// Stateless evaluation of one corrupted stream: tokenize per batch, run every
// candidate arm (per-sample purge plans, shared fixed size per arm), select
// per-sample L* by entropy. Never mutates the weights.
TtaReport tta_evaluate(const ModelWeights& w, const SourceStats* stats,
                       const std::vector<PointCloud>& clouds, const TtaOptions& options);

} // namespace pg
