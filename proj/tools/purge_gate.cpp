// purge-gate: synthetic data generation, pretraining, statistics collection,
// test-time evaluation with token purging, proposition analysis, and report
// aggregation.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "purgegate/adapt.hpp"
#include "purgegate/analysis.hpp"
#include "purgegate/corruptions.hpp"
#include "purgegate/dataset.hpp"
#include "purgegate/errors.hpp"
#include "purgegate/kernels.hpp"
#include "purgegate/model.hpp"
#include "purgegate/purge.hpp"
#include "purgegate/rng.hpp"
#include "purgegate/tokenizer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace pg;

namespace {

struct RunConfig {
    ModelConfig model;
    TrainHyperparams trainer;
    DatasetSpec dataset;
    std::vector<std::size_t> candidates = {0, 2, 4, 8, 16, 24};
    std::uint64_t seed = 0;

    void validate() const {
        model.validate();
        if (model.token_count > dataset.points_per_cloud)
            throw ConfigError("token_count must be <= points_per_cloud");
        if (model.k > dataset.points_per_cloud)
            throw ConfigError("k must be <= points_per_cloud");
        for (const std::size_t c : candidates)
            if (c >= model.token_count)
                throw ConfigError("candidate purge sizes must be < token_count");
    }

    json to_json() const {
        return json{
            {"model",
             {{"d", model.d},
              {"n_blocks", model.n_blocks},
              {"n_heads", model.n_heads},
              {"token_count", model.token_count},
              {"k", model.k},
              {"n_classes", model.n_classes},
              {"ln_eps", model.ln_eps}}},
            {"trainer",
             {{"epochs", trainer.epochs},
              {"batch_size", trainer.batch_size},
              {"lr", trainer.lr},
              {"momentum", trainer.momentum}}},
            {"dataset",
             {{"points_per_cloud", dataset.points_per_cloud},
              {"train_per_class", dataset.train_per_class},
              {"test_per_class", dataset.test_per_class}}},
            {"candidates", candidates},
            {"seed", seed},
        };
    }

    static RunConfig from_file(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw IoError("cannot open config: " + path);
        json j;
        try {
            in >> j;
        } catch (const json::exception& e) {
            throw ConfigError("bad config JSON in " + path + ": " + e.what());
        }
        RunConfig c;
        try {
            if (j.contains("model")) {
                const auto& m = j["model"];
                c.model.d = m.value("d", c.model.d);
                c.model.n_blocks = m.value("n_blocks", c.model.n_blocks);
                c.model.n_heads = m.value("n_heads", c.model.n_heads);
                c.model.token_count = m.value("token_count", c.model.token_count);
                c.model.k = m.value("k", c.model.k);
                c.model.n_classes = m.value("n_classes", c.model.n_classes);
                c.model.ln_eps = m.value("ln_eps", c.model.ln_eps);
            }
            if (j.contains("trainer")) {
                const auto& t = j["trainer"];
                c.trainer.epochs = t.value("epochs", c.trainer.epochs);
                c.trainer.batch_size = t.value("batch_size", c.trainer.batch_size);
                c.trainer.lr = t.value("lr", c.trainer.lr);
                c.trainer.momentum = t.value("momentum", c.trainer.momentum);
            }
            if (j.contains("dataset")) {
                const auto& d = j["dataset"];
                c.dataset.points_per_cloud = d.value("points_per_cloud", c.dataset.points_per_cloud);
                c.dataset.train_per_class = d.value("train_per_class", c.dataset.train_per_class);
                c.dataset.test_per_class = d.value("test_per_class", c.dataset.test_per_class);
            }
            if (j.contains("candidates")) c.candidates = j["candidates"].get<std::vector<std::size_t>>();
            c.seed = j.value("seed", c.seed);
        } catch (const json::exception& e) {
            throw ConfigError("bad config field in " + path + ": " + e.what());
        }
        return c;
    }

    std::string hash() const {
        const std::string s = to_json().dump();
        std::uint64_t h = 0xcbf29ce484222325ULL;
        for (const char ch : s) {
            h ^= static_cast<std::uint64_t>(static_cast<unsigned char>(ch));
            h *= 0x100000001b3ULL;
        }
        char buf[17];
        std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
        return buf;
    }
};

std::vector<LabeledSample> tokenize_labeled(const std::vector<PointCloud>& clouds,
                                            const ModelConfig& cfg) {
    std::vector<LabeledSample> out(clouds.size());
    std::exception_ptr error;
#pragma omp parallel for schedule(dynamic)
    for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(clouds.size()); ++i) {
        try {
            const auto idx = static_cast<std::size_t>(i);
            out[idx].tokens = tokenize(clouds[idx], cfg.token_count, cfg.k);
            out[idx].label = clouds[idx].label.value_or(-1);
        } catch (...) {
#pragma omp critical
            if (!error) error = std::current_exception();
        }
    }
    if (error) std::rethrow_exception(error);
    return out;
}

double eval_accuracy(const ModelWeights& w, const std::vector<PointCloud>& clouds, BnMode mode) {
    TtaOptions opt;
    opt.variant = TtaVariant::source_only;
    opt.bn_mode = mode;
    const TtaReport r = tta_evaluate(w, nullptr, clouds, opt);
    return r.accuracy();
}

// ---------------------------------------------------------------------- csv

void write_csv_line(std::ostream& out, const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) out << (i ? "," : "") << cells[i];
    out << '\n';
}

// ------------------------------------------------------------- subcommands

int cmd_gen_data(const RunConfig& cfg, const std::string& out_dir) {
    cfg.validate();
    DatasetSpec spec = cfg.dataset;
    spec.seed = cfg.seed;
    const Dataset ds = generate_dataset(spec);
    save_dataset(ds, out_dir);
    std::cout << "wrote " << ds.train.size() << " train / " << ds.test.size() << " test clouds to "
              << out_dir << " (config_hash=" << cfg.hash() << ")\n";
    return 0;
}

int cmd_pretrain(const RunConfig& cfg, const std::string& data_dir, const std::string& out_path) {
    cfg.validate();
    configure_threads();
    const Dataset ds = load_dataset(data_dir);
    const std::vector<LabeledSample> train = tokenize_labeled(ds.train, cfg.model);

    TrainHyperparams hp = cfg.trainer;
    hp.seed = cfg.seed;
    const ModelWeights w = train_source(train, cfg.model, hp);
    save_weights(w, out_path);

    const double train_acc = eval_accuracy(w, ds.train, BnMode::frozen);
    const double test_acc = eval_accuracy(w, ds.test, BnMode::frozen);
    std::cout << "trained model saved to " << out_path << "\n"
              << "clean train accuracy: " << train_acc << "\nclean test accuracy: " << test_acc
              << "\nconfig_hash=" << cfg.hash() << "\n";
    return 0;
}

int cmd_collect_stats(const std::string& weights_path, const std::string& data_dir,
                      const std::string& origin_name, const std::string& out_path) {
    LoadedWeights lw = load_weights(weights_path);
    const Dataset ds = load_dataset(data_dir);
    const ModelConfig& cfg = lw.weights.config;

    StatsOrigin origin;
    if (origin_name == "embed")
        origin = StatsOrigin::embedding_output;
    else if (origin_name == "ln")
        origin = StatsOrigin::first_ln_input;
    else
        throw ConfigError("--origin must be 'embed' or 'ln'");

    const std::vector<LabeledSample> train = tokenize_labeled(ds.train, cfg);
    // Fixed fold order: Welford is order-dependent at floating-point level.
    WelfordAccumulator acc(origin);
    for (const auto& s : train) {
        // Both origins see the same tensor here: block 1 is pre-LN, so its
        // LN input is exactly the embedding output. The origin is recorded
        // so downstream tooling knows which collection pass produced it.
        acc.add_sample(embed_tokens(s.tokens, lw.weights, BnMode::frozen));
    }
    const SourceStats stats = acc.finish();

    save_weights(lw.weights, out_path, stats_to_tensors(stats));
    std::cout << "collected statistics over " << stats.n_samples << " samples -> " << out_path
              << "\n";
    return 0;
}

int cmd_tta_eval(const RunConfig& cfg, const std::string& weights_path, const std::string& data_dir,
                 const std::string& variant_str, const std::string& corruption_name, int severity,
                 std::uint64_t corruption_seed, const std::string& bn_name, std::size_t batch,
                 bool parallel_arms, bool per_batch_selection, const std::string& out_csv) {
    const LoadedWeights lw = load_weights(weights_path);
    const Dataset ds = load_dataset(data_dir);

    TtaOptions opt;
    opt.variant = variant_from_name(variant_str);
    opt.candidates = cfg.candidates;
    opt.batch_size = batch;
    opt.parallel_arms = parallel_arms;
    opt.per_batch_selection = per_batch_selection;
    if (bn_name == "reset")
        opt.bn_mode = BnMode::per_batch_reset;
    else if (bn_name == "frozen")
        opt.bn_mode = BnMode::frozen;
    else
        throw ConfigError("--bn must be 'reset' or 'frozen'");

    SourceStats stats;
    const SourceStats* stats_ptr = nullptr;
    if (opt.variant == TtaVariant::pg_sp) {
        stats = stats_from_tensors(lw.extras);
        stats_ptr = &stats;
    }

    const CorruptionKind kind = corruption_from_name(corruption_name);
    std::vector<PointCloud> stream;
    stream.reserve(ds.test.size());
    Rng seeder = Rng::derive(corruption_seed, "corruption");
    for (const PointCloud& cloud : ds.test) {
        if (kind == CorruptionKind::none) {
            stream.push_back(cloud);
        } else {
            stream.push_back(apply_corruption(cloud, {kind, severity, seeder.next_u64()}));
        }
    }

    TtaReport report = tta_evaluate(lw.weights, stats_ptr, stream, opt);
    report.corruption = corruption_name;
    report.severity = kind == CorruptionKind::none ? 0 : severity;
    report.write_csv(out_csv, cfg.hash());

    const fs::path summary_path = fs::path(out_csv).replace_extension(".summary.json");
    std::ofstream sj(summary_path);
    if (!sj) throw IoError("cannot write " + summary_path.string());
    sj << report.summary_json() << '\n';

    std::cout << "variant=" << variant_name(opt.variant) << " corruption=" << corruption_name
              << " severity=" << report.severity << " accuracy=" << report.accuracy() << "\n"
              << "wrote " << out_csv << " and " << summary_path.string() << "\n";
    return 0;
}

int cmd_analyze(const std::string& what, const std::string& weights_path,
                const std::string& data_dir, const std::string& corruption_name, int severity,
                std::uint64_t seed, const std::string& out_csv) {
    std::ofstream out(out_csv);
    if (!out) throw IoError("cannot open for write: " + out_csv);
    out.precision(10);

    if (what == "lipschitz") {
        const std::size_t d = 64;
        const LipschitzResult r = check_ln_lipschitz(d, 100000, 0.5, Vector(d, 1.0), 1e-5, seed);
        out << "d,n_pairs,sigma_min,analytic_bound,max_ratio,mean_ratio,violations\n"
            << r.d << ',' << r.n_pairs << ',' << r.sigma_min << ',' << r.analytic_bound << ','
            << r.max_ratio << ',' << r.mean_ratio << ',' << r.violations << '\n';
    } else if (what == "sphere") {
        out << "d,n_pairs,mean_dot,var_dot,expected_var\n";
        for (const auto& p : check_sphere_orthogonality({32, 100, 256}, 10000, seed))
            out << p.d << ',' << p.n_pairs << ',' << p.mean_dot << ',' << p.var_dot << ','
                << 1.0 / static_cast<double>(p.d) << '\n';
    } else if (what == "uniformity") {
        const LoadedWeights lw = load_weights(weights_path);
        const Dataset ds = load_dataset(data_dir);
        std::vector<PointCloud> clean(ds.test.begin(),
                                      ds.test.begin() + std::min<std::size_t>(32, ds.test.size()));
        std::vector<TokenizedSample> batch;
        for (const auto& c : clean)
            batch.push_back(tokenize(c, lw.weights.config.token_count, lw.weights.config.k));
        out << "noise_scale,mean_abs_dev,var_abs_dev,replicates\n";
        for (const auto& p :
             check_attention_uniformity(lw.weights, batch, {0, 1, 10, 100, 1000}, 100, seed))
            out << p.noise_scale << ',' << p.mean_abs_dev << ',' << p.var_abs_dev << ','
                << p.replicates << '\n';
    } else if (what == "sweep") {
        const LoadedWeights lw = load_weights(weights_path);
        const Dataset ds = load_dataset(data_dir);
        const SourceStats stats = stats_from_tensors(lw.extras);
        const CorruptionKind kind = corruption_from_name(corruption_name);
        std::vector<PointCloud> stream;
        Rng seeder = Rng::derive(seed, "corruption");
        for (const PointCloud& cloud : ds.test)
            stream.push_back(kind == CorruptionKind::none
                                 ? cloud
                                 : apply_corruption(cloud, {kind, severity, seeder.next_u64()}));
        TtaOptions opt;
        const PurgeSweepResult r =
            purge_size_sweep(lw.weights, stats, stream, lw.weights.config.token_count - 1, opt);
        out << "purge_size,accuracy,mean_entropy\n";
        for (const auto& p : r.points)
            out << p.purge_size << ',' << p.accuracy << ',' << p.mean_entropy << '\n';
        std::cout << "spearman(entropy, accuracy) = " << r.spearman_entropy_accuracy << "\n";
    } else {
        throw ConfigError("analyze target must be one of lipschitz|sphere|uniformity|sweep");
    }
    std::cout << "wrote " << out_csv << "\n";
    return 0;
}

int cmd_report(const std::vector<std::string>& run_dirs, const std::string& out_prefix) {
    if (run_dirs.empty()) throw ConfigError("report: need at least one run directory");

    // (variant, corruption) -> accuracies across runs/seeds
    std::map<std::string, std::map<std::string, std::vector<double>>> cells;
    std::set<std::string> corruptions;
    for (const std::string& dir : run_dirs) {
        bool found = false;
        for (const auto& entry : fs::directory_iterator(dir)) {
            if (entry.path().extension() != ".json" ||
                entry.path().string().find(".summary.json") == std::string::npos)
                continue;
            std::ifstream in(entry.path());
            json j;
            try {
                in >> j;
                const std::string variant = j.at("variant").get<std::string>();
                const std::string corruption = j.at("corruption").get<std::string>();
                cells[variant][corruption].push_back(j.at("accuracy").get<double>());
                corruptions.insert(corruption);
                found = true;
            } catch (const json::exception& e) {
                throw FormatError("incompatible run summary " + entry.path().string() + ": " +
                                  e.what());
            }
        }
        if (!found) throw IoError("no *.summary.json files in run directory " + dir);
    }

    auto mean_of = [](const std::vector<double>& v) {
        double s = 0.0;
        for (const double x : v) s += x;
        return s / static_cast<double>(v.size());
    };
    auto std_of = [&](const std::vector<double>& v) {
        if (v.size() < 2) return 0.0;
        const double m = mean_of(v);
        double s = 0.0;
        for (const double x : v) s += (x - m) * (x - m);
        return std::sqrt(s / static_cast<double>(v.size() - 1));
    };

    json agg;
    std::ofstream csv(out_prefix + ".csv");
    if (!csv) throw IoError("cannot write " + out_prefix + ".csv");
    std::vector<std::string> header = {"variant"};
    header.insert(header.end(), corruptions.begin(), corruptions.end());
    header.push_back("mean");
    write_csv_line(csv, header);

    double source_mean = 0.0;
    bool have_source = false;
    if (cells.contains("source_only")) {
        double total = 0.0;
        std::size_t cnt = 0;
        for (const auto& [corr, accs] : cells["source_only"]) {
            total += mean_of(accs);
            ++cnt;
        }
        if (cnt) {
            source_mean = total / static_cast<double>(cnt);
            have_source = true;
        }
    }

    for (const auto& [variant, by_corr] : cells) {
        std::vector<std::string> row = {variant};
        double total = 0.0;
        std::size_t present = 0;
        bool any_absent = false;
        json jrow;
        for (const std::string& corr : corruptions) {
            auto it = by_corr.find(corr);
            if (it == by_corr.end()) {
                row.push_back("absent");
                any_absent = true;
                jrow[corr] = nullptr;
                continue;
            }
            const double m = mean_of(it->second);
            const double sd = std_of(it->second);
            char buf[64];
            if (it->second.size() > 1)
                std::snprintf(buf, sizeof(buf), "%.4f+-%.4f", m, sd);
            else
                std::snprintf(buf, sizeof(buf), "%.4f", m);
            row.push_back(buf);
            jrow[corr] = {{"mean", m}, {"std", sd}, {"n", it->second.size()}};
            total += m;
            ++present;
        }
        const double mean = present ? total / static_cast<double>(present) : 0.0;
        char buf[96];
        if (have_source && variant != "source_only")
            std::snprintf(buf, sizeof(buf), "%.4f (%+.4f)%s", mean, mean - source_mean,
                          any_absent ? " [mean over present cells]" : "");
        else
            std::snprintf(buf, sizeof(buf), "%.4f%s", mean,
                          any_absent ? " [mean over present cells]" : "");
        row.push_back(buf);
        write_csv_line(csv, row);
        jrow["mean"] = mean;
        jrow["mean_over_present_only"] = any_absent;
        agg[variant] = jrow;
    }

    std::ofstream jout(out_prefix + ".json");
    if (!jout) throw IoError("cannot write " + out_prefix + ".json");
    jout << agg.dump(2) << '\n';
    std::cout << "wrote " << out_prefix << ".csv and " << out_prefix << ".json\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"purge-gate: token-purging test-time adaptation for point-cloud classification"};
    app.require_subcommand(1);

    std::string config_path, data_dir, out_path, weights_path, stats_origin = "embed";
    std::string variant = "sp", corruption = "background", bn = "reset", analyze_what;
    int severity = 3;
    std::uint64_t seed_override = 0;
    bool seed_given = false;
    std::size_t batch = 32;
    bool parallel_arms = false, per_batch_selection = false, describe = false;
    std::string candidates_csv;
    std::vector<std::string> run_dirs;

    auto add_config = [&](CLI::App* cmd) {
        cmd->add_option("--config", config_path, "JSON run configuration");
        cmd->add_option_function<std::uint64_t>(
               "--seed", [&](std::uint64_t s) { seed_override = s; seed_given = true; },
               "root seed override");
    };

    auto* gen = app.add_subcommand("gen-data", "generate the synthetic shape dataset");
    add_config(gen);
    gen->add_option("--out", out_path, "output directory")->required();

    auto* pre = app.add_subcommand("pretrain", "train the source model");
    add_config(pre);
    pre->add_option("--data", data_dir, "dataset directory")->required();
    pre->add_option("--out", out_path, "output weights path")->required();

    auto* coll = app.add_subcommand("collect-stats", "collect source statistics into the weights file");
    coll->add_option("--weights", weights_path)->required();
    coll->add_option("--data", data_dir)->required();
    coll->add_option("--origin", stats_origin, "embed | ln");
    coll->add_option("--out", out_path, "output weights path")->required();

    auto* tta = app.add_subcommand("tta-eval", "test-time evaluation on a corrupted stream");
    add_config(tta);
    tta->add_option("--weights", weights_path)->required();
    tta->add_option("--data", data_dir)->required();
    tta->add_option("--variant", variant, "sp | sf | none");
    tta->add_option("--corruption", corruption, "corruption kind");
    tta->add_option("--severity", severity, "1..5");
    tta->add_option("--candidates", candidates_csv, "comma-separated purge sizes");
    tta->add_option("--batch", batch, "batch size");
    tta->add_option("--bn", bn, "reset | frozen");
    tta->add_flag("--parallel-arms", parallel_arms, "run candidate arms concurrently");
    tta->add_flag("--per-batch-selection", per_batch_selection, "select L* per batch, not per sample");
    tta->add_option("--out", out_path, "output CSV path")->required();

    auto* ana = app.add_subcommand("analyze", "proposition checks and sweeps");
    ana->add_option("what", analyze_what, "lipschitz | sphere | uniformity | sweep")->required();
    ana->add_option("--weights", weights_path);
    ana->add_option("--data", data_dir);
    ana->add_option("--corruption", corruption);
    ana->add_option("--severity", severity);
    ana->add_option_function<std::uint64_t>(
        "--seed", [&](std::uint64_t s) { seed_override = s; seed_given = true; });
    ana->add_option("--out", out_path, "output CSV path")->required();

    auto* corr = app.add_subcommand("corruptions", "corruption table tools");
    corr->add_flag("--describe", describe, "print the corruption table as JSON");

    auto* rep = app.add_subcommand("report", "aggregate run directories into one table");
    rep->add_option("dirs", run_dirs, "run directories")->required();
    rep->add_option("--out", out_path, "output prefix")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        RunConfig cfg;
        if (!config_path.empty()) cfg = RunConfig::from_file(config_path);
        if (seed_given) {
            cfg.seed = seed_override;
            cfg.trainer.seed = seed_override;
        } else {
            cfg.trainer.seed = cfg.seed;
        }
        if (!candidates_csv.empty()) {
            cfg.candidates.clear();
            std::size_t pos = 0;
            while (pos <= candidates_csv.size()) {
                const std::size_t comma = candidates_csv.find(',', pos);
                const std::string tok =
                    candidates_csv.substr(pos, comma == std::string::npos ? comma : comma - pos);
                if (!tok.empty()) cfg.candidates.push_back(std::stoul(tok));
                if (comma == std::string::npos) break;
                pos = comma + 1;
            }
        }

        if (gen->parsed()) return cmd_gen_data(cfg, out_path);
        if (pre->parsed()) return cmd_pretrain(cfg, data_dir, out_path);
        if (coll->parsed()) return cmd_collect_stats(weights_path, data_dir, stats_origin, out_path);
        if (tta->parsed())
            return cmd_tta_eval(cfg, weights_path, data_dir, variant, corruption, severity,
                                seed_given ? seed_override : cfg.seed, bn, batch, parallel_arms,
                                per_batch_selection, out_path);
        if (ana->parsed())
            return cmd_analyze(analyze_what, weights_path, data_dir, corruption, severity,
                               seed_given ? seed_override : cfg.seed, out_path);
        if (corr->parsed()) {
            if (describe) std::cout << describe_corruptions() << "\n";
            return 0;
        }
        if (rep->parsed()) return cmd_report(run_dirs, out_path);
    } catch (const NumericError& e) {
        std::cerr << "numeric failure: " << e.what() << "\n";
        return 3;
    } catch (const IoError& e) {
        std::cerr << "I/O error: " << e.what() << "\n";
        return 4;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::invalid_argument& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
