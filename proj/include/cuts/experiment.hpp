#pragma once

// Config-driven orchestration of the full correction pipeline: hold out the
// proxy, inject corruption, train the mix model, fine-tune on the corrupted
// proxy, estimate the scaling coefficient, subtract the scaled task vector,
// run the baselines, and evaluate. Every stage artifact is persisted, and a
// rerun with the same config reproduces metrics.json byte for byte.

#include <chrono>
#include <cstdint>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "cuts/alpha.hpp"
#include "cuts/checkpoint.hpp"
#include "cuts/corruption.hpp"
#include "cuts/dataset.hpp"
#include "cuts/metrics.hpp"
#include "cuts/nn.hpp"
#include "cuts/rng.hpp"
#include "cuts/task_vector.hpp"

#include "json.hpp"

namespace cuts {

inline constexpr const char* kVersion = "0.1.0";

struct IdxSource {
    std::string train_images;
    std::string train_labels;
    std::string test_images;      // either explicit test files...
    std::string test_labels;
    double test_fraction = 0.0;   // ...or a stratified holdout carved from train
};

struct SynthSource {
    int classes = 10;
    int per_class = 500;
    int dim = 64;
    double spread = 0.08;
    int test_per_class = 100;
};

struct ExperimentConfig {
    std::string dataset_kind;  // "idx" | "synth"
    IdxSource idx;
    SynthSource synth;

    MlpConfig model;
    TrainConfig train_mix;
    TrainConfig train_proxy;  // also used by the CF baseline

    CorruptionSpec corruption;
    double proxy_fraction = 0.02;
    std::vector<std::uint64_t> proxy_seeds;  // 1 entry, or 2 for SN averaging

    AlphaGrid grid;
    std::optional<int> knn_k;
    double knn_coverage_rate = 1.0;
    double poison_epsilon = 0.01;

    bool with_oracle = true;
    bool with_cf = true;
    bool with_random = true;

    InclusionMask mask;
    bool export_features = false;

    std::string output_dir;
    std::uint64_t master_seed = 0;

    void validate() const;
    nlohmann::json to_canonical_json() const;  // resolved fields, no output_dir
    static ExperimentConfig from_json(const nlohmann::json& j);
    static ExperimentConfig from_file(const std::filesystem::path& path);
};

inline void ExperimentConfig::validate() const {
    if (dataset_kind != "idx" && dataset_kind != "synth") {
        throw std::invalid_argument("config: dataset.kind must be idx or synth");
    }
    if (dataset_kind == "idx") {
        if (idx.train_images.empty() || idx.train_labels.empty()) {
            throw std::invalid_argument("config: idx source needs train_images/train_labels");
        }
        const bool explicit_test = !idx.test_images.empty() && !idx.test_labels.empty();
        if (!explicit_test && !(idx.test_fraction > 0.0 && idx.test_fraction < 1.0)) {
            throw std::invalid_argument("config: idx source needs test files or test_fraction");
        }
    }
    model.validate();
    train_mix.validate();
    train_proxy.validate();
    corruption.validate(model.num_classes);
    if (!(proxy_fraction > 0.0 && proxy_fraction < 1.0)) {
        throw std::invalid_argument("config: proxy_fraction in (0,1)");
    }
    if (proxy_seeds.empty() || proxy_seeds.size() > 2) {
        throw std::invalid_argument("config: proxy_seeds must have 1 or 2 entries");
    }
    if (proxy_seeds.size() == 2 && corruption.kind != CorruptionKind::SymmetricNoise) {
        throw std::invalid_argument("config: two proxy seeds are only meaningful for SN");
    }
    grid.validate();
    if (!(knn_coverage_rate > 0.0 && knn_coverage_rate <= 1.0)) {
        throw std::invalid_argument("config: knn coverage_rate in (0,1]");
    }
    if (!(poison_epsilon >= 0.0 && poison_epsilon < 1.0)) {
        throw std::invalid_argument("config: poison_epsilon in [0,1)");
    }
    if (output_dir.empty()) throw std::invalid_argument("config: output_dir required");
}

namespace detail {

inline TrainConfig parse_train_config(const nlohmann::json& j, std::uint64_t master,
                                      const std::string& stage, const TrainConfig& defaults) {
    TrainConfig cfg = defaults;
    cfg.learning_rate = j.value("learning_rate", defaults.learning_rate);
    cfg.momentum = j.value("momentum", defaults.momentum);
    cfg.batch_size = j.value("batch_size", defaults.batch_size);
    cfg.max_epochs = j.value("max_epochs", defaults.max_epochs);
    cfg.target_train_accuracy = j.value("target_train_accuracy", defaults.target_train_accuracy);
    cfg.stop_at_target = j.value("stop_at_target", defaults.stop_at_target);
    cfg.seed = j.contains("seed") ? j.at("seed").get<std::uint64_t>() : derive_seed(master, stage);
    return cfg;
}

inline nlohmann::json train_config_json(const TrainConfig& cfg) {
    return {
        {"learning_rate", cfg.learning_rate},
        {"momentum", cfg.momentum},
        {"batch_size", cfg.batch_size},
        {"max_epochs", cfg.max_epochs},
        {"target_train_accuracy", cfg.target_train_accuracy},
        {"stop_at_target", cfg.stop_at_target},
        {"seed", cfg.seed},
    };
}

}  // namespace detail

inline ExperimentConfig ExperimentConfig::from_json(const nlohmann::json& j) {
    ExperimentConfig cfg;
    cfg.master_seed = j.value("master_seed", std::uint64_t{11});

    const auto& ds = j.at("dataset");
    cfg.dataset_kind = ds.at("kind").get<std::string>();
    if (cfg.dataset_kind == "idx") {
        cfg.idx.train_images = ds.at("train_images").get<std::string>();
        cfg.idx.train_labels = ds.at("train_labels").get<std::string>();
        cfg.idx.test_images = ds.value("test_images", std::string{});
        cfg.idx.test_labels = ds.value("test_labels", std::string{});
        cfg.idx.test_fraction = ds.value("test_fraction", 0.0);
    } else if (cfg.dataset_kind == "synth") {
        cfg.synth.classes = ds.value("classes", cfg.synth.classes);
        cfg.synth.per_class = ds.value("per_class", cfg.synth.per_class);
        cfg.synth.dim = ds.value("dim", cfg.synth.dim);
        cfg.synth.spread = ds.value("spread", cfg.synth.spread);
        cfg.synth.test_per_class = ds.value("test_per_class", cfg.synth.test_per_class);
    }

    const auto& m = j.at("model");
    cfg.model.input_dim = m.at("input_dim").get<int>();
    cfg.model.hidden_dims = m.at("hidden_dims").get<std::vector<int>>();
    cfg.model.num_classes = m.at("num_classes").get<int>();
    cfg.model.seed = m.contains("seed") ? m.at("seed").get<std::uint64_t>()
                                        : derive_seed(cfg.master_seed, "init");

    cfg.train_mix = detail::parse_train_config(j.at("train"), cfg.master_seed, "train-mix", {});
    TrainConfig proxy_defaults = cfg.train_mix;
    proxy_defaults.max_epochs = 300;
    proxy_defaults.target_train_accuracy = 0.99;
    if (j.contains("proxy_train")) {
        cfg.train_proxy = detail::parse_train_config(j.at("proxy_train"), cfg.master_seed,
                                                     "train-proxy", proxy_defaults);
    } else {
        cfg.train_proxy = proxy_defaults;
        cfg.train_proxy.seed = derive_seed(cfg.master_seed, "train-proxy");
    }

    const auto& c = j.at("corruption");
    cfg.corruption.kind = corruption_kind_from_string(c.at("kind").get<std::string>());
    cfg.corruption.rate = c.at("rate").get<double>();
    if (c.contains("mapping")) {
        for (const auto& [key, val] : c.at("mapping").items()) {
            cfg.corruption.mapping[std::stoi(key)] = val.get<int>();
        }
    } else if (cfg.corruption.kind == CorruptionKind::AsymmetricNoise) {
        cfg.corruption.mapping = default_asymmetric_mapping();
    }
    if (c.contains("target_class")) cfg.corruption.target_class = c.at("target_class").get<int>();
    cfg.corruption.trigger_area_fraction = c.value("trigger_area_fraction", 0.03);
    cfg.corruption.trigger_value = c.value("trigger_value", 1.0f);
    if (c.contains("image_height")) cfg.corruption.image_height = c.at("image_height").get<int>();
    if (c.contains("image_width")) cfg.corruption.image_width = c.at("image_width").get<int>();
    cfg.corruption.seed = c.contains("seed") ? c.at("seed").get<std::uint64_t>()
                                             : derive_seed(cfg.master_seed, "corrupt");

    cfg.proxy_fraction = j.value("proxy_fraction", 0.02);
    if (j.contains("proxy_seeds")) {
        cfg.proxy_seeds = j.at("proxy_seeds").get<std::vector<std::uint64_t>>();
    } else {
        const int count = j.value("proxy_count", 1);
        for (int i = 0; i < count; ++i) {
            cfg.proxy_seeds.push_back(derive_seed(cfg.master_seed, "proxy-" + std::to_string(i)));
        }
    }

    if (j.contains("grid")) {
        const auto& g = j.at("grid");
        if (g.contains("values")) {
            cfg.grid.values = g.at("values").get<std::vector<double>>();
        } else {
            cfg.grid = AlphaGrid::linspace(g.value("start", 0.05), g.value("stop", 4.0),
                                           g.value("step", 0.05));
        }
    } else {
        cfg.grid = AlphaGrid::linspace(0.05, 4.0, 0.05);
    }

    if (j.contains("estimator")) {
        const auto& e = j.at("estimator");
        if (e.contains("knn_k")) cfg.knn_k = e.at("knn_k").get<int>();
        cfg.knn_coverage_rate = e.value("coverage_rate", 1.0);
        cfg.poison_epsilon = e.value("poison_epsilon", 0.01);
    }

    if (j.contains("baselines")) {
        cfg.with_oracle = cfg.with_cf = cfg.with_random = false;
        for (const auto& b : j.at("baselines")) {
            const auto name = b.get<std::string>();
            if (name == "oracle") cfg.with_oracle = true;
            else if (name == "cf") cfg.with_cf = true;
            else if (name == "random") cfg.with_random = true;
            else throw std::invalid_argument("config: unknown baseline " + name);
        }
    }

    if (j.contains("mask") && j.at("mask").contains("exclude")) {
        cfg.mask = InclusionMask::exclude(j.at("mask").at("exclude").get<std::vector<std::string>>());
    }
    cfg.export_features = j.value("export_features", false);
    cfg.output_dir = j.value("output_dir", std::string{});
    cfg.validate();
    return cfg;
}

inline ExperimentConfig ExperimentConfig::from_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("config: cannot open " + path.string());
    return from_json(nlohmann::json::parse(in));
}

inline nlohmann::json ExperimentConfig::to_canonical_json() const {
    nlohmann::json ds;
    if (dataset_kind == "idx") {
        ds = {{"kind", "idx"},
              {"train_images", idx.train_images},
              {"train_labels", idx.train_labels}};
        if (!idx.test_images.empty()) {
            ds["test_images"] = idx.test_images;
            ds["test_labels"] = idx.test_labels;
        } else {
            ds["test_fraction"] = idx.test_fraction;
        }
    } else {
        ds = {{"kind", "synth"},         {"classes", synth.classes},
              {"dim", synth.dim},        {"per_class", synth.per_class},
              {"spread", synth.spread},  {"test_per_class", synth.test_per_class}};
    }

    nlohmann::json corr{{"kind", to_string(corruption.kind)},
                        {"rate", corruption.rate},
                        {"seed", corruption.seed}};
    if (!corruption.mapping.empty()) {
        nlohmann::json m;
        for (const auto& [from, to] : corruption.mapping) m[std::to_string(from)] = to;
        corr["mapping"] = m;
    }
    if (corruption.target_class) {
        corr["target_class"] = *corruption.target_class;
        corr["trigger_area_fraction"] = corruption.trigger_area_fraction;
        corr["trigger_value"] = corruption.trigger_value;
    }
    if (corruption.image_height) corr["image_height"] = *corruption.image_height;
    if (corruption.image_width) corr["image_width"] = *corruption.image_width;

    std::vector<std::string> baselines;
    if (with_cf) baselines.push_back("cf");
    if (with_oracle) baselines.push_back("oracle");
    if (with_random) baselines.push_back("random");

    nlohmann::json est{{"coverage_rate", knn_coverage_rate}, {"poison_epsilon", poison_epsilon}};
    if (knn_k) est["knn_k"] = *knn_k;

    // output_dir intentionally left out: where a run writes does not change
    // what it computes
    return nlohmann::json{
        {"baselines", baselines},
        {"corruption", corr},
        {"dataset", ds},
        {"estimator", est},
        {"export_features", export_features},
        {"grid", nlohmann::json{{"values", grid.values}}},
        {"mask", mask.id()},
        {"master_seed", master_seed},
        {"model", nlohmann::json{{"input_dim", model.input_dim},
                                 {"hidden_dims", model.hidden_dims},
                                 {"num_classes", model.num_classes},
                                 {"seed", model.seed}}},
        {"proxy_fraction", proxy_fraction},
        {"proxy_seeds", proxy_seeds},
        {"proxy_train", detail::train_config_json(train_proxy)},
        {"train", detail::train_config_json(train_mix)},
        {"version", kVersion},
    };
}

inline std::string config_hash(const ExperimentConfig& cfg) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx",
                  static_cast<unsigned long long>(fnv1a64(cfg.to_canonical_json().dump())));
    return buf;
}

// ---------------------------------------------------------------------------
// Data preparation (deterministic; recomputed rather than persisted)
// ---------------------------------------------------------------------------

struct PreparedData {
    LabeledDataset train;        // corrupted D_train
    LabeledDataset proxy_clean;  // held out before corruption
    LabeledDataset test;

    LabeledDataset clean_split() const { return train.subset(train.clean_indices()); }
    LabeledDataset corrupt_split() const { return train.subset(train.corrupted_indices()); }
};

inline PreparedData prepare_data(const ExperimentConfig& cfg) {
    LabeledDataset train_all, test;
    if (cfg.dataset_kind == "idx") {
        train_all = load_idx(cfg.idx.train_images, cfg.idx.train_labels);
        if (!cfg.idx.test_images.empty()) {
            test = load_idx(cfg.idx.test_images, cfg.idx.test_labels);
        } else {
            auto [rest, held] = split_proxy(train_all, cfg.idx.test_fraction,
                                            derive_seed(cfg.master_seed, "test-split"));
            train_all = std::move(rest);
            test = std::move(held);
        }
    } else {
        // one corpus, shared class centers; the first per_class samples of
        // each block train, the rest test
        const auto& s = cfg.synth;
        const auto all = synth_blobs(s.classes, s.per_class + s.test_per_class, s.dim, s.spread,
                                     derive_seed(cfg.master_seed, "synth"));
        std::vector<std::size_t> train_idx, test_idx;
        for (int c = 0; c < s.classes; ++c) {
            const std::size_t base = std::size_t(c) * (s.per_class + s.test_per_class);
            for (int i = 0; i < s.per_class; ++i) train_idx.push_back(base + i);
            for (int i = 0; i < s.test_per_class; ++i) test_idx.push_back(base + s.per_class + i);
        }
        train_all = all.subset(train_idx);
        test = all.subset(test_idx);
    }
    if (std::size_t(cfg.model.input_dim) != train_all.dim()) {
        throw std::invalid_argument("config: model input_dim does not match dataset dim");
    }
    if (cfg.model.num_classes != train_all.num_classes) {
        throw std::invalid_argument("config: model num_classes does not match dataset");
    }

    auto [train_part, proxy_clean] =
        split_proxy(train_all, cfg.proxy_fraction, derive_seed(cfg.master_seed, "proxy-split"));

    PreparedData data;
    data.train = corrupt(train_part, cfg.corruption);
    data.proxy_clean = std::move(proxy_clean);
    data.test = std::move(test);
    return data;
}

/// Eval set for the attack success rate: triggered samples whose original
/// class is not the attack target (the conventional backdoor measurement;
/// keeping target-class samples would floor ASR at the target's base rate).
inline LabeledDataset asr_eval_set(const LabeledDataset& triggered, int target) {
    std::vector<std::size_t> keep;
    for (std::size_t i = 0; i < triggered.size(); ++i) {
        if (triggered.original_labels[i] != target) keep.push_back(i);
    }
    if (keep.empty()) throw std::invalid_argument("asr: no triggered samples off the target class");
    return triggered.subset(keep);
}

// ---------------------------------------------------------------------------
// Run manifest
// ---------------------------------------------------------------------------

struct RunManifest {
    std::string config_hash;
    std::string version;
    std::string created_utc;
    std::string mask_id;
    std::map<std::string, std::string> checkpoints;    // name -> relative path
    std::map<std::string, std::string> task_vectors;
    std::map<std::string, std::string> histories;
    std::map<std::string, std::int64_t> stage_completed_ms;
    std::string theta_init_hash;  // FNV-1a of the checkpoint bytes
    std::string config_path = "config.json";
    std::string metrics_path = "metrics.json";
    std::string alpha_trace_path = "alpha_trace.csv";

    nlohmann::json to_json() const {
        return {{"alpha_trace", alpha_trace_path},
                {"checkpoints", checkpoints},
                {"config", config_path},
                {"config_hash", config_hash},
                {"created_utc", created_utc},
                {"histories", histories},
                {"mask_id", mask_id},
                {"metrics", metrics_path},
                {"stage_completed_ms", stage_completed_ms},
                {"task_vectors", task_vectors},
                {"theta_init_hash", theta_init_hash},
                {"version", version}};
    }
};

namespace detail {

inline void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << text;
}

inline std::string read_text(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>{});
}

inline std::string file_fnv_hex(const std::filesystem::path& path) {
    const auto bytes = read_text(path);
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx",
                  static_cast<unsigned long long>(fnv1a64(bytes.data(), bytes.size())));
    return buf;
}

inline std::int64_t now_ms() {
    return std::chrono::duration_cast<std::chrono::milliseconds>(
               std::chrono::system_clock::now().time_since_epoch())
        .count();
}

inline std::string utc_timestamp() {
    const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    char buf[32];
    std::tm tm{};
    gmtime_r(&t, &tm);
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

inline std::string history_csv(const TrainHistory& history) {
    std::string out = "epoch,loss,accuracy\n";
    char buf[128];
    for (const auto& e : history.epochs) {
        std::snprintf(buf, sizeof buf, "%d,%.9g,%.9g\n", e.epoch, e.loss, e.accuracy);
        out += buf;
    }
    return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Pipeline
// ---------------------------------------------------------------------------

/// Stage names, in execution order. Passing one as `resume_from` reloads all
/// earlier checkpoints from the run directory instead of recomputing them.
inline const std::vector<std::string>& pipeline_stages() {
    static const std::vector<std::string> stages{"init",     "mix",       "oracle",  "proxy",
                                                 "alpha",    "correct",   "baselines",
                                                 "evaluate"};
    return stages;
}

inline RunManifest run_experiment(const ExperimentConfig& cfg, const std::string& resume_from = "") {
    cfg.validate();
    namespace fs = std::filesystem;
    const fs::path dir(cfg.output_dir);
    fs::create_directories(dir);

    int resume_index = 0;
    if (!resume_from.empty()) {
        const auto& stages = pipeline_stages();
        const auto it = std::find(stages.begin(), stages.end(), resume_from);
        if (it == stages.end()) throw std::invalid_argument("run: unknown stage " + resume_from);
        resume_index = int(it - stages.begin());
    }
    const auto fresh = [&](int stage_index) { return stage_index >= resume_index; };

    RunManifest manifest;
    manifest.config_hash = config_hash(cfg);
    manifest.version = kVersion;
    manifest.created_utc = detail::utc_timestamp();
    manifest.mask_id = cfg.mask.id();

    {
        auto config_json = cfg.to_canonical_json();
        config_json["output_dir"] = cfg.output_dir;
        detail::write_text(dir / "config.json", config_json.dump(2) + "\n");
    }

    // data is cheap and seeded; always recomputed
    const PreparedData data = prepare_data(cfg);
    manifest.stage_completed_ms["data"] = detail::now_ms();

    const auto checkpoint_path = [&](const std::string& name) { return dir / (name + ".cuts"); };
    const auto save_snap = [&](const std::string& name, const SnapshotF& snap) {
        save_checkpoint(snap, checkpoint_path(name));
        manifest.checkpoints[name] = name + ".cuts";
    };
    const auto load_snap = [&](const std::string& name) {
        manifest.checkpoints[name] = name + ".cuts";
        return load_checkpoint<float>(checkpoint_path(name));
    };
    const auto save_history = [&](const std::string& name, const TrainHistory& history) {
        detail::write_text(dir / ("history_" + name + ".csv"), detail::history_csv(history));
        manifest.histories[name] = "history_" + name + ".csv";
    };

    // --- init ---------------------------------------------------------
    SnapshotF theta_init;
    if (fresh(0)) {
        theta_init = init_weights<float>(cfg.model);
        save_snap("theta_init", theta_init);
    } else {
        theta_init = load_snap("theta_init");
    }
    manifest.theta_init_hash = detail::file_fnv_hex(checkpoint_path("theta_init"));
    manifest.stage_completed_ms["init"] = detail::now_ms();

    // --- mix ----------------------------------------------------------
    SnapshotF theta_mix;
    if (fresh(1)) {
        auto [snap, history] = train(theta_init, data.train, cfg.train_mix);
        theta_mix = std::move(snap);
        save_snap("theta_mix", theta_mix);
        save_history("mix", history);
    } else {
        theta_mix = load_snap("theta_mix");
    }
    manifest.stage_completed_ms["mix"] = detail::now_ms();

    // --- oracle -------------------------------------------------------
    std::optional<SnapshotF> theta_oracle;
    if (cfg.with_oracle) {
        TrainConfig oracle_cfg = cfg.train_mix;
        oracle_cfg.seed = derive_seed(cfg.master_seed, "train-oracle");
        if (fresh(2)) {
            auto [snap, history] = train(theta_init, data.clean_split(), oracle_cfg);
            theta_oracle = std::move(snap);
            save_snap("theta_oracle", *theta_oracle);
            save_history("oracle", history);
        } else {
            theta_oracle = load_snap("theta_oracle");
        }
    }
    manifest.stage_completed_ms["oracle"] = detail::now_ms();

    // --- proxy fine-tuning, one pass per proxy seed ---------------------
    std::vector<LabeledDataset> proxies;
    std::vector<TaskVectorF> taus;
    for (std::size_t i = 0; i < cfg.proxy_seeds.size(); ++i) {
        CorruptionSpec proxy_spec = cfg.corruption;
        proxy_spec.seed = cfg.proxy_seeds[i];
        proxies.push_back(make_proxy(data.proxy_clean, proxy_spec));

        const std::string name = "theta_proxy_" + std::to_string(i);
        SnapshotF theta_proxy;
        if (fresh(3)) {
            TrainConfig ft = cfg.train_proxy;
            ft.seed = derive_seed(cfg.master_seed, "train-proxy-" + std::to_string(i));
            auto [snap, history] = train(theta_mix, proxies.back(), ft);
            theta_proxy = std::move(snap);
            save_snap(name, theta_proxy);
            save_history("proxy_" + std::to_string(i), history);
        } else {
            theta_proxy = load_snap(name);
        }
        taus.push_back(diff(theta_proxy, theta_mix, cfg.mask));
        const std::string tau_name = "tau_p_" + std::to_string(i);
        save_checkpoint(as_snapshot(taus.back()), checkpoint_path(tau_name));
        manifest.task_vectors[tau_name] = tau_name + ".cuts";
    }
    TaskVectorF tau_p = taus.size() == 2 ? average(taus[0], taus[1]) : taus[0];
    save_checkpoint(as_snapshot(tau_p), checkpoint_path("tau_p"));
    manifest.task_vectors["tau_p"] = "tau_p.cuts";
    manifest.stage_completed_ms["proxy"] = detail::now_ms();

    // --- alpha estimation (cheap; recomputed even on resumption) --------
    const bool is_poison = cfg.corruption.kind == CorruptionKind::PoisonTrigger;
    AlphaTrace trace;
    if (is_poison) {
        const auto est_proxy = asr_eval_set(proxies[0], *cfg.corruption.target_class);
        trace = estimate_alpha_poison(theta_mix, tau_p, est_proxy, cfg.grid, cfg.poison_epsilon);
    } else {
        KnnConfig knn;
        knn.num_classes = cfg.model.num_classes;
        knn.coverage_rate = cfg.knn_coverage_rate;
        knn.k = cfg.knn_k ? *cfg.knn_k : default_k(proxies[0].size(), cfg.model.num_classes);
        trace = estimate_alpha_knn(theta_mix, tau_p, proxies[0], cfg.grid, knn);
    }
    detail::write_text(dir / "alpha_trace.csv", trace.to_csv());
    manifest.stage_completed_ms["alpha"] = detail::now_ms();
    if (is_poison && !trace.qualified) {
        std::fprintf(stderr,
                     "warning: no grid alpha met the ASR threshold; using best-effort %.3g\n",
                     trace.selected_alpha);
    }

    // --- correction ------------------------------------------------------
    const SnapshotF theta_cuts = apply(theta_mix, tau_p, trace.selected_alpha);
    save_snap("theta_cuts", theta_cuts);
    manifest.stage_completed_ms["correct"] = detail::now_ms();

    // --- baselines -------------------------------------------------------
    std::optional<SnapshotF> theta_cf;
    if (cfg.with_cf) {
        TrainConfig cf_cfg = cfg.train_proxy;
        cf_cfg.seed = derive_seed(cfg.master_seed, "train-cf");
        if (fresh(6)) {
            auto [snap, history] = train(theta_mix, data.proxy_clean, cf_cfg);
            theta_cf = std::move(snap);
            save_snap("theta_cf", *theta_cf);
            save_history("cf", history);
        } else {
            theta_cf = load_snap("theta_cf");
        }
    }
    std::optional<SnapshotF> theta_random;
    if (cfg.with_random) {
        const auto tau_r = random_norm_matched(scale(tau_p, trace.selected_alpha),
                                               derive_seed(cfg.master_seed, "random-tau"));
        save_checkpoint(as_snapshot(tau_r), checkpoint_path("tau_r"));
        manifest.task_vectors["tau_r"] = "tau_r.cuts";
        theta_random = apply(theta_mix, tau_r, 1.0);
        save_snap("theta_random", *theta_random);
    }
    manifest.stage_completed_ms["baselines"] = detail::now_ms();

    // --- evaluation ------------------------------------------------------
    nlohmann::json methods;
    const double ut_mix = utility(theta_mix, data.test);
    const std::optional<double> ut_oracle =
        theta_oracle ? std::optional<double>(utility(*theta_oracle, data.test)) : std::nullopt;

    std::optional<LabeledDataset> asr_train_set;  // triggered C, off-target origins
    if (is_poison) {
        asr_train_set = asr_eval_set(data.corrupt_split(), *cfg.corruption.target_class);
    }
    const auto asr_proxy_set =
        is_poison ? std::optional<LabeledDataset>(asr_eval_set(proxies[0],
                                                               *cfg.corruption.target_class))
                  : std::nullopt;

    const auto evaluate_method = [&](const SnapshotF& snap) {
        MetricReport report;
        report.ut = utility(snap, data.test);
        if (ut_oracle && *ut_oracle != ut_mix) {
            report.rr = recovery_rate(report.ut, ut_mix, *ut_oracle);
        }
        if (is_poison) {
            const int target = *cfg.corruption.target_class;
            report.asr = asr_percent(snap, *asr_train_set, target);
            report.asr_proxy = asr_percent(snap, *asr_proxy_set, target);
            report.pus_score = pus(report.ut, *report.asr);
        }
        if (theta_oracle) {
            report.delta_mix_to_oracle = delta_mix(snap, *theta_oracle, data.train);
        }
        return report;
    };

    methods["mix"] = evaluate_method(theta_mix).to_json();
    methods["cuts"] = evaluate_method(theta_cuts).to_json();
    if (theta_oracle) methods["oracle"] = evaluate_method(*theta_oracle).to_json();
    if (theta_cf) methods["cf"] = evaluate_method(*theta_cf).to_json();
    if (theta_random) methods["random"] = evaluate_method(*theta_random).to_json();

    nlohmann::json metrics{
        {"alpha", nlohmann::json{{"selected", trace.selected_alpha},
                                 {"rule", to_string(trace.rule)},
                                 {"qualified", trace.qualified}}},
        {"config_hash", manifest.config_hash},
        {"corruption", to_string(cfg.corruption.kind)},
        {"eta", cfg.corruption.rate},
        {"methods", methods},
    };
    detail::write_text(dir / "metrics.json", metrics.dump(2) + "\n");
    manifest.stage_completed_ms["evaluate"] = detail::now_ms();

    if (cfg.export_features) {
        dump_features(theta_cuts, proxies[0], dir / "features.csv");
    }

    // stage ordering sanity: corruption (inside data prep) precedes training
    for (const auto& [name, path] : manifest.checkpoints) {
        if (!fs::exists(dir / path)) throw std::logic_error("manifest references missing " + path);
    }
    detail::write_text(dir / "manifest.json", manifest.to_json().dump(2) + "\n");
    return manifest;
}

// ---------------------------------------------------------------------------
// Report tables
// ---------------------------------------------------------------------------

struct ReportTables {
    std::string markdown;
    std::string csv;
};

/// One table per corruption kind across the given manifests: a row per
/// method, UT (+RR) columns for label noise, UT/ASR (+PUS) for triggers,
/// and a rightmost average column.
inline ReportTables make_report(const std::vector<std::filesystem::path>& manifest_paths) {
    namespace fs = std::filesystem;
    if (manifest_paths.empty()) throw std::invalid_argument("report: no manifests");

    struct Run {
        std::string name;
        nlohmann::json metrics;
    };
    std::map<std::string, std::vector<Run>> by_kind;
    for (const auto& mp : manifest_paths) {
        const auto manifest = nlohmann::json::parse(detail::read_text(mp));
        const fs::path dir = mp.parent_path();
        const auto metrics = nlohmann::json::parse(
            detail::read_text(dir / manifest.at("metrics").get<std::string>()));
        by_kind[metrics.at("corruption").get<std::string>()].push_back(
            {dir.filename().string(), metrics});
    }

    static const std::vector<std::pair<std::string, std::string>> kMethodOrder{
        {"mix", "Mix"}, {"oracle", "Oracle"}, {"random", "Mix-tau_r"}, {"cf", "CF"},
        {"cuts", "CUTS"}};

    std::string md, csv;
    char buf[64];
    const auto num = [&](double v) {
        std::snprintf(buf, sizeof buf, "%.2f", v);
        return std::string(buf);
    };

    for (const auto& [kind, runs] : by_kind) {
        const bool poison = kind == "PT";
        const char* avg_name = poison ? "Avg PUS" : "Avg RR";

        md += "## " + kind + "\n\n| Method |";
        csv += "corruption,method";
        for (const auto& run : runs) {
            md += poison ? " " + run.name + " UT | " + run.name + " ASR |"
                         : " " + run.name + " UT | " + run.name + " RR |";
            csv += poison ? "," + run.name + "_ut," + run.name + "_asr"
                          : "," + run.name + "_ut," + run.name + "_rr";
        }
        md += std::string(" ") + avg_name + " |\n|---|";
        csv += std::string(",") + (poison ? "avg_pus" : "avg_rr") + "\n";
        for (std::size_t i = 0; i < runs.size(); ++i) md += "---|---|";
        md += "---|\n";

        for (const auto& [key, label] : kMethodOrder) {
            bool present = false;
            for (const auto& run : runs) present |= run.metrics.at("methods").contains(key);
            if (!present) continue;

            md += "| " + label + " |";
            csv += kind + "," + label;
            double avg = 0.0;
            int avg_n = 0;
            for (const auto& run : runs) {
                const auto& methods = run.metrics.at("methods");
                if (!methods.contains(key)) {
                    md += " - | - |";
                    csv += ",,";
                    continue;
                }
                const auto& m = methods.at(key);
                const double ut = m.at("ut").get<double>();
                if (poison) {
                    const double asr = m.value("asr", 0.0);
                    md += " " + num(ut) + " | " + num(asr) + " |";
                    csv += "," + num(ut) + "," + num(asr);
                    avg += m.value("pus", pus(ut, asr));
                    ++avg_n;
                } else {
                    md += " " + num(ut) + " | ";
                    csv += "," + num(ut) + ",";
                    if (m.contains("rr")) {
                        md += num(m.at("rr").get<double>());
                        csv += num(m.at("rr").get<double>());
                        avg += m.at("rr").get<double>();
                        ++avg_n;
                    } else {
                        md += "-";
                    }
                    md += " |";
                }
            }
            if (avg_n > 0) {
                md += " " + num(avg / avg_n) + " |\n";
                csv += "," + num(avg / avg_n) + "\n";
            } else {
                md += " - |\n";
                csv += ",\n";
            }
        }
        md += "\n";
    }
    return {md, csv};
}

}  // namespace cuts
