#pragma once

// Evaluation: utility / recovery rate / attack success / poison unlearning
// score / model mismatch, interpolation sweeps over data splits, first-flip
// tracking along the correction ray, and penultimate-feature export.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <stdexcept>
#include <vector>

#include "cuts/alpha.hpp"
#include "cuts/dataset.hpp"
#include "cuts/nn.hpp"
#include "cuts/task_vector.hpp"

#include "json.hpp"

namespace cuts {

/// Clean-test accuracy in percent.
inline double utility(const SnapshotF& snap, const LabeledDataset& test) {
    if (test.size() == 0) throw std::invalid_argument("utility: empty dataset");
    return 100.0 * accuracy(snap, test);
}

/// Fraction of the mix->oracle utility gap closed, in percent. May be
/// negative or exceed 100.
inline double recovery_rate(double ut_corrected, double ut_mix, double ut_oracle) {
    const double den = ut_oracle - ut_mix;
    if (den == 0.0) throw std::invalid_argument("recovery_rate: oracle and mix utilities equal");
    return 100.0 * (ut_corrected - ut_mix) / den;
}

/// Poison unlearning score: UT * (100 - ASR) / 100.
inline double pus(double ut, double asr) {
    if (ut < 0 || ut > 100 || asr < 0 || asr > 100) {
        throw std::invalid_argument("pus: inputs are percentages in [0,100]");
    }
    return ut * (100.0 - asr) / 100.0;
}

/// Mean over samples of the mean squared logit difference between models.
inline double delta_mix(const SnapshotF& a, const SnapshotF& b, const LabeledDataset& data) {
    if (data.size() == 0) throw std::invalid_argument("delta_mix: empty dataset");
    const std::size_t n = data.size();
    std::vector<double> partial(n, 0.0);
    detail::parallel_chunks(n, [&](std::size_t begin, std::size_t end) {
        const auto ta = forward_rows(a, data.images.row(begin), end - begin, data.dim());
        const auto tb = forward_rows(b, data.images.row(begin), end - begin, data.dim());
        const std::size_t k = ta.logits.cols();
        for (std::size_t i = begin; i < end; ++i) {
            const float* za = ta.logits.row(i - begin);
            const float* zb = tb.logits.row(i - begin);
            double s = 0.0;
            for (std::size_t j = 0; j < k; ++j) {
                const double d = double(za[j]) - double(zb[j]);
                s += d * d;
            }
            partial[i] = s / double(k);
        }
    });
    double total = 0.0;
    for (double v : partial) total += v;
    return total / double(n);
}

struct MetricReport {
    double ut = 0.0;
    std::optional<double> asr;        // percent, on the triggered eval set
    std::optional<double> asr_proxy;  // percent, on the estimation proxy
    std::optional<double> rr;
    std::optional<double> pus_score;
    std::optional<double> delta_mix_to_oracle;

    /// Percentages rounded to 2 decimals at serialization; mismatch raw.
    nlohmann::json to_json() const {
        auto round2 = [](double v) { return std::round(v * 100.0) / 100.0; };
        nlohmann::json j{{"ut", round2(ut)}};
        if (asr) j["asr"] = round2(*asr);
        if (asr_proxy) j["asr_proxy"] = round2(*asr_proxy);
        if (rr) j["rr"] = round2(*rr);
        if (pus_score) j["pus"] = round2(*pus_score);
        if (delta_mix_to_oracle) j["delta_mix_to_oracle"] = *delta_mix_to_oracle;
        return j;
    }
};

struct SweepRow {
    double lambda = 0.0;
    double acc_test = 0.0;   // clean test split
    double acc_clean = 0.0;  // S, against true labels
    double acc_noisy = 0.0;  // C, against its corrupted labels (fit-to-noise)
};

/// Accuracy of init + lambda*tau_mix on each split, one row per lambda.
inline std::vector<SweepRow> interpolation_sweep(const SnapshotF& init, const TaskVectorF& tau_mix,
                                                 const std::vector<double>& lambdas,
                                                 const LabeledDataset& test,
                                                 const LabeledDataset& clean_split,
                                                 const LabeledDataset& corrupt_split) {
    if (test.size() == 0 || clean_split.size() == 0 || corrupt_split.size() == 0) {
        throw std::invalid_argument("sweep: empty split");
    }
    std::vector<SweepRow> rows;
    rows.reserve(lambdas.size());
    for (const auto& snap : interpolate(init, tau_mix, lambdas)) {
        SweepRow row;
        row.lambda = lambdas[rows.size()];
        row.acc_test = accuracy(snap, test);
        row.acc_clean = accuracy(snap, clean_split);
        row.acc_noisy = accuracy(snap, corrupt_split);
        rows.push_back(row);
    }
    return rows;
}

inline std::string sweep_to_csv(const std::vector<SweepRow>& rows) {
    std::string out = "lambda,acc_test,acc_clean,acc_noisy\n";
    char buf[256];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof buf, "%.9g,%.9g,%.9g,%.9g\n", r.lambda, r.acc_test, r.acc_clean,
                      r.acc_noisy);
        out += buf;
    }
    return out;
}

struct FlipRecord {
    std::size_t sample_index = 0;
    double alpha_at_flip = 0.0;
    std::int32_t label_from = 0;  // prediction of the uncorrected model
    std::int32_t label_to = 0;    // first deviating prediction
    bool was_clean = false;
};

/// Walk the grid in ascending order and record, once per sample, the first
/// alpha at which the prediction of mix - alpha*tau deviates from mix's.
inline std::vector<FlipRecord> flip_scan(const SnapshotF& mix, const TaskVectorF& tau,
                                         const AlphaGrid& grid, const LabeledDataset& data) {
    grid.validate();
    const auto base = predict(mix, data);
    std::vector<FlipRecord> records;
    std::vector<std::uint8_t> flipped(data.size(), 0);
    for (double alpha : grid.values) {
        const auto preds = predict(apply(mix, tau, alpha), data);
        for (std::size_t i = 0; i < preds.size(); ++i) {
            if (!flipped[i] && preds[i] != base[i]) {
                flipped[i] = 1;
                records.push_back({i, alpha, base[i], preds[i], data.corrupted_mask[i] == 0});
            }
        }
    }
    return records;
}

inline std::string flips_to_csv(const std::vector<FlipRecord>& records) {
    std::string out = "index,alpha,from,to,was_clean\n";
    char buf[160];
    for (const auto& r : records) {
        std::snprintf(buf, sizeof buf, "%zu,%.9g,%d,%d,%d\n", r.sample_index, r.alpha_at_flip,
                      r.label_from, r.label_to, r.was_clean ? 1 : 0);
        out += buf;
    }
    return out;
}

/// Penultimate features to CSV, one line per sample (no header): H feature
/// columns, then predicted and true label.
inline void dump_features(const SnapshotF& snap, const LabeledDataset& data,
                          const std::filesystem::path& path) {
    if (data.size() == 0) throw std::invalid_argument("dump_features: empty dataset");
    std::ofstream out(path);
    if (!out) throw std::runtime_error("dump_features: cannot write " + path.string());
    const auto trace = forward(snap, data.images);
    char buf[64];
    for (std::size_t i = 0; i < data.size(); ++i) {
        const float* f = trace.penultimate.row(i);
        for (std::size_t j = 0; j < trace.penultimate.cols(); ++j) {
            std::snprintf(buf, sizeof buf, "%.9g,", double(f[j]));
            out << buf;
        }
        const auto pred = argmax_row(trace.logits.row(i), trace.logits.cols());
        out << pred << "," << data.labels[i] << "\n";
    }
}

}  // namespace cuts
