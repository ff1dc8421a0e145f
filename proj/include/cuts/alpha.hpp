#pragma once

// Scaling-coefficient estimation for the correction theta = mix - alpha*tau.
//
// Two rules, chosen by corruption type:
//   - poison triggers: smallest grid alpha whose attack success rate on the
//     triggered proxy drops to epsilon or below;
//   - label noise: argmax over the grid of a kNN self-agreement score on
//     L2-normalized penultimate features, minus a class-coverage penalty.

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <limits>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "cuts/dataset.hpp"
#include "cuts/nn.hpp"
#include "cuts/task_vector.hpp"

namespace cuts {

struct AlphaGrid {
    std::vector<double> values;  // strictly increasing, all > 0

    static AlphaGrid linspace(double start, double stop, double step) {
        AlphaGrid g;
        for (int i = 0;; ++i) {
            const double v = start + double(i) * step;
            if (v > stop + step * 1e-9) break;
            g.values.push_back(v);
        }
        g.validate();
        return g;
    }

    void validate() const {
        if (values.empty()) throw std::invalid_argument("grid: empty");
        double prev = 0.0;
        for (double v : values) {
            if (!(v > 0.0)) throw std::invalid_argument("grid: values must be positive");
            if (v <= prev) throw std::invalid_argument("grid: values must be strictly increasing");
            prev = v;
        }
    }
};

struct KnnConfig {
    int k = 0;
    double coverage_rate = 1.0;  // rho in (0, 1]
    int num_classes = 0;

    int required_classes() const { return int(std::ceil(coverage_rate * num_classes)); }

    void validate(std::size_t proxy_size) const {
        if (k < 1) throw std::invalid_argument("knn: k must be >= 1");
        if (std::size_t(k) >= proxy_size) throw std::invalid_argument("knn: k >= proxy size");
        if (!(coverage_rate > 0.0 && coverage_rate <= 1.0)) {
            throw std::invalid_argument("knn: coverage_rate in (0,1]");
        }
        if (num_classes < 2) throw std::invalid_argument("knn: num_classes must be >= 2");
        if (required_classes() < 1) throw std::invalid_argument("knn: required classes < 1");
    }
};

/// k = floor(|proxy| / (2K)), raised to the smallest value above 5 and
/// required to stay below |proxy| / K.
inline int default_k(std::size_t proxy_size, int num_classes) {
    if (num_classes < 2) throw std::invalid_argument("default_k: num_classes must be >= 2");
    if (proxy_size < 2 * std::size_t(num_classes)) {
        throw std::invalid_argument("default_k: proxy smaller than 2K; pass k explicitly");
    }
    int k = int(proxy_size / (2 * std::size_t(num_classes)));
    k = std::max(k, 6);
    if (double(k) >= double(proxy_size) / double(num_classes)) {
        throw std::invalid_argument("default_k: proxy too small for the k bounds (" +
                                    std::to_string(k) + " >= " + std::to_string(proxy_size) +
                                    "/" + std::to_string(num_classes) + "); pass k explicitly");
    }
    return k;
}

enum class SelectionRule { PoisonAsrThreshold, KnnSelfAgreement };

inline std::string to_string(SelectionRule rule) {
    return rule == SelectionRule::PoisonAsrThreshold ? "poison" : "knn";
}

struct AlphaPoint {
    double alpha = 0.0;
    double asr = std::numeric_limits<double>::quiet_NaN();  // percent
    double sa = std::numeric_limits<double>::quiet_NaN();
    int coverage = -1;
    double penalty = std::numeric_limits<double>::quiet_NaN();
    double score = std::numeric_limits<double>::quiet_NaN();
};

struct AlphaTrace {
    SelectionRule rule = SelectionRule::KnnSelfAgreement;
    std::vector<AlphaPoint> points;
    double selected_alpha = 0.0;
    bool qualified = true;  // poison rule only: false when no point met epsilon

    /// CSV columns: alpha, asr|sa, V, penalty, score, selected.
    std::string to_csv() const {
        std::ostringstream out;
        const bool poison = rule == SelectionRule::PoisonAsrThreshold;
        out << "alpha," << (poison ? "asr" : "sa") << ",V,penalty,score,selected\n";
        char buf[256];
        for (const auto& p : points) {
            const bool sel = p.alpha == selected_alpha;
            if (poison) {
                std::snprintf(buf, sizeof buf, "%.9g,%.9g,,,,%d\n", p.alpha, p.asr, sel ? 1 : 0);
            } else {
                std::snprintf(buf, sizeof buf, "%.9g,%.9g,%d,%.9g,%.9g,%d\n", p.alpha, p.sa,
                              p.coverage, p.penalty, p.score, sel ? 1 : 0);
            }
            out << buf;
        }
        return out.str();
    }
};

/// Attack success rate: percent of samples predicted as the target class.
inline double asr_percent(const SnapshotF& snap, const LabeledDataset& triggered, int target) {
    if (triggered.size() == 0) throw std::invalid_argument("asr: empty dataset");
    if (target < 0 || target >= triggered.num_classes) {
        throw std::invalid_argument("asr: target out of range");
    }
    const auto preds = predict(snap, triggered);
    std::size_t hits = 0;
    for (auto p : preds) {
        if (p == target) ++hits;
    }
    return 100.0 * double(hits) / double(preds.size());
}

/// Exact k-nearest-neighbor indices per row, self excluded. Distances are
/// squared Euclidean in double; ties resolve to the smaller sample index.
inline std::vector<std::vector<int>> exact_knn(const MatrixD& features, int k) {
    const std::size_t n = features.rows();
    if (k < 1 || std::size_t(k) >= n) throw std::invalid_argument("exact_knn: need 1 <= k < N");
    std::vector<std::vector<int>> neighbors(n);
    std::vector<std::pair<double, int>> cand(n - 1);
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t c = 0;
        for (std::size_t j = 0; j < n; ++j) {
            if (j == i) continue;
            double d = 0.0;
            const double* a = features.row(i);
            const double* b = features.row(j);
            for (std::size_t t = 0; t < features.cols(); ++t) {
                const double diff = a[t] - b[t];
                d += diff * diff;
            }
            cand[c++] = {d, int(j)};
        }
        std::partial_sort(cand.begin(), cand.begin() + k, cand.end());
        auto& out = neighbors[i];
        out.resize(k);
        for (int t = 0; t < k; ++t) out[t] = cand[t].second;
    }
    return neighbors;
}

namespace detail {

/// L2-normalize rows into double precision; zero rows stay zero.
inline MatrixD normalize_rows(const MatrixF& m) {
    MatrixD out(m.rows(), m.cols());
    for (std::size_t i = 0; i < m.rows(); ++i) {
        const float* src = m.row(i);
        double* dst = out.row(i);
        double norm = 0.0;
        for (std::size_t j = 0; j < m.cols(); ++j) norm += double(src[j]) * double(src[j]);
        norm = std::sqrt(norm);
        const double inv = norm > 0.0 ? 1.0 / norm : 0.0;
        for (std::size_t j = 0; j < m.cols(); ++j) dst[j] = double(src[j]) * inv;
    }
    return out;
}

}  // namespace detail

/// Self-agreement from precomputed predictions and features. Returns the
/// mean neighbor agreement and V, the number of predicted classes supported
/// by at least k+1 samples.
inline std::pair<double, int> self_agreement_from(const std::vector<std::int32_t>& preds,
                                                  const MatrixD& normalized_features, int k,
                                                  int num_classes) {
    const std::size_t n = preds.size();
    if (normalized_features.rows() != n) {
        throw std::invalid_argument("self_agreement: rows/preds mismatch");
    }
    const auto neighbors = exact_knn(normalized_features, k);
    double sa = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        int agree = 0;
        for (int j : neighbors[i]) {
            if (preds[j] == preds[i]) ++agree;
        }
        sa += double(agree) / double(k);
    }
    sa /= double(n);

    std::vector<std::size_t> support(num_classes, 0);
    for (auto p : preds) ++support[p];
    int covered = 0;
    for (auto s : support) {
        if (s >= std::size_t(k) + 1) ++covered;
    }
    return {sa, covered};
}

/// Self-agreement of a model over proxy images (labels ignored).
inline std::pair<double, int> self_agreement(const SnapshotF& snap, const LabeledDataset& proxy,
                                             const KnnConfig& cfg) {
    cfg.validate(proxy.size());
    const auto trace = forward(snap, proxy.images);
    std::vector<std::int32_t> preds(proxy.size());
    for (std::size_t i = 0; i < proxy.size(); ++i) {
        preds[i] = argmax_row(trace.logits.row(i), trace.logits.cols());
    }
    return self_agreement_from(preds, detail::normalize_rows(trace.penultimate), cfg.k,
                               cfg.num_classes);
}

/// Pure selection over a precomputed poison trace: smallest alpha with
/// ASR <= epsilon (epsilon is a fraction; points carry percent). Falls back
/// to the argmin-ASR point, flagged unqualified, when nothing passes.
inline AlphaTrace select_poison(std::vector<AlphaPoint> points, double epsilon) {
    AlphaTrace trace;
    trace.rule = SelectionRule::PoisonAsrThreshold;
    trace.points = std::move(points);
    trace.qualified = false;
    std::size_t best = 0;
    for (std::size_t i = 0; i < trace.points.size(); ++i) {
        if (trace.points[i].asr < trace.points[best].asr) best = i;
        if (!trace.qualified && trace.points[i].asr <= 100.0 * epsilon) {
            trace.qualified = true;
            trace.selected_alpha = trace.points[i].alpha;
        }
    }
    if (!trace.qualified) trace.selected_alpha = trace.points[best].alpha;
    return trace;
}

/// Pure selection over a precomputed agreement trace: argmax of
/// sa - max(0, r - V)/r, ties toward smaller alpha.
inline AlphaTrace select_knn(std::vector<AlphaPoint> points, int required_classes) {
    AlphaTrace trace;
    trace.rule = SelectionRule::KnnSelfAgreement;
    trace.points = std::move(points);
    const double r = double(required_classes);
    std::size_t best = 0;
    for (std::size_t i = 0; i < trace.points.size(); ++i) {
        auto& p = trace.points[i];
        p.penalty = std::max(0.0, r - double(p.coverage)) / r;
        p.score = p.sa - p.penalty;
        if (p.score > trace.points[best].score) best = i;
    }
    trace.selected_alpha = trace.points[best].alpha;
    return trace;
}

/// Poison rule: evaluate ASR(alpha) on the triggered proxy across the whole
/// grid, then pick the smallest qualifying alpha.
inline AlphaTrace estimate_alpha_poison(const SnapshotF& mix, const TaskVectorF& tau,
                                        const LabeledDataset& proxy, const AlphaGrid& grid,
                                        double epsilon = 0.01) {
    grid.validate();
    if (!(epsilon >= 0.0 && epsilon < 1.0)) {
        throw std::invalid_argument("estimate_alpha: epsilon in [0,1)");
    }
    int target = -1;
    for (std::size_t i = 0; i < proxy.size(); ++i) {
        if (i == 0) {
            target = proxy.labels[0];
        } else if (proxy.labels[i] != target) {
            throw std::invalid_argument("estimate_alpha: proxy labels are not a single target");
        }
    }
    std::vector<AlphaPoint> points;
    points.reserve(grid.values.size());
    for (double alpha : grid.values) {
        AlphaPoint p;
        p.alpha = alpha;
        p.asr = asr_percent(apply(mix, tau, alpha), proxy, target);
        points.push_back(p);
    }
    return select_poison(std::move(points), epsilon);
}

/// Label-noise rule: kNN self-agreement with coverage penalty across the grid.
inline AlphaTrace estimate_alpha_knn(const SnapshotF& mix, const TaskVectorF& tau,
                                     const LabeledDataset& proxy, const AlphaGrid& grid,
                                     const KnnConfig& cfg) {
    grid.validate();
    cfg.validate(proxy.size());
    std::vector<AlphaPoint> points;
    points.reserve(grid.values.size());
    for (double alpha : grid.values) {
        const auto snap = apply(mix, tau, alpha);
        const auto [sa, covered] = self_agreement(snap, proxy, cfg);
        AlphaPoint p;
        p.alpha = alpha;
        p.sa = sa;
        p.coverage = covered;
        points.push_back(p);
    }
    return select_knn(std::move(points), cfg.required_classes());
}

}  // namespace cuts
