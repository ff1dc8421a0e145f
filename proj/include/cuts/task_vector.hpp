#pragma once

// Task-vector algebra over weight snapshots: masked differences, scaled
// application, averaging, cosine similarity, norm-matched random directions,
// and straight-line interpolation. Norm and dot accumulations run in double
// regardless of storage type.

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "cuts/rng.hpp"
#include "cuts/weights.hpp"

namespace cuts {

struct InclusionMask {
    enum class Rule { AllParameters, ExcludeByNamePattern };
    Rule rule = Rule::AllParameters;
    std::vector<std::string> patterns;  // substring matches

    static InclusionMask all() { return {}; }

    static InclusionMask exclude(std::vector<std::string> pats) {
        if (pats.empty()) throw std::invalid_argument("mask: exclusion patterns must be non-empty");
        return {Rule::ExcludeByNamePattern, std::move(pats)};
    }

    bool includes(std::string_view layer_name) const {
        if (rule == Rule::AllParameters) return true;
        for (const auto& p : patterns) {
            if (layer_name.find(p) != std::string_view::npos) return false;
        }
        return true;
    }

    std::string id() const {
        if (rule == Rule::AllParameters) return "all";
        std::string s = "exclude:";
        for (std::size_t i = 0; i < patterns.size(); ++i) {
            if (i) s += ',';
            s += patterns[i];
        }
        return s;
    }
};

template <typename T>
struct TaskVector {
    std::vector<LayerArray<T>> entries;
    InclusionMask mask;

    std::string mask_id() const { return mask.id(); }

    std::size_t total_params() const {
        std::size_t n = 0;
        for (const auto& e : entries) n += e.size();
        return n;
    }

    bool compatible(const TaskVector& other) const {
        if (mask_id() != other.mask_id() || entries.size() != other.entries.size()) return false;
        for (std::size_t i = 0; i < entries.size(); ++i) {
            if (!entries[i].same_geometry(other.entries[i])) return false;
        }
        return true;
    }
};

using TaskVectorF = TaskVector<float>;

/// tau = a - b over mask-included layers.
template <typename T>
TaskVector<T> diff(const WeightSnapshot<T>& a, const WeightSnapshot<T>& b,
                   const InclusionMask& mask = InclusionMask::all()) {
    if (!a.same_structure(b)) throw std::invalid_argument("diff: snapshot structure mismatch");
    TaskVector<T> tau;
    tau.mask = mask;
    for (std::size_t l = 0; l < a.layers.size(); ++l) {
        if (!mask.includes(a.layers[l].name)) continue;
        LayerArray<T> e{a.layers[l].name, a.layers[l].shape, a.layers[l].values};
        const auto& bv = b.layers[l].values;
        for (std::size_t i = 0; i < e.values.size(); ++i) e.values[i] -= bv[i];
        tau.entries.push_back(std::move(e));
    }
    if (tau.entries.empty()) throw std::invalid_argument("diff: mask excludes every layer");
    return tau;
}

/// theta = base - alpha * tau on included layers; excluded layers are copied
/// from base verbatim.
template <typename T>
WeightSnapshot<T> apply(const WeightSnapshot<T>& base, const TaskVector<T>& tau, double alpha) {
    WeightSnapshot<T> out = base;
    std::size_t used = 0;
    for (auto& layer : out.layers) {
        if (!tau.mask.includes(layer.name)) continue;
        const LayerArray<T>* e = nullptr;
        for (const auto& cand : tau.entries) {
            if (cand.name == layer.name) {
                e = &cand;
                break;
            }
        }
        if (!e || e->shape != layer.shape) {
            throw std::invalid_argument("apply: task vector missing layer " + layer.name);
        }
        if (alpha != 0.0) {
            const T a = T(alpha);
            for (std::size_t i = 0; i < layer.values.size(); ++i) {
                layer.values[i] -= a * e->values[i];
            }
        }
        ++used;
    }
    if (used != tau.entries.size()) {
        throw std::invalid_argument("apply: task vector has layers absent from base");
    }
    return out;
}

template <typename T>
TaskVector<T> scale(const TaskVector<T>& tau, double c) {
    TaskVector<T> out = tau;
    for (auto& e : out.entries) {
        for (auto& v : e.values) v = T(double(v) * c);
    }
    return out;
}

/// Elementwise mean of two compatible vectors.
template <typename T>
TaskVector<T> average(const TaskVector<T>& a, const TaskVector<T>& b) {
    if (!a.compatible(b)) throw std::invalid_argument("average: incompatible task vectors");
    TaskVector<T> out = a;
    for (std::size_t l = 0; l < out.entries.size(); ++l) {
        auto& v = out.entries[l].values;
        const auto& bv = b.entries[l].values;
        for (std::size_t i = 0; i < v.size(); ++i) {
            v[i] = (v[i] + bv[i]) / T(2);
        }
    }
    return out;
}

template <typename T>
double l2_norm(const LayerArray<T>& layer) {
    double s = 0.0;
    for (auto v : layer.values) s += double(v) * double(v);
    return std::sqrt(s);
}

template <typename T>
double l2_norm(const TaskVector<T>& tau) {
    double s = 0.0;
    for (const auto& e : tau.entries) {
        for (auto v : e.values) s += double(v) * double(v);
    }
    return std::sqrt(s);
}

/// Cosine similarity of the flattened parameter vectors.
template <typename T>
double cosine(const TaskVector<T>& a, const TaskVector<T>& b) {
    if (!a.compatible(b)) throw std::invalid_argument("cosine: incompatible task vectors");
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t l = 0; l < a.entries.size(); ++l) {
        const auto& av = a.entries[l].values;
        const auto& bv = b.entries[l].values;
        for (std::size_t i = 0; i < av.size(); ++i) {
            dot += double(av[i]) * double(bv[i]);
            na += double(av[i]) * double(av[i]);
            nb += double(bv[i]) * double(bv[i]);
        }
    }
    if (na == 0.0 || nb == 0.0) throw std::invalid_argument("cosine: zero-norm task vector");
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

/// Seeded Gaussian direction rescaled per layer to the reference layer's L2
/// norm. Zero-norm reference layers come out as zero (noted in *warnings).
template <typename T>
TaskVector<T> random_norm_matched(const TaskVector<T>& ref, std::uint64_t seed,
                                  std::vector<std::string>* warnings = nullptr) {
    TaskVector<T> out = ref;
    Rng rng(seed);
    for (auto& e : out.entries) {
        const double target = l2_norm(e);
        for (auto& v : e.values) v = T(rng.normal());
        if (target == 0.0) {
            std::fill(e.values.begin(), e.values.end(), T(0));
            if (warnings) warnings->push_back("random_norm_matched: zero-norm layer " + e.name);
            continue;
        }
        const double cur = l2_norm(e);
        const T s = T(target / cur);
        for (auto& v : e.values) v *= s;
    }
    return out;
}

/// theta(lambda) = init + lambda * tau for each grid value, grid order kept.
/// Layers outside tau's mask are copied from init.
template <typename T>
std::vector<WeightSnapshot<T>> interpolate(const WeightSnapshot<T>& init,
                                           const TaskVector<T>& tau,
                                           const std::vector<double>& lambda_grid) {
    std::vector<WeightSnapshot<T>> out;
    out.reserve(lambda_grid.size());
    for (double lambda : lambda_grid) {
        if (!std::isfinite(lambda)) throw std::invalid_argument("interpolate: non-finite lambda");
        out.push_back(apply(init, tau, -lambda));
    }
    return out;
}

/// View a task vector as a snapshot (for serialization and norm reports).
template <typename T>
WeightSnapshot<T> as_snapshot(const TaskVector<T>& tau) {
    WeightSnapshot<T> snap;
    snap.layers = tau.entries;
    return snap;
}

template <typename T>
TaskVector<T> task_vector_from_snapshot(const WeightSnapshot<T>& snap, const InclusionMask& mask) {
    TaskVector<T> tau;
    tau.mask = mask;
    for (const auto& l : snap.layers) {
        if (!mask.includes(l.name)) {
            throw std::invalid_argument("task vector: stored layer excluded by mask " + l.name);
        }
        tau.entries.push_back(l);
    }
    return tau;
}

}  // namespace cuts
