#pragma once

// Corruption kernels over labeled datasets: symmetric label noise (SN),
// asymmetric class-conditional flips (AN), and a bottom-right white-patch
// poison trigger (PT). All selection is exact-count: round(rate * N) seeded
// draws without replacement, so the corrupted/clean split is reproducible.

#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>

#include "cuts/dataset.hpp"
#include "cuts/rng.hpp"

namespace cuts {

enum class CorruptionKind { SymmetricNoise, AsymmetricNoise, PoisonTrigger };

inline std::string to_string(CorruptionKind kind) {
    switch (kind) {
        case CorruptionKind::SymmetricNoise: return "SN";
        case CorruptionKind::AsymmetricNoise: return "AN";
        case CorruptionKind::PoisonTrigger: return "PT";
    }
    return "?";
}

inline CorruptionKind corruption_kind_from_string(const std::string& s) {
    if (s == "SN") return CorruptionKind::SymmetricNoise;
    if (s == "AN") return CorruptionKind::AsymmetricNoise;
    if (s == "PT") return CorruptionKind::PoisonTrigger;
    throw std::invalid_argument("corruption: unknown kind " + s);
}

struct CorruptionSpec {
    CorruptionKind kind = CorruptionKind::SymmetricNoise;
    double rate = 0.0;                       // fraction of the dataset targeted
    std::map<int, int> mapping;              // AN: class -> class, g(y) != y
    std::optional<int> target_class;         // PT
    double trigger_area_fraction = 0.03;     // PT
    float trigger_value = 1.0f;              // PT
    std::optional<int> image_height;         // PT, optional explicit grid
    std::optional<int> image_width;
    std::uint64_t seed = 0;

    void validate(int num_classes) const {
        if (rate < 0.0 || rate > 1.0) throw std::invalid_argument("corruption: rate in [0,1]");
        switch (kind) {
            case CorruptionKind::SymmetricNoise:
                break;
            case CorruptionKind::AsymmetricNoise:
                if (mapping.empty()) throw std::invalid_argument("corruption: AN needs a mapping");
                for (const auto& [from, to] : mapping) {
                    if (from < 0 || from >= num_classes || to < 0 || to >= num_classes) {
                        throw std::invalid_argument("corruption: AN mapping class out of range");
                    }
                    if (from == to) {
                        throw std::invalid_argument("corruption: AN mapping must move every class");
                    }
                }
                break;
            case CorruptionKind::PoisonTrigger:
                if (!target_class) throw std::invalid_argument("corruption: PT needs target_class");
                if (*target_class < 0 || *target_class >= num_classes) {
                    throw std::invalid_argument("corruption: PT target out of range");
                }
                if (!(trigger_area_fraction > 0.0 && trigger_area_fraction < 1.0)) {
                    throw std::invalid_argument("corruption: trigger_area_fraction in (0,1)");
                }
                break;
        }
    }
};

namespace detail {

struct TriggerGeometry {
    int height = 0;
    int width = 0;
    int patch_side = 0;
};

/// Patch side = round(sqrt(fraction * H * W)); for square grids this equals
/// round(sqrt(fraction) * side). The grid is inferred as square from D
/// unless the spec declares it.
inline TriggerGeometry trigger_geometry(const CorruptionSpec& spec, std::size_t dim) {
    TriggerGeometry g;
    if (spec.image_height && spec.image_width) {
        g.height = *spec.image_height;
        g.width = *spec.image_width;
        if (g.height < 1 || g.width < 1 || std::size_t(g.height) * std::size_t(g.width) != dim) {
            throw std::invalid_argument("corruption: declared grid does not match image size");
        }
    } else {
        const int side = int(std::llround(std::sqrt(double(dim))));
        if (std::size_t(side) * std::size_t(side) != dim) {
            throw std::invalid_argument(
                "corruption: non-square image; declare image_height/image_width for PT");
        }
        g.height = g.width = side;
    }
    g.patch_side = int(std::llround(
        std::sqrt(spec.trigger_area_fraction * double(g.height) * double(g.width))));
    g.patch_side = std::clamp(g.patch_side, 1, std::min(g.height, g.width));
    return g;
}

inline void stamp_trigger(float* pixels, const TriggerGeometry& g, float value) {
    for (int r = g.height - g.patch_side; r < g.height; ++r) {
        for (int c = g.width - g.patch_side; c < g.width; ++c) {
            pixels[r * g.width + c] = value;
        }
    }
}

/// Uniform draw over the K-1 classes other than `current`.
inline int other_class(int current, int num_classes, Rng& rng) {
    const int draw = int(rng.below(std::uint64_t(num_classes - 1)));
    return draw >= current ? draw + 1 : draw;
}

}  // namespace detail

/// Apply a corruption kernel to exactly round(rate * N) samples, selected
/// uniformly without replacement with the spec's seed. Selected samples are
/// processed in ascending index order. AN draws only from samples whose
/// class is in the mapping's domain.
inline LabeledDataset corrupt(const LabeledDataset& data, const CorruptionSpec& spec) {
    spec.validate(data.num_classes);
    LabeledDataset out = data;
    const std::size_t n = data.size();
    const std::size_t m = std::size_t(std::llround(spec.rate * double(n)));
    if (m == 0) return out;

    Rng rng(spec.seed);
    std::vector<std::size_t> selected;
    if (spec.kind == CorruptionKind::AsymmetricNoise) {
        std::vector<std::size_t> eligible;
        for (std::size_t i = 0; i < n; ++i) {
            if (spec.mapping.count(data.labels[i])) eligible.push_back(i);
        }
        if (m > eligible.size()) {
            throw std::invalid_argument("corruption: AN rate exceeds eligible samples (" +
                                        std::to_string(eligible.size()) + " eligible, " +
                                        std::to_string(m) + " requested)");
        }
        const auto picks = sample_indices(eligible.size(), m, rng);
        for (auto p : picks) selected.push_back(eligible[p]);
    } else {
        selected = sample_indices(n, m, rng);
    }

    switch (spec.kind) {
        case CorruptionKind::SymmetricNoise:
            for (auto i : selected) {
                out.labels[i] = detail::other_class(data.labels[i], data.num_classes, rng);
                out.corrupted_mask[i] = 1;
            }
            break;
        case CorruptionKind::AsymmetricNoise:
            for (auto i : selected) {
                out.labels[i] = spec.mapping.at(data.labels[i]);
                out.corrupted_mask[i] = 1;
            }
            break;
        case CorruptionKind::PoisonTrigger: {
            const auto geom = detail::trigger_geometry(spec, data.dim());
            for (auto i : selected) {
                detail::stamp_trigger(out.images.row(i), geom, spec.trigger_value);
                out.labels[i] = *spec.target_class;
                out.corrupted_mask[i] = 1;
            }
            break;
        }
    }
    return out;
}

/// Build the proxy set: the kernel is applied to every sample (rate treated
/// as 1). For AN, samples outside the mapping's domain are dropped. Original
/// labels are preserved for analysis; the corrupted mask is all true.
inline LabeledDataset make_proxy(const LabeledDataset& proxy_part, const CorruptionSpec& spec) {
    spec.validate(proxy_part.num_classes);
    LabeledDataset out = proxy_part;
    const std::size_t n = out.size();
    Rng rng(spec.seed);

    switch (spec.kind) {
        case CorruptionKind::SymmetricNoise:
            for (std::size_t i = 0; i < n; ++i) {
                out.labels[i] = detail::other_class(out.labels[i], out.num_classes, rng);
                out.corrupted_mask[i] = 1;
            }
            break;
        case CorruptionKind::AsymmetricNoise: {
            std::vector<std::size_t> keep;
            for (std::size_t i = 0; i < n; ++i) {
                if (spec.mapping.count(out.labels[i])) keep.push_back(i);
            }
            if (keep.empty()) {
                throw std::invalid_argument("corruption: AN proxy empty after domain filter");
            }
            out = out.subset(keep);
            for (std::size_t i = 0; i < out.size(); ++i) {
                out.labels[i] = spec.mapping.at(out.labels[i]);
                out.corrupted_mask[i] = 1;
            }
            break;
        }
        case CorruptionKind::PoisonTrigger: {
            const auto geom = detail::trigger_geometry(spec, out.dim());
            for (std::size_t i = 0; i < n; ++i) {
                detail::stamp_trigger(out.images.row(i), geom, spec.trigger_value);
                out.labels[i] = *spec.target_class;
                out.corrupted_mask[i] = 1;
            }
            break;
        }
    }
    return out;
}

/// Shipped default flips for MNIST-like 10-class data (a fixture, not a
/// claim about any particular dataset): 9->1, 2->7, 3->8, 5->6.
inline std::map<int, int> default_asymmetric_mapping() {
    return {{9, 1}, {2, 7}, {3, 8}, {5, 6}};
}

}  // namespace cuts
