#pragma once

// Named-layer parameter collections. A snapshot is an ordered list of
// (name, shape, values) arrays; all weight-space arithmetic and
// serialization operate on this representation.

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace cuts {

template <typename T>
struct LayerArray {
    std::string name;
    std::vector<std::size_t> shape;
    std::vector<T> values;

    std::size_t size() const { return values.size(); }

    std::size_t shape_product() const {
        std::size_t p = 1;
        for (auto d : shape) p *= d;
        return p;
    }

    bool same_geometry(const LayerArray& other) const {
        return name == other.name && shape == other.shape;
    }
};

template <typename T>
struct WeightSnapshot {
    std::vector<LayerArray<T>> layers;

    std::size_t total_params() const {
        std::size_t n = 0;
        for (const auto& l : layers) n += l.size();
        return n;
    }

    const LayerArray<T>* find(std::string_view name) const {
        for (const auto& l : layers)
            if (l.name == name) return &l;
        return nullptr;
    }

    LayerArray<T>* find(std::string_view name) {
        for (auto& l : layers)
            if (l.name == name) return &l;
        return nullptr;
    }

    bool same_structure(const WeightSnapshot& other) const {
        if (layers.size() != other.layers.size()) return false;
        for (std::size_t i = 0; i < layers.size(); ++i)
            if (!layers[i].same_geometry(other.layers[i])) return false;
        return true;
    }

    void validate() const {
        if (layers.empty()) throw std::invalid_argument("snapshot: no layers");
        std::size_t total = 0;
        for (std::size_t i = 0; i < layers.size(); ++i) {
            const auto& l = layers[i];
            if (l.shape_product() != l.size()) {
                throw std::invalid_argument("snapshot: shape/value size mismatch in " + l.name);
            }
            for (std::size_t j = 0; j < i; ++j) {
                if (layers[j].name == l.name) {
                    throw std::invalid_argument("snapshot: duplicate layer name " + l.name);
                }
            }
            total += l.size();
        }
        if (total == 0) throw std::invalid_argument("snapshot: zero parameters");
    }
};

using SnapshotF = WeightSnapshot<float>;
using SnapshotD = WeightSnapshot<double>;

template <typename T>
inline bool bitwise_equal(const WeightSnapshot<T>& a, const WeightSnapshot<T>& b) {
    if (!a.same_structure(b)) return false;
    for (std::size_t i = 0; i < a.layers.size(); ++i) {
        if (a.layers[i].values != b.layers[i].values) return false;
    }
    return true;
}

}  // namespace cuts
