#pragma once

// Labeled image datasets: IDX ingestion, synthetic Gaussian-blob corpora,
// stratified proxy splits, and a simple directory persistence format
// (meta.json + raw little-endian arrays).

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "cuts/matrix.hpp"
#include "cuts/rng.hpp"

#include "json.hpp"

namespace cuts {

struct LabeledDataset {
    MatrixF images;                         // N x D, values in [0, 1]
    std::vector<std::int32_t> labels;       // current (possibly corrupted) labels
    std::vector<std::int32_t> original_labels;
    std::vector<std::uint8_t> corrupted_mask;
    int num_classes = 0;

    std::size_t size() const { return images.rows(); }
    std::size_t dim() const { return images.cols(); }

    std::size_t corrupted_count() const {
        return static_cast<std::size_t>(
            std::count(corrupted_mask.begin(), corrupted_mask.end(), std::uint8_t{1}));
    }

    void validate() const {
        const std::size_t n = size();
        if (labels.size() != n || original_labels.size() != n || corrupted_mask.size() != n) {
            throw std::invalid_argument("dataset: array lengths disagree");
        }
        if (num_classes < 2) throw std::invalid_argument("dataset: num_classes must be >= 2");
        for (std::size_t i = 0; i < n; ++i) {
            if (labels[i] < 0 || labels[i] >= num_classes ||
                original_labels[i] < 0 || original_labels[i] >= num_classes) {
                throw std::invalid_argument("dataset: label out of range");
            }
            if (!corrupted_mask[i] && labels[i] != original_labels[i]) {
                throw std::invalid_argument("dataset: clean sample with altered label");
            }
        }
    }

    /// Subset by row indices (provenance carried along).
    LabeledDataset subset(const std::vector<std::size_t>& indices) const {
        LabeledDataset out;
        out.num_classes = num_classes;
        out.images = MatrixF(indices.size(), dim());
        out.labels.reserve(indices.size());
        out.original_labels.reserve(indices.size());
        out.corrupted_mask.reserve(indices.size());
        for (std::size_t r = 0; r < indices.size(); ++r) {
            const std::size_t i = indices[r];
            std::copy(images.row(i), images.row(i) + dim(), out.images.row(r));
            out.labels.push_back(labels[i]);
            out.original_labels.push_back(original_labels[i]);
            out.corrupted_mask.push_back(corrupted_mask[i]);
        }
        return out;
    }

    std::vector<std::size_t> clean_indices() const {
        std::vector<std::size_t> idx;
        for (std::size_t i = 0; i < size(); ++i)
            if (!corrupted_mask[i]) idx.push_back(i);
        return idx;
    }

    std::vector<std::size_t> corrupted_indices() const {
        std::vector<std::size_t> idx;
        for (std::size_t i = 0; i < size(); ++i)
            if (corrupted_mask[i]) idx.push_back(i);
        return idx;
    }
};

namespace detail {

inline std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("idx: cannot open " + path.string());
    return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in),
                                     std::istreambuf_iterator<char>());
}

inline std::uint32_t read_u32_be(const std::vector<std::uint8_t>& buf, std::size_t off) {
    if (off + 4 > buf.size()) throw std::runtime_error("idx: truncated header");
    return (std::uint32_t(buf[off]) << 24) | (std::uint32_t(buf[off + 1]) << 16) |
           (std::uint32_t(buf[off + 2]) << 8) | std::uint32_t(buf[off + 3]);
}

}  // namespace detail

/// Load an IDX image/label pair (the published MNIST container format:
/// big-endian headers, unsigned-byte payload). Pixels are scaled to [0,1].
inline LabeledDataset load_idx(const std::filesystem::path& images_path,
                               const std::filesystem::path& labels_path) {
    const auto img = detail::read_file_bytes(images_path);
    const auto lab = detail::read_file_bytes(labels_path);

    if (detail::read_u32_be(img, 0) != 0x00000803u) {
        throw std::runtime_error("idx: bad magic in image file (want 0x00000803)");
    }
    if (detail::read_u32_be(lab, 0) != 0x00000801u) {
        throw std::runtime_error("idx: bad magic in label file (want 0x00000801)");
    }
    const std::uint32_t n_img = detail::read_u32_be(img, 4);
    const std::uint32_t rows = detail::read_u32_be(img, 8);
    const std::uint32_t cols = detail::read_u32_be(img, 12);
    const std::uint32_t n_lab = detail::read_u32_be(lab, 4);
    if (n_img != n_lab) throw std::runtime_error("idx: image/label count mismatch");

    const std::size_t d = std::size_t(rows) * cols;
    if (img.size() != 16 + std::size_t(n_img) * d) {
        throw std::runtime_error("idx: truncated image payload");
    }
    if (lab.size() != 8 + std::size_t(n_lab)) {
        throw std::runtime_error("idx: truncated label payload");
    }

    LabeledDataset ds;
    ds.images = MatrixF(n_img, d);
    ds.labels.resize(n_img);
    int max_label = 0;
    for (std::size_t i = 0; i < n_img; ++i) {
        float* row = ds.images.row(i);
        const std::uint8_t* src = img.data() + 16 + i * d;
        for (std::size_t j = 0; j < d; ++j) row[j] = float(src[j]) / 255.0f;
        ds.labels[i] = lab[8 + i];
        max_label = std::max(max_label, int(ds.labels[i]));
    }
    ds.original_labels = ds.labels;
    ds.corrupted_mask.assign(n_img, 0);
    ds.num_classes = max_label + 1;
    ds.validate();
    return ds;
}

/// Synthetic corpus: K seeded Gaussian clusters in [0,1]^dim, class-blocked.
inline LabeledDataset synth_blobs(int num_classes, int per_class, int dim,
                                  double spread, std::uint64_t seed) {
    if (num_classes < 2 || per_class < 1 || dim < 1) {
        throw std::invalid_argument("synth_blobs: invalid parameters");
    }
    Rng rng(seed);
    MatrixD centers(num_classes, dim);
    for (std::size_t c = 0; c < std::size_t(num_classes); ++c) {
        for (int j = 0; j < dim; ++j) centers(c, j) = rng.uniform();
    }

    LabeledDataset ds;
    ds.num_classes = num_classes;
    const std::size_t n = std::size_t(num_classes) * per_class;
    ds.images = MatrixF(n, dim);
    ds.labels.resize(n);
    std::size_t row = 0;
    for (int c = 0; c < num_classes; ++c) {
        for (int s = 0; s < per_class; ++s, ++row) {
            float* px = ds.images.row(row);
            for (int j = 0; j < dim; ++j) {
                const double v = centers(c, j) + spread * rng.normal();
                px[j] = float(std::clamp(v, 0.0, 1.0));
            }
            ds.labels[row] = c;
        }
    }
    ds.original_labels = ds.labels;
    ds.corrupted_mask.assign(n, 0);
    return ds;
}

/// Stratified holdout split. The second part has round(fraction * N) samples
/// allocated per class by largest remainder; partition is disjoint and
/// exhaustive, with original sample order kept inside each part.
inline std::pair<LabeledDataset, LabeledDataset> split_proxy(const LabeledDataset& data,
                                                             double fraction,
                                                             std::uint64_t seed) {
    if (!(fraction > 0.0 && fraction < 1.0)) {
        throw std::invalid_argument("split_proxy: fraction must be in (0,1)");
    }
    const std::size_t n = data.size();
    const std::size_t m = static_cast<std::size_t>(std::llround(fraction * double(n)));
    if (m == 0) throw std::invalid_argument("split_proxy: holdout would be empty");
    if (m >= n) throw std::invalid_argument("split_proxy: holdout would consume the whole dataset");

    // per-class index pools, shuffled with one seeded stream
    const int k = data.num_classes;
    std::vector<std::vector<std::size_t>> pools(k);
    for (std::size_t i = 0; i < n; ++i) pools[data.labels[i]].push_back(i);
    Rng rng(seed);
    for (auto& pool : pools) rng.shuffle(pool);

    // largest-remainder allocation of m across classes
    std::vector<std::size_t> quota(k);
    std::vector<std::pair<double, int>> remainder(k);
    std::size_t assigned = 0;
    for (int c = 0; c < k; ++c) {
        const double exact = double(m) * double(pools[c].size()) / double(n);
        quota[c] = std::min<std::size_t>(std::size_t(exact), pools[c].size());
        assigned += quota[c];
        remainder[c] = {double(exact) - double(quota[c]), c};
    }
    std::sort(remainder.begin(), remainder.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return a.second < b.second;
    });
    for (std::size_t r = 0; assigned < m; r = (r + 1) % remainder.size()) {
        const int c = remainder[r].second;
        if (quota[c] < pools[c].size()) {
            ++quota[c];
            ++assigned;
        }
    }

    std::vector<std::size_t> holdout;
    holdout.reserve(m);
    for (int c = 0; c < k; ++c) {
        holdout.insert(holdout.end(), pools[c].begin(), pools[c].begin() + quota[c]);
    }
    std::sort(holdout.begin(), holdout.end());

    std::vector<std::size_t> rest;
    rest.reserve(n - m);
    std::size_t h = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (h < holdout.size() && holdout[h] == i) {
            ++h;
        } else {
            rest.push_back(i);
        }
    }
    return {data.subset(rest), data.subset(holdout)};
}

namespace detail {

template <typename T>
inline void write_pod_array(const std::filesystem::path& path, const T* data, std::size_t n) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("dataset: cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(data), std::streamsize(n * sizeof(T)));
}

template <typename T>
inline void read_pod_array(const std::filesystem::path& path, T* data, std::size_t n) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("dataset: cannot open " + path.string());
    in.read(reinterpret_cast<char*>(data), std::streamsize(n * sizeof(T)));
    if (std::size_t(in.gcount()) != n * sizeof(T)) {
        throw std::runtime_error("dataset: truncated array " + path.string());
    }
}

}  // namespace detail

/// Persist a dataset as a directory: meta.json + raw little-endian arrays.
inline void save_dataset(const LabeledDataset& ds, const std::filesystem::path& dir) {
    ds.validate();
    std::filesystem::create_directories(dir);
    nlohmann::json meta{
        {"n", ds.size()},
        {"d", ds.dim()},
        {"k", ds.num_classes},
        {"corrupted", ds.corrupted_count()},
    };
    std::ofstream(dir / "meta.json") << meta.dump(2) << "\n";
    detail::write_pod_array(dir / "images.f32", ds.images.data(), ds.images.size());
    detail::write_pod_array(dir / "labels.i32", ds.labels.data(), ds.labels.size());
    detail::write_pod_array(dir / "original_labels.i32", ds.original_labels.data(),
                            ds.original_labels.size());
    detail::write_pod_array(dir / "mask.u8", ds.corrupted_mask.data(), ds.corrupted_mask.size());
}

inline LabeledDataset load_dataset(const std::filesystem::path& dir) {
    std::ifstream meta_in(dir / "meta.json");
    if (!meta_in) throw std::runtime_error("dataset: missing meta.json in " + dir.string());
    nlohmann::json meta = nlohmann::json::parse(meta_in);
    const auto n = meta.at("n").get<std::size_t>();
    const auto d = meta.at("d").get<std::size_t>();

    LabeledDataset ds;
    ds.num_classes = meta.at("k").get<int>();
    ds.images = MatrixF(n, d);
    ds.labels.resize(n);
    ds.original_labels.resize(n);
    ds.corrupted_mask.resize(n);
    detail::read_pod_array(dir / "images.f32", ds.images.data(), ds.images.size());
    detail::read_pod_array(dir / "labels.i32", ds.labels.data(), n);
    detail::read_pod_array(dir / "original_labels.i32", ds.original_labels.data(), n);
    detail::read_pod_array(dir / "mask.u8", ds.corrupted_mask.data(), n);
    ds.validate();
    return ds;
}

}  // namespace cuts
