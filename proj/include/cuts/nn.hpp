#pragma once

// Minimal deterministic MLP engine: dense layers with ReLU hidden
// activations, manual backpropagation, cross-entropy loss, and momentum SGD.
// Single-threaded training; evaluation may shard rows across threads
// (per-row results are independent, so the reduction is order-free).

#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "cuts/dataset.hpp"
#include "cuts/matrix.hpp"
#include "cuts/rng.hpp"
#include "cuts/weights.hpp"

namespace cuts {

struct MlpConfig {
    int input_dim = 0;
    std::vector<int> hidden_dims;
    int num_classes = 0;
    std::uint64_t seed = 0;

    void validate() const {
        if (input_dim < 1) throw std::invalid_argument("mlp: input_dim must be >= 1");
        if (num_classes < 2) throw std::invalid_argument("mlp: num_classes must be >= 2");
        if (hidden_dims.empty()) throw std::invalid_argument("mlp: hidden_dims must be non-empty");
        for (int h : hidden_dims)
            if (h < 1) throw std::invalid_argument("mlp: hidden dim must be >= 1");
    }

    std::vector<int> dims() const {
        std::vector<int> d{input_dim};
        d.insert(d.end(), hidden_dims.begin(), hidden_dims.end());
        d.push_back(num_classes);
        return d;
    }
};

struct TrainConfig {
    double learning_rate = 0.1;
    double momentum = 0.9;
    int batch_size = 64;
    int max_epochs = 100;
    double target_train_accuracy = 0.995;
    std::uint64_t seed = 0;
    bool stop_at_target = true;  // false: always run max_epochs

    void validate() const {
        if (!(learning_rate > 0)) throw std::invalid_argument("train: learning_rate must be > 0");
        if (momentum < 0 || momentum >= 1) throw std::invalid_argument("train: momentum in [0,1)");
        if (batch_size < 1) throw std::invalid_argument("train: batch_size must be >= 1");
        if (max_epochs < 0) throw std::invalid_argument("train: max_epochs must be >= 0");
        if (!(target_train_accuracy > 0 && target_train_accuracy <= 1)) {
            throw std::invalid_argument("train: target_train_accuracy in (0,1]");
        }
    }
};

template <typename T>
struct ForwardTrace {
    Matrix<T> logits;       // N x K
    Matrix<T> penultimate;  // N x H_last, post-activation
};

struct EpochStats {
    int epoch = 0;
    double loss = 0.0;
    double accuracy = 0.0;
};

struct TrainHistory {
    std::vector<EpochStats> epochs;
    bool reached_target = false;
};

/// Weights drawn from U(-1/sqrt(fan_in), 1/sqrt(fan_in)), biases zero.
/// Layer names are "layer{i}.weight" (out x in) and "layer{i}.bias" (out).
template <typename T = float>
WeightSnapshot<T> init_weights(const MlpConfig& cfg) {
    cfg.validate();
    Rng rng(cfg.seed);
    WeightSnapshot<T> snap;
    const auto dims = cfg.dims();
    for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
        const auto fan_in = std::size_t(dims[l]);
        const auto fan_out = std::size_t(dims[l + 1]);
        const double limit = 1.0 / std::sqrt(double(fan_in));
        LayerArray<T> w{"layer" + std::to_string(l) + ".weight", {fan_out, fan_in}, {}};
        w.values.resize(fan_out * fan_in);
        for (auto& v : w.values) v = T(rng.uniform(-limit, limit));
        LayerArray<T> b{"layer" + std::to_string(l) + ".bias", {fan_out}, {}};
        b.values.assign(fan_out, T(0));
        snap.layers.push_back(std::move(w));
        snap.layers.push_back(std::move(b));
    }
    snap.validate();
    return snap;
}

namespace detail {

/// Validated (weight, bias) pointers into an MLP-shaped snapshot.
template <typename T>
struct MlpView {
    std::vector<const LayerArray<T>*> weights;
    std::vector<const LayerArray<T>*> biases;

    static MlpView from(const WeightSnapshot<T>& snap) {
        MlpView v;
        if (snap.layers.size() < 4 || snap.layers.size() % 2 != 0) {
            throw std::invalid_argument("mlp: snapshot is not an MLP layer stack");
        }
        for (std::size_t l = 0; 2 * l < snap.layers.size(); ++l) {
            const auto& w = snap.layers[2 * l];
            const auto& b = snap.layers[2 * l + 1];
            const std::string stem = "layer" + std::to_string(l);
            if (w.name != stem + ".weight" || b.name != stem + ".bias" ||
                w.shape.size() != 2 || b.shape.size() != 1 || w.shape[0] != b.shape[0]) {
                throw std::invalid_argument("mlp: unexpected layer layout at " + stem);
            }
            if (l > 0 && w.shape[1] != v.weights.back()->shape[0]) {
                throw std::invalid_argument("mlp: layer width mismatch at " + stem);
            }
            v.weights.push_back(&w);
            v.biases.push_back(&b);
        }
        return v;
    }

    std::size_t num_layers() const { return weights.size(); }
    std::size_t input_dim() const { return weights.front()->shape[1]; }
    std::size_t output_dim() const { return weights.back()->shape[0]; }
    std::size_t penultimate_dim() const { return weights.back()->shape[1]; }
};

/// One dense layer over raw rows: out[n x out_dim] = x * W^T + b (+ ReLU).
template <typename T>
void dense_forward(const T* x, std::size_t n, std::size_t in_dim,
                   const LayerArray<T>& w, const LayerArray<T>& b, bool relu,
                   Matrix<T>& out) {
    const std::size_t out_dim = w.shape[0];
    gemm_nt(x, w.values.data(), out.data(), n, out_dim, in_dim);
    for (std::size_t i = 0; i < n; ++i) {
        T* row = out.row(i);
        for (std::size_t j = 0; j < out_dim; ++j) {
            row[j] += b.values[j];
            if (relu && row[j] < T(0)) row[j] = T(0);
        }
    }
}

}  // namespace detail

/// Forward pass over raw row-major input (n x in_dim).
template <typename T>
ForwardTrace<T> forward_rows(const WeightSnapshot<T>& snap, const T* x, std::size_t n,
                             std::size_t in_dim) {
    const auto view = detail::MlpView<T>::from(snap);
    if (in_dim != view.input_dim()) throw std::invalid_argument("forward: input dim mismatch");

    Matrix<T> act;  // after the loop: activation of the last hidden layer
    const T* cur = x;
    std::size_t cur_dim = in_dim;
    for (std::size_t l = 0; l + 1 < view.num_layers(); ++l) {
        Matrix<T> next(n, view.weights[l]->shape[0]);
        detail::dense_forward(cur, n, cur_dim, *view.weights[l], *view.biases[l], true, next);
        act = std::move(next);
        cur = act.data();
        cur_dim = act.cols();
    }
    const std::size_t last = view.num_layers() - 1;
    Matrix<T> logits(n, view.output_dim());
    detail::dense_forward(cur, n, cur_dim, *view.weights[last], *view.biases[last], false, logits);
    return ForwardTrace<T>{std::move(logits), std::move(act)};
}

template <typename T>
ForwardTrace<T> forward(const WeightSnapshot<T>& snap, const Matrix<T>& batch) {
    return forward_rows(snap, batch.data(), batch.rows(), batch.cols());
}

/// Row-wise softmax with max subtraction.
template <typename T>
Matrix<T> softmax(const Matrix<T>& logits) {
    Matrix<T> p(logits.rows(), logits.cols());
    for (std::size_t i = 0; i < logits.rows(); ++i) {
        const T* z = logits.row(i);
        T* pi = p.row(i);
        T zmax = z[0];
        for (std::size_t j = 1; j < logits.cols(); ++j) zmax = std::max(zmax, z[j]);
        T sum{};
        for (std::size_t j = 0; j < logits.cols(); ++j) {
            pi[j] = std::exp(z[j] - zmax);
            sum += pi[j];
        }
        for (std::size_t j = 0; j < logits.cols(); ++j) pi[j] /= sum;
    }
    return p;
}

/// Mean cross-entropy and its gradient w.r.t. every parameter. The returned
/// snapshot mirrors the input's layer structure.
template <typename T>
std::pair<double, WeightSnapshot<T>> loss_and_grad(const WeightSnapshot<T>& snap,
                                                   const Matrix<T>& batch,
                                                   const std::vector<std::int32_t>& labels) {
    const auto view = detail::MlpView<T>::from(snap);
    const std::size_t n = batch.rows();
    const std::size_t num_layers = view.num_layers();
    if (labels.size() != n) throw std::invalid_argument("loss: labels/batch size mismatch");
    if (batch.cols() != view.input_dim()) throw std::invalid_argument("loss: input dim mismatch");
    const auto k = view.output_dim();
    for (auto y : labels) {
        if (y < 0 || std::size_t(y) >= k) throw std::invalid_argument("loss: label out of range");
    }

    // forward, keeping every activation
    std::vector<Matrix<T>> acts(num_layers + 1);  // acts[0] = input
    acts[0] = Matrix<T>(n, batch.cols());
    std::copy(batch.data(), batch.data() + batch.size(), acts[0].data());
    for (std::size_t l = 0; l < num_layers; ++l) {
        const bool last = l + 1 == num_layers;
        acts[l + 1] = Matrix<T>(n, view.weights[l]->shape[0]);
        detail::dense_forward(acts[l].data(), n, acts[l].cols(), *view.weights[l],
                              *view.biases[l], !last, acts[l + 1]);
    }

    // loss and output delta: dZ = (softmax - onehot) / n
    const Matrix<T>& logits = acts[num_layers];
    Matrix<T> delta = softmax(logits);
    double loss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const T* z = logits.row(i);
        T zmax = z[0];
        for (std::size_t j = 1; j < k; ++j) zmax = std::max(zmax, z[j]);
        double lse = 0.0;
        for (std::size_t j = 0; j < k; ++j) lse += std::exp(double(z[j] - zmax));
        loss += std::log(lse) + double(zmax) - double(z[labels[i]]);
        T* d = delta.row(i);
        d[labels[i]] -= T(1);
        for (std::size_t j = 0; j < k; ++j) d[j] /= T(n);
    }
    loss /= double(n);

    // backward
    WeightSnapshot<T> grad;
    grad.layers.resize(snap.layers.size());
    for (std::size_t l = num_layers; l-- > 0;) {
        const auto& w = *view.weights[l];
        LayerArray<T> gw{w.name, w.shape, std::vector<T>(w.size(), T(0))};
        LayerArray<T> gb{view.biases[l]->name, view.biases[l]->shape,
                         std::vector<T>(view.biases[l]->size(), T(0))};

        // gW += delta^T * act_in ; gb += column sums of delta
        gemm_tn_add(delta.data(), acts[l].data(), gw.values.data(), n, acts[l].cols(),
                    delta.cols());
        for (std::size_t i = 0; i < n; ++i) {
            const T* d = delta.row(i);
            for (std::size_t j = 0; j < gb.values.size(); ++j) gb.values[j] += d[j];
        }

        if (l > 0) {
            // delta_prev = (delta * W) .* relu'(act_in)
            Matrix<T> prev(n, w.shape[1], T(0));
            gemm_nn_add(delta.data(), w.values.data(), prev.data(), n, w.shape[1], w.shape[0]);
            const Matrix<T>& a = acts[l];
            for (std::size_t i = 0; i < prev.size(); ++i) {
                if (a.data()[i] <= T(0)) prev.data()[i] = T(0);
            }
            delta = std::move(prev);
        }
        grad.layers[2 * l] = std::move(gw);
        grad.layers[2 * l + 1] = std::move(gb);
    }
    return {loss, std::move(grad)};
}

namespace detail {

inline int env_threads() {
    if (const char* s = std::getenv("CUTS_THREADS")) {
        const int v = std::atoi(s);
        if (v >= 1) return v;
    }
    const unsigned hw = std::thread::hardware_concurrency();
    return int(std::clamp(hw, 1u, 8u));
}

/// Static contiguous sharding; fn(begin, end) must touch disjoint state.
template <typename Fn>
void parallel_chunks(std::size_t n, Fn&& fn) {
    const int want = env_threads();
    const std::size_t min_chunk = 256;
    const int t = int(std::min<std::size_t>(std::size_t(want), std::max<std::size_t>(1, n / min_chunk)));
    if (t <= 1) {
        fn(std::size_t(0), n);
        return;
    }
    std::vector<std::thread> workers;
    const std::size_t chunk = (n + t - 1) / t;
    for (int i = 0; i < t; ++i) {
        const std::size_t b = std::min(n, std::size_t(i) * chunk);
        const std::size_t e = std::min(n, b + chunk);
        if (b >= e) break;
        workers.emplace_back([&fn, b, e] { fn(b, e); });
    }
    for (auto& w : workers) w.join();
}

}  // namespace detail

/// Argmax over one logit row; ties resolve to the smallest class index.
template <typename T>
inline std::int32_t argmax_row(const T* z, std::size_t k) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < k; ++j) {
        if (z[j] > z[best]) best = j;
    }
    return std::int32_t(best);
}

inline std::vector<std::int32_t> predict(const SnapshotF& snap, const LabeledDataset& data) {
    if (data.size() == 0) throw std::invalid_argument("predict: empty dataset");
    std::vector<std::int32_t> preds(data.size());
    detail::parallel_chunks(data.size(), [&](std::size_t b, std::size_t e) {
        const auto trace = forward_rows(snap, data.images.row(b), e - b, data.dim());
        for (std::size_t i = b; i < e; ++i) {
            preds[i] = argmax_row(trace.logits.row(i - b), trace.logits.cols());
        }
    });
    return preds;
}

inline double accuracy(const SnapshotF& snap, const LabeledDataset& data) {
    const auto preds = predict(snap, data);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        if (preds[i] == data.labels[i]) ++correct;
    }
    return double(correct) / double(preds.size());
}

/// Momentum SGD to a train-accuracy target. Deterministic for fixed seeds:
/// one seeded stream drives the per-epoch shuffles, batches are contiguous
/// slices of the shuffled order, and updates run single-threaded.
template <typename T = float>
std::pair<WeightSnapshot<T>, TrainHistory> train(const WeightSnapshot<T>& start,
                                                 const LabeledDataset& data,
                                                 const TrainConfig& cfg) {
    cfg.validate();
    if (data.size() == 0) throw std::invalid_argument("train: empty dataset");
    WeightSnapshot<T> snap = start;
    TrainHistory history;
    if (cfg.max_epochs == 0) return {std::move(snap), std::move(history)};

    const std::size_t n = data.size();
    const std::size_t d = data.dim();
    const std::size_t bs = std::size_t(cfg.batch_size);

    WeightSnapshot<T> velocity = snap;
    for (auto& l : velocity.layers) std::fill(l.values.begin(), l.values.end(), T(0));

    Rng shuffle_rng(cfg.seed);
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;

    Matrix<T> batch;
    std::vector<std::int32_t> batch_labels;
    for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
        shuffle_rng.shuffle(order);
        double epoch_loss = 0.0;
        for (std::size_t off = 0; off < n; off += bs) {
            const std::size_t cur = std::min(bs, n - off);
            if (batch.rows() != cur) batch = Matrix<T>(cur, d);
            batch_labels.resize(cur);
            for (std::size_t r = 0; r < cur; ++r) {
                const std::size_t src = order[off + r];
                const float* px = data.images.row(src);
                T* dst = batch.row(r);
                for (std::size_t j = 0; j < d; ++j) dst[j] = T(px[j]);
                batch_labels[r] = data.labels[src];
            }
            auto [loss, grad] = loss_and_grad(snap, batch, batch_labels);
            if (!std::isfinite(loss)) {
                throw std::runtime_error("train: non-finite loss at epoch " +
                                         std::to_string(epoch));
            }
            epoch_loss += loss * double(cur);
            for (std::size_t l = 0; l < snap.layers.size(); ++l) {
                auto& w = snap.layers[l].values;
                auto& v = velocity.layers[l].values;
                const auto& g = grad.layers[l].values;
                for (std::size_t i = 0; i < w.size(); ++i) {
                    v[i] = T(cfg.momentum) * v[i] - T(cfg.learning_rate) * g[i];
                    w[i] += v[i];
                }
            }
        }
        EpochStats stats;
        stats.epoch = epoch;
        stats.loss = epoch_loss / double(n);
        if constexpr (std::is_same_v<T, float>) {
            stats.accuracy = accuracy(snap, data);
        } else {
            // f64 training is a diagnostics path; reuse the float evaluator
            SnapshotF f32;
            for (const auto& l : snap.layers) {
                LayerArray<float> lf{l.name, l.shape, std::vector<float>(l.values.begin(), l.values.end())};
                f32.layers.push_back(std::move(lf));
            }
            stats.accuracy = accuracy(f32, data);
        }
        history.epochs.push_back(stats);
        if (cfg.stop_at_target && stats.accuracy >= cfg.target_train_accuracy) {
            history.reached_target = true;
            break;
        }
    }
    return {std::move(snap), std::move(history)};
}

}  // namespace cuts
