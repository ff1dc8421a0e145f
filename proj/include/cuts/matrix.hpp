#pragma once

// Dense row-major matrix plus the three multiply kernels the network needs.
// Kernels use fixed summation orders (independent accumulators, contiguous
// row access) so results are reproducible run to run at full optimization.

#include <algorithm>
#include <cstddef>
#include <stdexcept>
#include <vector>

namespace cuts {

template <typename T>
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, T value = T{})
        : rows_(rows), cols_(cols), data_(rows * cols, value) {}

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    T& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
    const T& operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

    T* row(std::size_t i) { return data_.data() + i * cols_; }
    const T* row(std::size_t i) const { return data_.data() + i * cols_; }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }

    void fill(T value) { std::fill(data_.begin(), data_.end(), value); }

    bool operator==(const Matrix& other) const {
        return rows_ == other.rows_ && cols_ == other.cols_ && data_ == other.data_;
    }

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<T> data_;
};

using MatrixF = Matrix<float>;
using MatrixD = Matrix<double>;

/// dot(a, b) over k elements with eight independent accumulators.
template <typename T>
inline T dot(const T* a, const T* b, std::size_t k) {
    T s0{}, s1{}, s2{}, s3{}, s4{}, s5{}, s6{}, s7{};
    std::size_t i = 0;
    for (; i + 8 <= k; i += 8) {
        s0 += a[i + 0] * b[i + 0];
        s1 += a[i + 1] * b[i + 1];
        s2 += a[i + 2] * b[i + 2];
        s3 += a[i + 3] * b[i + 3];
        s4 += a[i + 4] * b[i + 4];
        s5 += a[i + 5] * b[i + 5];
        s6 += a[i + 6] * b[i + 6];
        s7 += a[i + 7] * b[i + 7];
    }
    T s = ((s0 + s4) + (s1 + s5)) + ((s2 + s6) + (s3 + s7));
    for (; i < k; ++i) s += a[i] * b[i];
    return s;
}

/// out[m x n] = a[m x k] * b[n x k]^T. Rows of both operands are contiguous.
template <typename T>
inline void gemm_nt(const T* a, const T* b, T* out, std::size_t m, std::size_t n,
                    std::size_t k) {
    for (std::size_t i = 0; i < m; ++i) {
        const T* ai = a + i * k;
        T* oi = out + i * n;
        for (std::size_t j = 0; j < n; ++j) {
            oi[j] = dot(ai, b + j * k, k);
        }
    }
}

/// out[m x n] += a[m x k] * b[k x n] (row-axpy form).
template <typename T>
inline void gemm_nn_add(const T* a, const T* b, T* out, std::size_t m, std::size_t n,
                        std::size_t k) {
    for (std::size_t i = 0; i < m; ++i) {
        T* oi = out + i * n;
        const T* ai = a + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            const T v = ai[p];
            const T* bp = b + p * n;
            for (std::size_t j = 0; j < n; ++j) oi[j] += v * bp[j];
        }
    }
}

/// out[k x n] += a[m x k]^T * b[m x n] (row-axpy form).
template <typename T>
inline void gemm_tn_add(const T* a, const T* b, T* out, std::size_t m, std::size_t n,
                        std::size_t k) {
    for (std::size_t i = 0; i < m; ++i) {
        const T* ai = a + i * k;
        const T* bi = b + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const T v = ai[p];
            T* op = out + p * n;
            for (std::size_t j = 0; j < n; ++j) op[j] += v * bi[j];
        }
    }
}

}  // namespace cuts
