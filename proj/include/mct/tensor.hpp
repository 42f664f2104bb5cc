#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "mct/common.hpp"

namespace mct {

// Dense row-major tensor of 64-bit floats, rank 0 (scalar) through 2.
struct Tensor {
    std::vector<int64_t> shape;
    std::vector<double> data;

    Tensor() = default;

    Tensor(std::vector<int64_t> s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
        if (numel_of(shape) != static_cast<int64_t>(data.size()))
            throw ShapeError(strfmt("tensor: shape wants %lld values, got %zu",
                                    static_cast<long long>(numel_of(shape)), data.size()));
    }

    static int64_t numel_of(const std::vector<int64_t>& s) {
        int64_t n = 1;
        for (int64_t d : s) n *= d;
        return n;
    }

    static Tensor zeros(std::vector<int64_t> s) {
        int64_t n = numel_of(s);
        return Tensor(std::move(s), std::vector<double>(static_cast<size_t>(n), 0.0));
    }

    static Tensor full(std::vector<int64_t> s, double v) {
        int64_t n = numel_of(s);
        return Tensor(std::move(s), std::vector<double>(static_cast<size_t>(n), v));
    }

    static Tensor ones(std::vector<int64_t> s) { return full(std::move(s), 1.0); }

    static Tensor scalar(double v) { return Tensor({}, {v}); }

    int rank() const { return static_cast<int>(shape.size()); }
    int64_t numel() const { return static_cast<int64_t>(data.size()); }
    int64_t rows() const { return shape.at(0); }
    int64_t cols() const { return shape.at(1); }

    double& at(int64_t i) { return data[static_cast<size_t>(i)]; }
    double at(int64_t i) const { return data[static_cast<size_t>(i)]; }
    double& at(int64_t i, int64_t j) { return data[static_cast<size_t>(i * shape[1] + j)]; }
    double at(int64_t i, int64_t j) const { return data[static_cast<size_t>(i * shape[1] + j)]; }

    double item() const {
        if (numel() != 1) throw ShapeError(strfmt("item: tensor has %lld values", (long long)numel()));
        return data[0];
    }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    std::string shape_str() const {
        std::string s = "[";
        for (size_t i = 0; i < shape.size(); ++i) {
            if (i) s += ",";
            s += std::to_string(shape[i]);
        }
        return s + "]";
    }

    bool all_finite() const {
        for (double v : data)
            if (!std::isfinite(v)) return false;
        return true;
    }

    void check_finite(const char* where) const {
        if (!all_finite()) throw NumericError(strfmt("%s: non-finite value in tensor %s", where, shape_str().c_str()));
    }
};

// ---- numeric kernels shared by the tape and the no-tape fast paths ----

inline Tensor matmul_numeric(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.rows())
        throw ShapeError(strfmt("matmul: incompatible shapes %s x %s", a.shape_str().c_str(), b.shape_str().c_str()));
    const int64_t m = a.rows(), k = a.cols(), n = b.cols();
    Tensor out = Tensor::zeros({m, n});
    for (int64_t i = 0; i < m; ++i) {
        const double* arow = &a.data[static_cast<size_t>(i * k)];
        double* orow = &out.data[static_cast<size_t>(i * n)];
        for (int64_t kk = 0; kk < k; ++kk) {
            const double av = arow[kk];
            const double* brow = &b.data[static_cast<size_t>(kk * n)];
            for (int64_t j = 0; j < n; ++j) orow[j] += av * brow[j];
        }
    }
    return out;
}

inline Tensor transpose_numeric(const Tensor& a) {
    if (a.rank() != 2) throw ShapeError(strfmt("transpose: expected rank 2, got %s", a.shape_str().c_str()));
    Tensor out = Tensor::zeros({a.cols(), a.rows()});
    for (int64_t i = 0; i < a.rows(); ++i)
        for (int64_t j = 0; j < a.cols(); ++j) out.at(j, i) = a.at(i, j);
    return out;
}

// Row-wise log-softmax, numerically stable.
inline Tensor log_softmax_numeric(const Tensor& x) {
    if (x.rank() != 2) throw ShapeError(strfmt("log_softmax: expected rank 2, got %s", x.shape_str().c_str()));
    Tensor out = x;
    const int64_t m = x.rows(), n = x.cols();
    for (int64_t i = 0; i < m; ++i) {
        double mx = x.at(i, 0);
        for (int64_t j = 1; j < n; ++j) mx = std::max(mx, x.at(i, j));
        double acc = 0.0;
        for (int64_t j = 0; j < n; ++j) acc += std::exp(x.at(i, j) - mx);
        const double lse = mx + std::log(acc);
        for (int64_t j = 0; j < n; ++j) out.at(i, j) = x.at(i, j) - lse;
    }
    return out;
}

inline Tensor relu_numeric(const Tensor& x) {
    Tensor out = x;
    for (double& v : out.data) v = v > 0.0 ? v : 0.0;
    return out;
}

inline double dot(const std::vector<double>& a, const std::vector<double>& b) {
    double acc = 0.0;
    for (size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
    return acc;
}

inline double l2_norm(const std::vector<double>& a) { return std::sqrt(dot(a, a)); }

}  // namespace mct
