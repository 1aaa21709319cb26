#pragma once

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstring>
#include <vector>

#include "dubengine/common.hpp"

namespace dubengine {

// Dense row-major matrix. Everything in the engine is 2-D: [time x channels].
template <typename T>
struct Mat {
    int rows = 0;
    int cols = 0;
    std::vector<T> data;

    Mat() = default;
    Mat(int r, int c) : rows(r), cols(c), data(static_cast<size_t>(r) * c, T(0)) {}

    static Mat zeros(int r, int c) { return Mat(r, c); }

    T* row(int r) { return data.data() + static_cast<size_t>(r) * cols; }
    const T* row(int r) const { return data.data() + static_cast<size_t>(r) * cols; }

    T& at(int r, int c) { return data[static_cast<size_t>(r) * cols + c]; }
    T at(int r, int c) const { return data[static_cast<size_t>(r) * cols + c]; }

    size_t size() const { return data.size(); }
    bool empty() const { return data.empty(); }

    void fill(T v) { std::fill(data.begin(), data.end(), v); }
    void zero() { fill(T(0)); }

    Mat slice_rows(int lo, int hi) const {
        assert(lo >= 0 && hi <= rows && lo <= hi);
        Mat out(hi - lo, cols);
        std::memcpy(out.data.data(), row(lo), static_cast<size_t>(hi - lo) * cols * sizeof(T));
        return out;
    }

    void set_rows(int lo, const Mat& src) {
        assert(lo >= 0 && lo + src.rows <= rows && src.cols == cols);
        std::memcpy(row(lo), src.data.data(), src.size() * sizeof(T));
    }

    bool same_shape(const Mat& o) const { return rows == o.rows && cols == o.cols; }

    bool all_finite() const {
        for (T v : data)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }

    template <typename U>
    Mat<U> cast() const {
        Mat<U> out(rows, cols);
        for (size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
        return out;
    }
};

template <typename T>
inline T dot(const T* a, const T* b, int n) {
    T s = T(0);
    for (int i = 0; i < n; ++i) s += a[i] * b[i];
    return s;
}

template <typename T>
inline void axpy(T alpha, const T* x, T* y, int n) {
    for (int i = 0; i < n; ++i) y[i] += alpha * x[i];
}

template <typename T>
inline double l2_diff(const Mat<T>& a, const Mat<T>& b) {
    assert(a.same_shape(b));
    double s = 0;
    for (size_t i = 0; i < a.data.size(); ++i) {
        double d = static_cast<double>(a.data[i]) - static_cast<double>(b.data[i]);
        s += d * d;
    }
    return std::sqrt(s);
}

}  // namespace dubengine
