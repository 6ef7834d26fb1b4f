// Licensed under the Apache License, Version 2.0 (the "License"); you
// may not use this file except in compliance with the License.  You
// may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or
// implied.  See the License for the specific language governing
// permissions and limitations under the License.

#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <initializer_list>
#include <string>
#include <vector>

#include "ive/errors.hpp"
#include "ive/rng.hpp"

namespace ive {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& s) {
    std::size_t n = 1;
    for (std::size_t e : s) n *= e;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

/// Row-major strides; stride of the last axis is 1.
inline Shape strides_of(const Shape& s) {
    Shape st(s.size(), 1);
    for (std::size_t i = s.size(); i-- > 1;) st[i - 1] = st[i] * s[i];
    return st;
}

/// Dense row-major tensor. Pure value type: copying copies the buffer.
/// Gradient participation lives on the tape, not here.
template <class S>
struct Tensor {
    Shape shape;
    std::vector<S> data;

    Tensor() : shape{}, data(1, S(0)) {}  // rank-0 scalar
    explicit Tensor(Shape sh) : shape(std::move(sh)), data(numel(shape), S(0)) {}
    Tensor(Shape sh, std::vector<S> d) : shape(std::move(sh)), data(std::move(d)) {
        if (numel(shape) != data.size())
            throw ShapeMismatch("tensor " + shape_str(shape) + " vs " +
                                std::to_string(data.size()) + " scalars");
    }

    static Tensor zeros(Shape sh) { return Tensor(std::move(sh)); }
    static Tensor full(Shape sh, S v) {
        Tensor t(std::move(sh));
        for (auto& x : t.data) x = v;
        return t;
    }
    static Tensor ones(Shape sh) { return full(std::move(sh), S(1)); }
    static Tensor scalar(S v) {
        Tensor t;
        t.data[0] = v;
        return t;
    }
    static Tensor arange(Shape sh) {
        Tensor t(std::move(sh));
        for (std::size_t i = 0; i < t.data.size(); ++i) t.data[i] = static_cast<S>(i);
        return t;
    }

    std::size_t size() const { return data.size(); }
    std::size_t rank() const { return shape.size(); }
    S& operator[](std::size_t i) { return data[i]; }
    const S& operator[](std::size_t i) const { return data[i]; }

    S& at(std::initializer_list<std::size_t> idx) {
        return data[flat_index(idx)];
    }
    const S& at(std::initializer_list<std::size_t> idx) const {
        return data[flat_index(idx)];
    }

    std::size_t flat_index(std::initializer_list<std::size_t> idx) const {
        Shape st = strides_of(shape);
        std::size_t f = 0, i = 0;
        for (std::size_t v : idx) f += v * st[i++];
        return f;
    }

    bool all_finite() const {
        for (S v : data)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }

    template <class T>
    Tensor<T> cast() const {
        Tensor<T> out(shape);
        for (std::size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<T>(data[i]);
        return out;
    }
};

template <class S>
bool same_shape(const Tensor<S>& a, const Tensor<S>& b) {
    return a.shape == b.shape;
}

template <class S>
bool bitwise_equal(const Tensor<S>& a, const Tensor<S>& b) {
    if (a.shape != b.shape) return false;
    for (std::size_t i = 0; i < a.size(); ++i) {
        // compare representations, not values, so ±0 and NaN are distinguished
        if (std::memcmp(&a.data[i], &b.data[i], sizeof(S)) != 0) return false;
    }
    return true;
}

template <class S>
double max_abs_diff(const Tensor<S>& a, const Tensor<S>& b) {
    if (a.shape != b.shape)
        throw ShapeMismatch("max_abs_diff " + shape_str(a.shape) + " vs " + shape_str(b.shape));
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        m = std::max(m, std::abs(static_cast<double>(a.data[i]) - static_cast<double>(b.data[i])));
    return m;
}

template <class S>
double max_abs(const Tensor<S>& a) {
    double m = 0.0;
    for (S v : a.data) m = std::max(m, std::abs(static_cast<double>(v)));
    return m;
}

/// C[m,n] += A[m,k] * B[k,n].  The k-accumulation order for a given output
/// element is fixed and independent of m and n, which keeps per-row results
/// bitwise stable under batch composition changes.
template <class S>
void gemm_acc(const S* a, const S* b, S* c, std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const S* arow = a + i * k;
        S* crow = c + i * n;
        for (std::size_t kk = 0; kk < k; ++kk) {
            const S av = arow[kk];
            const S* brow = b + kk * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

/// out[n,m] = in[m,n]^T
template <class S>
void transpose2d(const S* in, S* out, std::size_t m, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out[j * m + i] = in[i * n + j];
}

template <class S>
Tensor<S> random_normal(Shape sh, Rng& rng, double stddev = 1.0) {
    Tensor<S> t(std::move(sh));
    for (auto& v : t.data) v = static_cast<S>(rng.normal() * stddev);
    return t;
}

template <class S>
Tensor<S> random_uniform(Shape sh, Rng& rng, double lo, double hi) {
    Tensor<S> t(std::move(sh));
    for (auto& v : t.data) v = static_cast<S>(lo + (hi - lo) * rng.u01());
    return t;
}

}  // namespace ive
