// Copyright 2026 the mnlab authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <string>
#include <vector>

#include "mnlab/common.hpp"

namespace mnlab {

/// Dense row-major tensor of up to 4 dims (batch, channels, H, W).
/// Precision is a template parameter: float for training, double for
/// gradient checks and oracles.
template <typename T>
struct TensorT {
    std::vector<int> shape;
    std::vector<T> v;

    TensorT() = default;
    explicit TensorT(std::vector<int> s) : shape(std::move(s)) {
        if (shape.empty() || shape.size() > 4)
            fail(ErrorCode::Shape, "tensor rank must be 1..4");
        for (int d : shape)
            if (d < 1) fail(ErrorCode::Shape, "tensor dims must be positive");
        v.assign(numel_of(shape), T(0));
    }

    static std::size_t numel_of(const std::vector<int>& s) {
        std::size_t n = 1;
        for (int d : s) n *= static_cast<std::size_t>(d);
        return n;
    }

    std::size_t numel() const { return v.size(); }
    int dim(std::size_t i) const { return i < shape.size() ? shape[i] : 1; }

    T* data() { return v.data(); }
    const T* data() const { return v.data(); }

    // 4-d accessor (n, c, h, w); lower-rank tensors use trailing dims of 1.
    T& at(int n, int c, int h, int w) {
        return v[((static_cast<std::size_t>(n) * dim(1) + c) * dim(2) + h) * dim(3) + w];
    }
    T at(int n, int c, int h, int w) const {
        return v[((static_cast<std::size_t>(n) * dim(1) + c) * dim(2) + h) * dim(3) + w];
    }
    // 2-d accessor (n, c).
    T& at(int n, int c) { return v[static_cast<std::size_t>(n) * dim(1) + c]; }
    T at(int n, int c) const { return v[static_cast<std::size_t>(n) * dim(1) + c]; }

    bool same_shape(const TensorT& o) const { return shape == o.shape; }

    std::string shape_str() const {
        std::string s = "[";
        for (std::size_t i = 0; i < shape.size(); ++i)
            s += (i ? "," : "") + std::to_string(shape[i]);
        return s + "]";
    }

    template <typename U>
    TensorT<U> cast() const {
        TensorT<U> o;
        o.shape = shape;
        o.v.resize(v.size());
        for (std::size_t i = 0; i < v.size(); ++i) o.v[i] = static_cast<U>(v[i]);
        return o;
    }
};

using TensorF = TensorT<float>;
using TensorD = TensorT<double>;

template <typename T>
void require_shape(const TensorT<T>& t, const std::vector<int>& shape, const std::string& what) {
    if (t.shape != shape) {
        TensorT<T> want;
        want.shape = shape;
        fail(ErrorCode::Shape, what + ": expected shape " + want.shape_str() + ", got " + t.shape_str());
    }
}

} // namespace mnlab
