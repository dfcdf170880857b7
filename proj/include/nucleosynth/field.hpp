// Copyright (c) 2026 nucleosynth contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <initializer_list>
#include <stdexcept>
#include <string>
#include <vector>

namespace nucleo {

/// Dense row-major n-dimensional array. `Field` (float) is the carrier for
/// all images, maps and parameters; the double instantiation backs the
/// 64-bit gradient-check mode.
template <typename T>
struct TensorT {
    std::vector<int64_t> shape;
    std::vector<T> data;

    TensorT() = default;
    explicit TensorT(std::vector<int64_t> s) : shape(std::move(s)) {
        data.assign(static_cast<size_t>(numel_of(shape)), T(0));
    }
    TensorT(std::vector<int64_t> s, std::vector<T> d) : shape(std::move(s)), data(std::move(d)) {
        if (static_cast<int64_t>(data.size()) != numel_of(shape))
            throw std::invalid_argument("TensorT: data length does not match shape");
    }

    static int64_t numel_of(const std::vector<int64_t>& s) {
        int64_t n = 1;
        for (int64_t e : s) {
            if (e < 0) throw std::invalid_argument("TensorT: negative extent");
            n *= e;
        }
        return n;
    }

    int64_t numel() const { return static_cast<int64_t>(data.size()); }
    int rank() const { return static_cast<int>(shape.size()); }

    T& operator[](size_t i) { return data[i]; }
    const T& operator[](size_t i) const { return data[i]; }

    // 2-d / 3-d accessors for the common [H,W] and [H,W,C] / [C,H,W] cases.
    T& at2(int64_t i, int64_t j) { return data[static_cast<size_t>(i * shape[1] + j)]; }
    const T& at2(int64_t i, int64_t j) const { return data[static_cast<size_t>(i * shape[1] + j)]; }
    T& at3(int64_t i, int64_t j, int64_t k) {
        return data[static_cast<size_t>((i * shape[1] + j) * shape[2] + k)];
    }
    const T& at3(int64_t i, int64_t j, int64_t k) const {
        return data[static_cast<size_t>((i * shape[1] + j) * shape[2] + k)];
    }

    bool same_shape(const TensorT& o) const { return shape == o.shape; }
};

using Field = TensorT<float>;
using Field64 = TensorT<double>;

/// Throws if any value is NaN/Inf. `what` names the offending tensor.
void require_finite(const Field& f, const std::string& what);
bool all_finite(const Field& f);

std::string shape_str(const std::vector<int64_t>& shape);

/// Per-pixel class-id grid, H x W, 0 = background.
struct LabelGrid {
    int64_t h = 0, w = 0;
    std::vector<uint8_t> ids;

    LabelGrid() = default;
    LabelGrid(int64_t h_, int64_t w_) : h(h_), w(w_), ids(static_cast<size_t>(h_ * w_), 0) {}
    uint8_t& at(int64_t r, int64_t c) { return ids[static_cast<size_t>(r * w + c)]; }
    uint8_t at(int64_t r, int64_t c) const { return ids[static_cast<size_t>(r * w + c)]; }
    bool operator==(const LabelGrid&) const = default;
};

/// Per-pixel instance-id grid, H x W, 0 = background.
struct InstanceGrid {
    int64_t h = 0, w = 0;
    std::vector<uint16_t> ids;

    InstanceGrid() = default;
    InstanceGrid(int64_t h_, int64_t w_) : h(h_), w(w_), ids(static_cast<size_t>(h_ * w_), 0) {}
    uint16_t& at(int64_t r, int64_t c) { return ids[static_cast<size_t>(r * w + c)]; }
    uint16_t at(int64_t r, int64_t c) const { return ids[static_cast<size_t>(r * w + c)]; }
    uint16_t max_id() const {
        uint16_t m = 0;
        for (uint16_t v : ids) m = std::max(m, v);
        return m;
    }
    bool operator==(const InstanceGrid&) const = default;
};

}  // namespace nucleo
