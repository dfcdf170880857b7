// Copyright (c) 2026 nucleosynth contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <map>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "nucleosynth/checkpoint.hpp"
#include "nucleosynth/common.hpp"
#include "nucleosynth/field.hpp"
#include "nucleosynth/random.hpp"

namespace nucleo {

/// Named parameter table with slot-indexed access. Slots are assigned in
/// registration order, which also fixes gradient-reduction order.
template <typename T>
struct ParamStore {
    std::vector<std::string> names;
    std::vector<TensorT<T>> values;
    std::map<std::string, int> index;

    int add(const std::string& name, TensorT<T> init) {
        if (index.count(name)) throw std::invalid_argument("ParamStore: duplicate " + name);
        int slot = static_cast<int>(values.size());
        names.push_back(name);
        values.push_back(std::move(init));
        index.emplace(name, slot);
        return slot;
    }

    int64_t total_params() const {
        int64_t n = 0;
        for (const auto& v : values) n += v.numel();
        return n;
    }

    Checkpoint to_checkpoint() const
        requires std::is_same_v<T, float>
    {
        Checkpoint ck;
        for (size_t i = 0; i < values.size(); ++i) ck.tensors.emplace(names[i], values[i]);
        return ck;
    }

    /// Name-matched load; unknown, missing, or misshapen tensors are errors.
    void load(const Checkpoint& ck)
        requires std::is_same_v<T, float>
    {
        for (const auto& [name, f] : ck.tensors)
            if (!index.count(name))
                throw std::runtime_error("ParamStore::load: unknown tensor " + name);
        for (size_t i = 0; i < names.size(); ++i) {
            auto it = ck.tensors.find(names[i]);
            if (it == ck.tensors.end())
                throw std::runtime_error("ParamStore::load: missing tensor " + names[i]);
            if (it->second.shape != values[i].shape)
                throw std::runtime_error("ParamStore::load: shape mismatch for " + names[i]);
            values[i] = it->second;
        }
    }

    uint64_t content_hash() const {
        uint64_t h = fnv1a_init();
        for (size_t i = 0; i < values.size(); ++i) {
            h = fnv1a_bytes(h, names[i].data(), names[i].size());
            h = fnv1a_bytes(h, values[i].data.data(), values[i].data.size() * sizeof(T));
        }
        return h;
    }
};

/// Per-slot gradient accumulator aligned with a ParamStore.
template <typename T>
struct ParamGrads {
    std::vector<TensorT<T>> grads;

    explicit ParamGrads(const ParamStore<T>& store) {
        grads.reserve(store.values.size());
        for (const auto& v : store.values) grads.emplace_back(v.shape);
    }
    void zero() {
        for (auto& g : grads)
            std::fill(g.data.begin(), g.data.end(), T(0));
    }
    void add_scaled(const ParamGrads& o, T scale) {
        for (size_t i = 0; i < grads.size(); ++i)
            for (size_t j = 0; j < grads[i].data.size(); ++j)
                grads[i].data[j] += scale * o.grads[i].data[j];
    }
};

namespace detail {

template <typename T>
using EMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using EMap = Eigen::Map<EMat<T>>;
template <typename T>
using ECMap = Eigen::Map<const EMat<T>>;

// C (M x N) = or += A (M x K) * B (K x N), row-major contiguous.
template <typename T>
void mm_nn(const T* a, const T* b, T* c, int64_t m, int64_t k, int64_t n, bool accumulate) {
    ECMap<T> A(a, m, k);
    ECMap<T> B(b, k, n);
    EMap<T> C(c, m, n);
    if (accumulate)
        C.noalias() += A * B;
    else
        C.noalias() = A * B;
}

// C (M x N) = or += A (K x M)^T * B (K x N).
template <typename T>
void mm_tn(const T* a, const T* b, T* c, int64_t m, int64_t k, int64_t n, bool accumulate) {
    ECMap<T> A(a, k, m);
    ECMap<T> B(b, k, n);
    EMap<T> C(c, m, n);
    if (accumulate)
        C.noalias() += A.transpose() * B;
    else
        C.noalias() = A.transpose() * B;
}

// C (M x N) = or += A (M x K) * B (N x K)^T.
template <typename T>
void mm_nt(const T* a, const T* b, T* c, int64_t m, int64_t k, int64_t n, bool accumulate) {
    ECMap<T> A(a, m, k);
    ECMap<T> B(b, n, k);
    EMap<T> C(c, m, n);
    if (accumulate)
        C.noalias() += A * B.transpose();
    else
        C.noalias() = A * B.transpose();
}

}  // namespace detail

/// Reverse-mode tape over TensorT values. Each forward op appends a node;
/// backward() walks nodes in reverse creation order. A tape serves a single
/// forward/backward pass and must not outlive its parameter stores.
template <typename T>
class Tape {
  public:
    explicit Tape(bool recording = true) : recording_(recording) {}

    int input(TensorT<T> v) {
        nodes_.push_back(Node{std::move(v), nullptr, {}, nullptr, false, -1});
        return last();
    }
    /// Leaf viewing a trainable parameter; gradients flow to `slot`.
    int param(const TensorT<T>* p, int slot) {
        nodes_.push_back(Node{{}, p, {}, nullptr, recording_, slot});
        return last();
    }
    /// Leaf viewing an external tensor with no gradient (frozen weights).
    int frozen(const TensorT<T>* p) {
        nodes_.push_back(Node{{}, p, {}, nullptr, false, -1});
        return last();
    }

    const TensorT<T>& val(int id) const {
        const Node& n = nodes_[static_cast<size_t>(id)];
        return n.external ? *n.external : n.value;
    }

    TensorT<T>& grad(int id) {
        Node& n = nodes_[static_cast<size_t>(id)];
        if (n.grad.data.empty()) n.grad = TensorT<T>(val(id).shape);
        return n.grad;
    }

    bool wants_grad(int id) const { return nodes_[static_cast<size_t>(id)].needs_grad; }

    /// Seeds d(loss)/d(loss) = 1 and accumulates parameter gradients into
    /// `out` (slot-aligned, scaled by `scale`).
    void backward(int loss_id, ParamGrads<T>& out, T scale = T(1)) {
        if (!recording_) throw std::logic_error("Tape::backward on non-recording tape");
        if (val(loss_id).numel() != 1)
            throw std::invalid_argument("Tape::backward: loss must be scalar");
        grad(loss_id).data[0] = T(1);
        for (int id = loss_id; id >= 0; --id) {
            Node& n = nodes_[static_cast<size_t>(id)];
            if (!n.needs_grad || n.grad.data.empty() || !n.back) continue;
            n.back();
        }
        for (auto& n : nodes_) {
            if (n.param_slot >= 0 && !n.grad.data.empty()) {
                auto& dst = out.grads[static_cast<size_t>(n.param_slot)].data;
                for (size_t i = 0; i < dst.size(); ++i) dst[i] += scale * n.grad.data[i];
            }
        }
    }

    // ----- elementwise -----

    int add(int a, int b) {
        const auto& va = val(a);
        const auto& vb = val(b);
        require_same(va, vb, "add");
        TensorT<T> out(va.shape);
        for (size_t i = 0; i < out.data.size(); ++i) out.data[i] = va.data[i] + vb.data[i];
        return unary_or_binary(std::move(out), a, b, [this](int id, int a_, int b_) {
            const auto& g = grad(id);
            if (wants_grad(a_)) axpy(grad(a_), g, T(1));
            if (wants_grad(b_)) axpy(grad(b_), g, T(1));
        });
    }

    int sub(int a, int b) {
        const auto& va = val(a);
        const auto& vb = val(b);
        require_same(va, vb, "sub");
        TensorT<T> out(va.shape);
        for (size_t i = 0; i < out.data.size(); ++i) out.data[i] = va.data[i] - vb.data[i];
        return unary_or_binary(std::move(out), a, b, [this](int id, int a_, int b_) {
            const auto& g = grad(id);
            if (wants_grad(a_)) axpy(grad(a_), g, T(1));
            if (wants_grad(b_)) axpy(grad(b_), g, T(-1));
        });
    }

    int mul(int a, int b) {
        const auto& va = val(a);
        const auto& vb = val(b);
        require_same(va, vb, "mul");
        TensorT<T> out(va.shape);
        for (size_t i = 0; i < out.data.size(); ++i) out.data[i] = va.data[i] * vb.data[i];
        return unary_or_binary(std::move(out), a, b, [this](int id, int a_, int b_) {
            const auto& g = grad(id);
            if (wants_grad(a_)) {
                auto& ga = grad(a_);
                const auto& vb_ = val(b_);
                for (size_t i = 0; i < ga.data.size(); ++i) ga.data[i] += g.data[i] * vb_.data[i];
            }
            if (wants_grad(b_)) {
                auto& gb = grad(b_);
                const auto& va_ = val(a_);
                for (size_t i = 0; i < gb.data.size(); ++i) gb.data[i] += g.data[i] * va_.data[i];
            }
        });
    }

    int scale(int a, T c) {
        const auto& va = val(a);
        TensorT<T> out(va.shape);
        for (size_t i = 0; i < out.data.size(); ++i) out.data[i] = c * va.data[i];
        return unary(std::move(out), a, [this, c](int id, int a_) {
            axpy(grad(a_), grad(id), c);
        });
    }

    /// y = a * x + b with scalar constants.
    int affine_const(int x, T a, T b) {
        const auto& vx = val(x);
        TensorT<T> out(vx.shape);
        for (size_t i = 0; i < out.data.size(); ++i) out.data[i] = a * vx.data[i] + b;
        return unary(std::move(out), x, [this, a](int id, int x_) {
            axpy(grad(x_), grad(id), a);
        });
    }

    int silu(int x) {
        const auto& vx = val(x);
        TensorT<T> out(vx.shape);
        for (size_t i = 0; i < out.data.size(); ++i) {
            T s = sigmoid(vx.data[i]);
            out.data[i] = vx.data[i] * s;
        }
        return unary(std::move(out), x, [this](int id, int x_) {
            const auto& g = grad(id);
            const auto& vx_ = val(x_);
            auto& gx = grad(x_);
            for (size_t i = 0; i < gx.data.size(); ++i) {
                T s = sigmoid(vx_.data[i]);
                gx.data[i] += g.data[i] * (s + vx_.data[i] * s * (T(1) - s));
            }
        });
    }

    /// y = log(max(x, floor)); derivative is 0 where the floor is active.
    int log_floor(int x, T floor) {
        const auto& vx = val(x);
        TensorT<T> out(vx.shape);
        for (size_t i = 0; i < out.data.size(); ++i)
            out.data[i] = std::log(std::max(vx.data[i], floor));
        return unary(std::move(out), x, [this, floor](int id, int x_) {
            const auto& g = grad(id);
            const auto& vx_ = val(x_);
            auto& gx = grad(x_);
            for (size_t i = 0; i < gx.data.size(); ++i)
                if (vx_.data[i] > floor) gx.data[i] += g.data[i] / vx_.data[i];
        });
    }

    // ----- reductions / broadcasts -----

    /// Scalar sum of w[i] * x[i] with constant weights.
    int weighted_sum(int x, TensorT<T> weights) {
        const auto& vx = val(x);
        require_same(vx, weights, "weighted_sum");
        auto w = std::make_shared<TensorT<T>>(std::move(weights));
        TensorT<T> out({1});
        T acc = T(0);
        for (size_t i = 0; i < vx.data.size(); ++i) acc += w->data[i] * vx.data[i];
        out.data[0] = acc;
        return unary(std::move(out), x, [this, w](int id, int x_) {
            T g = grad(id).data[0];
            auto& gx = grad(x_);
            for (size_t i = 0; i < gx.data.size(); ++i) gx.data[i] += g * w->data[i];
        });
    }

    /// Scalar mean of (x - target)^2 with a constant target.
    int mse_to_const(int x, TensorT<T> target) {
        const auto& vx = val(x);
        require_same(vx, target, "mse_to_const");
        auto tgt = std::make_shared<TensorT<T>>(std::move(target));
        const T inv_n = T(1) / static_cast<T>(vx.numel());
        TensorT<T> out({1});
        T acc = T(0);
        for (size_t i = 0; i < vx.data.size(); ++i) {
            T d = vx.data[i] - tgt->data[i];
            acc += d * d;
        }
        out.data[0] = acc * inv_n;
        return unary(std::move(out), x, [this, tgt, inv_n](int id, int x_) {
            T g = grad(id).data[0];
            const auto& vx_ = val(x_);
            auto& gx = grad(x_);
            for (size_t i = 0; i < gx.data.size(); ++i)
                gx.data[i] += g * T(2) * inv_n * (vx_.data[i] - tgt->data[i]);
        });
    }

    int add_scalar_nodes(int a, int b) {  // both scalar [1]
        return add(a, b);
    }

    /// Sum over the channel axis of [C,H,W] -> [1,H,W].
    int channel_sum(int x) {
        const auto& vx = val(x);
        const int64_t c = vx.shape[0], hw = vx.shape[1] * vx.shape[2];
        TensorT<T> out({1, vx.shape[1], vx.shape[2]});
        for (int64_t j = 0; j < hw; ++j) {
            T acc = T(0);
            for (int64_t ch = 0; ch < c; ++ch) acc += vx.data[static_cast<size_t>(ch * hw + j)];
            out.data[static_cast<size_t>(j)] = acc;
        }
        return unary(std::move(out), x, [this](int id, int x_) {
            const auto& g = grad(id);
            auto& gx = grad(x_);
            const int64_t c = val(x_).shape[0], hw = g.numel();
            for (int64_t ch = 0; ch < c; ++ch)
                for (int64_t j = 0; j < hw; ++j)
                    gx.data[static_cast<size_t>(ch * hw + j)] += g.data[static_cast<size_t>(j)];
        });
    }

    /// y[c,h,w] = x[c,h,w] / d[0,h,w].
    int div_broadcast(int x, int d) {
        const auto& vx = val(x);
        const auto& vd = val(d);
        const int64_t c = vx.shape[0], hw = vx.shape[1] * vx.shape[2];
        TensorT<T> out(vx.shape);
        for (int64_t ch = 0; ch < c; ++ch)
            for (int64_t j = 0; j < hw; ++j)
                out.data[static_cast<size_t>(ch * hw + j)] =
                    vx.data[static_cast<size_t>(ch * hw + j)] / vd.data[static_cast<size_t>(j)];
        return unary_or_binary(std::move(out), x, d, [this](int id, int x_, int d_) {
            const auto& g = grad(id);
            const auto& vx_ = val(x_);
            const auto& vd_ = val(d_);
            const int64_t c = vx_.shape[0], hw = vx_.shape[1] * vx_.shape[2];
            if (wants_grad(x_)) {
                auto& gx = grad(x_);
                for (int64_t ch = 0; ch < c; ++ch)
                    for (int64_t j = 0; j < hw; ++j)
                        gx.data[static_cast<size_t>(ch * hw + j)] +=
                            g.data[static_cast<size_t>(ch * hw + j)] /
                            vd_.data[static_cast<size_t>(j)];
            }
            if (wants_grad(d_)) {
                auto& gd = grad(d_);
                for (int64_t ch = 0; ch < c; ++ch)
                    for (int64_t j = 0; j < hw; ++j) {
                        T dv = vd_.data[static_cast<size_t>(j)];
                        gd.data[static_cast<size_t>(j)] -=
                            g.data[static_cast<size_t>(ch * hw + j)] *
                            vx_.data[static_cast<size_t>(ch * hw + j)] / (dv * dv);
                    }
            }
        });
    }

    /// Per-pixel softmax over the channel axis of [C,H,W].
    int channel_softmax(int x) {
        const auto& vx = val(x);
        const int64_t c = vx.shape[0], hw = vx.shape[1] * vx.shape[2];
        TensorT<T> out(vx.shape);
        for (int64_t j = 0; j < hw; ++j) {
            T m = vx.data[static_cast<size_t>(j)];
            for (int64_t ch = 1; ch < c; ++ch)
                m = std::max(m, vx.data[static_cast<size_t>(ch * hw + j)]);
            T sum = T(0);
            for (int64_t ch = 0; ch < c; ++ch) {
                T e = std::exp(vx.data[static_cast<size_t>(ch * hw + j)] - m);
                out.data[static_cast<size_t>(ch * hw + j)] = e;
                sum += e;
            }
            for (int64_t ch = 0; ch < c; ++ch) out.data[static_cast<size_t>(ch * hw + j)] /= sum;
        }
        int out_id = unary(std::move(out), x, [this](int id, int x_) {
            const auto& g = grad(id);
            const auto& p = val(id);
            auto& gx = grad(x_);
            const int64_t c = p.shape[0], hw = p.shape[1] * p.shape[2];
            for (int64_t j = 0; j < hw; ++j) {
                T dot = T(0);
                for (int64_t ch = 0; ch < c; ++ch)
                    dot += g.data[static_cast<size_t>(ch * hw + j)] *
                           p.data[static_cast<size_t>(ch * hw + j)];
                for (int64_t ch = 0; ch < c; ++ch) {
                    size_t idx = static_cast<size_t>(ch * hw + j);
                    gx.data[idx] += p.data[idx] * (g.data[idx] - dot);
                }
            }
        });
        return out_id;
    }

    // ----- shape ops -----

    int concat_ch(int a, int b) {
        const auto& va = val(a);
        const auto& vb = val(b);
        if (va.shape[1] != vb.shape[1] || va.shape[2] != vb.shape[2])
            throw std::invalid_argument("concat_ch: spatial mismatch");
        TensorT<T> out({va.shape[0] + vb.shape[0], va.shape[1], va.shape[2]});
        std::copy(va.data.begin(), va.data.end(), out.data.begin());
        std::copy(vb.data.begin(), vb.data.end(), out.data.begin() + va.numel());
        return unary_or_binary(std::move(out), a, b, [this](int id, int a_, int b_) {
            const auto& g = grad(id);
            const int64_t na = val(a_).numel();
            if (wants_grad(a_)) {
                auto& ga = grad(a_);
                for (int64_t i = 0; i < na; ++i)
                    ga.data[static_cast<size_t>(i)] += g.data[static_cast<size_t>(i)];
            }
            if (wants_grad(b_)) {
                auto& gb = grad(b_);
                for (size_t i = 0; i < gb.data.size(); ++i)
                    gb.data[i] += g.data[static_cast<size_t>(na) + i];
            }
        });
    }

    int slice_ch(int x, int64_t from, int64_t to) {
        const auto& vx = val(x);
        const int64_t hw = vx.shape[1] * vx.shape[2];
        TensorT<T> out({to - from, vx.shape[1], vx.shape[2]});
        std::copy(vx.data.begin() + from * hw, vx.data.begin() + to * hw, out.data.begin());
        return unary(std::move(out), x, [this, from, hw](int id, int x_) {
            const auto& g = grad(id);
            auto& gx = grad(x_);
            for (size_t i = 0; i < g.data.size(); ++i)
                gx.data[static_cast<size_t>(from * hw) + i] += g.data[i];
        });
    }

    /// Nearest-neighbor 2x upsampling of [C,H,W].
    int upsample2(int x) {
        const auto& vx = val(x);
        const int64_t c = vx.shape[0], h = vx.shape[1], w = vx.shape[2];
        TensorT<T> out({c, 2 * h, 2 * w});
        for (int64_t ch = 0; ch < c; ++ch)
            for (int64_t r = 0; r < h; ++r)
                for (int64_t cc = 0; cc < w; ++cc) {
                    T v = vx.data[static_cast<size_t>((ch * h + r) * w + cc)];
                    for (int dr = 0; dr < 2; ++dr)
                        for (int dc = 0; dc < 2; ++dc)
                            out.data[static_cast<size_t>(((ch * 2 * h) + 2 * r + dr) * 2 * w +
                                                         2 * cc + dc)] = v;
                }
        return unary(std::move(out), x, [this](int id, int x_) {
            const auto& g = grad(id);
            auto& gx = grad(x_);
            const int64_t c = gx.shape[0], h = gx.shape[1], w = gx.shape[2];
            for (int64_t ch = 0; ch < c; ++ch)
                for (int64_t r = 0; r < h; ++r)
                    for (int64_t cc = 0; cc < w; ++cc) {
                        T acc = T(0);
                        for (int dr = 0; dr < 2; ++dr)
                            for (int dc = 0; dc < 2; ++dc)
                                acc += g.data[static_cast<size_t>(((ch * 2 * h) + 2 * r + dr) *
                                                                      2 * w +
                                                                  2 * cc + dc)];
                        gx.data[static_cast<size_t>((ch * h + r) * w + cc)] += acc;
                    }
        });
    }

    // ----- linear algebra layers -----

    /// y = W x + b; x [N], W [M,N], b [M].
    int linear(int x, int w, int b) {
        const auto& vx = val(x);
        const auto& vw = val(w);
        const auto& vb = val(b);
        const int64_t m = vw.shape[0], n = vw.shape[1];
        if (vx.numel() != n || vb.numel() != m)
            throw std::invalid_argument("linear: shape mismatch");
        TensorT<T> out({m});
        detail::mm_nn(vw.data.data(), vx.data.data(), out.data.data(), m, n, 1, false);
        for (int64_t i = 0; i < m; ++i) out.data[static_cast<size_t>(i)] += vb.data[static_cast<size_t>(i)];
        return ternary(std::move(out), x, w, b, [this](int id, int x_, int w_, int b_) {
            const auto& g = grad(id);
            const auto& vx_ = val(x_);
            const auto& vw_ = val(w_);
            const int64_t m = vw_.shape[0], n = vw_.shape[1];
            if (wants_grad(x_))
                detail::mm_tn(vw_.data.data(), g.data.data(), grad(x_).data.data(), n, m, 1, true);
            if (wants_grad(w_))
                detail::mm_nt(g.data.data(), vx_.data.data(), grad(w_).data.data(), m, 1, n, true);
            if (wants_grad(b_)) axpy(grad(b_), g, T(1));
        });
    }

    /// 2-d convolution over [Cin,H,W] with kernel 3 (pad 1) or 1 (pad 0) and
    /// stride 1 or 2. W is [Cout, Cin*k*k], b is [Cout].
    int conv2d(int x, int w, int b, int ksize, int stride) {
        const auto& vx = val(x);
        const auto& vw = val(w);
        const auto& vb = val(b);
        if (ksize != 1 && ksize != 3) throw std::invalid_argument("conv2d: kernel must be 1 or 3");
        const int64_t cin = vx.shape[0], h = vx.shape[1], wd = vx.shape[2];
        const int64_t cout = vw.shape[0];
        if (vw.shape[1] != cin * ksize * ksize)
            throw std::invalid_argument("conv2d: weight shape mismatch");
        if (vb.numel() != cout) throw std::invalid_argument("conv2d: bias shape mismatch");
        const int pad = ksize == 3 ? 1 : 0;
        const int64_t ho = (h + 2 * pad - ksize) / stride + 1;
        const int64_t wo = (wd + 2 * pad - ksize) / stride + 1;

        std::shared_ptr<std::vector<T>> cols;
        const T* rhs;
        if (ksize == 1 && stride == 1) {
            rhs = vx.data.data();  // [Cin, HW] already
        } else {
            cols = std::make_shared<std::vector<T>>(
                static_cast<size_t>(cin * ksize * ksize * ho * wo));
            im2col(vx.data.data(), cin, h, wd, ksize, stride, pad, ho, wo, cols->data());
            rhs = cols->data();
        }
        TensorT<T> out({cout, ho, wo});
        detail::mm_nn(vw.data.data(), rhs, out.data.data(), cout, cin * ksize * ksize, ho * wo,
                      false);
        for (int64_t co = 0; co < cout; ++co) {
            T bias = vb.data[static_cast<size_t>(co)];
            T* row = out.data.data() + co * ho * wo;
            for (int64_t j = 0; j < ho * wo; ++j) row[j] += bias;
        }
        return ternary(std::move(out), x, w, b,
                       [this, cols, ksize, stride, pad, ho, wo](int id, int x_, int w_, int b_) {
            const auto& g = grad(id);
            const auto& vx_ = val(x_);
            const auto& vw_ = val(w_);
            const int64_t cin = vx_.shape[0], h = vx_.shape[1], wd = vx_.shape[2];
            const int64_t cout = vw_.shape[0];
            const int64_t kk = cin * ksize * ksize;
            const T* rhs = (ksize == 1 && stride == 1) ? vx_.data.data() : cols->data();
            if (wants_grad(w_))
                detail::mm_nt(g.data.data(), rhs, grad(w_).data.data(), cout, ho * wo, kk, true);
            if (wants_grad(b_)) {
                auto& gb = grad(b_);
                for (int64_t co = 0; co < cout; ++co) {
                    T acc = T(0);
                    const T* row = g.data.data() + co * ho * wo;
                    for (int64_t j = 0; j < ho * wo; ++j) acc += row[j];
                    gb.data[static_cast<size_t>(co)] += acc;
                }
            }
            if (wants_grad(x_)) {
                if (ksize == 1 && stride == 1) {
                    detail::mm_tn(vw_.data.data(), g.data.data(), grad(x_).data.data(), kk, cout,
                                  ho * wo, true);
                } else {
                    std::vector<T> dcols(static_cast<size_t>(kk * ho * wo));
                    detail::mm_tn(vw_.data.data(), g.data.data(), dcols.data(), kk, cout, ho * wo,
                                  false);
                    col2im(dcols.data(), cin, h, wd, ksize, stride, pad, ho, wo,
                           grad(x_).data.data());
                }
            }
        });
    }

    /// GroupNorm over [C,H,W] with per-channel gamma/beta.
    int group_norm(int x, int gamma, int beta, int groups, T eps = T(1e-5)) {
        const auto& vx = val(x);
        const int64_t c = vx.shape[0], hw = vx.shape[1] * vx.shape[2];
        if (c % groups != 0) throw std::invalid_argument("group_norm: C % groups != 0");
        const int64_t cg = c / groups;
        const auto& vg = val(gamma);
        const auto& vb = val(beta);
        if (vg.numel() != c || vb.numel() != c)
            throw std::invalid_argument("group_norm: gamma/beta must be [C]");

        auto xhat = std::make_shared<TensorT<T>>(vx.shape);
        auto inv_std = std::make_shared<std::vector<T>>(static_cast<size_t>(groups));
        TensorT<T> out(vx.shape);
        const int64_t gn = cg * hw;
        for (int g = 0; g < groups; ++g) {
            const T* xg = vx.data.data() + g * gn;
            T mean = T(0);
            for (int64_t i = 0; i < gn; ++i) mean += xg[i];
            mean /= static_cast<T>(gn);
            T var = T(0);
            for (int64_t i = 0; i < gn; ++i) {
                T d = xg[i] - mean;
                var += d * d;
            }
            var /= static_cast<T>(gn);
            T istd = T(1) / std::sqrt(var + eps);
            (*inv_std)[static_cast<size_t>(g)] = istd;
            T* xh = xhat->data.data() + g * gn;
            for (int64_t i = 0; i < gn; ++i) xh[i] = (xg[i] - mean) * istd;
        }
        for (int64_t ch = 0; ch < c; ++ch) {
            T gam = vg.data[static_cast<size_t>(ch)], bet = vb.data[static_cast<size_t>(ch)];
            const T* xh = xhat->data.data() + ch * hw;
            T* o = out.data.data() + ch * hw;
            for (int64_t j = 0; j < hw; ++j) o[j] = gam * xh[j] + bet;
        }
        return ternary(std::move(out), x, gamma, beta,
                       [this, xhat, inv_std, groups](int id, int x_, int gamma_, int beta_) {
            const auto& g = grad(id);
            const auto& vg_ = val(gamma_);
            const int64_t c = xhat->shape[0], hw = xhat->shape[1] * xhat->shape[2];
            const int64_t cg = c / groups;
            const int64_t gn = cg * hw;
            if (wants_grad(gamma_)) {
                auto& gg = grad(gamma_);
                for (int64_t ch = 0; ch < c; ++ch) {
                    T acc = T(0);
                    const T* gr = g.data.data() + ch * hw;
                    const T* xh = xhat->data.data() + ch * hw;
                    for (int64_t j = 0; j < hw; ++j) acc += gr[j] * xh[j];
                    gg.data[static_cast<size_t>(ch)] += acc;
                }
            }
            if (wants_grad(beta_)) {
                auto& gb = grad(beta_);
                for (int64_t ch = 0; ch < c; ++ch) {
                    T acc = T(0);
                    const T* gr = g.data.data() + ch * hw;
                    for (int64_t j = 0; j < hw; ++j) acc += gr[j];
                    gb.data[static_cast<size_t>(ch)] += acc;
                }
            }
            if (wants_grad(x_)) {
                auto& gx = grad(x_);
                for (int grp = 0; grp < groups; ++grp) {
                    T istd = (*inv_std)[static_cast<size_t>(grp)];
                    // dxhat = g * gamma (per channel)
                    T sum_dxhat = T(0), sum_dxhat_xhat = T(0);
                    for (int64_t cc = 0; cc < cg; ++cc) {
                        int64_t ch = grp * cg + cc;
                        T gam = vg_.data[static_cast<size_t>(ch)];
                        const T* gr = g.data.data() + ch * hw;
                        const T* xh = xhat->data.data() + ch * hw;
                        for (int64_t j = 0; j < hw; ++j) {
                            T dxh = gr[j] * gam;
                            sum_dxhat += dxh;
                            sum_dxhat_xhat += dxh * xh[j];
                        }
                    }
                    T mean_dxhat = sum_dxhat / static_cast<T>(gn);
                    T mean_dxhat_xhat = sum_dxhat_xhat / static_cast<T>(gn);
                    for (int64_t cc = 0; cc < cg; ++cc) {
                        int64_t ch = grp * cg + cc;
                        T gam = vg_.data[static_cast<size_t>(ch)];
                        const T* gr = g.data.data() + ch * hw;
                        const T* xh = xhat->data.data() + ch * hw;
                        T* gxp = gx.data.data() + ch * hw;
                        for (int64_t j = 0; j < hw; ++j) {
                            T dxh = gr[j] * gam;
                            gxp[j] += istd * (dxh - mean_dxhat - xh[j] * mean_dxhat_xhat);
                        }
                    }
                }
            }
        });
    }

    /// Feature-wise affine from an embedding: y[c] = x[c]*(1+s[c]) + t[c],
    /// where s and t are the two halves of `scale_shift` [2C].
    int film(int x, int scale_shift) {
        const auto& vx = val(x);
        const auto& vss = val(scale_shift);
        const int64_t c = vx.shape[0], hw = vx.shape[1] * vx.shape[2];
        if (vss.numel() != 2 * c) throw std::invalid_argument("film: scale_shift must be [2C]");
        TensorT<T> out(vx.shape);
        for (int64_t ch = 0; ch < c; ++ch) {
            T s = vss.data[static_cast<size_t>(ch)];
            T sh = vss.data[static_cast<size_t>(c + ch)];
            const T* xp = vx.data.data() + ch * hw;
            T* o = out.data.data() + ch * hw;
            for (int64_t j = 0; j < hw; ++j) o[j] = xp[j] * (T(1) + s) + sh;
        }
        return unary_or_binary(std::move(out), x, scale_shift, [this](int id, int x_, int ss_) {
            const auto& g = grad(id);
            const auto& vx_ = val(x_);
            const auto& vss_ = val(ss_);
            const int64_t c = vx_.shape[0], hw = vx_.shape[1] * vx_.shape[2];
            if (wants_grad(x_)) {
                auto& gx = grad(x_);
                for (int64_t ch = 0; ch < c; ++ch) {
                    T s = vss_.data[static_cast<size_t>(ch)];
                    const T* gr = g.data.data() + ch * hw;
                    T* gxp = gx.data.data() + ch * hw;
                    for (int64_t j = 0; j < hw; ++j) gxp[j] += gr[j] * (T(1) + s);
                }
            }
            if (wants_grad(ss_)) {
                auto& gss = grad(ss_);
                for (int64_t ch = 0; ch < c; ++ch) {
                    const T* gr = g.data.data() + ch * hw;
                    const T* xp = vx_.data.data() + ch * hw;
                    T acc_s = T(0), acc_t = T(0);
                    for (int64_t j = 0; j < hw; ++j) {
                        acc_s += gr[j] * xp[j];
                        acc_t += gr[j];
                    }
                    gss.data[static_cast<size_t>(ch)] += acc_s;
                    gss.data[static_cast<size_t>(c + ch)] += acc_t;
                }
            }
        });
    }

    /// Row lookup: table [R,D] -> [D].
    int gather_row(int table, int row) {
        const auto& vt = val(table);
        const int64_t d = vt.shape[1];
        TensorT<T> out({d});
        std::copy(vt.data.begin() + row * d, vt.data.begin() + (row + 1) * d, out.data.begin());
        return unary(std::move(out), table, [this, row, d](int id, int t_) {
            const auto& g = grad(id);
            auto& gt = grad(t_);
            for (int64_t j = 0; j < d; ++j)
                gt.data[static_cast<size_t>(row * d + j)] += g.data[static_cast<size_t>(j)];
        });
    }

    /// Mean of several rows of table [R,D] -> [D].
    int gather_rows_mean(int table, std::vector<int> rows) {
        const auto& vt = val(table);
        const int64_t d = vt.shape[1];
        auto rows_p = std::make_shared<std::vector<int>>(std::move(rows));
        TensorT<T> out({d});
        const T inv = T(1) / static_cast<T>(rows_p->size());
        for (int r : *rows_p)
            for (int64_t j = 0; j < d; ++j)
                out.data[static_cast<size_t>(j)] += inv * vt.data[static_cast<size_t>(r * d + j)];
        return unary(std::move(out), table, [this, rows_p, d, inv](int id, int t_) {
            const auto& g = grad(id);
            auto& gt = grad(t_);
            for (int r : *rows_p)
                for (int64_t j = 0; j < d; ++j)
                    gt.data[static_cast<size_t>(r * d + j)] += inv * g.data[static_cast<size_t>(j)];
        });
    }

    size_t node_count() const { return nodes_.size(); }

  private:
    struct Node {
        TensorT<T> value;
        const TensorT<T>* external = nullptr;
        TensorT<T> grad;
        std::function<void()> back;
        bool needs_grad = false;
        int param_slot = -1;
    };

    static T sigmoid(T x) { return T(1) / (T(1) + std::exp(-x)); }

    static void axpy(TensorT<T>& dst, const TensorT<T>& src, T a) {
        for (size_t i = 0; i < dst.data.size(); ++i) dst.data[i] += a * src.data[i];
    }

    static void require_same(const TensorT<T>& a, const TensorT<T>& b, const char* what) {
        if (a.shape != b.shape)
            throw std::invalid_argument(std::string(what) + ": shape mismatch " +
                                        shape_str(a.shape) + " vs " + shape_str(b.shape));
    }

    int last() const { return static_cast<int>(nodes_.size()) - 1; }

    template <typename F>
    int unary(TensorT<T> out, int a, F&& bw) {
        bool need = recording_ && wants_grad(a);
        nodes_.push_back(Node{std::move(out), nullptr, {}, nullptr, need, -1});
        int id = last();
        if (need)
            nodes_.back().back = [this, id, a, bw = std::forward<F>(bw)] { bw(id, a); };
        return id;
    }

    template <typename F>
    int unary_or_binary(TensorT<T> out, int a, int b, F&& bw) {
        bool need = recording_ && (wants_grad(a) || wants_grad(b));
        nodes_.push_back(Node{std::move(out), nullptr, {}, nullptr, need, -1});
        int id = last();
        if (need)
            nodes_.back().back = [this, id, a, b, bw = std::forward<F>(bw)] { bw(id, a, b); };
        return id;
    }

    template <typename F>
    int ternary(TensorT<T> out, int a, int b, int c, F&& bw) {
        bool need = recording_ && (wants_grad(a) || wants_grad(b) || wants_grad(c));
        nodes_.push_back(Node{std::move(out), nullptr, {}, nullptr, need, -1});
        int id = last();
        if (need)
            nodes_.back().back = [this, id, a, b, c, bw = std::forward<F>(bw)] { bw(id, a, b, c); };
        return id;
    }

    static void im2col(const T* x, int64_t cin, int64_t h, int64_t w, int ksize, int stride,
                       int pad, int64_t ho, int64_t wo, T* cols) {
        const int64_t owh = ho * wo;
        for (int64_t ci = 0; ci < cin; ++ci) {
            for (int kr = 0; kr < ksize; ++kr) {
                for (int kc = 0; kc < ksize; ++kc) {
                    T* dst = cols + ((ci * ksize + kr) * ksize + kc) * owh;
                    for (int64_t r = 0; r < ho; ++r) {
                        int64_t ir = r * stride + kr - pad;
                        if (ir < 0 || ir >= h) {
                            for (int64_t c = 0; c < wo; ++c) dst[r * wo + c] = T(0);
                            continue;
                        }
                        const T* src = x + (ci * h + ir) * w;
                        for (int64_t c = 0; c < wo; ++c) {
                            int64_t ic = c * stride + kc - pad;
                            dst[r * wo + c] = (ic < 0 || ic >= w) ? T(0) : src[ic];
                        }
                    }
                }
            }
        }
    }

    static void col2im(const T* cols, int64_t cin, int64_t h, int64_t w, int ksize, int stride,
                       int pad, int64_t ho, int64_t wo, T* dx) {
        const int64_t owh = ho * wo;
        for (int64_t ci = 0; ci < cin; ++ci) {
            for (int kr = 0; kr < ksize; ++kr) {
                for (int kc = 0; kc < ksize; ++kc) {
                    const T* src = cols + ((ci * ksize + kr) * ksize + kc) * owh;
                    for (int64_t r = 0; r < ho; ++r) {
                        int64_t ir = r * stride + kr - pad;
                        if (ir < 0 || ir >= h) continue;
                        T* dst = dx + (ci * h + ir) * w;
                        for (int64_t c = 0; c < wo; ++c) {
                            int64_t ic = c * stride + kc - pad;
                            if (ic >= 0 && ic < w) dst[ic] += src[r * wo + c];
                        }
                    }
                }
            }
        }
    }

    bool recording_;
    std::vector<Node> nodes_;
};

}  // namespace nucleo
