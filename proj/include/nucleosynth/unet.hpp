// Copyright (c) 2026 nucleosynth contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "nucleosynth/tape.hpp"

namespace nucleo {

/// Sizes of the conditioned denoising U-Net. `mult` lists per-level channel
/// multipliers (size depth+1); level 0 is full resolution.
struct UNetConfig {
    int in_ch = 6;
    int out_ch = 7;  // 3 + K
    int width = 32;
    std::vector<int> mult = {1, 1, 2};
    int blocks = 2;  // residual blocks per stage
    int emb_width = 128;
    int cond_width = 128;
    int gn_groups = 8;
    int64_t h = 32, w = 32;

    int depth() const { return static_cast<int>(mult.size()) - 1; }
    int channels(int level) const { return width * mult[static_cast<size_t>(level)]; }
    void validate() const;
};

struct ResBlockSlots {
    int gn1_g = -1, gn1_b = -1;
    int conv1_w = -1, conv1_b = -1;
    int emb_w = -1, emb_b = -1;
    int gn2_g = -1, gn2_b = -1;
    int conv2_w = -1, conv2_b = -1;
    int skip_w = -1, skip_b = -1;  // 1x1 projection when channels change
};

struct UNetSlots {
    UNetConfig cfg;
    int stem_w = -1, stem_b = -1;
    std::vector<std::vector<ResBlockSlots>> down;  // [level][block]
    std::vector<int> down_w, down_b;               // stride-2 transitions
    std::vector<std::vector<ResBlockSlots>> up;
    std::vector<int> upconv_w, upconv_b;           // post-upsample convs
    int head_gn_g = -1, head_gn_b = -1, head_w = -1, head_b = -1;
    int tmlp1_w = -1, tmlp1_b = -1, tmlp2_w = -1, tmlp2_b = -1;
    int cond_w = -1, cond_b = -1;  // c_pr -> embedding projection
};

/// Sinusoidal timestep embedding (half cos, half sin, log-spaced periods).
template <typename T>
TensorT<T> sinusoidal_embedding(int t, int dim) {
    TensorT<T> e({dim});
    const int half = dim / 2;
    for (int i = 0; i < half; ++i) {
        double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) /
                               static_cast<double>(half));
        double arg = static_cast<double>(t) * freq;
        e.data[static_cast<size_t>(i)] = static_cast<T>(std::cos(arg));
        e.data[static_cast<size_t>(half + i)] = static_cast<T>(std::sin(arg));
    }
    return e;
}

namespace init {

template <typename T>
TensorT<T> he_normal(const std::vector<int64_t>& shape, int64_t fan_in, RandomStream& rs) {
    TensorT<T> t(shape);
    double scale = std::sqrt(2.0 / static_cast<double>(fan_in));
    for (auto& v : t.data) v = static_cast<T>(rs.next_normal() * scale);
    return t;
}

template <typename T>
TensorT<T> normal(const std::vector<int64_t>& shape, double stddev, RandomStream& rs) {
    TensorT<T> t(shape);
    for (auto& v : t.data) v = static_cast<T>(rs.next_normal() * stddev);
    return t;
}

template <typename T>
TensorT<T> zeros(const std::vector<int64_t>& shape) {
    return TensorT<T>(shape);
}

template <typename T>
TensorT<T> ones(const std::vector<int64_t>& shape) {
    TensorT<T> t(shape);
    std::fill(t.data.begin(), t.data.end(), T(1));
    return t;
}

}  // namespace init

/// Registers all U-Net parameters under `prefix`, drawing initial values
/// from `rs` in a fixed order. The second conv of every residual block and
/// the output head start at exactly zero, so a fresh network returns zeros.
template <typename T>
UNetSlots register_unet(ParamStore<T>& store, const UNetConfig& cfg, const std::string& prefix,
                        RandomStream& rs) {
    cfg.validate();
    UNetSlots s;
    s.cfg = cfg;
    auto add = [&](const std::string& name, TensorT<T> t) {
        return store.add(prefix + name, std::move(t));
    };
    auto res_block = [&](const std::string& name, int cin, int cout) {
        ResBlockSlots b;
        b.gn1_g = add(name + ".gn1.g", init::ones<T>({cin}));
        b.gn1_b = add(name + ".gn1.b", init::zeros<T>({cin}));
        b.conv1_w = add(name + ".conv1.w", init::he_normal<T>({cout, static_cast<int64_t>(cin) * 9},
                                                              static_cast<int64_t>(cin) * 9, rs));
        b.conv1_b = add(name + ".conv1.b", init::zeros<T>({cout}));
        b.emb_w = add(name + ".emb.w",
                      init::he_normal<T>({2 * cout, cfg.emb_width}, cfg.emb_width, rs));
        b.emb_b = add(name + ".emb.b", init::zeros<T>({2 * cout}));
        b.gn2_g = add(name + ".gn2.g", init::ones<T>({cout}));
        b.gn2_b = add(name + ".gn2.b", init::zeros<T>({cout}));
        b.conv2_w = add(name + ".conv2.w", init::zeros<T>({cout, static_cast<int64_t>(cout) * 9}));
        b.conv2_b = add(name + ".conv2.b", init::zeros<T>({cout}));
        if (cin != cout) {
            b.skip_w = add(name + ".skip.w",
                           init::he_normal<T>({cout, cin}, cin, rs));
            b.skip_b = add(name + ".skip.b", init::zeros<T>({cout}));
        }
        return b;
    };

    const int depth = cfg.depth();
    s.stem_w = add("stem.w", init::he_normal<T>({cfg.channels(0), static_cast<int64_t>(cfg.in_ch) * 9},
                                                static_cast<int64_t>(cfg.in_ch) * 9, rs));
    s.stem_b = add("stem.b", init::zeros<T>({cfg.channels(0)}));

    s.down.resize(static_cast<size_t>(depth) + 1);
    for (int l = 0; l <= depth; ++l) {
        for (int b = 0; b < cfg.blocks; ++b)
            s.down[static_cast<size_t>(l)].push_back(res_block(
                "down" + std::to_string(l) + ".block" + std::to_string(b), cfg.channels(l),
                cfg.channels(l)));
        if (l < depth) {
            s.down_w.push_back(add("down" + std::to_string(l) + ".ds.w",
                                   init::he_normal<T>({cfg.channels(l + 1),
                                                       static_cast<int64_t>(cfg.channels(l)) * 9},
                                                      static_cast<int64_t>(cfg.channels(l)) * 9,
                                                      rs)));
            s.down_b.push_back(add("down" + std::to_string(l) + ".ds.b",
                                   init::zeros<T>({cfg.channels(l + 1)})));
        }
    }

    s.up.resize(static_cast<size_t>(depth) + 1);
    for (int l = depth; l >= 0; --l) {
        for (int b = 0; b < cfg.blocks; ++b)
            s.up[static_cast<size_t>(l)].push_back(res_block(
                "up" + std::to_string(l) + ".block" + std::to_string(b), 2 * cfg.channels(l),
                cfg.channels(l)));
        if (l > 0) {
            s.upconv_w.push_back(add("up" + std::to_string(l) + ".us.w",
                                     init::he_normal<T>({cfg.channels(l - 1),
                                                         static_cast<int64_t>(cfg.channels(l)) * 9},
                                                        static_cast<int64_t>(cfg.channels(l)) * 9,
                                                        rs)));
            s.upconv_b.push_back(add("up" + std::to_string(l) + ".us.b",
                                     init::zeros<T>({cfg.channels(l - 1)})));
        }
    }

    s.head_gn_g = add("head.gn.g", init::ones<T>({cfg.channels(0)}));
    s.head_gn_b = add("head.gn.b", init::zeros<T>({cfg.channels(0)}));
    s.head_w = add("head.w", init::zeros<T>({cfg.out_ch, static_cast<int64_t>(cfg.channels(0)) * 9}));
    s.head_b = add("head.b", init::zeros<T>({cfg.out_ch}));

    s.tmlp1_w = add("temb.l1.w", init::he_normal<T>({cfg.emb_width, cfg.emb_width}, cfg.emb_width, rs));
    s.tmlp1_b = add("temb.l1.b", init::zeros<T>({cfg.emb_width}));
    s.tmlp2_w = add("temb.l2.w", init::he_normal<T>({cfg.emb_width, cfg.emb_width}, cfg.emb_width, rs));
    s.tmlp2_b = add("temb.l2.b", init::zeros<T>({cfg.emb_width}));
    s.cond_w = add("cond.proj.w", init::he_normal<T>({cfg.emb_width, cfg.cond_width}, cfg.cond_width, rs));
    s.cond_b = add("cond.proj.b", init::zeros<T>({cfg.emb_width}));
    return s;
}

/// Lazily binds parameter slots of one store to tape leaf nodes, as either
/// trainable params or frozen views.
template <typename T>
class ParamBinder {
  public:
    ParamBinder(Tape<T>& tape, const ParamStore<T>& store, bool trainable)
        : tape_(tape), store_(store), trainable_(trainable),
          cache_(store.values.size(), -1) {}

    int operator()(int slot) {
        int& id = cache_[static_cast<size_t>(slot)];
        if (id < 0)
            id = trainable_ ? tape_.param(&store_.values[static_cast<size_t>(slot)], slot)
                            : tape_.frozen(&store_.values[static_cast<size_t>(slot)]);
        return id;
    }

  private:
    Tape<T>& tape_;
    const ParamStore<T>& store_;
    bool trainable_;
    std::vector<int> cache_;
};

namespace detail_unet {

inline int gn_groups_for(int channels, int requested) {
    int g = std::min(requested, channels);
    while (channels % g != 0) --g;
    return g;
}

template <typename T>
int res_block_forward(Tape<T>& tape, ParamBinder<T>& bind, const ResBlockSlots& b, int x,
                      int semb, int gn_groups) {
    const int cin = static_cast<int>(tape.val(x).shape[0]);
    int h = tape.group_norm(x, bind(b.gn1_g), bind(b.gn1_b), gn_groups_for(cin, gn_groups));
    h = tape.silu(h);
    h = tape.conv2d(h, bind(b.conv1_w), bind(b.conv1_b), 3, 1);
    int ss = tape.linear(semb, bind(b.emb_w), bind(b.emb_b));
    const int cout = static_cast<int>(tape.val(h).shape[0]);
    h = tape.group_norm(h, bind(b.gn2_g), bind(b.gn2_b), gn_groups_for(cout, gn_groups));
    h = tape.film(h, ss);
    h = tape.silu(h);
    h = tape.conv2d(h, bind(b.conv2_w), bind(b.conv2_b), 3, 1);
    int skip = x;
    if (b.skip_w >= 0) skip = tape.conv2d(x, bind(b.skip_w), bind(b.skip_b), 1, 1);
    return tape.add(skip, h);
}

}  // namespace detail_unet

/// Combined time/prompt embedding (pre-activation SiLU applied).
template <typename T>
int unet_embed(Tape<T>& tape, ParamBinder<T>& bind, const UNetSlots& s, int t, int cond_emb) {
    int temb = tape.input(sinusoidal_embedding<T>(t, s.cfg.emb_width));
    temb = tape.linear(temb, bind(s.tmlp1_w), bind(s.tmlp1_b));
    temb = tape.silu(temb);
    temb = tape.linear(temb, bind(s.tmlp2_w), bind(s.tmlp2_b));
    if (cond_emb >= 0) {
        int cp = tape.linear(cond_emb, bind(s.cond_w), bind(s.cond_b));
        temb = tape.add(temb, cp);
    }
    return tape.silu(temb);
}

struct UNetDownResult {
    std::vector<int> taps;  // per-level block outputs, push order
    int bottleneck = -1;    // last down-path activation
};

/// Stem + residual blocks + stride-2 transitions (the control branch runs a
/// trainable copy of exactly this path).
template <typename T>
UNetDownResult unet_down(Tape<T>& tape, ParamBinder<T>& bind, const UNetSlots& s, int x,
                         int semb) {
    const UNetConfig& cfg = s.cfg;
    const int depth = cfg.depth();
    UNetDownResult res;
    int h = tape.conv2d(x, bind(s.stem_w), bind(s.stem_b), 3, 1);
    for (int l = 0; l <= depth; ++l) {
        for (int b = 0; b < cfg.blocks; ++b) {
            h = detail_unet::res_block_forward(tape, bind, s.down[static_cast<size_t>(l)]
                                                               [static_cast<size_t>(b)],
                                               h, semb, cfg.gn_groups);
            res.taps.push_back(h);
        }
        if (l < depth)
            h = tape.conv2d(h, bind(s.down_w[static_cast<size_t>(l)]),
                            bind(s.down_b[static_cast<size_t>(l)]), 3, 2);
    }
    res.bottleneck = h;
    return res;
}

struct UNetForwardResult {
    int out = -1;                 // [out_ch, H, W]
    std::vector<int> down_taps;   // per-level block outputs, push order
    int bottleneck = -1;          // last down-path activation
};

/// Builds the forward graph. `cond_emb` is a [cond_width] node or -1 for an
/// unconditioned pass. `skip_add` (optional, aligned with down_taps plus one
/// trailing entry for the bottleneck) carries node ids added into the
/// corresponding skip/bottleneck junctions before decoder use; -1 entries
/// are ignored.
template <typename T>
UNetForwardResult unet_forward(Tape<T>& tape, ParamBinder<T>& bind, const UNetSlots& s, int x,
                               int t, int cond_emb,
                               const std::vector<int>* skip_add = nullptr) {
    const UNetConfig& cfg = s.cfg;
    const int depth = cfg.depth();

    int semb = unet_embed(tape, bind, s, t, cond_emb);
    UNetDownResult down = unet_down(tape, bind, s, x, semb);

    UNetForwardResult res;
    res.down_taps = down.taps;
    res.bottleneck = down.bottleneck;
    std::vector<int> skips = down.taps;
    int h = down.bottleneck;

    if (skip_add) {
        if (skip_add->size() != skips.size() + 1)
            throw std::invalid_argument("unet_forward: skip_add size mismatch");
        for (size_t i = 0; i < skips.size(); ++i)
            if ((*skip_add)[i] >= 0) skips[i] = tape.add(skips[i], (*skip_add)[i]);
        if (skip_add->back() >= 0) h = tape.add(h, skip_add->back());
    }

    int upconv_idx = 0;
    for (int l = depth; l >= 0; --l) {
        for (int b = 0; b < cfg.blocks; ++b) {
            int skip = skips.back();
            skips.pop_back();
            int cat = tape.concat_ch(h, skip);
            h = detail_unet::res_block_forward(tape, bind,
                                               s.up[static_cast<size_t>(l)][static_cast<size_t>(b)],
                                               cat, semb, cfg.gn_groups);
        }
        if (l > 0) {
            h = tape.upsample2(h);
            h = tape.conv2d(h, bind(s.upconv_w[static_cast<size_t>(upconv_idx)]),
                            bind(s.upconv_b[static_cast<size_t>(upconv_idx)]), 3, 1);
            ++upconv_idx;
        }
    }

    h = tape.group_norm(h, bind(s.head_gn_g), bind(s.head_gn_b),
                        detail_unet::gn_groups_for(cfg.channels(0), cfg.gn_groups));
    h = tape.silu(h);
    res.out = tape.conv2d(h, bind(s.head_w), bind(s.head_b), 3, 1);
    return res;
}

}  // namespace nucleo
