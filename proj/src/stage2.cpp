// Copyright (c) 2026 nucleosynth contributors
// SPDX-License-Identifier: Apache-2.0
#include "nucleosynth/stage2.hpp"

#include <chrono>
#include <cmath>

namespace nucleo {

// ----- autoencoder -----

AEModel AEModel::build(const AEConfig& cfg) {
    if (cfg.h % 4 != 0 || cfg.w % 4 != 0)
        throw std::invalid_argument("AEModel: extents must be divisible by 4");
    AEModel m;
    m.cfg = cfg;
    RandomStream rs(cfg.init_seed);
    const int wd = cfg.width;
    auto conv = [&](const char* name, int cout, int cin) {
        int w = m.store.add(std::string("ae.") + name + ".w",
                            init::he_normal<float>({cout, static_cast<int64_t>(cin) * 9},
                                                   static_cast<int64_t>(cin) * 9, rs));
        int b = m.store.add(std::string("ae.") + name + ".b", init::zeros<float>({cout}));
        return std::pair<int, int>(w, b);
    };
    std::tie(m.e1w, m.e1b) = conv("e1", wd, 3);
    std::tie(m.e2w, m.e2b) = conv("e2", wd, wd);
    std::tie(m.e3w, m.e3b) = conv("e3", wd, wd);
    std::tie(m.e4w, m.e4b) = conv("e4", wd, wd);
    std::tie(m.e5w, m.e5b) = conv("e5", cfg.latent_ch, wd);
    std::tie(m.d1w, m.d1b) = conv("d1", wd, cfg.latent_ch);
    std::tie(m.d2w, m.d2b) = conv("d2", wd, wd);
    std::tie(m.d3w, m.d3b) = conv("d3", wd, wd);
    std::tie(m.d4w, m.d4b) = conv("d4", wd, wd);
    std::tie(m.d5w, m.d5b) = conv("d5", 3, wd);
    m.store.add("ae.scale", init::ones<float>({1}));
    return m;
}

namespace {

int ae_encode_graph(Tape<float>& tape, ParamBinder<float>& bind, const AEModel& m, int x) {
    int h = tape.silu(tape.conv2d(x, bind(m.e1w), bind(m.e1b), 3, 1));
    h = tape.silu(tape.conv2d(h, bind(m.e2w), bind(m.e2b), 3, 2));
    h = tape.silu(tape.conv2d(h, bind(m.e3w), bind(m.e3b), 3, 1));
    h = tape.silu(tape.conv2d(h, bind(m.e4w), bind(m.e4b), 3, 2));
    return tape.conv2d(h, bind(m.e5w), bind(m.e5b), 3, 1);
}

int ae_decode_graph(Tape<float>& tape, ParamBinder<float>& bind, const AEModel& m, int z) {
    int h = tape.silu(tape.conv2d(z, bind(m.d1w), bind(m.d1b), 3, 1));
    h = tape.silu(tape.conv2d(tape.upsample2(h), bind(m.d2w), bind(m.d2b), 3, 1));
    h = tape.silu(tape.conv2d(h, bind(m.d3w), bind(m.d3b), 3, 1));
    h = tape.silu(tape.conv2d(tape.upsample2(h), bind(m.d4w), bind(m.d4b), 3, 1));
    return tape.conv2d(h, bind(m.d5w), bind(m.d5b), 3, 1);
}

TensorT<float> ae_encode_raw(const AEModel& m, const Field& image) {
    Tape<float> tape(false);
    ParamBinder<float> bind(tape, m.store, false);
    int x = tape.input(hwc_to_chw<float>(image));
    int z = ae_encode_graph(tape, bind, m, x);
    return tape.val(z);
}

}  // namespace

Field ae_encode(const AEModel& m, const Field& image) {
    if (image.rank() != 3 || image.shape[0] != m.cfg.h || image.shape[1] != m.cfg.w ||
        image.shape[2] != 3)
        throw std::invalid_argument("ae_encode: image shape mismatch");
    TensorT<float> z = ae_encode_raw(m, image);
    for (auto& v : z.data) v *= m.scale_factor;
    return chw_to_hwc(z);
}

Field ae_decode(const AEModel& m, const Field& latent) {
    if (latent.rank() != 3 || latent.shape[0] != m.latent_h() ||
        latent.shape[1] != m.latent_w() || latent.shape[2] != m.cfg.latent_ch)
        throw std::invalid_argument("ae_decode: latent shape mismatch");
    TensorT<float> z = hwc_to_chw<float>(latent);
    for (auto& v : z.data) v /= m.scale_factor;
    Tape<float> tape(false);
    ParamBinder<float> bind(tape, m.store, false);
    int y = ae_decode_graph(tape, bind, m, tape.input(std::move(z)));
    Field img = chw_to_hwc(tape.val(y));
    for (auto& v : img.data) v = std::clamp(v, 0.0f, 1.0f);
    return img;
}

AETrainStats train_ae(AEModel& m, const std::vector<Field>& images, const AdamConfig& opt,
                      int64_t steps, RandomStream rs) {
    if (images.empty()) throw std::invalid_argument("train_ae: empty dataset");
    Adam adam(m.store);
    AETrainStats stats;
    double ema_loss = 0.0;
    for (int64_t step = 0; step < steps; ++step) {
        RandomStream step_rs = rs.child(static_cast<uint64_t>(step));
        RandomStream pick = step_rs.child("batch");
        std::vector<int64_t> idx(static_cast<size_t>(opt.batch));
        for (auto& i : idx) i = static_cast<int64_t>(pick.next_below(images.size()));

        std::vector<double> values(idx.size());
        std::vector<std::unique_ptr<ParamGrads<float>>> grads(idx.size());
        parallel_for(static_cast<int64_t>(idx.size()), [&](int64_t i) {
            Tape<float> tape(true);
            ParamBinder<float> bind(tape, m.store, true);
            TensorT<float> x = hwc_to_chw<float>(images[static_cast<size_t>(idx[static_cast<size_t>(i)])]);
            int xin = tape.input(x);
            int z = ae_encode_graph(tape, bind, m, xin);
            int y = ae_decode_graph(tape, bind, m, z);
            int loss = tape.mse_to_const(y, x);
            grads[static_cast<size_t>(i)] = std::make_unique<ParamGrads<float>>(m.store);
            tape.backward(loss, *grads[static_cast<size_t>(i)]);
            values[static_cast<size_t>(i)] = tape.val(loss).data[0];
        });
        ParamGrads<float> total(m.store);
        double loss = 0.0;
        const float inv = 1.0f / static_cast<float>(idx.size());
        for (size_t i = 0; i < idx.size(); ++i) {
            loss += values[i];
            total.add_scaled(*grads[i], inv);
        }
        loss /= static_cast<double>(idx.size());
        if (!std::isfinite(loss))
            throw std::runtime_error("train_ae: non-finite loss at step " + std::to_string(step));
        adam.step(m.store, total, opt);
        ema_loss = step == 0 ? loss : 0.98 * ema_loss + 0.02 * loss;
        stats.curve.push_back({step, loss, ema_loss});
    }
    return stats;
}

void fit_scale_factor(AEModel& m, const std::vector<Field>& images) {
    double acc = 0.0, acc2 = 0.0;
    int64_t n = 0;
    for (const auto& img : images) {
        TensorT<float> z = ae_encode_raw(m, img);
        for (float v : z.data) {
            acc += v;
            acc2 += static_cast<double>(v) * v;
            ++n;
        }
    }
    double mean = acc / static_cast<double>(n);
    double var = acc2 / static_cast<double>(n) - mean * mean;
    double std = std::sqrt(std::max(var, 1e-12));
    m.scale_factor = static_cast<float>(1.0 / std);
    m.store.values[static_cast<size_t>(m.store.index.at("ae.scale"))].data[0] = m.scale_factor;
}

Checkpoint ae_checkpoint(const AEModel& m) {
    Checkpoint ck = m.store.to_checkpoint();
    ck.metadata["scale_factor"] = m.scale_factor;
    ck.metadata["kind"] = "ae";
    return ck;
}

void ae_load(AEModel& m, const Checkpoint& ck) {
    m.store.load(ck);
    m.scale_factor = m.store.values[static_cast<size_t>(m.store.index.at("ae.scale"))].data[0];
}

// ----- base latent denoiser -----

StageTwoConfig StageTwoConfig::defaults(int latent_ch, int64_t latent_h, int64_t latent_w) {
    StageTwoConfig c;
    c.unet.in_ch = latent_ch;
    c.unet.out_ch = latent_ch;
    c.unet.width = 64;
    c.unet.mult = {1, 1};
    c.unet.blocks = 2;
    c.unet.emb_width = 128;
    c.unet.cond_width = kEmbedWidth;
    c.unet.gn_groups = 8;
    c.unet.h = latent_h;
    c.unet.w = latent_w;
    return c;
}

BaseModel BaseModel::build(const StageTwoConfig& cfg) {
    BaseModel m;
    m.cfg = cfg;
    RandomStream rs(cfg.init_seed);
    m.unet = register_unet(m.store, cfg.unet, "base.", rs);
    m.sch = linear_schedule(cfg.t_max, cfg.beta1, cfg.betaT);
    return m;
}

namespace {

struct LatentDraw {
    int t;
    bool dropped;
    TensorT<float> eps, z_t;
};

LatentDraw make_latent_draw(const Schedule& sch, double p_drop, const TensorT<float>& z0,
                            RandomStream& rs) {
    LatentDraw d;
    d.t = 1 + static_cast<int>(rs.next_below(static_cast<uint64_t>(sch.t_max)));
    d.dropped = rs.next_uniform() < p_drop;
    d.eps = TensorT<float>(z0.shape);
    for (auto& v : d.eps.data) v = static_cast<float>(rs.next_normal());
    d.z_t = TensorT<float>(z0.shape);
    const double abar = sch.alpha_bars[d.t];
    const float a = static_cast<float>(std::sqrt(abar)), b = static_cast<float>(std::sqrt(1.0 - abar));
    for (size_t i = 0; i < z0.data.size(); ++i) d.z_t.data[i] = a * z0.data[i] + b * d.eps.data[i];
    return d;
}

int cond_input(Tape<float>& tape, const Field& vec) {
    TensorT<float> v({vec.numel()});
    v.data = vec.data;
    return tape.input(std::move(v));
}

}  // namespace

BaseTrainStats train_base(BaseModel& m, const std::vector<LatentItem>& items, const Field& null_vec,
                          const AdamConfig& opt, int64_t steps, RandomStream rs) {
    if (items.empty()) throw std::invalid_argument("train_base: empty dataset");
    Adam adam(m.store);
    BaseTrainStats stats;
    double ema_loss = 0.0;
    for (int64_t step = 0; step < steps; ++step) {
        RandomStream step_rs = rs.child(static_cast<uint64_t>(step));
        RandomStream pick = step_rs.child("batch");
        std::vector<int64_t> idx(static_cast<size_t>(opt.batch));
        for (auto& i : idx) i = static_cast<int64_t>(pick.next_below(items.size()));
        RandomStream loss_rs = step_rs.child("loss");

        std::vector<double> values(idx.size());
        std::vector<std::unique_ptr<ParamGrads<float>>> grads(idx.size());
        parallel_for(static_cast<int64_t>(idx.size()), [&](int64_t i) {
            const LatentItem& item = items[static_cast<size_t>(idx[static_cast<size_t>(i)])];
            RandomStream item_rs = loss_rs.child(static_cast<uint64_t>(i));
            LatentDraw d = make_latent_draw(m.sch, m.cfg.p_drop, item.z0, item_rs);
            Tape<float> tape(true);
            ParamBinder<float> bind(tape, m.store, true);
            int z_t = tape.input(d.z_t);
            int cond = cond_input(tape, d.dropped ? null_vec : item.cond);
            UNetForwardResult fwd = unet_forward(tape, bind, m.unet, z_t, d.t, cond);
            int loss = tape.mse_to_const(fwd.out, d.eps);
            grads[static_cast<size_t>(i)] = std::make_unique<ParamGrads<float>>(m.store);
            tape.backward(loss, *grads[static_cast<size_t>(i)]);
            values[static_cast<size_t>(i)] = tape.val(loss).data[0];
        });
        ParamGrads<float> total(m.store);
        double loss = 0.0;
        const float inv = 1.0f / static_cast<float>(idx.size());
        for (size_t i = 0; i < idx.size(); ++i) {
            loss += values[i];
            total.add_scaled(*grads[i], inv);
        }
        loss /= static_cast<double>(idx.size());
        if (!std::isfinite(loss))
            throw std::runtime_error("train_base: non-finite loss at step " +
                                     std::to_string(step));
        adam.step(m.store, total, opt);
        ema_loss = step == 0 ? loss : 0.98 * ema_loss + 0.02 * loss;
        stats.curve.push_back({step, loss, ema_loss});
    }
    return stats;
}

TensorT<float> base_forward(const BaseModel& m, const TensorT<float>& z_t, int t,
                            const Field& cond) {
    Tape<float> tape(false);
    ParamBinder<float> bind(tape, m.store, false);
    int z = tape.input(z_t);
    int c = cond_input(tape, cond);
    UNetForwardResult fwd = unet_forward(tape, bind, m.unet, z, t, c);
    return tape.val(fwd.out);
}

// ----- control branch -----

ControlBranch ControlBranch::build(const BaseModel& base, int cs_channels, uint64_t seed) {
    ControlBranch br;
    br.cs_channels = cs_channels;
    RandomStream rs(seed);
    const UNetConfig& cfg = base.cfg.unet;

    // Trainable copy of the base down path, initialized from the trained
    // base tensors (name-for-name).
    ParamStore<float> scratch;
    RandomStream scratch_rs(0);
    UNetSlots full = register_unet(scratch, cfg, "base.", scratch_rs);
    auto copy_slot = [&](int scratch_slot) {
        const std::string& name = scratch.names[static_cast<size_t>(scratch_slot)];
        auto it = base.store.index.find(name);
        if (it == base.store.index.end())
            throw std::logic_error("ControlBranch: missing base tensor " + name);
        std::string branch_name = "ctrl." + name.substr(std::string("base.").size());
        return br.store.add(branch_name, base.store.values[static_cast<size_t>(it->second)]);
    };

    UNetSlots& c = br.copy;
    c.cfg = cfg;
    c.stem_w = copy_slot(full.stem_w);
    c.stem_b = copy_slot(full.stem_b);
    c.down.resize(full.down.size());
    for (size_t l = 0; l < full.down.size(); ++l) {
        for (const ResBlockSlots& rb : full.down[l]) {
            ResBlockSlots nb;
            nb.gn1_g = copy_slot(rb.gn1_g);
            nb.gn1_b = copy_slot(rb.gn1_b);
            nb.conv1_w = copy_slot(rb.conv1_w);
            nb.conv1_b = copy_slot(rb.conv1_b);
            nb.emb_w = copy_slot(rb.emb_w);
            nb.emb_b = copy_slot(rb.emb_b);
            nb.gn2_g = copy_slot(rb.gn2_g);
            nb.gn2_b = copy_slot(rb.gn2_b);
            nb.conv2_w = copy_slot(rb.conv2_w);
            nb.conv2_b = copy_slot(rb.conv2_b);
            if (rb.skip_w >= 0) {
                nb.skip_w = copy_slot(rb.skip_w);
                nb.skip_b = copy_slot(rb.skip_b);
            }
            c.down[l].push_back(nb);
        }
    }
    for (int w : full.down_w) c.down_w.push_back(copy_slot(w));
    for (int b : full.down_b) c.down_b.push_back(copy_slot(b));
    c.tmlp1_w = copy_slot(full.tmlp1_w);
    c.tmlp1_b = copy_slot(full.tmlp1_b);
    c.tmlp2_w = copy_slot(full.tmlp2_w);
    c.tmlp2_b = copy_slot(full.tmlp2_b);
    c.cond_w = copy_slot(full.cond_w);
    c.cond_b = copy_slot(full.cond_b);

    // c_s embedding stack: image resolution down to the latent grid; the
    // last conv starts at zero.
    br.h1w = br.store.add("ctrl.hint1.w", init::he_normal<float>({16, static_cast<int64_t>(cs_channels) * 9},
                                                                 static_cast<int64_t>(cs_channels) * 9, rs));
    br.h1b = br.store.add("ctrl.hint1.b", init::zeros<float>({16}));
    br.h2w = br.store.add("ctrl.hint2.w", init::he_normal<float>({32, 16 * 9}, 16 * 9, rs));
    br.h2b = br.store.add("ctrl.hint2.b", init::zeros<float>({32}));
    br.h3w = br.store.add("ctrl.hint3.w", init::zeros<float>({cfg.in_ch, 32 * 9}));
    br.h3b = br.store.add("ctrl.hint3.b", init::zeros<float>({cfg.in_ch}));

    // Zero-initialized 1x1 connections: one per down tap plus the bottleneck.
    const int depth = cfg.depth();
    int tap = 0;
    for (int l = 0; l <= depth; ++l) {
        for (int b = 0; b < cfg.blocks; ++b, ++tap) {
            int ch = cfg.channels(l);
            br.zc_w.push_back(br.store.add("ctrl.zc" + std::to_string(tap) + ".w",
                                           init::zeros<float>({ch, ch})));
            br.zc_b.push_back(br.store.add("ctrl.zc" + std::to_string(tap) + ".b",
                                           init::zeros<float>({ch})));
        }
    }
    int chb = cfg.channels(depth);
    br.zc_w.push_back(br.store.add("ctrl.zcmid.w", init::zeros<float>({chb, chb})));
    br.zc_b.push_back(br.store.add("ctrl.zcmid.b", init::zeros<float>({chb})));
    return br;
}

int build_controlled_forward(Tape<float>& tape, const BaseModel& base,
                             ParamBinder<float>& bind_base, const ControlBranch& branch,
                             ParamBinder<float>& bind_branch, int z_t, int t, int cond_emb,
                             int c_s) {
    // Hint: c_s at image resolution -> latent grid, zero-init final conv.
    int hint = tape.silu(tape.conv2d(c_s, bind_branch(branch.h1w), bind_branch(branch.h1b), 3, 2));
    hint = tape.silu(tape.conv2d(hint, bind_branch(branch.h2w), bind_branch(branch.h2b), 3, 2));
    hint = tape.conv2d(hint, bind_branch(branch.h3w), bind_branch(branch.h3b), 3, 1);

    int semb_br = unet_embed(tape, bind_branch, branch.copy, t, cond_emb);
    int branch_in = tape.add(z_t, hint);
    UNetDownResult down = unet_down(tape, bind_branch, branch.copy, branch_in, semb_br);

    std::vector<int> skip_add;
    for (size_t i = 0; i < down.taps.size(); ++i)
        skip_add.push_back(tape.conv2d(down.taps[i], bind_branch(branch.zc_w[i]),
                                       bind_branch(branch.zc_b[i]), 1, 1));
    skip_add.push_back(tape.conv2d(down.bottleneck, bind_branch(branch.zc_w.back()),
                                   bind_branch(branch.zc_b.back()), 1, 1));

    UNetForwardResult fwd = unet_forward(tape, bind_base, base.unet, z_t, t, cond_emb, &skip_add);
    return fwd.out;
}

TensorT<float> controlled_forward(const BaseModel& base, const ControlBranch& branch,
                                  const TensorT<float>& z_t, int t, const Field& cond,
                                  const TensorT<float>& c_s) {
    Tape<float> tape(false);
    ParamBinder<float> bind_base(tape, base.store, false);
    ParamBinder<float> bind_branch(tape, branch.store, false);
    int z = tape.input(z_t);
    int cs = tape.input(c_s);
    int c = cond_input(tape, cond);
    int out = build_controlled_forward(tape, base, bind_base, branch, bind_branch, z, t, c, cs);
    return tape.val(out);
}

ControlTrainStats finetune_control(const BaseModel& base, ControlBranch& branch,
                                   const std::vector<ControlItem>& items, const Field& null_vec,
                                   const AdamConfig& opt, int64_t steps, RandomStream rs) {
    if (items.empty()) throw std::invalid_argument("finetune_control: empty dataset");
    const uint64_t base_hash_before = base.store.content_hash();
    Adam adam(branch.store);
    ControlTrainStats stats;
    double ema_loss = 0.0;
    for (int64_t step = 0; step < steps; ++step) {
        RandomStream step_rs = rs.child(static_cast<uint64_t>(step));
        RandomStream pick = step_rs.child("batch");
        std::vector<int64_t> idx(static_cast<size_t>(opt.batch));
        for (auto& i : idx) i = static_cast<int64_t>(pick.next_below(items.size()));
        RandomStream loss_rs = step_rs.child("loss");

        std::vector<double> values(idx.size());
        std::vector<std::unique_ptr<ParamGrads<float>>> grads(idx.size());
        parallel_for(static_cast<int64_t>(idx.size()), [&](int64_t i) {
            const ControlItem& item = items[static_cast<size_t>(idx[static_cast<size_t>(i)])];
            RandomStream item_rs = loss_rs.child(static_cast<uint64_t>(i));
            LatentDraw d = make_latent_draw(base.sch, base.cfg.p_drop, item.z0, item_rs);
            Tape<float> tape(true);
            ParamBinder<float> bind_base(tape, base.store, false);
            ParamBinder<float> bind_branch(tape, branch.store, true);
            int z_t = tape.input(d.z_t);
            int cs = tape.input(item.c_s);
            int cond = cond_input(tape, d.dropped ? null_vec : item.cond);
            int out = build_controlled_forward(tape, base, bind_base, branch, bind_branch, z_t,
                                               d.t, cond, cs);
            int loss = tape.mse_to_const(out, d.eps);
            grads[static_cast<size_t>(i)] = std::make_unique<ParamGrads<float>>(branch.store);
            tape.backward(loss, *grads[static_cast<size_t>(i)]);
            values[static_cast<size_t>(i)] = tape.val(loss).data[0];
        });
        ParamGrads<float> total(branch.store);
        double loss = 0.0;
        const float inv = 1.0f / static_cast<float>(idx.size());
        for (size_t i = 0; i < idx.size(); ++i) {
            loss += values[i];
            total.add_scaled(*grads[i], inv);
        }
        loss /= static_cast<double>(idx.size());
        if (!std::isfinite(loss))
            throw std::runtime_error("finetune_control: non-finite loss at step " +
                                     std::to_string(step));
        adam.step(branch.store, total, opt);
        ema_loss = step == 0 ? loss : 0.98 * ema_loss + 0.02 * loss;
        stats.curve.push_back({step, loss, ema_loss});
    }
    if (base.store.content_hash() != base_hash_before)
        throw std::logic_error("finetune_control: base tensors changed during fine-tuning");
    return stats;
}

// ----- sampling -----

Field sample_image(const Stage2Sampler& s, const LabelGrid& label, const InstanceGrid& instance,
                   const Prompt& prompt, RandomStream& rs) {
    const AEModel& ae = *s.ae;
    const int k = static_cast<int>(s.tables.class_table.shape[0]) + 1;
    TensorT<float> c_s = hwc_to_chw<float>(assemble_semantic_condition(label, instance, k));
    PromptEmbedding cond = encode_prompt(prompt, s.tables, s.vocab);
    PromptEmbedding uncond = encode_prompt(std::nullopt, s.tables, s.vocab);

    const Schedule& sch = s.base->sch;
    std::vector<int> stride = make_stride(sch.t_max, s.n_steps);
    Field z({ae.latent_h(), ae.latent_w(), ae.cfg.latent_ch});
    z = rs.draw_normal(z.shape);
    for (size_t step = 0; step + 1 < stride.size(); ++step) {
        const int t = stride[step], tp = stride[step + 1];
        TensorT<float> z_chw = hwc_to_chw<float>(z);
        TensorT<float> eps_c = controlled_forward(*s.base, *s.branch, z_chw, t, cond.vec, c_s);
        Field eps = chw_to_hwc(eps_c);
        if (s.guidance_w != 1.0f) {
            TensorT<float> eps_u = controlled_forward(*s.base, *s.branch, z_chw, t, uncond.vec, c_s);
            eps = guide(eps, chw_to_hwc(eps_u), s.guidance_w);
        }
        z = ddim_step(z, eps, t, tp, sch, 0.0, rs);
    }
    return ae_decode(ae, z);
}

double time_latent_sampling(const Stage2Sampler& s, const LabelGrid& label,
                            const InstanceGrid& instance, const Prompt& prompt, int n,
                            RandomStream& rs) {
    auto start = std::chrono::steady_clock::now();
    for (int i = 0; i < n; ++i) {
        RandomStream srs = rs.child(static_cast<uint64_t>(i));
        (void)sample_image(s, label, instance, prompt, srs);
    }
    auto end = std::chrono::steady_clock::now();
    return std::chrono::duration<double>(end - start).count() / static_cast<double>(n);
}

double time_pixel_sampling(int width, int64_t h, int64_t w, int n_steps, int n, RandomStream& rs) {
    StageTwoConfig cfg = StageTwoConfig::defaults(3, h, w);
    cfg.unet.width = width;
    BaseModel model = BaseModel::build(cfg);
    PromptEmbedding cond;
    cond.vec = Field({kEmbedWidth});
    std::vector<int> stride = make_stride(model.sch.t_max, n_steps);
    auto start = std::chrono::steady_clock::now();
    for (int i = 0; i < n; ++i) {
        RandomStream srs = rs.child(static_cast<uint64_t>(i));
        Field x({h, w, 3});
        x = srs.draw_normal(x.shape);
        for (size_t step = 0; step + 1 < stride.size(); ++step) {
            const int t = stride[step], tp = stride[step + 1];
            TensorT<float> eps_c = base_forward(model, hwc_to_chw<float>(x), t, cond.vec);
            x = ddim_step(x, chw_to_hwc(eps_c), t, tp, model.sch, 0.0, srs);
        }
    }
    auto end = std::chrono::steady_clock::now();
    return std::chrono::duration<double>(end - start).count() / static_cast<double>(n);
}

}  // namespace nucleo
