// Copyright (c) 2026 nucleosynth contributors
// SPDX-License-Identifier: Apache-2.0
#include "nucleosynth/denoiser.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>

namespace nucleo {

StageOneConfig StageOneConfig::defaults(int64_t h, int64_t w, int k) {
    StageOneConfig c;
    c.k = k;
    c.unet.in_ch = 6;
    c.unet.out_ch = 3 + k;
    c.unet.width = 32;
    c.unet.mult = {1, 1, 2};
    c.unet.blocks = 2;
    c.unet.emb_width = 128;
    c.unet.cond_width = kEmbedWidth;
    c.unet.gn_groups = 8;
    c.unet.h = h;
    c.unet.w = w;
    return c;
}

Field pack_input(const PairState& ps, const Field& embed) {
    check_pair_state(ps);
    const int64_t h = ps.x.shape[0], w = ps.x.shape[1];
    const int64_t k = ps.y.shape[2];
    if (embed.rank() != 2 || embed.shape[0] != k || embed.shape[1] != 3)
        throw std::invalid_argument("pack_input: embed matrix must be [K,3]");
    Field out({h, w, 6});
    for (int64_t r = 0; r < h; ++r) {
        for (int64_t c = 0; c < w; ++c) {
            for (int ch = 0; ch < 3; ++ch) out.at3(r, c, ch) = ps.x.at3(r, c, ch);
            for (int ch = 0; ch < 3; ++ch) {
                float acc = 0.0f;
                for (int64_t j = 0; j < k; ++j) acc += ps.y.at3(r, c, j) * embed.at2(j, ch);
                out.at3(r, c, 3 + ch) = acc;
            }
        }
    }
    return out;
}

Adam::Adam(const ParamStore<float>& store) {
    m.reserve(store.values.size());
    v.reserve(store.values.size());
    for (const auto& p : store.values) {
        m.emplace_back(p.shape);
        v.emplace_back(p.shape);
    }
}

void Adam::step(ParamStore<float>& store, const ParamGrads<float>& grads, const AdamConfig& cfg) {
    ++steps_done;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(steps_done));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(steps_done));
    for (size_t s = 0; s < store.values.size(); ++s) {
        auto& p = store.values[s].data;
        auto& ms = m[s].data;
        auto& vs = v[s].data;
        const auto& g = grads.grads[s].data;
        for (size_t i = 0; i < p.size(); ++i) {
            double gi = static_cast<double>(g[i]);
            double mi = cfg.beta1 * ms[i] + (1.0 - cfg.beta1) * gi;
            double vi = cfg.beta2 * vs[i] + (1.0 - cfg.beta2) * gi * gi;
            ms[i] = static_cast<float>(mi);
            vs[i] = static_cast<float>(vi);
            double mhat = mi / bc1, vhat = vi / bc2;
            p[i] = static_cast<float>(p[i] - cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps));
        }
    }
}

Ema::Ema(const ParamStore<float>& store) {
    shadow.reserve(store.values.size());
    for (const auto& p : store.values) shadow.push_back(p);
}

void Ema::update(const ParamStore<float>& store, double decay) {
    for (size_t s = 0; s < shadow.size(); ++s) {
        auto& sh = shadow[s].data;
        const auto& p = store.values[s].data;
        for (size_t i = 0; i < sh.size(); ++i)
            sh[i] = static_cast<float>(decay * sh[i] + (1.0 - decay) * p[i]);
    }
}

ParamStore<float> Ema::snapshot(const ParamStore<float>& like) const {
    ParamStore<float> out;
    for (size_t s = 0; s < shadow.size(); ++s) out.add(like.names[s], shadow[s]);
    return out;
}

void write_curve_csv(const std::string& path, const std::vector<CurvePoint>& curve) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("write_curve_csv: cannot open " + path);
    os << "step,loss,ema_loss\n";
    for (const auto& p : curve) os << p.step << "," << p.loss << "," << p.ema_loss << "\n";
}

TrainResult train_stage1(StageOneModel<float>& model, const std::vector<TrainItem>& items,
                         const AdamConfig& opt, int64_t steps, RandomStream rs,
                         const PromptVocab& vocab) {
    if (items.empty()) throw std::invalid_argument("train_stage1: empty dataset");
    Adam adam(model.store);
    TrainResult result{.curve = {}, .ema = Ema(model.store)};
    double ema_loss = 0.0;
    for (int64_t step = 0; step < steps; ++step) {
        RandomStream step_rs = rs.child(static_cast<uint64_t>(step));
        RandomStream pick = step_rs.child("batch");
        std::vector<TrainItem> batch;
        batch.reserve(static_cast<size_t>(opt.batch));
        for (int b = 0; b < opt.batch; ++b)
            batch.push_back(items[pick.next_below(items.size())]);

        ParamGrads<float> grads(model.store);
        double loss = stage1_batch_loss(model, batch, step_rs.child("loss"), vocab, grads);
        if (!std::isfinite(loss))
            throw std::runtime_error("train_stage1: non-finite loss at step " +
                                     std::to_string(step));
        adam.step(model.store, grads, opt);
        result.ema.update(model.store, opt.ema_decay);

        ema_loss = step == 0 ? loss : 0.98 * ema_loss + 0.02 * loss;
        result.curve.push_back({step, loss, ema_loss});

        if (opt.checkpoint_every > 0 && !opt.checkpoint_dir.empty() &&
            (step + 1) % opt.checkpoint_every == 0) {
            Checkpoint ck = model.store.to_checkpoint();
            ck.metadata["step"] = step + 1;
            save_checkpoint(ck, (std::filesystem::path(opt.checkpoint_dir) /
                                 ("stage1_step" + std::to_string(step + 1) + ".nsck"))
                                    .string());
        }
    }
    if (!opt.curve_path.empty()) write_curve_csv(opt.curve_path, result.curve);
    return result;
}

PairModelFn make_stage1_model_fn(const StageOneModel<float>& model, const PromptEmbedding& cond,
                                 const PromptEmbedding& uncond) {
    Field cond_vec = cond.vec;
    Field uncond_vec = uncond.vec;
    const StageOneModel<float>* m = &model;
    return [m, cond_vec, uncond_vec](const PairState& ps, int t,
                                     bool conditional) -> PairModelOutput {
        Tape<float> tape(false);
        ParamBinder<float> bind(tape, m->store, false);
        int x_t = tape.input(hwc_to_chw<float>(ps.x));
        int y_t = tape.input(hwc_to_chw<float>(ps.y));
        int zero_bias = tape.input(TensorT<float>({3}));
        int emb = tape.conv2d(y_t, bind(m->label_embed), zero_bias, 1, 1);
        int packed = tape.concat_ch(x_t, emb);
        TensorT<float> cvec({static_cast<int64_t>(conditional ? cond_vec.numel()
                                                              : uncond_vec.numel())});
        cvec.data = conditional ? cond_vec.data : uncond_vec.data;
        int cond_emb = tape.input(std::move(cvec));
        UNetForwardResult fwd = unet_forward(tape, bind, m->unet, packed, t, cond_emb);
        PairModelOutput out;
        out.eps = chw_to_hwc(tape.val(tape.slice_ch(fwd.out, 0, 3)));
        out.logits = chw_to_hwc(tape.val(tape.slice_ch(fwd.out, 3, 3 + m->cfg.k)));
        require_finite(out.eps, "stage1 forward eps");
        require_finite(out.logits, "stage1 forward logits");
        return out;
    };
}

double gradient_check(const StageOneConfig& tiny_cfg, const TrainItem& item,
                      const PromptVocab& vocab, uint64_t seed, double fd_step) {
    StageOneModel<double> m = StageOneModel<double>::build(tiny_cfg);
    RandomStream rs(seed);
    ItemDraw<double> draw = make_item_draw(m, item, rs);

    auto eval = [&]() {
        Tape<double> tape(true);
        ParamBinder<double> bind(tape, m.store, true);
        ItemLossGraph<double> g = build_item_loss(tape, bind, m, draw, item.prompt, vocab);
        return std::pair<double, ItemLossGraph<double>>(
            tape.val(g.loss_node).data[0] + g.const_term, g);
    };

    ParamGrads<double> analytic(m.store);
    {
        Tape<double> tape(true);
        ParamBinder<double> bind(tape, m.store, true);
        ItemLossGraph<double> g = build_item_loss(tape, bind, m, draw, item.prompt, vocab);
        tape.backward(g.loss_node, analytic);
    }

    double max_rel = 0.0;
    for (size_t s = 0; s < m.store.values.size(); ++s) {
        auto& vals = m.store.values[s].data;
        for (size_t i = 0; i < vals.size(); ++i) {
            const double orig = vals[i];
            const double h = fd_step * std::max(1.0, std::abs(orig));
            vals[i] = orig + h;
            double lp = eval().first;
            vals[i] = orig - h;
            double lm = eval().first;
            vals[i] = orig;
            double fd = (lp - lm) / (2.0 * h);
            double an = analytic.grads[s].data[i];
            double denom = std::max({std::abs(fd), std::abs(an), 1e-6});
            max_rel = std::max(max_rel, std::abs(fd - an) / denom);
        }
    }
    return max_rel;
}

}  // namespace nucleo
