// Copyright (c) 2026 nucleosynth contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <string>
#include <vector>

#include "nucleosynth/conditioning.hpp"
#include "nucleosynth/diffusion.hpp"
#include "nucleosynth/unet.hpp"

namespace nucleo {

struct CondSlots {
    int tissue_table = -1;
    int bucket_table = -1;
    int class_table = -1;
    int stain_table = -1;
    int null_vec = -1;
    int proj_w = -1, proj_b = -1;
};

template <typename T>
CondSlots register_cond(ParamStore<T>& store, int k, int n_tissues, int n_stains, int width,
                        RandomStream& rs, const std::string& prefix = "cond.") {
    CondSlots c;
    c.tissue_table = store.add(prefix + "tissue", init::normal<T>({n_tissues, width}, 0.5, rs));
    c.bucket_table = store.add(prefix + "bucket", init::normal<T>({kNumBuckets, width}, 0.5, rs));
    c.class_table = store.add(prefix + "class", init::normal<T>({k - 1, width}, 0.5, rs));
    c.stain_table = store.add(prefix + "stain", init::normal<T>({n_stains, width}, 0.5, rs));
    c.null_vec = store.add(prefix + "null", init::normal<T>({width}, 0.5, rs));
    c.proj_w = store.add(prefix + "proj.w", init::he_normal<T>({width, width}, width, rs));
    c.proj_b = store.add(prefix + "proj.b", init::zeros<T>({width}));
    return c;
}

/// In-graph prompt encoder; mirrors encode_prompt. Returns a [width] node.
template <typename T>
int encode_prompt_graph(Tape<T>& tape, ParamBinder<T>& bind, const CondSlots& c,
                        const std::optional<Prompt>& p, const PromptVocab& vocab) {
    if (!p.has_value()) return bind(c.null_vec);
    int ti = vocab.tissue_index(p->tissue);
    if (ti < 0) throw std::invalid_argument("encode_prompt_graph: unknown tissue " + p->tissue);
    int acc = tape.add(tape.gather_row(bind(c.tissue_table), ti),
                       tape.gather_row(bind(c.bucket_table), static_cast<int>(p->bucket)));
    if (!p->class_set.empty()) {
        std::vector<int> rows;
        for (int id : p->class_set) rows.push_back(id - 1);
        acc = tape.add(acc, tape.gather_rows_mean(bind(c.class_table), rows));
    }
    if (p->staining) {
        int si = vocab.staining_index(*p->staining);
        if (si < 0)
            throw std::invalid_argument("encode_prompt_graph: unknown staining " + *p->staining);
        acc = tape.add(acc, tape.gather_row(bind(c.stain_table), si));
    }
    return tape.linear(acc, bind(c.proj_w), bind(c.proj_b));
}

struct StageOneConfig {
    int k = 4;
    UNetConfig unet;  // in_ch 6, out_ch 3+k
    int n_tissues = 2, n_stains = 2;
    int t_max = 1000;
    double beta1 = 1e-4, betaT = 0.02;
    double cosine_s = 0.008;
    double lambda_cat = 1.0;
    double lambda_aux = 0.01;
    double p_drop = 0.1;
    uint64_t init_seed = 1;

    static StageOneConfig defaults(int64_t h = 32, int64_t w = 32, int k = 4);
};

/// The stage-1 joint denoiser: U-Net plus the jointly trained prompt tables
/// and the K x 3 label-embedding matrix.
template <typename T>
struct StageOneModel {
    StageOneConfig cfg;
    ParamStore<T> store;
    UNetSlots unet;
    CondSlots cond;
    int label_embed = -1;  // [3, K], conv layout
    Schedule sch_g, sch_c;

    static StageOneModel build(const StageOneConfig& cfg) {
        StageOneModel m;
        m.cfg = cfg;
        RandomStream rs(cfg.init_seed);
        m.label_embed = m.store.add("label_embed.w", init::normal<T>({3, cfg.k}, 0.5, rs));
        m.cond = register_cond(m.store, cfg.k, cfg.n_tissues, cfg.n_stains,
                               cfg.unet.cond_width, rs);
        m.unet = register_unet(m.store, cfg.unet, "unet.", rs);
        m.sch_g = linear_schedule(cfg.t_max, cfg.beta1, cfg.betaT);
        m.sch_c = cosine_schedule(cfg.t_max, cfg.cosine_s);
        return m;
    }

    /// Public label-embedding matrix E in its [K,3] documented layout.
    Field embed_matrix() const
        requires std::is_same_v<T, float>
    {
        const TensorT<T>& e = store.values[static_cast<size_t>(label_embed)];
        Field out({e.shape[1], 3});
        for (int64_t k_ = 0; k_ < e.shape[1]; ++k_)
            for (int64_t c = 0; c < 3; ++c) out.at2(k_, c) = e.at2(c, k_);
        return out;
    }

    PromptTables tables() const
        requires std::is_same_v<T, float>
    {
        PromptTables t;
        t.tissue_table = store.values[static_cast<size_t>(cond.tissue_table)];
        t.bucket_table = store.values[static_cast<size_t>(cond.bucket_table)];
        t.class_table = store.values[static_cast<size_t>(cond.class_table)];
        t.stain_table = store.values[static_cast<size_t>(cond.stain_table)];
        t.null_vec = store.values[static_cast<size_t>(cond.null_vec)];
        t.proj_w = store.values[static_cast<size_t>(cond.proj_w)];
        t.proj_b = store.values[static_cast<size_t>(cond.proj_b)];
        return t;
    }
};

/// Channels 0-2 = ps.x, channels 3-5 = ps.y * E (E is [K,3]).
Field pack_input(const PairState& ps, const Field& embed);

/// HWC Field <-> CHW tensor conversions.
template <typename T>
TensorT<T> hwc_to_chw(const Field& f) {
    const int64_t h = f.shape[0], w = f.shape[1], c = f.shape[2];
    TensorT<T> out({c, h, w});
    for (int64_t r = 0; r < h; ++r)
        for (int64_t cc = 0; cc < w; ++cc)
            for (int64_t ch = 0; ch < c; ++ch)
                out.data[static_cast<size_t>((ch * h + r) * w + cc)] =
                    static_cast<T>(f.at3(r, cc, ch));
    return out;
}

template <typename T>
Field chw_to_hwc(const TensorT<T>& t) {
    const int64_t c = t.shape[0], h = t.shape[1], w = t.shape[2];
    Field out({h, w, c});
    for (int64_t ch = 0; ch < c; ++ch)
        for (int64_t r = 0; r < h; ++r)
            for (int64_t cc = 0; cc < w; ++cc)
                out.at3(r, cc, ch) =
                    static_cast<float>(t.data[static_cast<size_t>((ch * h + r) * w + cc)]);
    return out;
}

/// One training example: structure map (x0), semantic label, prompt.
struct TrainItem {
    Field x0;  // [H,W,3], values in [-1,1]
    LabelGrid label;
    std::optional<Prompt> prompt;
};

/// Fixed stochastic draws of one loss evaluation, so the loss is a pure
/// function of the parameters given the draw (finite differences rely on
/// this).
template <typename T>
struct ItemDraw {
    int t = 1;
    bool dropped = false;
    TensorT<T> eps;    // [3,H,W]
    TensorT<T> x_t;    // [3,H,W]
    TensorT<T> y_t;    // [K,H,W] one-hot
    TensorT<T> y0;     // [K,H,W] one-hot
};

template <typename T>
ItemDraw<T> make_item_draw(const StageOneModel<T>& m, const TrainItem& item, RandomStream rs) {
    const int64_t h = m.cfg.unet.h, w = m.cfg.unet.w;
    const int k = m.cfg.k;
    ItemDraw<T> d;
    d.t = 1 + static_cast<int>(rs.next_below(static_cast<uint64_t>(m.cfg.t_max)));
    d.dropped = rs.next_uniform() < m.cfg.p_drop;

    d.eps = TensorT<T>({3, h, w});
    for (auto& v : d.eps.data) v = static_cast<T>(rs.next_normal());

    TensorT<T> x0 = hwc_to_chw<T>(item.x0);
    d.x_t = TensorT<T>({3, h, w});
    const double abar = m.sch_g.alpha_bars[d.t];
    const T a = static_cast<T>(std::sqrt(abar)), b = static_cast<T>(std::sqrt(1.0 - abar));
    for (size_t i = 0; i < d.x_t.data.size(); ++i)
        d.x_t.data[i] = a * x0.data[i] + b * d.eps.data[i];

    d.y0 = TensorT<T>({k, h, w});
    d.y_t = TensorT<T>({k, h, w});
    const double abar_c = m.sch_c.alpha_bars[d.t];
    std::vector<float> probs(static_cast<size_t>(k));
    for (int64_t p = 0; p < h * w; ++p) {
        int cls = item.label.ids[static_cast<size_t>(p)];
        d.y0.data[static_cast<size_t>(cls * h * w + p)] = T(1);
        for (int j = 0; j < k; ++j)
            probs[static_cast<size_t>(j)] = static_cast<float>(
                (j == cls ? abar_c : 0.0) + (1.0 - abar_c) / static_cast<double>(k));
        int drawn = rs.draw_categorical(probs.data(), k);
        d.y_t.data[static_cast<size_t>(drawn * h * w + p)] = T(1);
    }
    return d;
}

template <typename T>
struct ItemLossGraph {
    int loss_node = -1;
    double const_term = 0.0;  // sum q log q part of the KL, no gradient
    int eps_hat = -1, logits = -1;
};

/// Joint loss given already-produced network output nodes. Split out so the
/// perfect-prediction tests can feed mock outputs.
template <typename T>
ItemLossGraph<T> build_pair_loss(Tape<T>& tape, int eps_hat, int logits, const ItemDraw<T>& d,
                                 const Schedule& sch_c, double lambda_cat, double lambda_aux) {
    const int64_t k = tape.val(logits).shape[0];
    const int64_t hw = tape.val(logits).shape[1] * tape.val(logits).shape[2];
    ItemLossGraph<T> g;
    g.eps_hat = eps_hat;
    g.logits = logits;

    int mse = tape.mse_to_const(eps_hat, d.eps);

    int y0h = tape.channel_softmax(logits);
    const double abar_prev = sch_c.alpha_bars[d.t - 1];
    const double alpha_t = sch_c.alphas[d.t];
    int mprev = tape.affine_const(y0h, static_cast<T>(abar_prev),
                                  static_cast<T>((1.0 - abar_prev) / static_cast<double>(k)));
    // A = alpha_t * y_t + beta_t / K (constant w.r.t. parameters).
    TensorT<T> a_const(d.y_t.shape);
    for (size_t i = 0; i < a_const.data.size(); ++i)
        a_const.data[i] = static_cast<T>(alpha_t) * d.y_t.data[i] +
                          static_cast<T>((1.0 - alpha_t) / static_cast<double>(k));
    int a_node = tape.input(std::move(a_const));
    int pu = tape.mul(mprev, a_node);
    int den = tape.channel_sum(pu);
    int p = tape.div_broadcast(pu, den);
    int logp = tape.log_floor(p, static_cast<T>(1e-12));

    const T inv_hw = static_cast<T>(1.0 / static_cast<double>(hw));
    int main_node;
    if (d.t > 1) {
        // True posterior q per pixel, in double.
        TensorT<T> qw(d.y_t.shape);
        std::vector<double> yt(static_cast<size_t>(k)), y0(static_cast<size_t>(k)),
            q(static_cast<size_t>(k));
        double const_term = 0.0;
        for (int64_t pix = 0; pix < hw; ++pix) {
            for (int64_t j = 0; j < k; ++j) {
                yt[static_cast<size_t>(j)] =
                    static_cast<double>(d.y_t.data[static_cast<size_t>(j * hw + pix)]);
                y0[static_cast<size_t>(j)] =
                    static_cast<double>(d.y0.data[static_cast<size_t>(j * hw + pix)]);
            }
            cat_posterior_row(yt.data(), y0.data(), static_cast<int>(k), alpha_t, abar_prev,
                              q.data());
            for (int64_t j = 0; j < k; ++j) {
                qw.data[static_cast<size_t>(j * hw + pix)] =
                    static_cast<T>(-q[static_cast<size_t>(j)]) * inv_hw;
                if (q[static_cast<size_t>(j)] > 0.0)
                    const_term += q[static_cast<size_t>(j)] *
                                  std::log(std::max(q[static_cast<size_t>(j)], 1e-12));
            }
        }
        g.const_term = lambda_cat * const_term / static_cast<double>(hw);
        main_node = tape.weighted_sum(logp, std::move(qw));  // = -sum q log p / HW
    } else {
        TensorT<T> w0(d.y0.shape);
        for (size_t i = 0; i < w0.data.size(); ++i) w0.data[i] = -d.y0.data[i] * inv_hw;
        main_node = tape.weighted_sum(logp, std::move(w0));
    }

    int logy0h = tape.log_floor(y0h, static_cast<T>(1e-12));
    TensorT<T> ce_w(d.y0.shape);
    for (size_t i = 0; i < ce_w.data.size(); ++i)
        ce_w.data[i] = -d.y0.data[i] * inv_hw * static_cast<T>(lambda_aux);
    int ce_node = tape.weighted_sum(logy0h, std::move(ce_w));

    int cat_node = tape.add(main_node, ce_node);
    g.loss_node = tape.add(mse, tape.scale(cat_node, static_cast<T>(lambda_cat)));
    return g;
}

/// Full per-item graph: pack -> U-Net -> joint loss.
template <typename T>
ItemLossGraph<T> build_item_loss(Tape<T>& tape, ParamBinder<T>& bind, const StageOneModel<T>& m,
                                 const ItemDraw<T>& d, const std::optional<Prompt>& prompt,
                                 const PromptVocab& vocab) {
    int x_t = tape.input(d.x_t);
    int y_t = tape.input(d.y_t);
    int zero_bias = tape.input(TensorT<T>({3}));
    int emb = tape.conv2d(y_t, bind(m.label_embed), zero_bias, 1, 1);
    int packed = tape.concat_ch(x_t, emb);

    int cond_emb = (d.dropped || !prompt.has_value())
                       ? bind(m.cond.null_vec)
                       : encode_prompt_graph(tape, bind, m.cond, prompt, vocab);
    UNetForwardResult fwd = unet_forward(tape, bind, m.unet, packed, d.t, cond_emb);
    int eps_hat = tape.slice_ch(fwd.out, 0, 3);
    int logits = tape.slice_ch(fwd.out, 3, 3 + m.cfg.k);
    return build_pair_loss(tape, eps_hat, logits, d, m.sch_c, m.cfg.lambda_cat, m.cfg.lambda_aux);
}

/// Batch loss with exact parameter gradients; items are processed with split
/// child streams and reduced in index order.
template <typename T>
double stage1_batch_loss(const StageOneModel<T>& m, const std::vector<TrainItem>& batch,
                         RandomStream rs, const PromptVocab& vocab, ParamGrads<T>& grads_out) {
    if (batch.empty()) throw std::invalid_argument("stage1_batch_loss: empty batch");
    const int64_t n = static_cast<int64_t>(batch.size());
    std::vector<double> values(static_cast<size_t>(n));
    std::vector<std::unique_ptr<ParamGrads<T>>> grads(static_cast<size_t>(n));
    parallel_for(n, [&](int64_t i) {
        RandomStream item_rs = rs.child(static_cast<uint64_t>(i));
        ItemDraw<T> d = make_item_draw(m, batch[static_cast<size_t>(i)], item_rs);
        Tape<T> tape(true);
        ParamBinder<T> bind(tape, m.store, true);
        ItemLossGraph<T> g =
            build_item_loss(tape, bind, m, d, batch[static_cast<size_t>(i)].prompt, vocab);
        grads[static_cast<size_t>(i)] = std::make_unique<ParamGrads<T>>(m.store);
        tape.backward(g.loss_node, *grads[static_cast<size_t>(i)]);
        values[static_cast<size_t>(i)] =
            static_cast<double>(tape.val(g.loss_node).data[0]) + g.const_term;
    });
    const T inv_n = static_cast<T>(1.0 / static_cast<double>(n));
    double total = 0.0;
    for (int64_t i = 0; i < n; ++i) {
        total += values[static_cast<size_t>(i)];
        grads_out.add_scaled(*grads[static_cast<size_t>(i)], inv_n);
    }
    return total / static_cast<double>(n);
}

// ----- training (float) -----

struct AdamConfig {
    double lr = 2e-4;
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    double ema_decay = 0.999;
    int batch = 16;
    int checkpoint_every = 0;          // 0 = only final
    std::string checkpoint_dir;        // empty = no checkpoints
    std::string curve_path;            // empty = no CSV
};

struct Adam {
    explicit Adam(const ParamStore<float>& store);
    void step(ParamStore<float>& store, const ParamGrads<float>& grads, const AdamConfig& cfg);
    int64_t steps_done = 0;
    std::vector<TensorT<float>> m, v;
};

struct Ema {
    explicit Ema(const ParamStore<float>& store);
    void update(const ParamStore<float>& store, double decay);
    ParamStore<float> snapshot(const ParamStore<float>& like) const;
    std::vector<TensorT<float>> shadow;
};

struct CurvePoint {
    int64_t step;
    double loss;
    double ema_loss;
};

struct TrainResult {
    std::vector<CurvePoint> curve;
    Ema ema;
};

/// Adam + EMA loop over the prepared items. Aborts on non-finite loss.
TrainResult train_stage1(StageOneModel<float>& model, const std::vector<TrainItem>& items,
                         const AdamConfig& opt, int64_t steps, RandomStream rs,
                         const PromptVocab& vocab);

void write_curve_csv(const std::string& path, const std::vector<CurvePoint>& curve);

/// Inference hook for sample_pair: runs the network without recording.
PairModelFn make_stage1_model_fn(const StageOneModel<float>& model, const PromptEmbedding& cond,
                                 const PromptEmbedding& uncond);

/// Max symmetric relative error between analytic gradients and central
/// finite differences on a double-precision model (gradient-check mode).
double gradient_check(const StageOneConfig& tiny_cfg, const TrainItem& item,
                      const PromptVocab& vocab, uint64_t seed, double fd_step = 1e-5);

}  // namespace nucleo
