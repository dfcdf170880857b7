// Copyright (c) 2026 nucleosynth contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <string>
#include <vector>

#include "nucleosynth/denoiser.hpp"
#include "nucleosynth/geometry.hpp"

namespace nucleo {

// ----- autoencoder -----

struct AEConfig {
    int64_t h = 32, w = 32;
    int width = 32;
    int latent_ch = 4;  // latent is (h/4) x (w/4) x latent_ch
    uint64_t init_seed = 11;
};

/// Deterministic convolutional autoencoder with plain L2 reconstruction.
struct AEModel {
    AEConfig cfg;
    ParamStore<float> store;
    int e1w, e1b, e2w, e2b, e3w, e3b, e4w, e4b, e5w, e5b;
    int d1w, d1b, d2w, d2b, d3w, d3b, d4w, d4b, d5w, d5b;
    float scale_factor = 1.0f;

    static AEModel build(const AEConfig& cfg);
    int64_t latent_h() const { return cfg.h / 4; }
    int64_t latent_w() const { return cfg.w / 4; }
};

/// Image [H,W,3] in [0,1] -> latent [h/4, w/4, latent_ch] (scaled).
Field ae_encode(const AEModel& m, const Field& image);
/// Latent -> image [H,W,3], clamped to [0,1].
Field ae_decode(const AEModel& m, const Field& latent);

struct AETrainStats {
    std::vector<CurvePoint> curve;
};

AETrainStats train_ae(AEModel& m, const std::vector<Field>& images, const AdamConfig& opt,
                      int64_t steps, RandomStream rs);

/// scale_factor := 1 / std of raw (unscaled) latents over the corpus.
void fit_scale_factor(AEModel& m, const std::vector<Field>& images);

Checkpoint ae_checkpoint(const AEModel& m);
void ae_load(AEModel& m, const Checkpoint& ck);

// ----- frozen base latent denoiser -----

struct StageTwoConfig {
    UNetConfig unet;  // latent-space denoiser
    int t_max = 1000;
    double beta1 = 1e-4, betaT = 0.02;
    double p_drop = 0.1;
    uint64_t init_seed = 13;

    static StageTwoConfig defaults(int latent_ch = 4, int64_t latent_h = 8, int64_t latent_w = 8);
};

struct BaseModel {
    StageTwoConfig cfg;
    ParamStore<float> store;
    UNetSlots unet;
    Schedule sch;

    static BaseModel build(const StageTwoConfig& cfg);
};

/// One stage-2 training example; the prompt embedding comes from the frozen
/// stage-1 tables.
struct LatentItem {
    TensorT<float> z0;     // [C,h,w] scaled latent
    Field cond;            // c_pr vector
};

struct BaseTrainStats {
    std::vector<CurvePoint> curve;
};

/// eps-prediction training in latent space; the null embedding replaces the
/// prompt with probability p_drop.
BaseTrainStats train_base(BaseModel& m, const std::vector<LatentItem>& items, const Field& null_vec,
                          const AdamConfig& opt, int64_t steps, RandomStream rs);

/// Plain (no-grad) base forward.
TensorT<float> base_forward(const BaseModel& m, const TensorT<float>& z_t, int t,
                            const Field& cond);

// ----- control branch -----

/// Trainable copy of the base down path plus a c_s embedding stack; taps
/// enter the base decoder through zero-initialized 1x1 connections.
struct ControlBranch {
    ParamStore<float> store;
    UNetSlots copy;  // stem/down/temb/cond slots only (up/head unused)
    int cs_channels = 0;
    int h1w = -1, h1b = -1, h2w = -1, h2b = -1, h3w = -1, h3b = -1;
    std::vector<int> zc_w, zc_b;  // one per tap, then one for the bottleneck

    static ControlBranch build(const BaseModel& base, int cs_channels, uint64_t seed);
};

/// Controlled forward graph; binds the base frozen or trainable per binder.
int build_controlled_forward(Tape<float>& tape, const BaseModel& base,
                             ParamBinder<float>& bind_base, const ControlBranch& branch,
                             ParamBinder<float>& bind_branch, int z_t, int t, int cond_emb,
                             int c_s);

/// Plain (no-grad) controlled forward for sampling and the identity checks.
TensorT<float> controlled_forward(const BaseModel& base, const ControlBranch& branch,
                                  const TensorT<float>& z_t, int t, const Field& cond,
                                  const TensorT<float>& c_s);

struct ControlItem {
    TensorT<float> z0;   // [C,h,w]
    TensorT<float> c_s;  // [K+3,H,W]
    Field cond;
};

struct ControlTrainStats {
    std::vector<CurvePoint> curve;
};

/// Updates branch parameters only; the base store is bound frozen and its
/// content hash is asserted unchanged.
ControlTrainStats finetune_control(const BaseModel& base, ControlBranch& branch,
                                   const std::vector<ControlItem>& items, const Field& null_vec,
                                   const AdamConfig& opt, int64_t steps, RandomStream rs);

// ----- sampling -----

struct Stage2Sampler {
    const BaseModel* base = nullptr;
    const ControlBranch* branch = nullptr;
    const AEModel* ae = nullptr;
    PromptTables tables;
    PromptVocab vocab;
    int n_steps = 100;
    float guidance_w = 1.0f;
};

/// Label/instance -> c_s; prompt -> c_pr; DDIM in latent space through the
/// controlled forward; decode to an image.
Field sample_image(const Stage2Sampler& s, const LabelGrid& label, const InstanceGrid& instance,
                   const Prompt& prompt, RandomStream& rs);

/// Wall-clock seconds per sample of the full latent path (controlled
/// forward + decode), averaged over `n` samples.
double time_latent_sampling(const Stage2Sampler& s, const LabelGrid& label,
                            const InstanceGrid& instance, const Prompt& prompt, int n,
                            RandomStream& rs);

/// Matched-width pixel-space DDIM sampler timing (32x32x3, same step count);
/// the reference point for the latent-efficiency comparison.
double time_pixel_sampling(int width, int64_t h, int64_t w, int n_steps, int n, RandomStream& rs);

}  // namespace nucleo
