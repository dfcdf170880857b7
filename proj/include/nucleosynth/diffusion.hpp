// Copyright (c) 2026 nucleosynth contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <vector>

#include "nucleosynth/field.hpp"
#include "nucleosynth/random.hpp"
#include "nucleosynth/schedule.hpp"

namespace nucleo {

/// Joint diffusion state m_t: real-valued structure channels plus per-pixel
/// class probabilities (exactly one-hot after forward sampling).
struct PairState {
    Field x;  // [H,W,3]
    Field y;  // [H,W,K]
    int t = 0;
};

void check_pair_state(const PairState& ps);

// Scalar per-pixel cores (double). The Field operations apply these per
// pixel, so the chain-equivalence oracles can test the actual compute path.

/// Marginal q(y_t | y0): abar * y0 + (1 - abar)/K.
void cat_marginal_row(const double* y0, int k, double abar, double* out);

/// Posterior q(y_s | y_t, y0hat) for the strided chain:
/// normalize([ar*y_t + (1-ar)/K] . [abar_s*y0hat + (1-abar_s)/K]),
/// where ar = abar_t/abar_s. The single-step case s = t-1 has ar = alpha_t.
void cat_posterior_row(const double* yt, const double* y0hat, int k, double alpha_ratio,
                       double abar_s, double* out);

/// Marginal sample x_t = sqrt(abar_t) x0 + sqrt(1-abar_t) eps.
Field q_sample_gaussian(const Field& x0, int t, const Field& eps, const Schedule& sch);

/// One DDIM update t -> t_prev. x0hat is clipped to [-1,1]; eta = 0 is
/// deterministic. If the direction coefficient goes negative numerically it
/// is clamped to 0 and *clamped_flag set.
Field ddim_step(const Field& x_t, const Field& eps_hat, int t, int t_prev, const Schedule& sch,
                double eta, RandomStream& rs, bool* clamped_flag = nullptr);

/// Mean squared error over all elements.
double eps_mse_loss(const Field& eps, const Field& eps_hat);

/// Per-pixel categorical marginal probabilities at timestep t.
Field q_marginal_cat(const Field& y0, int t, const Schedule& sch);

/// Per-pixel posterior parameter Theta for p(y_{t-1} | y_t) given y0hat.
Field posterior_cat(const Field& y_t, const Field& y0_hat, int t, const Schedule& sch);

/// Strided variant: posterior of y_s given y_t (s < t).
Field posterior_cat_strided(const Field& y_t, const Field& y0_hat, int t, int s,
                            const Schedule& sch);

/// KL(q(y_{t-1}|y_t,y0) || p(y_{t-1}|y_t)) for t>1, -log p(y0|y1) at t=1,
/// plus lambda_aux * CE(y0, y0hat); mean over pixels. Reference (non
/// -differentiable) evaluation; the training tape rebuilds the same formula.
double vlb_cat_loss(const Field& y0, const Field& y_t, const Field& y0_hat, int t,
                    const Schedule& sch, double lambda_aux = 0.01);

/// Forward-noises both parts of the pair with independent draws.
PairState forward_pair(const Field& x0, const Field& y0, int t, RandomStream& rs,
                       const Schedule& sch_g, const Schedule& sch_c);

struct PairModelOutput {
    Field eps;     // [H,W,3]
    Field logits;  // [H,W,K]
};

/// Denoiser hook: predicts (eps_hat, y0 logits) for a pair state; the flag
/// selects the conditional or the null-embedding pass.
using PairModelFn = std::function<PairModelOutput(const PairState&, int t, bool conditional)>;

/// Strictly decreasing timestep list T = steps[0] > ... > steps.back() = 0.
std::vector<int> make_stride(int t_max, int n_steps);

struct PairSample {
    Field x0;      // [H,W,3], clipped to [-1,1]
    LabelGrid y0;  // argmax classes
    Field y0_probs;  // final predicted y0hat [H,W,K]
};

/// Reverse pass over the stride: DDIM (eta=0) on the Gaussian part, strided
/// ancestral sampling on the categorical part, classifier-free guidance with
/// weight w applied to both model outputs before each update.
PairSample sample_pair(const PairModelFn& model, const std::vector<int>& stride,
                       RandomStream& rs, const Schedule& sch_g, const Schedule& sch_c,
                       float guidance_w, int64_t h, int64_t w, int k);

}  // namespace nucleo
