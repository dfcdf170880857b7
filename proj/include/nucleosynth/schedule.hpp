// Copyright (c) 2026 nucleosynth contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace nucleo {

enum class ScheduleKind { GaussianLinear, CategoricalCosine };

/// Per-timestep noise coefficients. Arrays are indexed 0..T with the t = 0
/// convention alpha_bar[0] = 1 (betas[0] unused). Stored in double so the
/// chain-equivalence oracles hold to 1e-10.
struct Schedule {
    int t_max = 0;  // T
    ScheduleKind kind = ScheduleKind::GaussianLinear;
    std::vector<double> betas;          // [T+1]
    std::vector<double> alphas;         // [T+1], alpha_t = 1 - beta_t
    std::vector<double> alpha_bars;     // [T+1], product of alphas, alpha_bar[0] = 1
    std::vector<double> posterior_var;  // [T+1], beta_t (1-abar_{t-1})/(1-abar_t); 0 at t=1

    void validate() const;
};

/// Betas linearly interpolated from beta1 to betaT inclusive.
Schedule linear_schedule(int t_max, double beta1, double betaT);

/// alpha_bar_t = f(t)/f(0), f(t) = cos^2(((t/T + s)/(1 + s)) * pi/2);
/// beta_t = 1 - abar_t/abar_{t-1} clipped to <= 0.999.
Schedule cosine_schedule(int t_max, double s = 0.008);

}  // namespace nucleo
