// Copyright (c) 2026 nucleosynth contributors
// SPDX-License-Identifier: Apache-2.0
#include "nucleosynth/schedule.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace nucleo {

void Schedule::validate() const {
    if (t_max < 1) throw std::invalid_argument("Schedule: T must be >= 1");
    if (static_cast<int>(betas.size()) != t_max + 1 || alphas.size() != betas.size() ||
        alpha_bars.size() != betas.size() || posterior_var.size() != betas.size())
        throw std::logic_error("Schedule: array lengths inconsistent");
    if (alpha_bars[0] != 1.0) throw std::logic_error("Schedule: alpha_bar[0] must be 1");
    for (int t = 1; t <= t_max; ++t) {
        if (!(betas[t] > 0.0 && betas[t] < 1.0))
            throw std::logic_error("Schedule: beta out of (0,1) at t=" + std::to_string(t));
        if (!(alpha_bars[t] < alpha_bars[t - 1]))
            throw std::logic_error("Schedule: alpha_bar not strictly decreasing at t=" +
                                   std::to_string(t));
    }
}

namespace {

Schedule from_betas(int t_max, std::vector<double> betas, ScheduleKind kind) {
    Schedule s;
    s.t_max = t_max;
    s.kind = kind;
    s.betas = std::move(betas);
    s.alphas.assign(static_cast<size_t>(t_max + 1), 1.0);
    s.alpha_bars.assign(static_cast<size_t>(t_max + 1), 1.0);
    s.posterior_var.assign(static_cast<size_t>(t_max + 1), 0.0);
    for (int t = 1; t <= t_max; ++t) {
        s.alphas[t] = 1.0 - s.betas[t];
        s.alpha_bars[t] = s.alpha_bars[t - 1] * s.alphas[t];
        // sigma~_1^2 = 0 by convention (alpha_bar_0 = 1).
        s.posterior_var[t] = s.betas[t] * (1.0 - s.alpha_bars[t - 1]) / (1.0 - s.alpha_bars[t]);
    }
    s.validate();
    return s;
}

}  // namespace

Schedule linear_schedule(int t_max, double beta1, double betaT) {
    if (t_max < 1) throw std::invalid_argument("linear_schedule: T must be >= 1");
    if (!(beta1 > 0.0 && beta1 <= betaT && betaT < 1.0))
        throw std::invalid_argument("linear_schedule: need 0 < beta1 <= betaT < 1");
    std::vector<double> betas(static_cast<size_t>(t_max + 1), 0.0);
    for (int t = 1; t <= t_max; ++t)
        betas[t] = t_max == 1 ? beta1
                              : beta1 + (betaT - beta1) * static_cast<double>(t - 1) /
                                            static_cast<double>(t_max - 1);
    return from_betas(t_max, std::move(betas), ScheduleKind::GaussianLinear);
}

Schedule cosine_schedule(int t_max, double s) {
    if (t_max < 1) throw std::invalid_argument("cosine_schedule: T must be >= 1");
    if (!(s > 0.0)) throw std::invalid_argument("cosine_schedule: s must be > 0");
    auto f = [&](double t) {
        double x = ((t / t_max) + s) / (1.0 + s) * std::numbers::pi / 2.0;
        double c = std::cos(x);
        return c * c;
    };
    const double f0 = f(0.0);
    std::vector<double> betas(static_cast<size_t>(t_max + 1), 0.0);
    double abar_prev = 1.0;
    for (int t = 1; t <= t_max; ++t) {
        double abar = f(static_cast<double>(t)) / f0;
        double beta = 1.0 - abar / abar_prev;
        betas[t] = std::min(beta, 0.999);
        abar_prev = abar_prev * (1.0 - betas[t]);
    }
    return from_betas(t_max, std::move(betas), ScheduleKind::CategoricalCosine);
}

}  // namespace nucleo
