// Copyright (c) 2026 nucleosynth contributors
// SPDX-License-Identifier: Apache-2.0
#include "nucleosynth/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "nucleosynth/conditioning.hpp"

namespace nucleo {

namespace {

constexpr double kLogFloor = 1e-12;

void require_t(int t, const Schedule& sch, const char* what) {
    if (t < 1 || t > sch.t_max)
        throw std::invalid_argument(std::string(what) + ": t=" + std::to_string(t) +
                                    " outside 1..T=" + std::to_string(sch.t_max));
}

void require_same_shape(const Field& a, const Field& b, const char* what) {
    if (!a.same_shape(b))
        throw std::invalid_argument(std::string(what) + ": shape mismatch " +
                                    shape_str(a.shape) + " vs " + shape_str(b.shape));
}

}  // namespace

void check_pair_state(const PairState& ps) {
    if (ps.x.rank() != 3 || ps.x.shape[2] != 3)
        throw std::invalid_argument("PairState: x must be [H,W,3]");
    if (ps.y.rank() != 3 || ps.y.shape[0] != ps.x.shape[0] || ps.y.shape[1] != ps.x.shape[1])
        throw std::invalid_argument("PairState: y must be [H,W,K] aligned with x");
    const int64_t hw = ps.y.shape[0] * ps.y.shape[1];
    const int k = static_cast<int>(ps.y.shape[2]);
    for (int64_t p = 0; p < hw; ++p) {
        double sum = 0.0;
        for (int j = 0; j < k; ++j) sum += ps.y.data[static_cast<size_t>(p * k + j)];
        if (std::abs(sum - 1.0) > 1e-5)
            throw std::invalid_argument("PairState: y row off the simplex at pixel " +
                                        std::to_string(p));
    }
}

void cat_marginal_row(const double* y0, int k, double abar, double* out) {
    const double mix = (1.0 - abar) / static_cast<double>(k);
    for (int j = 0; j < k; ++j) out[j] = abar * y0[j] + mix;
}

void cat_posterior_row(const double* yt, const double* y0hat, int k, double alpha_ratio,
                       double abar_s, double* out) {
    const double mix_t = (1.0 - alpha_ratio) / static_cast<double>(k);
    const double mix_s = (1.0 - abar_s) / static_cast<double>(k);
    double sum = 0.0;
    for (int j = 0; j < k; ++j) {
        out[j] = (alpha_ratio * yt[j] + mix_t) * (abar_s * y0hat[j] + mix_s);
        sum += out[j];
    }
    if (!(sum > 0.0))
        throw std::runtime_error("cat_posterior_row: all-zero unnormalized posterior");
    for (int j = 0; j < k; ++j) out[j] /= sum;
}

Field q_sample_gaussian(const Field& x0, int t, const Field& eps, const Schedule& sch) {
    require_t(t, sch, "q_sample_gaussian");
    require_same_shape(x0, eps, "q_sample_gaussian");
    const double abar = sch.alpha_bars[t];
    const float a = static_cast<float>(std::sqrt(abar));
    const float b = static_cast<float>(std::sqrt(1.0 - abar));
    Field out(x0.shape);
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] = a * x0.data[i] + b * eps.data[i];
    return out;
}

Field ddim_step(const Field& x_t, const Field& eps_hat, int t, int t_prev, const Schedule& sch,
                double eta, RandomStream& rs, bool* clamped_flag) {
    require_t(t, sch, "ddim_step");
    if (t_prev < 0 || t_prev >= t)
        throw std::invalid_argument("ddim_step: need 0 <= t_prev < t");
    if (eta < 0.0 || eta > 1.0) throw std::invalid_argument("ddim_step: eta outside [0,1]");
    require_same_shape(x_t, eps_hat, "ddim_step");

    const double abar_t = sch.alpha_bars[t];
    const double abar_p = sch.alpha_bars[t_prev];
    const double sigma =
        eta * std::sqrt((1.0 - abar_p) / (1.0 - abar_t)) * std::sqrt(1.0 - abar_t / abar_p);
    double dir2 = 1.0 - abar_p - sigma * sigma;
    if (dir2 < 0.0) {
        dir2 = 0.0;
        if (clamped_flag) *clamped_flag = true;
    }
    const float inv_sqrt_abar_t = static_cast<float>(1.0 / std::sqrt(abar_t));
    const float sqrt_one_minus_abar_t = static_cast<float>(std::sqrt(1.0 - abar_t));
    const float sqrt_abar_p = static_cast<float>(std::sqrt(abar_p));
    const float dir = static_cast<float>(std::sqrt(dir2));
    const float sg = static_cast<float>(sigma);

    Field out(x_t.shape);
    for (size_t i = 0; i < out.data.size(); ++i) {
        float x0hat = (x_t.data[i] - sqrt_one_minus_abar_t * eps_hat.data[i]) * inv_sqrt_abar_t;
        x0hat = std::clamp(x0hat, -1.0f, 1.0f);
        float v = sqrt_abar_p * x0hat + dir * eps_hat.data[i];
        if (sigma > 0.0) v += sg * static_cast<float>(rs.next_normal());
        out.data[i] = v;
    }
    return out;
}

double eps_mse_loss(const Field& eps, const Field& eps_hat) {
    require_same_shape(eps, eps_hat, "eps_mse_loss");
    double acc = 0.0;
    for (size_t i = 0; i < eps.data.size(); ++i) {
        double d = static_cast<double>(eps.data[i]) - static_cast<double>(eps_hat.data[i]);
        acc += d * d;
    }
    return acc / static_cast<double>(eps.data.size());
}

Field q_marginal_cat(const Field& y0, int t, const Schedule& sch) {
    require_t(t, sch, "q_marginal_cat");
    if (y0.rank() != 3) throw std::invalid_argument("q_marginal_cat: y0 must be [H,W,K]");
    const int k = static_cast<int>(y0.shape[2]);
    const int64_t hw = y0.shape[0] * y0.shape[1];
    const double abar = sch.alpha_bars[t];
    Field out(y0.shape);
    std::vector<double> row(static_cast<size_t>(k)), res(static_cast<size_t>(k));
    for (int64_t p = 0; p < hw; ++p) {
        for (int j = 0; j < k; ++j) row[j] = y0.data[static_cast<size_t>(p * k + j)];
        cat_marginal_row(row.data(), k, abar, res.data());
        for (int j = 0; j < k; ++j)
            out.data[static_cast<size_t>(p * k + j)] = static_cast<float>(res[j]);
    }
    return out;
}

Field posterior_cat_strided(const Field& y_t, const Field& y0_hat, int t, int s,
                            const Schedule& sch) {
    require_t(t, sch, "posterior_cat");
    if (s < 0 || s >= t) throw std::invalid_argument("posterior_cat: need 0 <= s < t");
    require_same_shape(y_t, y0_hat, "posterior_cat");
    const int k = static_cast<int>(y_t.shape[2]);
    const int64_t hw = y_t.shape[0] * y_t.shape[1];
    const double alpha_ratio = sch.alpha_bars[t] / sch.alpha_bars[s];
    const double abar_s = sch.alpha_bars[s];
    Field out(y_t.shape);
    std::vector<double> yt(static_cast<size_t>(k)), y0(static_cast<size_t>(k)),
        res(static_cast<size_t>(k));
    for (int64_t p = 0; p < hw; ++p) {
        for (int j = 0; j < k; ++j) {
            yt[j] = y_t.data[static_cast<size_t>(p * k + j)];
            y0[j] = y0_hat.data[static_cast<size_t>(p * k + j)];
        }
        cat_posterior_row(yt.data(), y0.data(), k, alpha_ratio, abar_s, res.data());
        for (int j = 0; j < k; ++j)
            out.data[static_cast<size_t>(p * k + j)] = static_cast<float>(res[j]);
    }
    return out;
}

Field posterior_cat(const Field& y_t, const Field& y0_hat, int t, const Schedule& sch) {
    return posterior_cat_strided(y_t, y0_hat, t, t - 1, sch);
}

double vlb_cat_loss(const Field& y0, const Field& y_t, const Field& y0_hat, int t,
                    const Schedule& sch, double lambda_aux) {
    require_t(t, sch, "vlb_cat_loss");
    require_same_shape(y0, y_t, "vlb_cat_loss");
    require_same_shape(y0, y0_hat, "vlb_cat_loss");
    const int k = static_cast<int>(y0.shape[2]);
    const int64_t hw = y0.shape[0] * y0.shape[1];
    const double alpha_t = sch.alphas[t];
    const double abar_prev = sch.alpha_bars[t - 1];

    std::vector<double> yt(static_cast<size_t>(k)), y0r(static_cast<size_t>(k)),
        y0h(static_cast<size_t>(k)), q(static_cast<size_t>(k)), p(static_cast<size_t>(k));
    double acc = 0.0;
    for (int64_t pix = 0; pix < hw; ++pix) {
        for (int j = 0; j < k; ++j) {
            yt[j] = y_t.data[static_cast<size_t>(pix * k + j)];
            y0r[j] = y0.data[static_cast<size_t>(pix * k + j)];
            y0h[j] = y0_hat.data[static_cast<size_t>(pix * k + j)];
        }
        cat_posterior_row(yt.data(), y0h.data(), k, alpha_t, abar_prev, p.data());
        double main = 0.0;
        if (t > 1) {
            cat_posterior_row(yt.data(), y0r.data(), k, alpha_t, abar_prev, q.data());
            for (int j = 0; j < k; ++j) {
                if (q[j] <= 0.0) continue;
                main += q[j] * (std::log(std::max(q[j], kLogFloor)) -
                                std::log(std::max(p[j], kLogFloor)));
            }
        } else {
            for (int j = 0; j < k; ++j)
                if (y0r[j] > 0.5) main = -std::log(std::max(p[j], kLogFloor));
        }
        double ce = 0.0;
        for (int j = 0; j < k; ++j)
            if (y0r[j] > 0.5) ce = -std::log(std::max(y0h[j], kLogFloor));
        acc += main + lambda_aux * ce;
    }
    return acc / static_cast<double>(hw);
}

PairState forward_pair(const Field& x0, const Field& y0, int t, RandomStream& rs,
                       const Schedule& sch_g, const Schedule& sch_c) {
    if (x0.rank() != 3 || y0.rank() != 3 || x0.shape[0] != y0.shape[0] ||
        x0.shape[1] != y0.shape[1])
        throw std::invalid_argument("forward_pair: x0/y0 extents misaligned");
    PairState ps;
    ps.t = t;
    Field eps = rs.draw_normal(x0.shape);
    ps.x = q_sample_gaussian(x0, t, eps, sch_g);

    require_t(t, sch_c, "forward_pair");
    const int k = static_cast<int>(y0.shape[2]);
    const int64_t hw = y0.shape[0] * y0.shape[1];
    const double abar = sch_c.alpha_bars[t];
    ps.y = Field(y0.shape);
    std::vector<double> row(static_cast<size_t>(k)), probs(static_cast<size_t>(k));
    std::vector<float> probs_f(static_cast<size_t>(k));
    for (int64_t p = 0; p < hw; ++p) {
        for (int j = 0; j < k; ++j) row[j] = y0.data[static_cast<size_t>(p * k + j)];
        cat_marginal_row(row.data(), k, abar, probs.data());
        for (int j = 0; j < k; ++j) probs_f[j] = static_cast<float>(probs[j]);
        int drawn = rs.draw_categorical(probs_f.data(), k);
        for (int j = 0; j < k; ++j)
            ps.y.data[static_cast<size_t>(p * k + j)] = (j == drawn) ? 1.0f : 0.0f;
    }
    return ps;
}

std::vector<int> make_stride(int t_max, int n_steps) {
    if (n_steps < 1 || n_steps > t_max)
        throw std::invalid_argument("make_stride: need 1 <= n_steps <= T");
    std::vector<int> stride;
    for (int i = 0; i <= n_steps; ++i) {
        int t = static_cast<int>(std::llround(static_cast<double>(t_max) *
                                              static_cast<double>(n_steps - i) /
                                              static_cast<double>(n_steps)));
        if (stride.empty() || t < stride.back()) stride.push_back(t);
    }
    if (stride.front() != t_max || stride.back() != 0)
        throw std::logic_error("make_stride: endpoints wrong");
    return stride;
}

PairSample sample_pair(const PairModelFn& model, const std::vector<int>& stride,
                       RandomStream& rs, const Schedule& sch_g, const Schedule& sch_c,
                       float guidance_w, int64_t h, int64_t w, int k) {
    if (stride.size() < 2 || stride.front() != sch_g.t_max || stride.back() != 0)
        throw std::invalid_argument("sample_pair: stride must run from T down to 0");
    for (size_t i = 1; i < stride.size(); ++i)
        if (stride[i] >= stride[i - 1])
            throw std::invalid_argument("sample_pair: stride must be strictly decreasing");
    if (sch_g.t_max != sch_c.t_max)
        throw std::invalid_argument("sample_pair: schedules must share T");

    PairState ps;
    ps.t = sch_g.t_max;
    ps.x = rs.draw_normal({h, w, 3});
    // y_T ~ uniform categorical.
    ps.y = Field({h, w, static_cast<int64_t>(k)});
    {
        std::vector<float> uniform(static_cast<size_t>(k), 1.0f / static_cast<float>(k));
        for (int64_t p = 0; p < h * w; ++p) {
            int drawn = rs.draw_categorical(uniform.data(), k);
            ps.y.data[static_cast<size_t>(p * k + drawn)] = 1.0f;
        }
    }

    Field y0_probs;
    for (size_t step = 0; step + 1 < stride.size(); ++step) {
        const int t = stride[step];
        const int s = stride[step + 1];
        PairModelOutput out = model(ps, t, true);
        if (!out.eps.same_shape(ps.x) || !out.logits.same_shape(ps.y))
            throw std::runtime_error("sample_pair: model output shape mismatch");
        Field eps = out.eps;
        Field logits = out.logits;
        if (guidance_w != 1.0f) {
            PairModelOutput unc = model(ps, t, false);
            eps = guide(out.eps, unc.eps, guidance_w);
            logits = guide(out.logits, unc.logits, guidance_w);
        }
        // Softmax per pixel -> predicted y0hat.
        y0_probs = Field(ps.y.shape);
        for (int64_t p = 0; p < h * w; ++p) {
            float m = logits.data[static_cast<size_t>(p * k)];
            for (int j = 1; j < k; ++j)
                m = std::max(m, logits.data[static_cast<size_t>(p * k + j)]);
            double sum = 0.0;
            for (int j = 0; j < k; ++j) {
                double e = std::exp(static_cast<double>(
                               logits.data[static_cast<size_t>(p * k + j)] - m));
                y0_probs.data[static_cast<size_t>(p * k + j)] = static_cast<float>(e);
                sum += e;
            }
            for (int j = 0; j < k; ++j)
                y0_probs.data[static_cast<size_t>(p * k + j)] /= static_cast<float>(sum);
        }

        ps.x = ddim_step(ps.x, eps, t, s, sch_g, 0.0, rs);
        if (s > 0) {
            Field theta = posterior_cat_strided(ps.y, y0_probs, t, s, sch_c);
            Field ynew(ps.y.shape);
            std::vector<float> row(static_cast<size_t>(k));
            for (int64_t p = 0; p < h * w; ++p) {
                double sum = 0.0;
                for (int j = 0; j < k; ++j) {
                    row[j] = theta.data[static_cast<size_t>(p * k + j)];
                    sum += row[j];
                }
                // Renormalize away float rounding before drawing.
                for (int j = 0; j < k; ++j) row[j] = static_cast<float>(row[j] / sum);
                int drawn = rs.draw_categorical(row.data(), k);
                ynew.data[static_cast<size_t>(p * k + drawn)] = 1.0f;
            }
            ps.y = ynew;
        }
        ps.t = s;
    }

    PairSample out;
    out.x0 = ps.x;
    for (auto& v : out.x0.data) v = std::clamp(v, -1.0f, 1.0f);
    out.y0 = LabelGrid(h, w);
    for (int64_t p = 0; p < h * w; ++p) {
        int best = 0;
        float bv = y0_probs.data[static_cast<size_t>(p * k)];
        for (int j = 1; j < k; ++j) {
            float v = y0_probs.data[static_cast<size_t>(p * k + j)];
            if (v > bv) {
                bv = v;
                best = j;
            }
        }
        out.y0.ids[static_cast<size_t>(p)] = static_cast<uint8_t>(best);
    }
    out.y0_probs = y0_probs;
    return out;
}

}  // namespace nucleo
