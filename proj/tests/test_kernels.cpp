// Copyright (c) 2026 nucleosynth contributors
// SPDX-License-Identifier: Apache-2.0
#include "doctest.h"

#include <cmath>
#include <cstring>
#include <vector>

#include "nucleosynth/diffusion.hpp"

using namespace nucleo;

namespace {

// Transition matrix of one categorical step: (1-beta) I + beta/K.
std::vector<double> cat_transition(int k, double beta) {
    std::vector<double> m(static_cast<size_t>(k) * k, beta / k);
    for (int i = 0; i < k; ++i) m[static_cast<size_t>(i * k + i)] += 1.0 - beta;
    return m;
}

std::vector<double> mat_vec(const std::vector<double>& m, const std::vector<double>& v, int k) {
    std::vector<double> out(static_cast<size_t>(k), 0.0);
    for (int i = 0; i < k; ++i)
        for (int j = 0; j < k; ++j) out[j] += v[static_cast<size_t>(i)] * m[static_cast<size_t>(i * k + j)];
    return out;
}

}  // namespace

TEST_CASE("linear schedule endpoints and derived arrays") {
    Schedule s = linear_schedule(1000, 1e-4, 0.02);
    CHECK(s.betas[1] == doctest::Approx(1e-4).epsilon(1e-12));
    CHECK(s.betas[1000] == doctest::Approx(0.02).epsilon(1e-12));
    // Independent product of the 1000 factors.
    double abar = 1.0;
    for (int t = 1; t <= 1000; ++t)
        abar *= 1.0 - (1e-4 + (0.02 - 1e-4) * (t - 1) / 999.0);
    CHECK(s.alpha_bars[1000] == doctest::Approx(abar).epsilon(1e-12));
    CHECK(std::abs(s.alpha_bars[1000] - 4.0e-5) / 4.0e-5 < 0.10);

    Schedule one = linear_schedule(1, 0.3, 0.3);
    CHECK(one.alpha_bars[1] == doctest::Approx(0.7).epsilon(1e-12));

    CHECK_THROWS_AS(linear_schedule(0, 1e-4, 0.02), std::invalid_argument);
    CHECK_THROWS_AS(linear_schedule(10, 0.5, 0.1), std::invalid_argument);
    CHECK_THROWS_AS(linear_schedule(10, 0.0, 0.1), std::invalid_argument);
}

TEST_CASE("cosine schedule closed form") {
    Schedule s = cosine_schedule(10, 0.008);
    CHECK(s.alpha_bars[0] == 1.0);
    for (int t = 1; t <= 10; ++t) {
        CHECK(s.alpha_bars[t] < s.alpha_bars[t - 1]);
        CHECK(s.betas[t] > 0.0);
        CHECK(s.betas[t] <= 0.999);
    }
    Schedule s100 = cosine_schedule(100, 0.008);
    auto f = [](double t, double T, double sp) {
        double x = ((t / T) + sp) / (1.0 + sp) * std::numbers::pi / 2.0;
        return std::cos(x) * std::cos(x);
    };
    // Closed form holds wherever the 0.999 beta clip is inactive.
    for (int t = 1; t <= 100; ++t) {
        if (s100.betas[t] >= 0.999) break;
        CHECK(s100.alpha_bars[t] ==
              doctest::Approx(f(t, 100, 0.008) / f(0, 100, 0.008)).epsilon(1e-9));
    }
    CHECK(f(100, 100, 0.008) / f(0, 100, 0.008) < 0.01);
    CHECK(s100.alpha_bars[100] < 0.01);
}

TEST_CASE("q_sample_gaussian zero-noise and near-identity limits") {
    Schedule s = linear_schedule(1000, 1e-4, 0.02);
    RandomStream rs(1);
    Field x0 = rs.draw_normal({4, 4, 3});
    Field zero({4, 4, 3});
    Field xt = q_sample_gaussian(x0, 500, zero, s);
    float a = static_cast<float>(std::sqrt(s.alpha_bars[500]));
    for (size_t i = 0; i < xt.data.size(); ++i)
        CHECK(xt.data[i] == doctest::Approx(a * x0.data[i]).epsilon(1e-6));

    Field eps = rs.draw_normal({4, 4, 3});
    Field x1 = q_sample_gaussian(x0, 1, eps, s);
    double bound = std::sqrt(1e-4) * std::sqrt(static_cast<double>(eps.numel())) * 5.0;
    double diff = 0.0;
    for (size_t i = 0; i < x1.data.size(); ++i)
        diff += (x1.data[i] - x0.data[i]) * (x1.data[i] - x0.data[i]);
    CHECK(std::sqrt(diff) < bound);

    CHECK_THROWS_AS(q_sample_gaussian(x0, 0, eps, s), std::invalid_argument);
    CHECK_THROWS_AS(q_sample_gaussian(x0, 1001, eps, s), std::invalid_argument);
    CHECK_THROWS_AS(q_sample_gaussian(x0, 5, Field({2, 2}), s), std::invalid_argument);
}

TEST_CASE("gaussian marginal matches a simulated 1000-step chain") {
    Schedule s = linear_schedule(1000, 1e-4, 0.02);
    const double x0 = 0.7;
    const int trials = 10000;
    RandomStream rs(77);
    for (int t_check : {300, 1000}) {
        double sum = 0.0, sum2 = 0.0;
        for (int trial = 0; trial < trials; ++trial) {
            double x = x0;
            for (int t = 1; t <= t_check; ++t)
                x = std::sqrt(1.0 - s.betas[t]) * x + std::sqrt(s.betas[t]) * rs.next_normal();
            sum += x;
            sum2 += x * x;
        }
        double mean = sum / trials;
        double stddev = std::sqrt(sum2 / trials - mean * mean);
        double want_mean = std::sqrt(s.alpha_bars[t_check]) * x0;
        double want_std = std::sqrt(1.0 - s.alpha_bars[t_check]);
        CHECK(std::abs(mean - want_mean) < 0.02);  // std units
        CHECK(std::abs(stddev - want_std) / want_std < 0.02);
    }
}

TEST_CASE("ddim perfect-prediction inversion and determinism") {
    Schedule s = linear_schedule(1000, 1e-4, 0.02);
    RandomStream rs(3);
    Field x0 = rs.draw_uniform({6, 6, 3});
    for (auto& v : x0.data) v = 2.0f * v - 1.0f;
    Field eps = rs.draw_normal({6, 6, 3});
    Field xt = q_sample_gaussian(x0, 1000, eps, s);
    RandomStream r1(0), r2(0);
    Field a = ddim_step(xt, eps, 1000, 0, s, 0.0, r1);
    Field b = ddim_step(xt, eps, 1000, 0, s, 0.0, r2);
    CHECK(std::memcmp(a.data.data(), b.data.data(), a.data.size() * sizeof(float)) == 0);
    for (size_t i = 0; i < a.data.size(); ++i)
        CHECK(a.data[i] == doctest::Approx(x0.data[i]).epsilon(1e-4));
}

TEST_CASE("ddim eta=1 statistically matches ancestral sampling") {
    Schedule s = linear_schedule(1000, 1e-4, 0.02);
    const int trials = 10000;
    // Mock predictor keeping |x0hat| well inside the clip for the visited
    // states: eps_hat chosen so x0hat = 0.2 x.
    auto eps_hat = [&](double x, int t) {
        double abar = s.alpha_bars[t];
        return x * (1.0 - 0.2 * std::sqrt(abar)) / std::sqrt(1.0 - abar);
    };

    RandomStream rd(100);
    double sum_d = 0.0, sum2_d = 0.0;
    for (int trial = 0; trial < trials; ++trial) {
        Field x({1});
        x.data[0] = static_cast<float>(rd.next_normal());
        for (int t = 1000; t >= 1; --t) {
            Field e({1});
            e.data[0] = static_cast<float>(eps_hat(x.data[0], t));
            x = ddim_step(x, e, t, t - 1, s, 1.0, rd);
        }
        sum_d += x.data[0];
        sum2_d += static_cast<double>(x.data[0]) * x.data[0];
    }
    double std_ddim = std::sqrt(sum2_d / trials - (sum_d / trials) * (sum_d / trials));

    // Ancestral oracle: posterior mean/variance in x0hat form, same clip.
    RandomStream ra(200);
    double sum_a = 0.0, sum2_a = 0.0;
    for (int trial = 0; trial < trials; ++trial) {
        double x = ra.next_normal();
        for (int t = 1000; t >= 1; --t) {
            double abar = s.alpha_bars[t], abar_p = s.alpha_bars[t - 1];
            double e = eps_hat(x, t);
            double x0h = (x - std::sqrt(1.0 - abar) * e) / std::sqrt(abar);
            x0h = std::clamp(x0h, -1.0, 1.0);
            double mu = (std::sqrt(abar_p) * s.betas[t] * x0h +
                         std::sqrt(s.alphas[t]) * (1.0 - abar_p) * x) /
                        (1.0 - abar);
            double var = s.posterior_var[t];
            x = mu + std::sqrt(var) * ra.next_normal();
        }
        sum_a += x;
        sum2_a += x * x;
    }
    double std_anc = std::sqrt(sum2_a / trials - (sum_a / trials) * (sum_a / trials));
    CHECK(std::abs(std_ddim - std_anc) / std_anc < 0.03);
}

TEST_CASE("eps_mse_loss") {
    RandomStream rs(5);
    Field e = rs.draw_normal({8, 8, 3});
    CHECK(eps_mse_loss(e, e) == 0.0);
    Field e1 = e;
    for (auto& v : e1.data) v += 1.0f;
    CHECK(eps_mse_loss(e, e1) == doctest::Approx(1.0).epsilon(1e-6));
    Field f = rs.draw_normal({8, 8, 3});
    double manual = 0.0;
    for (size_t i = 0; i < e.data.size(); ++i)
        manual += (static_cast<double>(e.data[i]) - f.data[i]) *
                  (static_cast<double>(e.data[i]) - f.data[i]);
    manual /= static_cast<double>(e.data.size());
    CHECK(eps_mse_loss(e, f) == doctest::Approx(manual).epsilon(1e-9));
}

TEST_CASE("categorical marginal scalar forms") {
    // Full-noise limit: abar = 0 -> uniform.
    double y0[3] = {0, 1, 0};
    double out[3];
    cat_marginal_row(y0, 3, 0.0, out);
    for (int j = 0; j < 3; ++j) CHECK(out[j] == doctest::Approx(1.0 / 3).epsilon(1e-15));
    // K=2, abar = 0.5 direct arithmetic.
    double y2[2] = {1, 0};
    double out2[2];
    cat_marginal_row(y2, 2, 0.5, out2);
    CHECK(out2[0] == doctest::Approx(0.75).epsilon(1e-15));
    CHECK(out2[1] == doctest::Approx(0.25).epsilon(1e-15));
}

TEST_CASE("categorical marginal equals transition-matrix powers (K=3, T=5)") {
    const int k = 3;
    Schedule s = cosine_schedule(5, 0.008);
    for (int onehot = 0; onehot < k; ++onehot) {
        std::vector<double> dist(static_cast<size_t>(k), 0.0);
        dist[static_cast<size_t>(onehot)] = 1.0;
        std::vector<double> y0(dist);
        for (int t = 1; t <= 5; ++t) {
            dist = mat_vec(cat_transition(k, s.betas[t]), dist, k);
            double out[3];
            cat_marginal_row(y0.data(), k, s.alpha_bars[t], out);
            for (int j = 0; j < k; ++j)
                CHECK(std::abs(out[j] - dist[static_cast<size_t>(j)]) < 1e-10);
        }
    }
}

TEST_CASE("categorical posterior equals Bayes enumeration (K=3, T=4)") {
    const int k = 3;
    Schedule s = cosine_schedule(4, 0.008);
    for (int y0c = 0; y0c < k; ++y0c) {
        for (int ytc = 0; ytc < k; ++ytc) {
            for (int t = 2; t <= 4; ++t) {
                double y0[3] = {0, 0, 0};
                y0[y0c] = 1.0;
                double yt[3] = {0, 0, 0};
                yt[ytc] = 1.0;
                double got[3];
                cat_posterior_row(yt, y0, k, s.alphas[t], s.alpha_bars[t - 1], got);

                // Enumeration over y_{t-1}: P(j|y0) * P(y_t | j), normalized.
                double marg[3];
                cat_marginal_row(y0, k, s.alpha_bars[t - 1], marg);
                auto tr = cat_transition(k, s.betas[t]);
                double want[3], norm = 0.0;
                for (int j = 0; j < k; ++j) {
                    want[j] = marg[j] * tr[static_cast<size_t>(j * k + ytc)];
                    norm += want[j];
                }
                for (int j = 0; j < k; ++j) {
                    want[j] /= norm;
                    CHECK(std::abs(got[j] - want[j]) < 1e-10);
                }
            }
        }
    }
}

TEST_CASE("posterior boundary and uniform reductions") {
    Schedule s = cosine_schedule(4, 0.008);
    // t=1, one-hot y0hat -> returns y0hat.
    Field y1({1, 1, 3}, {0, 1, 0});
    Field y0h({1, 1, 3}, {0, 0, 1});
    Field post = posterior_cat(y1, y0h, 1, s);
    CHECK(post.data[0] == doctest::Approx(0.0).epsilon(1e-7));
    CHECK(post.data[2] == doctest::Approx(1.0).epsilon(1e-7));

    // Uniform y0hat, one-hot y_t -> proportional to alpha*y_t + beta/K.
    Field yu({1, 1, 3}, {1.0f / 3, 1.0f / 3, 1.0f / 3});
    Field yt({1, 1, 3}, {1, 0, 0});
    Field p2 = posterior_cat(yt, yu, 3, s);
    double a = s.alphas[3] + s.betas[3] / 3.0, b = s.betas[3] / 3.0;
    double z = a + 2 * b;
    CHECK(p2.data[0] == doctest::Approx(a / z).epsilon(1e-6));
    CHECK(p2.data[1] == doctest::Approx(b / z).epsilon(1e-6));
}

TEST_CASE("vlb_cat_loss perfect prediction, hand oracle, and non-negativity") {
    Schedule s = cosine_schedule(6, 0.008);
    Field y0({1, 1, 2}, {1, 0});
    Field yt({1, 1, 2}, {0, 1});
    CHECK(vlb_cat_loss(y0, yt, y0, 3, s, 0.01) >= 0.0);
    // Perfect prediction: KL(q||q) = 0, CE(y0,y0) = 0.
    CHECK(vlb_cat_loss(y0, yt, y0, 3, s, 0.01) == doctest::Approx(0.0).epsilon(1e-12));

    // Hand-computed scalar KL for an imperfect prediction.
    Field yh({1, 1, 2}, {0.6f, 0.4f});
    double q[2], p[2];
    {
        double y0d[2] = {1, 0}, ytd[2] = {0, 1}, yhd[2] = {0.6, 0.4};
        cat_posterior_row(ytd, y0d, 2, s.alphas[3], s.alpha_bars[2], q);
        cat_posterior_row(ytd, yhd, 2, s.alphas[3], s.alpha_bars[2], p);
    }
    double want = 0.0;
    for (int j = 0; j < 2; ++j) want += q[j] * (std::log(q[j]) - std::log(p[j]));
    want += 0.01 * -std::log(0.6);
    CHECK(vlb_cat_loss(y0, yt, yh, 3, s, 0.01) == doctest::Approx(want).epsilon(1e-5));

    // Non-negativity over random inputs.
    RandomStream rs(9);
    for (int i = 0; i < 1000; ++i) {
        int k = 2 + static_cast<int>(rs.next_below(3));
        Field ry0({1, 1, k});
        ry0.data[rs.next_below(k)] = 1.0f;
        Field ryt({1, 1, k});
        ryt.data[rs.next_below(k)] = 1.0f;
        Field ryh({1, 1, k});
        double sum = 0.0;
        for (auto& v : ryh.data) {
            v = static_cast<float>(rs.next_uniform()) + 1e-3f;
            sum += v;
        }
        for (auto& v : ryh.data) v = static_cast<float>(v / sum);
        int t = 1 + static_cast<int>(rs.next_below(6));
        CHECK(vlb_cat_loss(ry0, ryt, ryh, t, s, 0.01) >= -1e-9);
    }
}

TEST_CASE("forward_pair limits, statistics, determinism") {
    Schedule sg = linear_schedule(1000, 1e-4, 0.02);
    Schedule sc = cosine_schedule(1000, 0.008);
    RandomStream rs(31);
    const int64_t h = 64, w = 64;  // not tiny: 4096-pixel statistics
    Field x0({h, w, 3});
    Field y0({h, w, 4});
    for (int64_t p = 0; p < h * w; ++p) {
        int cls = static_cast<int>(rs.next_below(4));
        y0.data[static_cast<size_t>(p * 4 + cls)] = 1.0f;
        for (int c = 0; c < 3; ++c)
            x0.data[static_cast<size_t>(p * 3 + c)] =
                static_cast<float>(rs.next_uniform() * 2 - 1);
    }

    // Low-noise limit: y survives with probability >= abar per pixel.
    RandomStream r1(7);
    PairState low = forward_pair(x0, y0, 1, r1, sg, sc);
    check_pair_state(low);
    int64_t same = 0;
    for (int64_t p = 0; p < h * w; ++p) {
        int a = 0, b = 0;
        for (int j = 0; j < 4; ++j) {
            if (y0.data[static_cast<size_t>(p * 4 + j)] > 0.5f) a = j;
            if (low.y.data[static_cast<size_t>(p * 4 + j)] > 0.5f) b = j;
        }
        same += a == b;
    }
    double survive = static_cast<double>(same) / static_cast<double>(h * w);
    CHECK(survive >= sc.alpha_bars[1] - 0.02);
    double xdiff = 0.0;
    for (size_t i = 0; i < x0.data.size(); ++i)
        xdiff = std::max<double>(xdiff, std::abs(low.x.data[i] - x0.data[i]));
    CHECK(xdiff < 0.1);

    // Terminal statistics: x standard normal within 2%, y uniform within 2%.
    const int64_t hh = 182, ww = 182;  // ~1e5 pixels
    Field bx({hh, ww, 3});
    Field by({hh, ww, 4});
    for (int64_t p = 0; p < hh * ww; ++p) {
        by.data[static_cast<size_t>(p * 4)] = 1.0f;  // all one class
        for (int c = 0; c < 3; ++c) bx.data[static_cast<size_t>(p * 3 + c)] = 0.5f;
    }
    RandomStream r2(8);
    PairState top = forward_pair(bx, by, 1000, r2, sg, sc);
    double sum = 0.0, sum2 = 0.0;
    for (float v : top.x.data) {
        sum += v;
        sum2 += static_cast<double>(v) * v;
    }
    double n = static_cast<double>(top.x.data.size());
    double mean = sum / n, stddev = std::sqrt(sum2 / n - mean * mean);
    CHECK(std::abs(mean) < 0.02);
    CHECK(std::abs(stddev - 1.0) < 0.02);
    int64_t hist[4] = {};
    for (int64_t p = 0; p < hh * ww; ++p)
        for (int j = 0; j < 4; ++j)
            if (top.y.data[static_cast<size_t>(p * 4 + j)] > 0.5f) hist[j]++;
    for (int j = 0; j < 4; ++j)
        CHECK(std::abs(static_cast<double>(hist[j]) / (hh * ww) - 0.25) < 0.02 * 0.25 + 0.01);

    // Determinism.
    RandomStream r3(9), r4(9);
    PairState a = forward_pair(x0, y0, 500, r3, sg, sc);
    PairState b = forward_pair(x0, y0, 500, r4, sg, sc);
    CHECK(std::memcmp(a.x.data.data(), b.x.data.data(), a.x.data.size() * sizeof(float)) == 0);
    CHECK(std::memcmp(a.y.data.data(), b.y.data.data(), a.y.data.size() * sizeof(float)) == 0);
}

TEST_CASE("sample_pair mock-model inversion and stride invariance") {
    Schedule sg = linear_schedule(1000, 1e-4, 0.02);
    Schedule sc = cosine_schedule(1000, 0.008);
    const int64_t h = 8, w = 8;
    const int k = 3;
    RandomStream rs(17);
    Field x0({h, w, 3});
    LabelGrid truth(h, w);
    Field logits({h, w, k});
    for (int64_t p = 0; p < h * w; ++p) {
        truth.ids[static_cast<size_t>(p)] = static_cast<uint8_t>(rs.next_below(k));
        for (int j = 0; j < k; ++j)
            logits.data[static_cast<size_t>(p * k + j)] =
                truth.ids[static_cast<size_t>(p)] == j ? 20.0f : -20.0f;
        for (int c = 0; c < 3; ++c)
            x0.data[static_cast<size_t>(p * 3 + c)] =
                static_cast<float>(rs.next_uniform() * 1.8 - 0.9);
    }

    // The mock infers the exact noise for the fixed pair and outputs the
    // true-label logits.
    PairModelFn mock = [&](const PairState& ps, int t, bool) -> PairModelOutput {
        PairModelOutput out;
        out.eps = Field({h, w, 3});
        const double abar = sg.alpha_bars[t];
        const float a = static_cast<float>(std::sqrt(abar));
        const float b = static_cast<float>(std::sqrt(1.0 - abar));
        for (size_t i = 0; i < out.eps.data.size(); ++i)
            out.eps.data[i] = (ps.x.data[i] - a * x0.data[i]) / b;
        out.logits = logits;
        return out;
    };

    std::vector<int> stride = make_stride(1000, 100);
    RandomStream s1(5);
    PairSample got = sample_pair(mock, stride, s1, sg, sc, 1.0f, h, w, k);
    for (int64_t p = 0; p < h * w; ++p)
        CHECK(got.y0.ids[static_cast<size_t>(p)] == truth.ids[static_cast<size_t>(p)]);
    for (size_t i = 0; i < x0.data.size(); ++i)
        CHECK(got.x0.data[i] == doctest::Approx(x0.data[i]).epsilon(1e-3));

    // Determinism under identical seeds.
    RandomStream s2(5);
    PairSample again = sample_pair(mock, stride, s2, sg, sc, 1.0f, h, w, k);
    CHECK(std::memcmp(got.x0.data.data(), again.x0.data.data(),
                      got.x0.data.size() * sizeof(float)) == 0);
    CHECK(got.y0.ids == again.y0.ids);

    // Full-length stride gives the same terminal label set.
    std::vector<int> full = make_stride(1000, 1000);
    RandomStream s3(5);
    PairSample full_run = sample_pair(mock, full, s3, sg, sc, 1.0f, h, w, k);
    CHECK(full_run.y0.ids == got.y0.ids);
}
