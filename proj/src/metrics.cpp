// Copyright (c) 2026 nucleosynth contributors
// SPDX-License-Identifier: Apache-2.0
#include "nucleosynth/metrics.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "nucleosynth/conditioning.hpp"
#include "nucleosynth/geometry.hpp"
#include "nucleosynth/random.hpp"

namespace nucleo {

GaussianSummary fit_gaussian(const std::vector<std::vector<double>>& rows, double ridge) {
    if (rows.size() < 2) throw std::invalid_argument("fit_gaussian: need at least 2 samples");
    const int d = static_cast<int>(rows[0].size());
    GaussianSummary g;
    g.count = static_cast<int64_t>(rows.size());
    g.mean.assign(static_cast<size_t>(d), 0.0);
    for (const auto& r : rows) {
        if (static_cast<int>(r.size()) != d)
            throw std::invalid_argument("fit_gaussian: ragged rows");
        for (int i = 0; i < d; ++i) g.mean[static_cast<size_t>(i)] += r[static_cast<size_t>(i)];
    }
    for (auto& m : g.mean) m /= static_cast<double>(g.count);
    g.cov.assign(static_cast<size_t>(d) * d, 0.0);
    for (const auto& r : rows)
        for (int i = 0; i < d; ++i)
            for (int j = 0; j < d; ++j)
                g.cov[static_cast<size_t>(i * d + j)] +=
                    (r[static_cast<size_t>(i)] - g.mean[static_cast<size_t>(i)]) *
                    (r[static_cast<size_t>(j)] - g.mean[static_cast<size_t>(j)]);
    for (auto& c : g.cov) c /= static_cast<double>(g.count - 1);
    for (int i = 0; i < d; ++i) g.cov[static_cast<size_t>(i * d + i)] += ridge;
    return g;
}

double frechet_distance(const GaussianSummary& a, const GaussianSummary& b) {
    const int d = a.dim();
    if (d != b.dim()) throw std::invalid_argument("frechet_distance: dimension mismatch");
    for (double v : a.mean)
        if (!std::isfinite(v)) throw std::invalid_argument("frechet_distance: non-finite input");

    using Mat = Eigen::MatrixXd;
    Mat s1 = Eigen::Map<const Mat>(a.cov.data(), d, d);
    Mat s2 = Eigen::Map<const Mat>(b.cov.data(), d, d);
    // Symmetrize away accumulation dust.
    s1 = 0.5 * (s1 + s1.transpose()).eval();
    s2 = 0.5 * (s2 + s2.transpose()).eval();

    Eigen::SelfAdjointEigenSolver<Mat> es1(s1);
    if (es1.info() != Eigen::Success)
        throw std::runtime_error("frechet_distance: eigendecomposition failed");
    Eigen::VectorXd ev1 = es1.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    Mat s1_half = es1.eigenvectors() * ev1.asDiagonal() * es1.eigenvectors().transpose();

    Mat m = s1_half * s2 * s1_half;
    m = 0.5 * (m + m.transpose()).eval();
    Eigen::SelfAdjointEigenSolver<Mat> esm(m);
    if (esm.info() != Eigen::Success)
        throw std::runtime_error("frechet_distance: eigendecomposition failed");
    double tr_sqrt = esm.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();

    double mean_term = 0.0;
    for (int i = 0; i < d; ++i) {
        double diff = a.mean[static_cast<size_t>(i)] - b.mean[static_cast<size_t>(i)];
        mean_term += diff * diff;
    }
    double val = mean_term + s1.trace() + s2.trace() - 2.0 * tr_sqrt;
    return std::max(val, 0.0);
}

std::vector<double> fsd_descriptor(const LabelGrid& label, int k) {
    std::vector<double> desc(static_cast<size_t>(k), 0.0);  // K-1 fractions + count/100
    const int64_t n = label.h * label.w;
    for (uint8_t id : label.ids)
        if (id > 0 && id < k) desc[static_cast<size_t>(id - 1)] += 1.0;
    for (int c = 0; c < k - 1; ++c) desc[static_cast<size_t>(c)] /= static_cast<double>(n);
    InstanceGrid cc = connected_components(label);
    desc[static_cast<size_t>(k - 1)] = static_cast<double>(cc.max_id()) / 100.0;
    return desc;
}

double fsd(const std::vector<LabelGrid>& labels_a, const std::vector<LabelGrid>& labels_b, int k) {
    const size_t need = static_cast<size_t>(k) + 2;  // dim = k-1+1
    if (labels_a.size() < need || labels_b.size() < need)
        throw std::invalid_argument("fsd: need at least dim+2 samples per side");
    std::vector<std::vector<double>> ra, rb;
    for (const auto& l : labels_a) ra.push_back(fsd_descriptor(l, k));
    for (const auto& l : labels_b) rb.push_back(fsd_descriptor(l, k));
    return frechet_distance(fit_gaussian(ra), fit_gaussian(rb));
}

namespace {

// Fixed random conv stack for toy-FID features: 3 stride-2 3x3 convs with
// ReLU, widths 16/32/64, weights seeded once; final global average pool.
struct FidStack {
    std::vector<float> w1, w2, w3;  // [out][in][3][3]
    FidStack() {
        RandomStream rs(0xF1DFEA7u);
        auto init = [&](std::vector<float>& w, int cout, int cin) {
            w.resize(static_cast<size_t>(cout) * cin * 9);
            float scale = std::sqrt(2.0f / (static_cast<float>(cin) * 9.0f));
            for (auto& v : w) v = static_cast<float>(rs.next_normal()) * scale;
        };
        init(w1, 16, 3);
        init(w2, 32, 16);
        init(w3, 64, 32);
    }
};

const FidStack& fid_stack() {
    static FidStack s;
    return s;
}

// Plain stride-2 conv + ReLU on [C,H,W] buffers.
std::vector<float> conv_s2_relu(const std::vector<float>& x, int cin, int64_t h, int64_t w,
                                const std::vector<float>& wt, int cout, int64_t& ho, int64_t& wo) {
    ho = (h + 1) / 2;
    wo = (w + 1) / 2;
    std::vector<float> y(static_cast<size_t>(cout) * ho * wo, 0.0f);
    for (int co = 0; co < cout; ++co) {
        for (int64_t r = 0; r < ho; ++r) {
            for (int64_t c = 0; c < wo; ++c) {
                float acc = 0.0f;
                for (int ci = 0; ci < cin; ++ci) {
                    for (int kr = -1; kr <= 1; ++kr) {
                        for (int kc = -1; kc <= 1; ++kc) {
                            int64_t ir = 2 * r + kr, ic = 2 * c + kc;
                            if (ir < 0 || ir >= h || ic < 0 || ic >= w) continue;
                            acc += x[static_cast<size_t>((ci * h + ir) * w + ic)] *
                                   wt[static_cast<size_t>(((co * cin + ci) * 3 + kr + 1) * 3 +
                                                          kc + 1)];
                        }
                    }
                }
                y[static_cast<size_t>((co * ho + r) * wo + c)] = std::max(acc, 0.0f);
            }
        }
    }
    return y;
}

}  // namespace

std::vector<double> toy_fid_features(const Field& image) {
    if (image.rank() != 3 || image.shape[2] != 3)
        throw std::invalid_argument("toy_fid_features: image must be [H,W,3]");
    const int64_t h = image.shape[0], w = image.shape[1];
    std::vector<float> x(static_cast<size_t>(3 * h * w));
    for (int64_t r = 0; r < h; ++r)
        for (int64_t c = 0; c < w; ++c)
            for (int ch = 0; ch < 3; ++ch)
                x[static_cast<size_t>((ch * h + r) * w + c)] = image.at3(r, c, ch);
    const FidStack& st = fid_stack();
    int64_t h1, w1, h2, w2, h3, w3;
    auto a1 = conv_s2_relu(x, 3, h, w, st.w1, 16, h1, w1);
    auto a2 = conv_s2_relu(a1, 16, h1, w1, st.w2, 32, h2, w2);
    auto a3 = conv_s2_relu(a2, 32, h2, w2, st.w3, 64, h3, w3);
    std::vector<double> feat(64, 0.0);
    for (int co = 0; co < 64; ++co) {
        double acc = 0.0;
        for (int64_t p = 0; p < h3 * w3; ++p) acc += a3[static_cast<size_t>(co * h3 * w3 + p)];
        feat[static_cast<size_t>(co)] = acc / static_cast<double>(h3 * w3);
    }
    return feat;
}

double toy_fid(const std::vector<Field>& images_a, const std::vector<Field>& images_b) {
    if (images_a.size() < 66 || images_b.size() < 66)
        throw std::invalid_argument("toy_fid: need at least 66 images per side");
    std::vector<std::vector<double>> ra, rb;
    for (const auto& im : images_a) ra.push_back(toy_fid_features(im));
    for (const auto& im : images_b) rb.push_back(toy_fid_features(im));
    return frechet_distance(fit_gaussian(ra), fit_gaussian(rb));
}

double dice(const std::vector<char>& a, const std::vector<char>& b) {
    if (a.size() != b.size()) throw std::invalid_argument("dice: shape mismatch");
    int64_t na = 0, nb = 0, inter = 0;
    for (size_t i = 0; i < a.size(); ++i) {
        na += a[i] != 0;
        nb += b[i] != 0;
        inter += (a[i] != 0 && b[i] != 0);
    }
    if (na + nb == 0) return 1.0;
    return 2.0 * static_cast<double>(inter) / static_cast<double>(na + nb);
}

double foreground_dice(const LabelGrid& a, const LabelGrid& b) {
    std::vector<char> ma(a.ids.size()), mb(b.ids.size());
    for (size_t i = 0; i < a.ids.size(); ++i) ma[i] = a.ids[i] > 0;
    for (size_t i = 0; i < b.ids.size(); ++i) mb[i] = b.ids[i] > 0;
    return dice(ma, mb);
}

double aji(const InstanceGrid& gt, const InstanceGrid& pred) {
    if (gt.h != pred.h || gt.w != pred.w) throw std::invalid_argument("aji: extent mismatch");
    const uint16_t ng = gt.max_id(), np = pred.max_id();
    if (ng == 0 && np == 0) return 1.0;
    if (ng == 0 || np == 0) return 0.0;

    std::vector<int64_t> gt_area(static_cast<size_t>(ng) + 1, 0),
        pred_area(static_cast<size_t>(np) + 1, 0);
    // Sparse intersection counts.
    std::map<std::pair<uint16_t, uint16_t>, int64_t> inter;
    for (size_t i = 0; i < gt.ids.size(); ++i) {
        uint16_t g = gt.ids[i], p = pred.ids[i];
        if (g) ++gt_area[g];
        if (p) ++pred_area[p];
        if (g && p) ++inter[{g, p}];
    }

    std::vector<char> used(static_cast<size_t>(np) + 1, 0);
    double num = 0.0, den = 0.0;
    for (uint16_t g = 1; g <= ng; ++g) {
        if (gt_area[g] == 0) continue;
        double best_iou = 0.0;
        uint16_t best_p = 0;
        int64_t best_inter = 0, best_union = 0;
        for (uint16_t p = 1; p <= np; ++p) {
            if (used[p] || pred_area[p] == 0) continue;
            auto it = inter.find({g, p});
            if (it == inter.end()) continue;
            int64_t in = it->second;
            int64_t un = gt_area[g] + pred_area[p] - in;
            double iou = static_cast<double>(in) / static_cast<double>(un);
            if (iou > best_iou) {
                best_iou = iou;
                best_p = p;
                best_inter = in;
                best_union = un;
            }
        }
        if (best_p != 0) {
            used[best_p] = 1;
            num += static_cast<double>(best_inter);
            den += static_cast<double>(best_union);
        } else {
            den += static_cast<double>(gt_area[g]);
        }
    }
    for (uint16_t p = 1; p <= np; ++p)
        if (!used[p]) den += static_cast<double>(pred_area[p]);
    if (den == 0.0) return 1.0;
    return num / den;
}

double class_consistency(const std::vector<LabelGrid>& labels, const std::set<int>& class_set,
                         double eps_v) {
    if (class_set.empty()) throw std::invalid_argument("class_consistency: empty class set");
    if (labels.empty()) return 0.0;
    int64_t ok = 0;
    for (const auto& l : labels) {
        int64_t nucleus = 0, violation = 0;
        for (uint8_t id : l.ids) {
            if (id == 0) continue;
            ++nucleus;
            if (!class_set.count(id)) ++violation;
        }
        double mass = static_cast<double>(violation) / static_cast<double>(std::max<int64_t>(1, nucleus));
        if (mass <= eps_v) ++ok;
    }
    return static_cast<double>(ok) / static_cast<double>(labels.size());
}

double proportion_accuracy(const std::vector<LabelGrid>& labels,
                           const std::vector<int>& prompted_buckets) {
    if (labels.size() != prompted_buckets.size())
        throw std::invalid_argument("proportion_accuracy: list lengths differ");
    if (labels.empty()) return 0.0;
    int64_t ok = 0;
    for (size_t i = 0; i < labels.size(); ++i) {
        const auto& l = labels[i];
        int64_t fg = 0;
        for (uint8_t id : l.ids) fg += id > 0;
        double prop = static_cast<double>(fg) / static_cast<double>(l.h * l.w);
        if (static_cast<int>(bucket_of(prop)) == prompted_buckets[i]) ++ok;
    }
    return static_cast<double>(ok) / static_cast<double>(labels.size());
}

}  // namespace nucleo
