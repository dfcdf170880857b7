// Copyright (c) 2026 nucleosynth contributors
// SPDX-License-Identifier: Apache-2.0
#include "nucleosynth/toydata.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <queue>

#include "nucleosynth/common.hpp"

namespace nucleo {

namespace {

struct EllipseSpec {
    double rx, ry, theta;
};

// Size/eccentricity priors per nucleus class id (1-based, cycled past 3).
EllipseSpec draw_ellipse(int class_id, RandomStream& rs) {
    EllipseSpec e{};
    switch ((class_id - 1) % 3) {
        case 0:  // small-round
            e.rx = 2.3 + 0.7 * rs.next_uniform();
            e.ry = 2.3 + 0.7 * rs.next_uniform();
            break;
        case 1:  // large-elongated
            e.rx = 4.5 + 1.4 * rs.next_uniform();
            e.ry = 2.2 + 0.7 * rs.next_uniform();
            break;
        default:  // medium
            e.rx = 2.9 + 0.9 * rs.next_uniform();
            e.ry = 2.7 + 0.9 * rs.next_uniform();
            break;
    }
    e.theta = rs.next_uniform() * std::numbers::pi;
    return e;
}

double support_radius(const EllipseSpec& e) { return std::sqrt(e.rx * e.ry); }

std::vector<int64_t> rasterize(const EllipseSpec& e, double cy, double cx, int64_t h, int64_t w) {
    std::vector<int64_t> px;
    double reach = std::max(e.rx, e.ry) + 1.0;
    int64_t r0 = std::max<int64_t>(0, static_cast<int64_t>(std::floor(cy - reach)));
    int64_t r1 = std::min<int64_t>(h - 1, static_cast<int64_t>(std::ceil(cy + reach)));
    int64_t c0 = std::max<int64_t>(0, static_cast<int64_t>(std::floor(cx - reach)));
    int64_t c1 = std::min<int64_t>(w - 1, static_cast<int64_t>(std::ceil(cx + reach)));
    double ct = std::cos(e.theta), st = std::sin(e.theta);
    for (int64_t r = r0; r <= r1; ++r) {
        for (int64_t c = c0; c <= c1; ++c) {
            double dy = static_cast<double>(r) - cy, dx = static_cast<double>(c) - cx;
            double u = (dx * ct + dy * st) / e.rx;
            double v = (-dx * st + dy * ct) / e.ry;
            if (u * u + v * v <= 1.0) px.push_back(r * w + c);
        }
    }
    return px;
}

// Largest 4-connected component of a pixel set; pixels are linear indices.
std::vector<int64_t> largest_component(const std::vector<int64_t>& px, int64_t h, int64_t w) {
    if (px.empty()) return {};
    std::map<int64_t, int> idx;
    for (size_t i = 0; i < px.size(); ++i) idx[px[i]] = -1;
    int ncomp = 0;
    for (int64_t p : px) {
        if (idx[p] >= 0) continue;
        int comp = ncomp++;
        std::queue<int64_t> q;
        q.push(p);
        idx[p] = comp;
        while (!q.empty()) {
            int64_t cur = q.front();
            q.pop();
            int64_t r = cur / w, c = cur % w;
            const int64_t dr[4] = {-1, 1, 0, 0}, dc[4] = {0, 0, -1, 1};
            for (int d = 0; d < 4; ++d) {
                int64_t nr = r + dr[d], nc = c + dc[d];
                if (nr < 0 || nr >= h || nc < 0 || nc >= w) continue;
                auto it = idx.find(nr * w + nc);
                if (it != idx.end() && it->second < 0) {
                    it->second = comp;
                    q.push(nr * w + nc);
                }
            }
        }
    }
    std::vector<int64_t> counts(static_cast<size_t>(ncomp), 0);
    for (auto& [p, c] : idx) ++counts[static_cast<size_t>(c)];
    int best = static_cast<int>(std::max_element(counts.begin(), counts.end()) - counts.begin());
    std::vector<int64_t> out;
    for (auto& [p, c] : idx)
        if (c == best) out.push_back(p);
    return out;
}

struct Palette {
    std::array<float, 3> background;
    std::array<float, 3> background_alt;  // second tissue variant
    std::vector<std::array<float, 3>> nuclei;
};

Palette palette_for(const std::string& staining, int k) {
    Palette p;
    bool he = staining == "HE-like";
    if (he) {
        p.background = {0.87f, 0.73f, 0.82f};
        p.background_alt = {0.91f, 0.79f, 0.85f};
        p.nuclei = {{0.30f, 0.22f, 0.54f}, {0.48f, 0.27f, 0.42f}, {0.24f, 0.36f, 0.62f}};
    } else {
        p.background = {0.85f, 0.77f, 0.66f};
        p.background_alt = {0.89f, 0.82f, 0.72f};
        p.nuclei = {{0.44f, 0.27f, 0.14f}, {0.26f, 0.31f, 0.56f}, {0.34f, 0.22f, 0.33f}};
    }
    while (static_cast<int>(p.nuclei.size()) < k - 1)
        p.nuclei.push_back(p.nuclei[p.nuclei.size() % 3]);
    return p;
}

}  // namespace

void class_palette(const std::string& staining, int k, std::vector<std::array<float, 3>>& colors,
                   std::array<float, 3>& background) {
    Palette p = palette_for(staining, k);
    colors = p.nuclei;
    background = p.background;
}

double foreground_color_fraction(const Field& image, const std::string& staining, int k) {
    Palette p = palette_for(staining, k);
    const int64_t n = image.shape[0] * image.shape[1];
    int64_t fg = 0;
    for (int64_t i = 0; i < n; ++i) {
        float r = image.data[static_cast<size_t>(3 * i)];
        float g = image.data[static_cast<size_t>(3 * i + 1)];
        float b = image.data[static_cast<size_t>(3 * i + 2)];
        auto d2 = [&](const std::array<float, 3>& c) {
            return (r - c[0]) * (r - c[0]) + (g - c[1]) * (g - c[1]) + (b - c[2]) * (b - c[2]);
        };
        float bg = std::min(d2(p.background), d2(p.background_alt));
        for (int c = 0; c < k - 1; ++c) {
            if (d2(p.nuclei[static_cast<size_t>(c)]) < bg) {
                ++fg;
                break;
            }
        }
    }
    return static_cast<double>(fg) / static_cast<double>(n);
}

DatasetManifest default_manifest(int64_t h, int64_t w, int k) {
    DatasetManifest m;
    m.h = h;
    m.w = w;
    m.k = k;
    const char* names[3] = {"small-round", "large-elongated", "medium"};
    for (int c = 0; c < k - 1; ++c)
        m.class_names.push_back(c < 3 ? names[c] : ("class-" + std::to_string(c + 1)));
    m.tissues = {"glandular", "stromal"};
    m.stainings = {"HE-like", "IHC-like"};
    return m;
}

LabeledSample generate_sample(const GenConfig& cfg, RandomStream& rs) {
    if (cfg.k < 2) throw std::invalid_argument("generate_sample: K must be >= 2");
    if (cfg.target_proportion < 0.0 || cfg.target_proportion > 0.6)
        throw std::invalid_argument("generate_sample: target proportion out of [0, 0.6]");
    for (int c : cfg.class_set)
        if (c < 1 || c >= cfg.k)
            throw std::invalid_argument("generate_sample: class id outside 1..K-1");

    const int64_t h = cfg.h, w = cfg.w, npx = h * w;
    LabeledSample s;
    s.label = LabelGrid(h, w);
    s.instance = InstanceGrid(h, w);
    s.image = Field({h, w, 3});

    Palette pal = palette_for(cfg.staining, cfg.k);
    std::array<float, 3> bg = cfg.tissue == "glandular" ? pal.background : pal.background_alt;

    // Low-frequency background: three random cosine gratings per channel.
    struct Grating {
        double fy, fx, phase, amp;
        int ch;
    };
    std::vector<Grating> gratings;
    for (int g = 0; g < 3; ++g) {
        Grating gr;
        gr.fy = (rs.next_uniform() * 2.0 - 1.0) * 2.0;
        gr.fx = (rs.next_uniform() * 2.0 - 1.0) * 2.0;
        gr.phase = rs.next_uniform() * 2.0 * std::numbers::pi;
        gr.amp = 0.015 + 0.02 * rs.next_uniform();
        gr.ch = static_cast<int>(rs.next_below(3));
        gratings.push_back(gr);
    }
    for (int64_t r = 0; r < h; ++r) {
        for (int64_t c = 0; c < w; ++c) {
            for (int ch = 0; ch < 3; ++ch) s.image.at3(r, c, ch) = bg[static_cast<size_t>(ch)];
            for (const Grating& g : gratings) {
                double v = g.amp * std::cos(2.0 * std::numbers::pi *
                                                (g.fy * r / static_cast<double>(h) +
                                                 g.fx * c / static_cast<double>(w)) +
                                            g.phase);
                s.image.at3(r, c, g.ch) += static_cast<float>(v);
            }
        }
    }

    std::vector<int> class_list(cfg.class_set.begin(), cfg.class_set.end());
    const int64_t target_px = static_cast<int64_t>(std::llround(cfg.target_proportion * npx));
    const int64_t tol_px = static_cast<int64_t>(std::llround(0.05 * npx));
    const int64_t min_keep = 8;

    int64_t placed_px = 0;
    uint16_t next_id = 1;
    int attempts = 0;
    const int max_attempts = 800;

    // Writes pixels of one nucleus (only where still background), keeping the
    // largest 4-connected part. Heavily clipped shapes are rejected: they
    // produce ragged contacts with weak offset jumps that the watershed
    // cannot ridge on. Returns false on rejection.
    auto commit = [&](int class_id, const EllipseSpec& e, double cy, double cx) -> bool {
        std::vector<int64_t> cand = rasterize(e, cy, cx, h, w);
        std::vector<int64_t> fresh;
        for (int64_t p : cand)
            if (s.label.ids[static_cast<size_t>(p)] == 0) fresh.push_back(p);
        fresh = largest_component(fresh, h, w);
        if (static_cast<int64_t>(fresh.size()) < min_keep) return false;
        if (static_cast<double>(fresh.size()) < 0.70 * static_cast<double>(cand.size()))
            return false;
        if (placed_px + static_cast<int64_t>(fresh.size()) > target_px + tol_px) return false;
        uint16_t id = next_id++;
        for (int64_t p : fresh) {
            s.label.ids[static_cast<size_t>(p)] = static_cast<uint8_t>(class_id);
            s.instance.ids[static_cast<size_t>(p)] = id;
        }
        placed_px += static_cast<int64_t>(fresh.size());
        return true;
    };

    while (!class_list.empty() && placed_px < target_px - min_keep / 2 &&
           attempts < max_attempts) {
        ++attempts;
        int class_id = class_list[rs.next_below(class_list.size())];
        double cy = 1.0 + rs.next_uniform() * (h - 2.0);
        double cx = 1.0 + rs.next_uniform() * (w - 2.0);
        EllipseSpec probe = draw_ellipse(class_id, rs);
        if (!commit(class_id, probe, cy, cx)) continue;

        if (rs.next_uniform() < cfg.cluster_probability && placed_px < target_px + tol_px / 2) {
            // Companion touching the primary: center offset slightly under the
            // sum of the two support radii so the shapes clip against each other.
            for (int try_dir = 0; try_dir < 6; ++try_dir) {
                int cid2 = class_list[rs.next_below(class_list.size())];
                EllipseSpec probe2 = draw_ellipse(cid2, rs);
                double ang = rs.next_uniform() * 2.0 * std::numbers::pi;
                // Near-tangent placement: shapes clip only along a short arc.
                double dist = (support_radius(probe) + support_radius(probe2)) *
                              (0.90 + 0.12 * rs.next_uniform());
                double cy2 = cy + dist * std::sin(ang);
                double cx2 = cx + dist * std::cos(ang);
                if (cy2 < 1 || cy2 > h - 2 || cx2 < 1 || cx2 > w - 2) continue;
                if (commit(cid2, probe2, cy2, cx2)) break;
            }
        }
    }

    // Compact instance ids to 1..N in first-appearance order.
    {
        std::map<uint16_t, uint16_t> remap;
        uint16_t next = 1;
        for (auto& id : s.instance.ids) {
            if (id == 0) continue;
            auto it = remap.find(id);
            if (it == remap.end()) it = remap.emplace(id, next++).first;
            id = it->second;
        }
    }

    // Paint nuclei: class color + per-instance jitter + per-pixel grain.
    std::map<uint16_t, std::array<float, 3>> inst_color;
    for (int64_t p = 0; p < npx; ++p) {
        uint16_t id = s.instance.ids[static_cast<size_t>(p)];
        if (id == 0) continue;
        auto it = inst_color.find(id);
        if (it == inst_color.end()) {
            int cls = s.label.ids[static_cast<size_t>(p)];
            std::array<float, 3> col = pal.nuclei[static_cast<size_t>(cls - 1)];
            for (auto& v : col) v += static_cast<float>((rs.next_uniform() - 0.5) * 0.06);
            it = inst_color.emplace(id, col).first;
        }
    }
    for (int64_t p = 0; p < npx; ++p) {
        uint16_t id = s.instance.ids[static_cast<size_t>(p)];
        if (id == 0) continue;
        const auto& col = inst_color[id];
        for (int ch = 0; ch < 3; ++ch)
            s.image.data[static_cast<size_t>(3 * p + ch)] =
                col[static_cast<size_t>(ch)] +
                static_cast<float>((rs.next_uniform() - 0.5) * 0.02);
    }
    for (auto& v : s.image.data) v = std::clamp(v, 0.0f, 1.0f);

    // Meta reports achieved values, not targets.
    int64_t fg = 0;
    std::set<int> present;
    for (int64_t p = 0; p < npx; ++p) {
        uint8_t lab = s.label.ids[static_cast<size_t>(p)];
        if (lab > 0) {
            ++fg;
            present.insert(lab);
        }
    }
    s.meta.tissue = cfg.tissue;
    s.meta.staining = cfg.staining;
    s.meta.proportion = static_cast<double>(fg) / static_cast<double>(npx);
    s.meta.class_set = present;
    s.meta.proportion_warning =
        std::abs(s.meta.proportion - cfg.target_proportion) > 0.05 + 1e-12;

    PromptVocab vocab = PromptVocab::from_manifest(default_manifest(h, w, cfg.k));
    Prompt pr;
    pr.tissue = cfg.tissue;
    pr.bucket = bucket_of(s.meta.proportion);
    pr.class_set = present;
    pr.staining = cfg.staining;
    s.meta.prompt = render_prompt(pr, vocab);
    return s;
}

DatasetMix DatasetMix::uniform_default(int k) {
    DatasetMix mix;
    mix.tissue_weights = {1.0, 1.0};
    mix.staining_weights = {1.0, 1.0};
    mix.bucket_weights.assign(kNumBuckets, 1.0);
    std::set<int> all;
    for (int c = 1; c < k; ++c) all.insert(c);
    mix.class_set_weights.push_back({all, 0.25});
    for (int c = 1; c < k; ++c) mix.class_set_weights.push_back({{c}, 0.45 / (k - 1)});
    for (int a = 1; a < k; ++a)
        for (int b = a + 1; b < k; ++b)
            mix.class_set_weights.push_back({{a, b}, 0.30 / ((k - 1) * (k - 2) / 2.0)});
    return mix;
}

namespace {

int draw_weighted(const std::vector<double>& w, RandomStream& rs) {
    double total = 0.0;
    for (double v : w) total += v;
    double u = rs.next_uniform() * total;
    double acc = 0.0;
    for (size_t i = 0; i < w.size(); ++i) {
        acc += w[i];
        if (u < acc) return static_cast<int>(i);
    }
    return static_cast<int>(w.size()) - 1;
}

}  // namespace

nlohmann::json GenSummary::to_json() const {
    nlohmann::json j;
    j["count"] = count;
    j["bucket_counts"] = bucket_counts;
    nlohmann::json cpc = nlohmann::json::object();
    for (auto& [c, n] : class_pixel_counts) cpc[std::to_string(c)] = n;
    j["class_pixel_counts"] = cpc;
    j["warning_count"] = warning_count;
    return j;
}

GenSummary generate_dataset(const GenConfig& tmpl, int64_t n, const DatasetMix& mix,
                            RandomStream& rs, const std::string& dir) {
    if (n < 1) throw std::invalid_argument("generate_dataset: n must be >= 1");
    DatasetManifest manifest = default_manifest(tmpl.h, tmpl.w, tmpl.k);
    std::vector<LabeledSample> samples(static_cast<size_t>(n));
    std::vector<RandomStream> streams;
    streams.reserve(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) streams.push_back(rs.child(static_cast<uint64_t>(i)));
    parallel_for(n, [&](int64_t i) {
        RandomStream srs = streams[static_cast<size_t>(i)];
        GenConfig cfg = tmpl;
        cfg.tissue = manifest.tissues[static_cast<size_t>(draw_weighted(mix.tissue_weights, srs))];
        cfg.staining =
            manifest.stainings[static_cast<size_t>(draw_weighted(mix.staining_weights, srs))];
        Bucket b = static_cast<Bucket>(draw_weighted(mix.bucket_weights, srs));
        auto [lo, hi] = bucket_range(b);
        hi = std::min(hi, 0.48);  // generator feasibility ceiling
        cfg.target_proportion = lo + (hi - lo) * srs.next_uniform();
        std::vector<double> csw;
        for (auto& [cs, wt] : mix.class_set_weights) csw.push_back(wt);
        cfg.class_set = mix.class_set_weights[static_cast<size_t>(draw_weighted(csw, srs))].first;
        samples[static_cast<size_t>(i)] = generate_sample(cfg, srs);
    });
    write_dataset(samples, manifest, dir);

    GenSummary summary;
    summary.count = n;
    for (const auto& s : samples) {
        summary.bucket_counts[bucket_name(bucket_of(s.meta.proportion))]++;
        for (int64_t p = 0; p < s.label.h * s.label.w; ++p) {
            uint8_t lab = s.label.ids[static_cast<size_t>(p)];
            if (lab > 0) summary.class_pixel_counts[lab]++;
        }
        if (s.meta.proportion_warning) summary.warning_count++;
    }
    return summary;
}

}  // namespace nucleo
