// Copyright (c) 2026 nucleosynth contributors
// SPDX-License-Identifier: Apache-2.0
#include "nucleosynth/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <queue>
#include <stdexcept>

namespace nucleo {

namespace {

constexpr int64_t kDr[4] = {-1, 1, 0, 0};
constexpr int64_t kDc[4] = {0, 0, -1, 1};

}  // namespace

StructureMap make_structure_map(const LabelGrid& label, const InstanceGrid& instance) {
    const int64_t h = label.h, w = label.w;
    if (instance.h != h || instance.w != w)
        throw std::invalid_argument("make_structure_map: extent mismatch");
    StructureMap sm({h, w, 3});

    struct Acc {
        double sum_r = 0, sum_c = 0;
        int64_t n = 0;
        double max_dr = 0, max_dc = 0;
    };
    std::map<uint16_t, Acc> acc;
    for (int64_t r = 0; r < h; ++r) {
        for (int64_t c = 0; c < w; ++c) {
            uint16_t id = instance.at(r, c);
            bool fg = label.at(r, c) > 0;
            if ((id > 0) != fg)
                throw std::invalid_argument("make_structure_map: instance/label inconsistency");
            sm.at3(r, c, 0) = fg ? 1.0f : -1.0f;
            if (id > 0) {
                Acc& a = acc[id];
                a.sum_r += static_cast<double>(r);
                a.sum_c += static_cast<double>(c);
                a.n++;
            }
        }
    }
    for (int64_t r = 0; r < h; ++r) {
        for (int64_t c = 0; c < w; ++c) {
            uint16_t id = instance.at(r, c);
            if (id == 0) continue;
            Acc& a = acc[id];
            double cy = a.sum_r / static_cast<double>(a.n);
            double cx = a.sum_c / static_cast<double>(a.n);
            a.max_dr = std::max(a.max_dr, std::abs(static_cast<double>(r) - cy));
            a.max_dc = std::max(a.max_dc, std::abs(static_cast<double>(c) - cx));
        }
    }
    for (int64_t r = 0; r < h; ++r) {
        for (int64_t c = 0; c < w; ++c) {
            uint16_t id = instance.at(r, c);
            if (id == 0) {
                sm.at3(r, c, 1) = 0.0f;
                sm.at3(r, c, 2) = 0.0f;
                continue;
            }
            const Acc& a = acc[id];
            double cy = a.sum_r / static_cast<double>(a.n);
            double cx = a.sum_c / static_cast<double>(a.n);
            double dc = (static_cast<double>(c) - cx) / (a.max_dc > 0 ? a.max_dc : 1.0);
            double dr = (static_cast<double>(r) - cy) / (a.max_dr > 0 ? a.max_dr : 1.0);
            sm.at3(r, c, 1) = static_cast<float>(std::clamp(dc, -1.0, 1.0));
            sm.at3(r, c, 2) = static_cast<float>(std::clamp(dr, -1.0, 1.0));
        }
    }
    return sm;
}

Field instance_edge_map(const InstanceGrid& instance) {
    const int64_t h = instance.h, w = instance.w;
    Field edge({h, w});
    for (int64_t r = 0; r < h; ++r) {
        for (int64_t c = 0; c < w; ++c) {
            uint16_t id = instance.at(r, c);
            if (id == 0) continue;
            bool is_edge = false;
            for (int d = 0; d < 4 && !is_edge; ++d) {
                int64_t nr = r + kDr[d], nc = c + kDc[d];
                if (nr < 0 || nr >= h || nc < 0 || nc >= w)
                    is_edge = true;  // image border counts
                else if (instance.at(nr, nc) != id)
                    is_edge = true;
            }
            edge.at2(r, c) = is_edge ? 1.0f : 0.0f;
        }
    }
    return edge;
}

Field assemble_semantic_condition(const LabelGrid& label, const InstanceGrid& instance, int k) {
    const int64_t h = label.h, w = label.w;
    for (uint8_t id : label.ids)
        if (id >= k)
            throw std::invalid_argument("assemble_semantic_condition: label id >= K");
    StructureMap sm = make_structure_map(label, instance);
    Field edge = instance_edge_map(instance);
    Field cs({h, w, static_cast<int64_t>(k) + 3});
    for (int64_t r = 0; r < h; ++r) {
        for (int64_t c = 0; c < w; ++c) {
            cs.at3(r, c, label.at(r, c)) = 1.0f;
            cs.at3(r, c, k) = sm.at3(r, c, 1);
            cs.at3(r, c, k + 1) = sm.at3(r, c, 2);
            cs.at3(r, c, k + 2) = edge.at2(r, c);
        }
    }
    return cs;
}

InstanceGrid connected_components(const LabelGrid& label) {
    const int64_t h = label.h, w = label.w;
    InstanceGrid out(h, w);
    uint16_t next = 1;
    for (int64_t start = 0; start < h * w; ++start) {
        if (label.ids[static_cast<size_t>(start)] == 0 ||
            out.ids[static_cast<size_t>(start)] != 0)
            continue;
        uint16_t id = next++;
        std::queue<int64_t> q;
        q.push(start);
        out.ids[static_cast<size_t>(start)] = id;
        while (!q.empty()) {
            int64_t p = q.front();
            q.pop();
            int64_t r = p / w, c = p % w;
            for (int d = 0; d < 4; ++d) {
                int64_t nr = r + kDr[d], nc = c + kDc[d];
                if (nr < 0 || nr >= h || nc < 0 || nc >= w) continue;
                int64_t np = nr * w + nc;
                if (label.ids[static_cast<size_t>(np)] != 0 &&
                    out.ids[static_cast<size_t>(np)] == 0) {
                    out.ids[static_cast<size_t>(np)] = id;
                    q.push(np);
                }
            }
        }
    }
    return out;
}

ExtractResult extract_instances(const StructureMap& sm, const LabelGrid& label,
                                const WatershedParams& params) {
    if (sm.rank() != 3 || sm.shape[2] != 3)
        throw std::invalid_argument("extract_instances: structure map must be [H,W,3]");
    const int64_t h = sm.shape[0], w = sm.shape[1];
    if (label.h != h || label.w != w)
        throw std::invalid_argument("extract_instances: label extent mismatch");

    std::vector<char> fg(static_cast<size_t>(h * w), 0);
    for (int64_t p = 0; p < h * w; ++p)
        fg[static_cast<size_t>(p)] = sm.data[static_cast<size_t>(p * 3)] > 0.0f;

    // Elevation: max over the two offset channels of the Sobel gradient
    // magnitude, normalized to [0,1] by the fixed bound 8*sqrt(2) attained
    // by full-range jumps (values live in [-1,1], so |gx|,|gy| <= 8). A
    // fixed scale keeps marker formation independent of whether the map
    // happens to contain a touching pair. Out-of-bounds taps replicate the
    // edge pixel so image-boundary nuclei do not read artificial jumps.
    auto ch = [&](int64_t r, int64_t c, int chan) {
        r = std::clamp<int64_t>(r, 0, h - 1);
        c = std::clamp<int64_t>(c, 0, w - 1);
        return static_cast<double>(sm.data[static_cast<size_t>((r * w + c) * 3 + chan)]);
    };
    const double norm = 8.0 * std::sqrt(2.0);
    std::vector<double> energy(static_cast<size_t>(h * w), 0.0);
    for (int64_t r = 0; r < h; ++r) {
        for (int64_t c = 0; c < w; ++c) {
            double best = 0.0;
            for (int chan = 1; chan <= 2; ++chan) {
                double gx = (ch(r - 1, c + 1, chan) + 2 * ch(r, c + 1, chan) +
                             ch(r + 1, c + 1, chan)) -
                            (ch(r - 1, c - 1, chan) + 2 * ch(r, c - 1, chan) +
                             ch(r + 1, c - 1, chan));
                double gy = (ch(r + 1, c - 1, chan) + 2 * ch(r + 1, c, chan) +
                             ch(r + 1, c + 1, chan)) -
                            (ch(r - 1, c - 1, chan) + 2 * ch(r - 1, c, chan) +
                             ch(r - 1, c + 1, chan));
                best = std::max(best, std::sqrt(gx * gx + gy * gy));
            }
            energy[static_cast<size_t>(r * w + c)] = best / norm;
        }
    }

    // Markers: 4-connected components of low-energy foreground, minus runts.
    ExtractResult res;
    res.instances = InstanceGrid(h, w);
    std::vector<uint16_t>& inst = res.instances.ids;
    uint16_t next_id = 1;
    {
        std::vector<char> is_marker(static_cast<size_t>(h * w), 0);
        for (int64_t p = 0; p < h * w; ++p)
            is_marker[static_cast<size_t>(p)] =
                fg[static_cast<size_t>(p)] &&
                energy[static_cast<size_t>(p)] < params.marker_threshold;
        for (int64_t start = 0; start < h * w; ++start) {
            if (!is_marker[static_cast<size_t>(start)] || inst[static_cast<size_t>(start)] != 0)
                continue;
            std::vector<int64_t> comp;
            std::queue<int64_t> q;
            q.push(start);
            inst[static_cast<size_t>(start)] = next_id;
            while (!q.empty()) {
                int64_t p = q.front();
                q.pop();
                comp.push_back(p);
                int64_t r = p / w, c = p % w;
                for (int d = 0; d < 4; ++d) {
                    int64_t nr = r + kDr[d], nc = c + kDc[d];
                    if (nr < 0 || nr >= h || nc < 0 || nc >= w) continue;
                    int64_t np = nr * w + nc;
                    if (is_marker[static_cast<size_t>(np)] && inst[static_cast<size_t>(np)] == 0) {
                        inst[static_cast<size_t>(np)] = next_id;
                        q.push(np);
                    }
                }
            }
            if (static_cast<int>(comp.size()) < params.min_marker_size) {
                for (int64_t p : comp) inst[static_cast<size_t>(p)] = 0;
            } else {
                ++next_id;
            }
        }
    }
    if (next_id == 1) {
        res.no_markers = true;
        return res;
    }

    // Priority flood from the markers over the energy, foreground only.
    // Ties break on (elevation, insertion order, pixel index).
    struct QEntry {
        double elev;
        int64_t seq;
        int64_t pix;
        bool operator>(const QEntry& o) const {
            if (elev != o.elev) return elev > o.elev;
            if (seq != o.seq) return seq > o.seq;
            return pix > o.pix;
        }
    };
    std::priority_queue<QEntry, std::vector<QEntry>, std::greater<QEntry>> pq;
    int64_t seq = 0;
    for (int64_t p = 0; p < h * w; ++p)
        if (inst[static_cast<size_t>(p)] != 0)
            pq.push({energy[static_cast<size_t>(p)], seq++, p});
    while (!pq.empty()) {
        QEntry e = pq.top();
        pq.pop();
        uint16_t id = inst[static_cast<size_t>(e.pix)];
        int64_t r = e.pix / w, c = e.pix % w;
        for (int d = 0; d < 4; ++d) {
            int64_t nr = r + kDr[d], nc = c + kDc[d];
            if (nr < 0 || nr >= h || nc < 0 || nc >= w) continue;
            int64_t np = nr * w + nc;
            if (!fg[static_cast<size_t>(np)] || inst[static_cast<size_t>(np)] != 0) continue;
            inst[static_cast<size_t>(np)] = id;
            pq.push({energy[static_cast<size_t>(np)], seq++, np});
        }
    }

    // Foreground components that contained no marker stay unflooded; attach
    // each leftover pixel to the nearest flooded basin (ties -> lower pixel
    // index via scan order).
    {
        std::vector<int64_t> leftovers;
        for (int64_t p = 0; p < h * w; ++p)
            if (fg[static_cast<size_t>(p)] && inst[static_cast<size_t>(p)] == 0)
                leftovers.push_back(p);
        if (!leftovers.empty()) {
            std::vector<int64_t> flooded;
            for (int64_t p = 0; p < h * w; ++p)
                if (inst[static_cast<size_t>(p)] != 0) flooded.push_back(p);
            std::vector<uint16_t> assign(leftovers.size(), 0);
            for (size_t i = 0; i < leftovers.size(); ++i) {
                int64_t p = leftovers[i];
                int64_t pr = p / w, pc = p % w;
                int64_t best_d = INT64_MAX;
                uint16_t best_id = 0;
                for (int64_t f : flooded) {
                    int64_t fr = f / w, fc = f % w;
                    int64_t d2 = (pr - fr) * (pr - fr) + (pc - fc) * (pc - fc);
                    if (d2 < best_d) {
                        best_d = d2;
                        best_id = inst[static_cast<size_t>(f)];
                    }
                }
                assign[i] = best_id;
            }
            for (size_t i = 0; i < leftovers.size(); ++i)
                inst[static_cast<size_t>(leftovers[i])] = assign[i];
        }
    }

    // Majority-vote class per instance; ties resolve to the lowest class id.
    std::map<uint16_t, std::map<int, int64_t>> votes;
    for (int64_t p = 0; p < h * w; ++p) {
        uint16_t id = inst[static_cast<size_t>(p)];
        if (id == 0) continue;
        votes[id][label.ids[static_cast<size_t>(p)]]++;
    }
    for (auto& [id, counts] : votes) {
        int best_class = 0;
        int64_t best_n = -1;
        for (auto& [cls, n] : counts) {
            if (n > best_n) {  // map iterates ascending class id, so ties keep the lower id
                best_n = n;
                best_class = cls;
            }
        }
        if (best_class == 0 && counts.size() > 1) {
            // Background majority inside a basin: fall back to the best
            // nucleus class so the instance keeps a valid class.
            best_n = -1;
            for (auto& [cls, n] : counts) {
                if (cls == 0) continue;
                if (n > best_n) {
                    best_n = n;
                    best_class = cls;
                }
            }
        }
        res.instance_class[id] = best_class == 0 ? 1 : best_class;
    }
    return res;
}

}  // namespace nucleo
