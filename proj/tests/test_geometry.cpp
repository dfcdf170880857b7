// Copyright (c) 2026 nucleosynth contributors
// SPDX-License-Identifier: Apache-2.0
#include "doctest.h"

#include <cmath>
#include <map>

#include "nucleosynth/geometry.hpp"
#include "nucleosynth/metrics.hpp"
#include "nucleosynth/toydata.hpp"

using namespace nucleo;

namespace {

LabeledSample gen(double proportion, double cluster, uint64_t seed, std::set<int> classes = {1, 2, 3}) {
    GenConfig cfg;
    cfg.target_proportion = proportion;
    cfg.cluster_probability = cluster;
    cfg.class_set = std::move(classes);
    RandomStream rs(seed);
    return generate_sample(cfg, rs);
}

}  // namespace

TEST_CASE("structure map degenerate and 1x3 instances") {
    LabelGrid label(5, 5);
    InstanceGrid inst(5, 5);
    label.at(2, 2) = 1;
    inst.at(2, 2) = 1;
    StructureMap sm = make_structure_map(label, inst);
    CHECK(sm.at3(2, 2, 0) == 1.0f);
    CHECK(sm.at3(2, 2, 1) == 0.0f);
    CHECK(sm.at3(2, 2, 2) == 0.0f);
    CHECK(sm.at3(0, 0, 0) == -1.0f);

    LabelGrid l2(3, 5);
    InstanceGrid i2(3, 5);
    for (int c = 1; c <= 3; ++c) {
        l2.at(1, c) = 2;
        i2.at(1, c) = 1;
    }
    StructureMap s2 = make_structure_map(l2, i2);
    CHECK(s2.at3(1, 1, 1) == -1.0f);
    CHECK(s2.at3(1, 2, 1) == 0.0f);
    CHECK(s2.at3(1, 3, 1) == 1.0f);
    for (int c = 1; c <= 3; ++c) CHECK(s2.at3(1, c, 2) == 0.0f);
}

TEST_CASE("structure map equals per-instance brute-force recomputation") {
    RandomStream rs(41);
    for (int iter = 0; iter < 25; ++iter) {
        // Random multi-instance 9x9 grid of rectangular patches.
        LabelGrid label(9, 9);
        InstanceGrid inst(9, 9);
        uint16_t next = 1;
        for (int tries = 0; tries < 6; ++tries) {
            int64_t r0 = static_cast<int64_t>(rs.next_below(7));
            int64_t c0 = static_cast<int64_t>(rs.next_below(7));
            int64_t hh = 1 + static_cast<int64_t>(rs.next_below(3));
            int64_t ww = 1 + static_cast<int64_t>(rs.next_below(3));
            bool free = true;
            for (int64_t r = r0; r < std::min<int64_t>(9, r0 + hh) && free; ++r)
                for (int64_t c = c0; c < std::min<int64_t>(9, c0 + ww) && free; ++c)
                    if (inst.at(r, c)) free = false;
            if (!free) continue;
            uint16_t id = next++;
            for (int64_t r = r0; r < std::min<int64_t>(9, r0 + hh); ++r)
                for (int64_t c = c0; c < std::min<int64_t>(9, c0 + ww); ++c) {
                    inst.at(r, c) = id;
                    label.at(r, c) = 1 + static_cast<uint8_t>(rs.next_below(3));
                }
        }
        StructureMap sm = make_structure_map(label, inst);

        // Naive per-instance loop oracle.
        for (uint16_t id = 1; id < next; ++id) {
            std::vector<std::pair<int64_t, int64_t>> px;
            for (int64_t r = 0; r < 9; ++r)
                for (int64_t c = 0; c < 9; ++c)
                    if (inst.at(r, c) == id) px.push_back({r, c});
            if (px.empty()) continue;
            double cy = 0, cx = 0;
            for (auto& [r, c] : px) {
                cy += r;
                cx += c;
            }
            cy /= px.size();
            cx /= px.size();
            double mr = 0, mc = 0;
            for (auto& [r, c] : px) {
                mr = std::max(mr, std::abs(r - cy));
                mc = std::max(mc, std::abs(c - cx));
            }
            for (auto& [r, c] : px) {
                double want_h = (c - cx) / (mc > 0 ? mc : 1.0);
                double want_v = (r - cy) / (mr > 0 ? mr : 1.0);
                CHECK(std::abs(sm.at3(r, c, 1) - want_h) < 1e-6);
                CHECK(std::abs(sm.at3(r, c, 2) - want_v) < 1e-6);
            }
        }
    }
}

TEST_CASE("instance edge map definition") {
    InstanceGrid inst(5, 5);
    inst.at(2, 2) = 1;
    Field e = instance_edge_map(inst);
    CHECK(e.at2(2, 2) == 1.0f);

    InstanceGrid block(5, 5);
    for (int64_t r = 1; r <= 3; ++r)
        for (int64_t c = 1; c <= 3; ++c) block.at(r, c) = 1;
    Field e2 = instance_edge_map(block);
    CHECK(e2.at2(2, 2) == 0.0f);
    int edges = 0;
    for (float v : e2.data) edges += v == 1.0f;
    CHECK(edges == 8);

    // Border-adjacent pixels are edges.
    InstanceGrid corner(3, 3);
    corner.at(0, 0) = 1;
    corner.at(0, 1) = 1;
    corner.at(1, 0) = 1;
    corner.at(1, 1) = 1;
    Field e3 = instance_edge_map(corner);
    for (auto [r, c] : {std::pair<int64_t, int64_t>{0, 0}, {0, 1}, {1, 0}})
        CHECK(e3.at2(r, c) == 1.0f);
    CHECK(e3.at2(1, 1) == 1.0f);  // touches background neighbors

    // Two touching instances: contact pixels are edges on both sides.
    InstanceGrid touch(4, 4);
    for (int64_t r = 0; r < 4; ++r) {
        touch.at(r, 0) = 1;
        touch.at(r, 1) = 1;
        touch.at(r, 2) = 2;
        touch.at(r, 3) = 2;
    }
    Field e4 = instance_edge_map(touch);
    for (int64_t r = 0; r < 4; ++r) {
        CHECK(e4.at2(r, 1) == 1.0f);
        CHECK(e4.at2(r, 2) == 1.0f);
    }
}

TEST_CASE("semantic condition layout") {
    LabeledSample s = gen(0.25, 0.3, 5);
    const int k = 4;
    Field cs = assemble_semantic_condition(s.label, s.instance, k);
    CHECK(cs.shape == std::vector<int64_t>{32, 32, k + 3});
    // argmax of one-hot channels reproduces the label.
    for (int64_t r = 0; r < 32; ++r) {
        for (int64_t c = 0; c < 32; ++c) {
            int best = 0;
            for (int j = 1; j < k; ++j)
                if (cs.at3(r, c, j) > cs.at3(r, c, best)) best = j;
            CHECK(best == s.label.at(r, c));
            float sum = 0.0f;
            for (int j = 0; j < k; ++j) sum += cs.at3(r, c, j);
            CHECK(sum == 1.0f);
        }
    }

    // All-background sample.
    LabelGrid empty(8, 8);
    InstanceGrid ei(8, 8);
    Field cs2 = assemble_semantic_condition(empty, ei, k);
    for (int64_t r = 0; r < 8; ++r)
        for (int64_t c = 0; c < 8; ++c) {
            CHECK(cs2.at3(r, c, 0) == 1.0f);
            for (int j = 1; j < k + 3; ++j) CHECK(cs2.at3(r, c, j) == 0.0f);
        }
}

TEST_CASE("extract_instances separable and empty cases") {
    LabelGrid label(14, 14);
    InstanceGrid inst(14, 14);
    for (int64_t r = 1; r <= 5; ++r)
        for (int64_t c = 1; c <= 5; ++c) {
            label.at(r, c) = 1;
            inst.at(r, c) = 1;
        }
    for (int64_t r = 8; r <= 12; ++r)
        for (int64_t c = 8; c <= 12; ++c) {
            label.at(r, c) = 2;
            inst.at(r, c) = 2;
        }
    StructureMap sm = make_structure_map(label, inst);
    ExtractResult res = extract_instances(sm, label);
    CHECK(res.instances.max_id() == 2);
    CHECK(aji(inst, res.instances) == doctest::Approx(1.0));
    std::map<int, int> classes;
    for (auto& [id, cls] : res.instance_class) classes[cls]++;
    CHECK(classes[1] == 1);
    CHECK(classes[2] == 1);

    LabelGrid empty(8, 8);
    StructureMap esm({8, 8, 3});
    for (int64_t p = 0; p < 64; ++p) esm.data[static_cast<size_t>(p * 3)] = -1.0f;
    ExtractResult er = extract_instances(esm, empty);
    CHECK(er.instances.max_id() == 0);
    CHECK(er.no_markers);
}

TEST_CASE("watershed determinism") {
    LabeledSample s = gen(0.3, 0.8, 77);
    StructureMap sm = make_structure_map(s.label, s.instance);
    ExtractResult a = extract_instances(sm, s.label);
    ExtractResult b = extract_instances(sm, s.label);
    CHECK(a.instances == b.instances);
}

TEST_CASE("ground-truth structure maps recover instances (200 samples, cluster 0.5)") {
    RandomStream rs(2024);
    double aji_acc = 0.0, dice_acc = 0.0;
    int count_exact = 0, n_nontouching = 0;
    const int n = 200;
    for (int i = 0; i < n; ++i) {
        RandomStream srs = rs.child(i);
        GenConfig cfg;
        cfg.cluster_probability = 0.5;
        cfg.target_proportion = 0.05 + 0.35 * srs.next_uniform();
        LabeledSample s = generate_sample(cfg, srs);
        StructureMap sm = make_structure_map(s.label, s.instance);
        ExtractResult res = extract_instances(sm, s.label);
        aji_acc += aji(s.instance, res.instances);
        LabelGrid pred_label(s.label.h, s.label.w);
        for (int64_t p = 0; p < s.label.h * s.label.w; ++p)
            pred_label.ids[static_cast<size_t>(p)] =
                res.instances.ids[static_cast<size_t>(p)] > 0 ? 1 : 0;
        dice_acc += foreground_dice(s.label, pred_label);

        // Count-recovery property for samples without touching instances.
        bool touching = false;
        for (int64_t r = 0; r < s.instance.h && !touching; ++r)
            for (int64_t c = 0; c < s.instance.w && !touching; ++c) {
                uint16_t id = s.instance.at(r, c);
                if (id == 0) continue;
                for (int d = 0; d < 4; ++d) {
                    int64_t nr = r + (d == 0) - (d == 1), nc = c + (d == 2) - (d == 3);
                    if (nr < 0 || nr >= s.instance.h || nc < 0 || nc >= s.instance.w) continue;
                    uint16_t nid = s.instance.at(nr, nc);
                    if (nid != 0 && nid != id) touching = true;
                }
            }
        if (!touching) {
            ++n_nontouching;
            if (res.instances.max_id() == s.instance.max_id()) ++count_exact;
        }
    }
    CHECK(aji_acc / n >= 0.85);
    CHECK(dice_acc / n >= 0.95);
    REQUIRE(n_nontouching >= 5);
    CHECK(count_exact == n_nontouching);
}
