// Copyright (c) 2026 nucleosynth contributors
// SPDX-License-Identifier: Apache-2.0
#include "doctest.h"

#include <filesystem>

#include "nucleosynth/pipeline.hpp"
#include "nucleosynth/toydata.hpp"

using namespace nucleo;
namespace fs = std::filesystem;

TEST_CASE("zero target proportion gives pure background") {
    GenConfig cfg;
    cfg.target_proportion = 0.0;
    RandomStream rs(1);
    LabeledSample s = generate_sample(cfg, rs);
    for (uint8_t id : s.label.ids) CHECK(id == 0);
    for (uint16_t id : s.instance.ids) CHECK(id == 0);
    CHECK(s.meta.proportion == 0.0);
    CHECK(s.meta.class_set.empty());
}

TEST_CASE("class set restriction is absolute") {
    GenConfig cfg;
    cfg.class_set = {1};
    cfg.target_proportion = 0.3;
    RandomStream rs(2);
    for (int i = 0; i < 20; ++i) {
        RandomStream srs = rs.child(i);
        LabeledSample s = generate_sample(cfg, srs);
        for (uint8_t id : s.label.ids) CHECK((id == 0 || id == 1));
    }
}

TEST_CASE("cluster probability 1 with two nuclei produces a touching pair") {
    GenConfig cfg;
    cfg.cluster_probability = 1.0;
    cfg.target_proportion = 0.04;  // room for roughly two nuclei
    cfg.class_set = {1};
    RandomStream rs(3);
    int touching_runs = 0;
    for (int run = 0; run < 20; ++run) {
        RandomStream srs = rs.child(run);
        LabeledSample s = generate_sample(cfg, srs);
        if (s.instance.max_id() < 2) continue;
        bool touching = false;
        for (int64_t r = 0; r < s.instance.h && !touching; ++r) {
            for (int64_t c = 0; c < s.instance.w && !touching; ++c) {
                uint16_t id = s.instance.at(r, c);
                if (id == 0) continue;
                for (int dr = -1; dr <= 1 && !touching; ++dr)
                    for (int dc = -1; dc <= 1 && !touching; ++dc) {
                        int64_t nr = r + dr, nc = c + dc;
                        if (nr < 0 || nr >= s.instance.h || nc < 0 || nc >= s.instance.w) continue;
                        uint16_t nid = s.instance.at(nr, nc);
                        if (nid != 0 && nid != id) touching = true;
                    }
            }
        }
        if (touching) ++touching_runs;
    }
    // Clustered placement must actually produce adjacent distinct instances.
    CHECK(touching_runs >= 15);
}

TEST_CASE("sample invariants hold over 1000 random configs") {
    RandomStream rs(4);
    for (int i = 0; i < 1000; ++i) {
        RandomStream srs = rs.child(i);
        GenConfig cfg;
        cfg.target_proportion = srs.next_uniform() * 0.45;
        cfg.cluster_probability = srs.next_uniform();
        cfg.tissue = srs.next_uniform() < 0.5 ? "glandular" : "stromal";
        cfg.staining = srs.next_uniform() < 0.5 ? "HE-like" : "IHC-like";
        int nc = 1 + static_cast<int>(srs.next_below(3));
        cfg.class_set.clear();
        while (static_cast<int>(cfg.class_set.size()) < nc)
            cfg.class_set.insert(1 + static_cast<int>(srs.next_below(3)));
        LabeledSample s = generate_sample(cfg, srs);
        CHECK_NOTHROW(validate_sample(s, cfg.k, "toydata sample"));
        // Achieved proportion within the tolerance window unless flagged.
        if (!s.meta.proportion_warning)
            CHECK(std::abs(s.meta.proportion - cfg.target_proportion) <= 0.05 + 1e-9);
    }
}

TEST_CASE("class-conditional color separation from background") {
    GenConfig cfg;
    cfg.target_proportion = 0.3;
    RandomStream rs(5);
    for (const char* staining : {"HE-like", "IHC-like"}) {
        cfg.staining = staining;
        double bg_mean[3] = {0, 0, 0};
        double cls_mean[4][3] = {};
        int64_t bg_n = 0, cls_n[4] = {};
        for (int i = 0; i < 30; ++i) {
            RandomStream srs = rs.child(i);
            LabeledSample s = generate_sample(cfg, srs);
            for (int64_t p = 0; p < 32 * 32; ++p) {
                int id = s.label.ids[static_cast<size_t>(p)];
                for (int ch = 0; ch < 3; ++ch) {
                    double v = s.image.data[static_cast<size_t>(3 * p + ch)];
                    if (id == 0) {
                        bg_mean[ch] += v;
                    } else {
                        cls_mean[id][ch] += v;
                    }
                }
                if (id == 0)
                    ++bg_n;
                else
                    ++cls_n[id];
            }
        }
        for (int ch = 0; ch < 3; ++ch) bg_mean[ch] /= static_cast<double>(bg_n);
        for (int c = 1; c <= 3; ++c) {
            REQUIRE(cls_n[c] > 0);
            double max_diff = 0.0;
            for (int ch = 0; ch < 3; ++ch)
                max_diff = std::max(max_diff, std::abs(cls_mean[c][ch] / cls_n[c] - bg_mean[ch]));
            CHECK(max_diff >= 0.1);
        }
    }
}

TEST_CASE("generate_dataset count, determinism, and bucket concentration") {
    fs::path dir_a = fs::temp_directory_path() / "nucleo_gen_a";
    fs::path dir_b = fs::temp_directory_path() / "nucleo_gen_b";
    fs::remove_all(dir_a);
    fs::remove_all(dir_b);
    GenConfig tmpl;
    DatasetMix mix = DatasetMix::uniform_default(4);

    RandomStream rs1(9);
    GenSummary sum = generate_dataset(tmpl, 10, mix, rs1, dir_a.string());
    CHECK(sum.count == 10);
    DatasetManifest m;
    std::vector<LabeledSample> back = read_dataset(dir_a.string(), &m);
    CHECK(back.size() == 10);

    RandomStream rs2(9);
    generate_dataset(tmpl, 10, mix, rs2, dir_b.string());
    CHECK(directories_identical(dir_a.string(), dir_b.string()));

    // Concentrated mix: >= 80% of metas land in the "high" bucket.
    fs::path dir_c = fs::temp_directory_path() / "nucleo_gen_c";
    fs::remove_all(dir_c);
    DatasetMix high_mix = mix;
    high_mix.bucket_weights = {0, 0, 0, 1, 0};
    RandomStream rs3(10);
    generate_dataset(tmpl, 50, high_mix, rs3, dir_c.string());
    std::vector<LabeledSample> high = read_dataset(dir_c.string());
    int64_t in_bucket = 0;
    for (const auto& s : high)
        if (bucket_of(s.meta.proportion) == Bucket::High) ++in_bucket;
    CHECK(in_bucket >= 40);
}
