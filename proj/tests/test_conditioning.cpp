// Copyright (c) 2026 nucleosynth contributors
// SPDX-License-Identifier: Apache-2.0
#include "doctest.h"

#include <cstring>

#include "nucleosynth/conditioning.hpp"
#include "nucleosynth/denoiser.hpp"
#include "nucleosynth/toydata.hpp"

using namespace nucleo;

namespace {

PromptVocab toy_vocab() {
    return PromptVocab::from_manifest(default_manifest(32, 32, 4));
}

Prompt random_prompt(RandomStream& rs, const PromptVocab& v, bool allow_stain = true) {
    Prompt p;
    p.tissue = v.tissues[rs.next_below(v.tissues.size())];
    p.bucket = static_cast<Bucket>(rs.next_below(kNumBuckets));
    int n = 1 + static_cast<int>(rs.next_below(v.class_names.size()));
    while (static_cast<int>(p.class_set.size()) < n)
        p.class_set.insert(1 + static_cast<int>(rs.next_below(v.class_names.size())));
    if (allow_stain && rs.next_uniform() < 0.5)
        p.staining = v.stainings[rs.next_below(v.stainings.size())];
    return p;
}

PromptTables random_tables(RandomStream& rs, int k, const PromptVocab& v) {
    PromptTables t;
    t.tissue_table = rs.draw_normal({static_cast<int64_t>(v.tissues.size()), kEmbedWidth});
    t.bucket_table = rs.draw_normal({kNumBuckets, kEmbedWidth});
    t.class_table = rs.draw_normal({k - 1, kEmbedWidth});
    t.stain_table = rs.draw_normal({static_cast<int64_t>(v.stainings.size()), kEmbedWidth});
    t.null_vec = rs.draw_normal({kEmbedWidth});
    t.proj_w = rs.draw_normal({kEmbedWidth, kEmbedWidth});
    t.proj_b = rs.draw_normal({kEmbedWidth});
    return t;
}

}  // namespace

TEST_CASE("render_prompt canonical template") {
    PromptVocab v = toy_vocab();
    Prompt p;
    p.tissue = "glandular";
    p.bucket = Bucket::Medium;
    p.class_set = {1, 2};
    CHECK(render_prompt(p, v) ==
          "a glandular tissue with medium nuclei of types small-round, large-elongated");
    p.staining = "HE-like";
    CHECK(render_prompt(p, v) ==
          "a glandular tissue with medium nuclei of types small-round, large-elongated, "
          "HE-like stained");
}

TEST_CASE("render/parse bijection on random prompts") {
    PromptVocab v = toy_vocab();
    RandomStream rs(77);
    for (int i = 0; i < 1000; ++i) {
        Prompt p = random_prompt(rs, v);
        Prompt back = parse_prompt(render_prompt(p, v), v);
        CHECK(back == p);
    }
}

TEST_CASE("parse tolerates case and whitespace") {
    PromptVocab v = toy_vocab();
    Prompt p = parse_prompt("  A GLANDULAR tissue   with Very High nuclei of types MEDIUM ", v);
    CHECK(p.tissue == "glandular");
    CHECK(p.bucket == Bucket::VeryHigh);
    CHECK(p.class_set == std::set<int>{3});
    CHECK(!p.staining.has_value());
}

TEST_CASE("parse reports the unmatched segment") {
    PromptVocab v = toy_vocab();
    CHECK_THROWS_WITH_AS(parse_prompt("a mars tissue with low nuclei of types medium", v),
                         doctest::Contains("unknown tissue tag 'mars'"), std::invalid_argument);
    CHECK_THROWS_WITH_AS(parse_prompt("a glandular tissue with low nuclei of types martian", v),
                         doctest::Contains("unknown class name 'martian'"), std::invalid_argument);
    CHECK_THROWS_AS(parse_prompt("nothing canonical here", v), std::invalid_argument);
}

TEST_CASE("empty class set renders and parses") {
    PromptVocab v = toy_vocab();
    Prompt p;
    p.tissue = "stromal";
    p.bucket = Bucket::VeryLow;
    CHECK(render_prompt(p, v) == "a stromal tissue with very low nuclei of types none");
    CHECK(parse_prompt(render_prompt(p, v), v) == p);
}

TEST_CASE("encode_prompt determinism, null, and class-order invariance") {
    PromptVocab v = toy_vocab();
    RandomStream rs(11);
    PromptTables t = random_tables(rs, 4, v);

    Prompt p;
    p.tissue = "glandular";
    p.bucket = Bucket::High;
    p.class_set = {2, 1, 3};
    PromptEmbedding a = encode_prompt(p, t, v);
    PromptEmbedding b = encode_prompt(p, t, v);
    CHECK(std::memcmp(a.vec.data.data(), b.vec.data.data(), a.vec.data.size() * sizeof(float)) ==
          0);
    CHECK(a.conditional);

    PromptEmbedding n = encode_prompt(std::nullopt, t, v);
    CHECK(!n.conditional);
    CHECK(n.vec.data == t.null_vec.data);
}

TEST_CASE("embedding changes when any single field changes (exhaustive)") {
    PromptVocab v = toy_vocab();
    RandomStream rs(13);
    PromptTables t = random_tables(rs, 4, v);

    // Enumerate the full finite prompt vocabulary (without staining).
    std::vector<Prompt> all;
    std::vector<std::set<int>> class_sets = {{1}, {2}, {3}, {1, 2}, {1, 3}, {2, 3}, {1, 2, 3}};
    for (const auto& tissue : v.tissues)
        for (int b = 0; b < kNumBuckets; ++b)
            for (const auto& cs : class_sets) {
                Prompt p;
                p.tissue = tissue;
                p.bucket = static_cast<Bucket>(b);
                p.class_set = cs;
                all.push_back(p);
            }
    for (size_t i = 0; i < all.size(); ++i) {
        Field ei = encode_prompt(all[i], t, v).vec;
        for (size_t j = i + 1; j < all.size(); ++j) {
            Field ej = encode_prompt(all[j], t, v).vec;
            double diff = 0.0;
            for (size_t x = 0; x < ei.data.size(); ++x)
                diff = std::max(diff, std::abs(static_cast<double>(ei.data[x]) - ej.data[x]));
            CHECK(diff > 1e-7);
        }
    }
}

TEST_CASE("guide identities") {
    RandomStream rs(3);
    Field c = rs.draw_normal({4, 4});
    Field u = rs.draw_normal({4, 4});
    Field g1 = guide(c, u, 1.0f);
    CHECK(std::memcmp(g1.data.data(), c.data.data(), c.data.size() * sizeof(float)) == 0);
    Field g0 = guide(c, u, 0.0f);
    CHECK(std::memcmp(g0.data.data(), u.data.data(), u.data.size() * sizeof(float)) == 0);
    Field g2 = guide(c, c, 2.7f);
    for (size_t i = 0; i < c.data.size(); ++i) CHECK(g2.data[i] == c.data[i]);
    Field bad({3, 3});
    CHECK_THROWS_AS(guide(c, bad, 0.5f), std::invalid_argument);
}

TEST_CASE("graph prompt encoder matches the plain encoder") {
    PromptVocab v = toy_vocab();
    StageOneConfig cfg = StageOneConfig::defaults(16, 16, 4);
    StageOneModel<float> m = StageOneModel<float>::build(cfg);
    PromptTables t = m.tables();
    RandomStream rs(21);
    for (int i = 0; i < 20; ++i) {
        Prompt p = random_prompt(rs, v);
        Field plain = encode_prompt(p, t, v).vec;
        Tape<float> tape(false);
        ParamBinder<float> bind(tape, m.store, false);
        int node = encode_prompt_graph(tape, bind, m.cond, p, v);
        const auto& gv = tape.val(node);
        for (size_t x = 0; x < plain.data.size(); ++x)
            CHECK(plain.data[x] == doctest::Approx(gv.data[x]).epsilon(1e-5));
    }
}
