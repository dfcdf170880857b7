// Copyright (c) 2026 nucleosynth contributors
// SPDX-License-Identifier: Apache-2.0
#include "doctest.h"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "nucleosynth/checkpoint.hpp"
#include "nucleosynth/dataset.hpp"
#include "nucleosynth/png_io.hpp"
#include "nucleosynth/random.hpp"
#include "nucleosynth/toydata.hpp"

using namespace nucleo;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const char* tag) {
    fs::path p = fs::temp_directory_path() / (std::string("nucleo_test_") + tag);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

}  // namespace

TEST_CASE("checkpoint roundtrip is bit-exact") {
    fs::path dir = temp_dir("ckpt");
    Checkpoint ck;
    ck.tensors.emplace("w", Field({2, 2}, {1, 2, 3, 4}));
    ck.metadata["note"] = "x";
    std::string path = (dir / "a.nsck").string();
    save_checkpoint(ck, path);
    Checkpoint back = load_checkpoint(path);
    REQUIRE(back.tensors.count("w") == 1);
    CHECK(back.tensors.at("w").shape == std::vector<int64_t>{2, 2});
    CHECK(back.tensors.at("w").data == std::vector<float>{1, 2, 3, 4});
    CHECK(back.metadata.at("note") == "x");
}

TEST_CASE("checkpoint roundtrip on random contents") {
    fs::path dir = temp_dir("ckpt_rand");
    RandomStream rs(99);
    for (int iter = 0; iter < 20; ++iter) {
        Checkpoint ck;
        int n = 1 + static_cast<int>(rs.next_below(4));
        for (int i = 0; i < n; ++i) {
            std::vector<int64_t> shape;
            int rank = 1 + static_cast<int>(rs.next_below(3));
            for (int r = 0; r < rank; ++r) shape.push_back(1 + static_cast<int64_t>(rs.next_below(5)));
            ck.tensors.emplace("t" + std::to_string(i), rs.draw_normal(shape));
        }
        std::string path = (dir / ("r" + std::to_string(iter) + ".nsck")).string();
        save_checkpoint(ck, path);
        Checkpoint back = load_checkpoint(path);
        REQUIRE(back.tensors.size() == ck.tensors.size());
        for (auto& [name, f] : ck.tensors) {
            REQUIRE(back.tensors.count(name) == 1);
            CHECK(back.tensors.at(name).shape == f.shape);
            CHECK(std::memcmp(back.tensors.at(name).data.data(), f.data.data(),
                              f.data.size() * sizeof(float)) == 0);
        }
    }
}

TEST_CASE("checkpoint wrong magic is a format error") {
    fs::path dir = temp_dir("ckpt_bad");
    std::string path = (dir / "bad.nsck").string();
    std::ofstream os(path, std::ios::binary);
    os << "JUNKJUNKJUNK";
    os.close();
    CHECK_THROWS_WITH_AS(load_checkpoint(path), doctest::Contains("bad magic"),
                         std::runtime_error);
}

TEST_CASE("checkpoint truncation is detected") {
    fs::path dir = temp_dir("ckpt_trunc");
    Checkpoint ck;
    ck.tensors.emplace("w", Field({64}));
    std::string path = (dir / "t.nsck").string();
    save_checkpoint(ck, path);
    auto size = fs::file_size(path);
    fs::resize_file(path, size - 40);
    CHECK_THROWS_AS(load_checkpoint(path), std::runtime_error);
}

TEST_CASE("empty checkpoint is valid") {
    fs::path dir = temp_dir("ckpt_empty");
    std::string path = (dir / "e.nsck").string();
    save_checkpoint(Checkpoint{}, path);
    Checkpoint back = load_checkpoint(path);
    CHECK(back.tensors.empty());
}

TEST_CASE("stream determinism and splitting") {
    RandomStream a(42), b(42);
    Field fa = a.draw_normal({16, 16});
    Field fb = b.draw_normal({16, 16});
    CHECK(std::memcmp(fa.data.data(), fb.data.data(), fa.data.size() * sizeof(float)) == 0);

    // Child streams are independent of parent advancement.
    RandomStream p1(7), p2(7);
    (void)p1.next_u64();
    (void)p1.next_u64();
    RandomStream c1 = p1.child(3);
    RandomStream c2 = p2.child(3);
    CHECK(c1.next_u64() == c2.next_u64());
}

TEST_CASE("draw_categorical degenerate distribution") {
    RandomStream rs(1);
    float probs[3] = {1.0f, 0.0f, 0.0f};
    for (int i = 0; i < 50; ++i) CHECK(rs.draw_categorical(probs, 3) == 0);
    float bad[2] = {0.7f, 0.2f};
    CHECK_THROWS_AS(rs.draw_categorical(bad, 2), std::invalid_argument);
    CHECK_THROWS_AS(rs.draw_normal({}), std::invalid_argument);
}

TEST_CASE("draw_normal matches the standard normal law") {
    RandomStream rs(1234);
    const int64_t n = 1000000;
    double sum = 0.0, sum2 = 0.0;
    for (int64_t i = 0; i < n; ++i) {
        double v = rs.next_normal();
        sum += v;
        sum2 += v * v;
    }
    double mean = sum / static_cast<double>(n);
    double stddev = std::sqrt(sum2 / static_cast<double>(n) - mean * mean);
    CHECK(std::abs(mean) < 0.01);
    CHECK(std::abs(stddev - 1.0) < 0.01);
}

TEST_CASE("dataset roundtrip") {
    fs::path dir = temp_dir("ds");
    GenConfig cfg;
    cfg.target_proportion = 0.2;
    RandomStream rs(5);
    std::vector<LabeledSample> samples;
    for (int i = 0; i < 3; ++i) {
        RandomStream srs = rs.child(i);
        samples.push_back(generate_sample(cfg, srs));
    }
    DatasetManifest m = default_manifest(cfg.h, cfg.w, cfg.k);
    write_dataset(samples, m, dir.string());

    DatasetManifest back_m;
    std::vector<LabeledSample> back = read_dataset(dir.string(), &back_m);
    REQUIRE(back.size() == 3);
    CHECK(back_m.count == 3);
    for (size_t i = 0; i < 3; ++i) {
        CHECK(back[i].label == samples[i].label);
        CHECK(back[i].instance == samples[i].instance);
        for (size_t p = 0; p < back[i].image.data.size(); ++p)
            CHECK(std::abs(back[i].image.data[p] - samples[i].image.data[p]) <= 1.0f / 255.0f);
        CHECK(back[i].meta.prompt == samples[i].meta.prompt);
        CHECK(back[i].meta.proportion == doctest::Approx(samples[i].meta.proportion).epsilon(1e-9));
    }
}

TEST_CASE("dataset missing file names the sample") {
    fs::path dir = temp_dir("ds_missing");
    GenConfig cfg;
    RandomStream rs(6);
    std::vector<LabeledSample> samples;
    for (int i = 0; i < 2; ++i) {
        RandomStream srs = rs.child(i);
        samples.push_back(generate_sample(cfg, srs));
    }
    write_dataset(samples, default_manifest(cfg.h, cfg.w, cfg.k), dir.string());
    fs::remove(dir / "meta_000001.json");
    CHECK_THROWS_WITH_AS(read_dataset(dir.string()), doctest::Contains("sample 1"),
                         std::runtime_error);
}

TEST_CASE("dataset label id beyond manifest K is rejected") {
    fs::path dir = temp_dir("ds_badlabel");
    GenConfig cfg;
    RandomStream rs(7);
    std::vector<LabeledSample> samples{generate_sample(cfg, rs)};
    write_dataset(samples, default_manifest(cfg.h, cfg.w, cfg.k), dir.string());
    // Overwrite the label PNG with an id >= K.
    std::vector<uint8_t> bad(static_cast<size_t>(cfg.h * cfg.w), 7);
    write_png_gray8((dir / "lab_000000.png").string(), cfg.h, cfg.w, bad);
    CHECK_THROWS_WITH_AS(read_dataset(dir.string()), doctest::Contains("label id 7"),
                         std::runtime_error);
}
