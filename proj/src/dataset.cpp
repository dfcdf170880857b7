// Copyright (c) 2026 nucleosynth contributors
// SPDX-License-Identifier: Apache-2.0
#include "nucleosynth/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <queue>

#include "nucleosynth/png_io.hpp"

namespace fs = std::filesystem;

namespace nucleo {

nlohmann::json DatasetManifest::to_json() const {
    return nlohmann::json{{"h", h},
                          {"w", w},
                          {"k", k},
                          {"class_names", class_names},
                          {"tissues", tissues},
                          {"stainings", stainings},
                          {"count", count}};
}

DatasetManifest DatasetManifest::from_json(const nlohmann::json& j) {
    DatasetManifest m;
    m.h = j.at("h").get<int64_t>();
    m.w = j.at("w").get<int64_t>();
    m.k = j.at("k").get<int>();
    m.class_names = j.at("class_names").get<std::vector<std::string>>();
    m.tissues = j.at("tissues").get<std::vector<std::string>>();
    m.stainings = j.at("stainings").get<std::vector<std::string>>();
    m.count = j.at("count").get<int64_t>();
    if (m.k < 2) throw std::runtime_error("manifest: k must be >= 2");
    if (static_cast<int>(m.class_names.size()) != m.k - 1)
        throw std::runtime_error("manifest: class_names must have k-1 entries");
    return m;
}

bool instance_region_connected(const InstanceGrid& g, uint16_t id) {
    int64_t start = -1;
    int64_t total = 0;
    for (int64_t i = 0; i < g.h * g.w; ++i) {
        if (g.ids[static_cast<size_t>(i)] == id) {
            ++total;
            if (start < 0) start = i;
        }
    }
    if (total == 0) return true;
    std::vector<char> seen(static_cast<size_t>(g.h * g.w), 0);
    std::queue<int64_t> q;
    q.push(start);
    seen[static_cast<size_t>(start)] = 1;
    int64_t reached = 0;
    while (!q.empty()) {
        int64_t p = q.front();
        q.pop();
        ++reached;
        int64_t r = p / g.w, c = p % g.w;
        const int64_t dr[4] = {-1, 1, 0, 0}, dc[4] = {0, 0, -1, 1};
        for (int d = 0; d < 4; ++d) {
            int64_t nr = r + dr[d], nc = c + dc[d];
            if (nr < 0 || nr >= g.h || nc < 0 || nc >= g.w) continue;
            int64_t np = nr * g.w + nc;
            if (!seen[static_cast<size_t>(np)] && g.ids[static_cast<size_t>(np)] == id) {
                seen[static_cast<size_t>(np)] = 1;
                q.push(np);
            }
        }
    }
    return reached == total;
}

void validate_sample(const LabeledSample& s, int k, const std::string& what) {
    const int64_t h = s.label.h, w = s.label.w;
    if (s.instance.h != h || s.instance.w != w)
        throw std::runtime_error(what + ": label/instance extent mismatch");
    if (s.image.rank() != 3 || s.image.shape[0] != h || s.image.shape[1] != w ||
        s.image.shape[2] != 3)
        throw std::runtime_error(what + ": image shape mismatch");
    int64_t fg = 0;
    for (int64_t i = 0; i < h * w; ++i) {
        uint8_t lab = s.label.ids[static_cast<size_t>(i)];
        uint16_t inst = s.instance.ids[static_cast<size_t>(i)];
        if (lab >= k)
            throw std::runtime_error(what + ": label id " + std::to_string(lab) +
                                     " >= K=" + std::to_string(k));
        if ((lab > 0) != (inst > 0))
            throw std::runtime_error(what + ": instance>0 <=> label>0 violated at pixel " +
                                     std::to_string(i));
        if (lab > 0) ++fg;
    }
    double prop = static_cast<double>(fg) / static_cast<double>(h * w);
    if (std::abs(prop - s.meta.proportion) > 1e-6)
        throw std::runtime_error(what + ": meta.proportion " + std::to_string(s.meta.proportion) +
                                 " does not match label foreground " + std::to_string(prop));
    for (uint16_t id = 1; id <= s.instance.max_id(); ++id)
        if (!instance_region_connected(s.instance, id))
            throw std::runtime_error(what + ": instance " + std::to_string(id) +
                                     " is not 4-connected");
}

std::string sample_file(const std::string& dir, const char* prefix, int64_t index,
                        const char* ext) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%s_%06lld.%s", prefix, static_cast<long long>(index), ext);
    return (fs::path(dir) / buf).string();
}

void write_dataset(const std::vector<LabeledSample>& samples, const DatasetManifest& manifest,
                   const std::string& dir) {
    fs::create_directories(dir);
    DatasetManifest m = manifest;
    m.count = static_cast<int64_t>(samples.size());
    {
        std::ofstream os(fs::path(dir) / "manifest.json");
        if (!os) throw std::runtime_error("write_dataset: cannot write manifest in " + dir);
        os << m.to_json().dump(2) << "\n";
    }
    for (size_t i = 0; i < samples.size(); ++i) {
        const LabeledSample& s = samples[i];
        validate_sample(s, m.k, "write_dataset sample " + std::to_string(i));
        const int64_t h = s.label.h, w = s.label.w;

        std::vector<uint8_t> rgb(static_cast<size_t>(h * w * 3));
        for (int64_t p = 0; p < h * w * 3; ++p) {
            float v = std::clamp(s.image.data[static_cast<size_t>(p)], 0.0f, 1.0f);
            rgb[static_cast<size_t>(p)] = static_cast<uint8_t>(std::lround(v * 255.0f));
        }
        write_png_rgb8(sample_file(dir, "img", static_cast<int64_t>(i), "png"), h, w, rgb);
        write_png_gray8(sample_file(dir, "lab", static_cast<int64_t>(i), "png"), h, w,
                        s.label.ids);
        write_png_gray16(sample_file(dir, "inst", static_cast<int64_t>(i), "png"), h, w,
                         s.instance.ids);

        nlohmann::json meta{{"tissue", s.meta.tissue},
                            {"staining", s.meta.staining},
                            {"proportion", s.meta.proportion},
                            {"class_set", std::vector<int>(s.meta.class_set.begin(),
                                                           s.meta.class_set.end())},
                            {"prompt", s.meta.prompt},
                            {"proportion_warning", s.meta.proportion_warning}};
        std::ofstream os(sample_file(dir, "meta", static_cast<int64_t>(i), "json"));
        if (!os)
            throw std::runtime_error("write_dataset: cannot write meta for sample " +
                                     std::to_string(i));
        os << meta.dump(2) << "\n";
    }
}

std::vector<LabeledSample> read_dataset(const std::string& dir, DatasetManifest* manifest_out) {
    std::ifstream mis(fs::path(dir) / "manifest.json");
    if (!mis) throw std::runtime_error("read_dataset: missing manifest.json in " + dir);
    DatasetManifest m = DatasetManifest::from_json(nlohmann::json::parse(mis));
    if (manifest_out) *manifest_out = m;

    std::vector<LabeledSample> out;
    out.reserve(static_cast<size_t>(m.count));
    for (int64_t i = 0; i < m.count; ++i) {
        const std::string img_p = sample_file(dir, "img", i, "png");
        const std::string lab_p = sample_file(dir, "lab", i, "png");
        const std::string inst_p = sample_file(dir, "inst", i, "png");
        const std::string meta_p = sample_file(dir, "meta", i, "json");
        for (const std::string* p : {&img_p, &lab_p, &inst_p, &meta_p})
            if (!fs::exists(*p))
                throw std::runtime_error("read_dataset: sample " + std::to_string(i) +
                                         " is missing file " + *p);

        LabeledSample s;
        PngImage img = read_png(img_p);
        if (img.channels != 3 || img.bit_depth != 8 || img.h != m.h || img.w != m.w)
            throw std::runtime_error("read_dataset: bad image format for sample " +
                                     std::to_string(i));
        s.image = Field({m.h, m.w, 3});
        for (int64_t p = 0; p < m.h * m.w * 3; ++p)
            s.image.data[static_cast<size_t>(p)] =
                static_cast<float>(img.px[static_cast<size_t>(p)]) / 255.0f;

        PngImage lab = read_png(lab_p);
        if (lab.channels != 1 || lab.bit_depth != 8 || lab.h != m.h || lab.w != m.w)
            throw std::runtime_error("read_dataset: bad label format for sample " +
                                     std::to_string(i));
        s.label = LabelGrid(m.h, m.w);
        for (int64_t p = 0; p < m.h * m.w; ++p) {
            uint16_t v = lab.px[static_cast<size_t>(p)];
            if (v >= m.k)
                throw std::runtime_error("read_dataset: sample " + std::to_string(i) +
                                         " has label id " + std::to_string(v) +
                                         " >= manifest K=" + std::to_string(m.k));
            s.label.ids[static_cast<size_t>(p)] = static_cast<uint8_t>(v);
        }

        PngImage inst = read_png(inst_p);
        if (inst.channels != 1 || inst.bit_depth != 16 || inst.h != m.h || inst.w != m.w)
            throw std::runtime_error("read_dataset: bad instance format for sample " +
                                     std::to_string(i));
        s.instance = InstanceGrid(m.h, m.w);
        for (int64_t p = 0; p < m.h * m.w; ++p)
            s.instance.ids[static_cast<size_t>(p)] = inst.px[static_cast<size_t>(p)];

        std::ifstream ms(meta_p);
        nlohmann::json j = nlohmann::json::parse(ms);
        s.meta.tissue = j.at("tissue").get<std::string>();
        s.meta.staining = j.at("staining").get<std::string>();
        s.meta.proportion = j.at("proportion").get<double>();
        auto cs = j.at("class_set").get<std::vector<int>>();
        s.meta.class_set = std::set<int>(cs.begin(), cs.end());
        s.meta.prompt = j.at("prompt").get<std::string>();
        s.meta.proportion_warning = j.value("proportion_warning", false);

        validate_sample(s, m.k, "read_dataset sample " + std::to_string(i));
        out.push_back(std::move(s));
    }
    return out;
}

}  // namespace nucleo
