// Copyright (c) 2026 nucleosynth contributors
// SPDX-License-Identifier: Apache-2.0
#include "nucleosynth/conditioning.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

namespace nucleo {

namespace {

constexpr double kBucketEdges[kNumBuckets + 1] = {0.0, 0.08, 0.16, 0.26, 0.38, 1.0};
constexpr const char* kBucketNames[kNumBuckets] = {"very low", "low", "medium", "high",
                                                   "very high"};

std::string lower(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return s;
}

std::string squeeze(const std::string& s) {
    std::string out;
    bool in_space = true;
    for (char c : s) {
        if (std::isspace(static_cast<unsigned char>(c))) {
            if (!in_space) out.push_back(' ');
            in_space = true;
        } else {
            out.push_back(c);
            in_space = false;
        }
    }
    while (!out.empty() && out.back() == ' ') out.pop_back();
    return out;
}

}  // namespace

Bucket bucket_of(double proportion) {
    for (int b = 0; b < kNumBuckets - 1; ++b)
        if (proportion < kBucketEdges[b + 1]) return static_cast<Bucket>(b);
    return Bucket::VeryHigh;
}

const char* bucket_name(Bucket b) { return kBucketNames[static_cast<int>(b)]; }

std::pair<double, double> bucket_range(Bucket b) {
    int i = static_cast<int>(b);
    return {kBucketEdges[i], kBucketEdges[i + 1]};
}

double bucket_midpoint(Bucket b) {
    auto [lo, hi] = bucket_range(b);
    if (b == Bucket::VeryHigh) hi = 0.5;  // generator ceiling, not 1.0
    return 0.5 * (lo + hi);
}

PromptVocab PromptVocab::from_manifest(const DatasetManifest& m) {
    return PromptVocab{m.tissues, m.class_names, m.stainings};
}

int PromptVocab::tissue_index(const std::string& tag) const {
    for (size_t i = 0; i < tissues.size(); ++i)
        if (lower(tissues[i]) == lower(tag)) return static_cast<int>(i);
    return -1;
}

int PromptVocab::staining_index(const std::string& tag) const {
    for (size_t i = 0; i < stainings.size(); ++i)
        if (lower(stainings[i]) == lower(tag)) return static_cast<int>(i);
    return -1;
}

int PromptVocab::class_index(const std::string& name) const {
    for (size_t i = 0; i < class_names.size(); ++i)
        if (lower(class_names[i]) == lower(name)) return static_cast<int>(i) + 1;
    return -1;
}

std::string render_prompt(const Prompt& p, const PromptVocab& vocab) {
    if (vocab.tissue_index(p.tissue) < 0)
        throw std::invalid_argument("render_prompt: unknown tissue tag '" + p.tissue + "'");
    std::ostringstream os;
    os << "a " << p.tissue << " tissue with " << bucket_name(p.bucket) << " nuclei of types ";
    if (p.class_set.empty()) {
        os << "none";
    } else {
        bool first = true;
        for (int id : p.class_set) {  // std::set iterates in id order
            if (id < 1 || id > static_cast<int>(vocab.class_names.size()))
                throw std::invalid_argument("render_prompt: class id out of range");
            os << (first ? "" : ", ") << vocab.class_names[static_cast<size_t>(id - 1)];
            first = false;
        }
    }
    if (p.staining) {
        if (vocab.staining_index(*p.staining) < 0)
            throw std::invalid_argument("render_prompt: unknown staining tag '" + *p.staining +
                                        "'");
        os << ", " << *p.staining << " stained";
    }
    return os.str();
}

Prompt parse_prompt(const std::string& text, const PromptVocab& vocab) {
    std::string s = lower(squeeze(text));

    auto fail = [&](const std::string& segment) -> void {
        throw std::invalid_argument("parse_prompt: " + segment);
    };
    auto eat = [&](const std::string& token, const char* segment) {
        if (s.rfind(token, 0) != 0) fail(std::string("expected '") + token + "' at segment " +
                                         segment + " in: " + s);
        s.erase(0, token.size());
    };

    Prompt p;
    eat("a ", "article");
    size_t pos = s.find(" tissue with ");
    if (pos == std::string::npos) fail("missing ' tissue with ' separator");
    std::string tissue = s.substr(0, pos);
    if (vocab.tissue_index(tissue) < 0) fail("unknown tissue tag '" + tissue + "'");
    p.tissue = vocab.tissues[static_cast<size_t>(vocab.tissue_index(tissue))];
    s.erase(0, pos + std::string(" tissue with ").size());

    pos = s.find(" nuclei of types ");
    if (pos == std::string::npos) fail("missing ' nuclei of types ' separator");
    std::string bucket = s.substr(0, pos);
    int bucket_id = -1;
    for (int b = 0; b < kNumBuckets; ++b)
        if (bucket == kBucketNames[b]) bucket_id = b;
    if (bucket_id < 0) fail("unknown proportion bucket '" + bucket + "'");
    p.bucket = static_cast<Bucket>(bucket_id);
    s.erase(0, pos + std::string(" nuclei of types ").size());

    // Optional staining suffix: ", {tag} stained".
    const std::string stained = " stained";
    if (s.size() >= stained.size() && s.compare(s.size() - stained.size(), stained.size(),
                                                stained) == 0) {
        size_t comma = s.rfind(", ");
        if (comma == std::string::npos) fail("malformed staining suffix");
        std::string stain = s.substr(comma + 2, s.size() - stained.size() - comma - 2);
        if (vocab.staining_index(stain) < 0) fail("unknown staining tag '" + stain + "'");
        p.staining = vocab.stainings[static_cast<size_t>(vocab.staining_index(stain))];
        s.erase(comma);
    }

    if (s != "none") {
        std::string rest = s;
        while (!rest.empty()) {
            size_t comma = rest.find(", ");
            std::string name = (comma == std::string::npos) ? rest : rest.substr(0, comma);
            int id = vocab.class_index(name);
            if (id < 0) fail("unknown class name '" + name + "'");
            p.class_set.insert(id);
            if (comma == std::string::npos) break;
            rest.erase(0, comma + 2);
        }
    }
    return p;
}

PromptEmbedding encode_prompt(const std::optional<Prompt>& p, const PromptTables& tables,
                              const PromptVocab& vocab) {
    const int d = tables.width();
    PromptEmbedding out;
    out.vec = Field({d});
    if (!p.has_value()) {
        out.vec.data = tables.null_vec.data;
        out.conditional = false;
        return out;
    }
    int ti = vocab.tissue_index(p->tissue);
    if (ti < 0) throw std::invalid_argument("encode_prompt: unknown tissue tag '" + p->tissue + "'");
    std::vector<float> acc(static_cast<size_t>(d), 0.0f);
    for (int j = 0; j < d; ++j) acc[j] += tables.tissue_table.at2(ti, j);
    for (int j = 0; j < d; ++j) acc[j] += tables.bucket_table.at2(static_cast<int>(p->bucket), j);
    if (!p->class_set.empty()) {
        float inv = 1.0f / static_cast<float>(p->class_set.size());
        for (int id : p->class_set) {
            if (id < 1 || id > static_cast<int>(vocab.class_names.size()))
                throw std::invalid_argument("encode_prompt: class id out of range");
            for (int j = 0; j < d; ++j) acc[j] += inv * tables.class_table.at2(id - 1, j);
        }
    }
    if (p->staining) {
        int si = vocab.staining_index(*p->staining);
        if (si < 0)
            throw std::invalid_argument("encode_prompt: unknown staining tag '" + *p->staining +
                                        "'");
        for (int j = 0; j < d; ++j) acc[j] += tables.stain_table.at2(si, j);
    }
    for (int i = 0; i < d; ++i) {
        float v = tables.proj_b[static_cast<size_t>(i)];
        for (int j = 0; j < d; ++j) v += tables.proj_w.at2(i, j) * acc[static_cast<size_t>(j)];
        out.vec[static_cast<size_t>(i)] = v;
    }
    return out;
}

Field guide(const Field& out_cond, const Field& out_uncond, float w) {
    if (!out_cond.same_shape(out_uncond))
        throw std::invalid_argument("guide: shape mismatch " + shape_str(out_cond.shape) +
                                    " vs " + shape_str(out_uncond.shape));
    if (w == 1.0f) return out_cond;
    if (w == 0.0f) return out_uncond;
    Field g(out_cond.shape);
    for (size_t i = 0; i < g.data.size(); ++i)
        g.data[i] = out_uncond.data[i] + w * (out_cond.data[i] - out_uncond.data[i]);
    return g;
}

std::vector<Prompt> load_prompt_file(const std::string& path, const PromptVocab& vocab) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("load_prompt_file: cannot open " + path);
    std::vector<Prompt> out;
    std::string line;
    while (std::getline(is, line)) {
        std::string t = squeeze(line);
        if (t.empty() || t[0] == '#') continue;
        out.push_back(parse_prompt(t, vocab));
    }
    return out;
}

}  // namespace nucleo
