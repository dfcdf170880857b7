// Copyright (c) 2026 nucleosynth contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "nucleosynth/field.hpp"

namespace nucleo {

struct SampleMeta {
    std::string tissue;
    std::string staining;
    double proportion = 0.0;           // nucleus pixels / (H*W), recomputed from label
    std::set<int> class_set;           // class ids present (1..K-1)
    std::string prompt;                // canonical prompt text
    bool proportion_warning = false;   // generator missed its target window
};

/// Image + semantic label + instance map + metadata; the unit of both the
/// generated toy datasets and synthetic augmentation output.
struct LabeledSample {
    Field image;            // [H,W,3] in [0,1]
    LabelGrid label;        // class ids, 0 = background
    InstanceGrid instance;  // instance ids, 0 = background
    SampleMeta meta;
};

struct DatasetManifest {
    int64_t h = 0, w = 0;
    int k = 0;  // class count including background
    std::vector<std::string> class_names;  // size k-1, ids 1..k-1
    std::vector<std::string> tissues;
    std::vector<std::string> stainings;
    int64_t count = 0;

    nlohmann::json to_json() const;
    static DatasetManifest from_json(const nlohmann::json& j);
};

/// Checks the LabeledSample invariants: instance>0 <=> label>0 pixelwise,
/// meta.proportion matches the label within 1e-6, every instance id forms a
/// single 4-connected region. Throws on violation.
void validate_sample(const LabeledSample& s, int k, const std::string& what);

/// True iff the pixels with this id form one 4-connected region.
bool instance_region_connected(const InstanceGrid& g, uint16_t id);

void write_dataset(const std::vector<LabeledSample>& samples, const DatasetManifest& manifest,
                   const std::string& dir);
std::vector<LabeledSample> read_dataset(const std::string& dir, DatasetManifest* manifest_out = nullptr);

std::string sample_file(const std::string& dir, const char* prefix, int64_t index,
                        const char* ext);

}  // namespace nucleo
