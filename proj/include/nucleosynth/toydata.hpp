// Copyright (c) 2026 nucleosynth contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <map>
#include <string>

#include "nucleosynth/conditioning.hpp"
#include "nucleosynth/dataset.hpp"
#include "nucleosynth/random.hpp"

namespace nucleo {

/// Per-sample generator configuration.
struct GenConfig {
    int64_t h = 32, w = 32;
    int k = 4;  // background + 3 nucleus classes
    std::string tissue = "glandular";
    std::string staining = "HE-like";
    double target_proportion = 0.2;  // in [0, 0.6]
    std::set<int> class_set = {1, 2, 3};
    double cluster_probability = 0.3;
    uint64_t seed = 0;
};

/// Sampling weights used by generate_dataset to draw per-sample configs.
struct DatasetMix {
    std::vector<double> tissue_weights;            // per vocab tissue
    std::vector<double> staining_weights;          // per vocab staining
    std::vector<double> bucket_weights;            // per proportion bucket (5)
    std::vector<std::pair<std::set<int>, double>> class_set_weights;

    static DatasetMix uniform_default(int k);
};

struct GenSummary {
    int64_t count = 0;
    std::map<std::string, int64_t> bucket_counts;
    std::map<int, int64_t> class_pixel_counts;
    int64_t warning_count = 0;

    nlohmann::json to_json() const;
};

DatasetManifest default_manifest(int64_t h, int64_t w, int k);

/// Draws one pathology-like sample: elliptical nuclei with class-specific
/// size/eccentricity/color priors over a low-frequency tissue background.
/// Touching pairs are produced with the configured cluster probability.
LabeledSample generate_sample(const GenConfig& cfg, RandomStream& rs);

GenSummary generate_dataset(const GenConfig& tmpl, int64_t n, const DatasetMix& mix,
                            RandomStream& rs, const std::string& dir);

/// Mean class color of the generator's palette (used by the image-content
/// detector in evaluation).
void class_palette(const std::string& staining, int k, std::vector<std::array<float, 3>>& colors,
                   std::array<float, 3>& background);

/// Fraction of image pixels closer to some nucleus class color than to the
/// background color (simple foreground-content detector).
double foreground_color_fraction(const Field& image, const std::string& staining, int k);

}  // namespace nucleo
