// Copyright (c) 2026 nucleosynth contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <set>
#include <string>
#include <vector>

#include "nucleosynth/dataset.hpp"
#include "nucleosynth/field.hpp"

namespace nucleo {

inline constexpr int kNumBuckets = 5;
inline constexpr int kEmbedWidth = 128;

/// Nucleus-proportion bucket. Boundaries are shared with the toy generator:
/// [0,0.08) [0.08,0.16) [0.16,0.26) [0.26,0.38) [0.38,1].
enum class Bucket { VeryLow = 0, Low, Medium, High, VeryHigh };

Bucket bucket_of(double proportion);
const char* bucket_name(Bucket b);
double bucket_midpoint(Bucket b);
/// Representative [lo, hi) range of a bucket.
std::pair<double, double> bucket_range(Bucket b);

/// Tag vocabularies prompts are validated against; mirrors the dataset
/// manifest fields.
struct PromptVocab {
    std::vector<std::string> tissues;
    std::vector<std::string> class_names;  // ids 1..K-1
    std::vector<std::string> stainings;

    static PromptVocab from_manifest(const DatasetManifest& m);
    int tissue_index(const std::string& tag) const;
    int staining_index(const std::string& tag) const;
    int class_index(const std::string& name) const;  // returns class id (1-based)
};

struct Prompt {
    std::string tissue;
    Bucket bucket = Bucket::VeryLow;
    std::set<int> class_set;               // class ids, 1..K-1
    std::optional<std::string> staining;   // stage-2 prompts only

    bool operator==(const Prompt&) const = default;
};

/// Canonical surface form:
///   "a {tissue} tissue with {bucket} nuclei of types {names}[, {staining} stained]"
/// Class names are listed in class-id order; an empty class set renders as
/// "none". Injective over valid prompts.
std::string render_prompt(const Prompt& p, const PromptVocab& vocab);

/// Inverse of render_prompt on canonical strings; case-insensitive and
/// whitespace-tolerant. Throws with the first unmatched segment named.
Prompt parse_prompt(const std::string& text, const PromptVocab& vocab);

/// Learned prompt-encoder tables. Trained jointly with stage 1 and reused
/// frozen by stage 2.
struct PromptTables {
    Field tissue_table;  // [n_tissues, D]
    Field bucket_table;  // [5, D]
    Field class_table;   // [K-1, D]
    Field stain_table;   // [n_stainings, D]
    Field null_vec;      // [D]
    Field proj_w;        // [D, D]
    Field proj_b;        // [D]

    int width() const { return static_cast<int>(null_vec.shape[0]); }
};

struct PromptEmbedding {
    Field vec;           // [D]
    bool conditional = true;
};

/// c_pr = proj(tissue row + bucket row + mean of class rows (+ staining row)).
/// A null prompt returns the learned null vector itself.
PromptEmbedding encode_prompt(const std::optional<Prompt>& p, const PromptTables& tables,
                              const PromptVocab& vocab);

/// Classifier-free guidance combination: u + w * (c - u). w = 1 returns the
/// conditional output bit-exactly, w = 0 the unconditional one.
Field guide(const Field& out_cond, const Field& out_uncond, float w);

/// Reads one canonical prompt per line; blank lines and lines starting with
/// '#' are skipped.
std::vector<Prompt> load_prompt_file(const std::string& path, const PromptVocab& vocab);

}  // namespace nucleo
