// Copyright (c) 2026 nucleosynth contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <string>
#include <vector>

#include "nucleosynth/denoiser.hpp"
#include "nucleosynth/metrics.hpp"
#include "nucleosynth/stage2.hpp"
#include "nucleosynth/toydata.hpp"

namespace nucleo {

nlohmann::json stage1_config_to_json(const StageOneConfig& c);
StageOneConfig stage1_config_from_json(const nlohmann::json& j);

void save_stage1(const StageOneModel<float>& model, const std::string& path,
                 const nlohmann::json& extra = {});
StageOneModel<float> load_stage1(const std::string& path);

nlohmann::json stage2_config_to_json(const StageTwoConfig& c);
StageTwoConfig stage2_config_from_json(const nlohmann::json& j);
void save_base(const BaseModel& model, const std::string& path, bool frozen);
BaseModel load_base(const std::string& path, bool* frozen_out = nullptr);
void save_branch(const ControlBranch& branch, const BaseModel& base, const std::string& path);
ControlBranch load_branch(const std::string& path, const BaseModel& base);

/// Structure maps + prompts (without staining) for stage-1 training.
std::vector<TrainItem> prepare_stage1_items(const std::vector<LabeledSample>& samples,
                                            bool with_staining = false);

/// One synthesized label sample after watershed post-processing. The label
/// grid is rewritten from the extracted instances so the LabeledSample
/// invariants hold.
struct LabelSynthesis {
    LabelGrid label;
    InstanceGrid instance;
    Field structure;       // [H,W,3]
    Field y0_probs;        // [H,W,K]
    Prompt prompt;
    bool no_markers = false;
};

LabelSynthesis synthesize_label(const StageOneModel<float>& model, const Prompt& prompt,
                                int ddim_steps, float guidance_w, RandomStream rs);

/// Batch over (prompt, repeat) pairs, parallel across samples with split
/// child streams; results are ordered prompt-major.
std::vector<LabelSynthesis> synthesize_labels(const StageOneModel<float>& model,
                                              const std::vector<Prompt>& prompts, int n_per_prompt,
                                              int ddim_steps, float guidance_w, RandomStream rs);

/// Unconditional synthesis (null embedding, no guidance).
std::vector<LabelSynthesis> synthesize_labels_uncond(const StageOneModel<float>& model, int n,
                                                     int ddim_steps, RandomStream rs);

/// Full two-stage augmentation: labels -> instances -> images, written as a
/// dataset directory in the standard format plus a run manifest.
struct AugmentConfig {
    int n_per_prompt = 4;
    int ddim_steps = 100;
    float guidance_w = 2.0f;
    uint64_t seed = 0;
};

void augment(const StageOneModel<float>& stage1, const Stage2Sampler& stage2,
             const std::vector<Prompt>& prompts, const AugmentConfig& cfg,
             const std::string& out_dir, const nlohmann::json& manifest_extra = {});

struct EvalReport {
    nlohmann::json json;
};

/// FSD / toy-FID / controllability / watershed-AJI report between a real
/// and a synthetic dataset directory.
EvalReport evaluate_datasets(const std::string& real_dir, const std::string& synth_dir);

void write_json(const std::string& path, const nlohmann::json& j);

/// Recursive byte comparison of two directories (same file set, same bytes).
bool directories_identical(const std::string& a, const std::string& b);

}  // namespace nucleo
