// Copyright (c) 2026 nucleosynth contributors
// SPDX-License-Identifier: Apache-2.0
#include "nucleosynth/pipeline.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>

#include "nucleosynth/png_io.hpp"

namespace fs = std::filesystem;

namespace nucleo {

nlohmann::json stage1_config_to_json(const StageOneConfig& c) {
    return nlohmann::json{{"k", c.k},
                          {"h", c.unet.h},
                          {"w", c.unet.w},
                          {"width", c.unet.width},
                          {"mult", c.unet.mult},
                          {"blocks", c.unet.blocks},
                          {"emb_width", c.unet.emb_width},
                          {"gn_groups", c.unet.gn_groups},
                          {"n_tissues", c.n_tissues},
                          {"n_stains", c.n_stains},
                          {"t_max", c.t_max},
                          {"beta1", c.beta1},
                          {"betaT", c.betaT},
                          {"cosine_s", c.cosine_s},
                          {"lambda_cat", c.lambda_cat},
                          {"lambda_aux", c.lambda_aux},
                          {"p_drop", c.p_drop},
                          {"init_seed", c.init_seed}};
}

StageOneConfig stage1_config_from_json(const nlohmann::json& j) {
    StageOneConfig c = StageOneConfig::defaults(j.at("h").get<int64_t>(), j.at("w").get<int64_t>(),
                                                j.at("k").get<int>());
    c.unet.width = j.at("width").get<int>();
    c.unet.mult = j.at("mult").get<std::vector<int>>();
    c.unet.blocks = j.at("blocks").get<int>();
    c.unet.emb_width = j.at("emb_width").get<int>();
    c.unet.gn_groups = j.at("gn_groups").get<int>();
    c.unet.out_ch = 3 + c.k;
    c.n_tissues = j.at("n_tissues").get<int>();
    c.n_stains = j.at("n_stains").get<int>();
    c.t_max = j.at("t_max").get<int>();
    c.beta1 = j.at("beta1").get<double>();
    c.betaT = j.at("betaT").get<double>();
    c.cosine_s = j.at("cosine_s").get<double>();
    c.lambda_cat = j.at("lambda_cat").get<double>();
    c.lambda_aux = j.at("lambda_aux").get<double>();
    c.p_drop = j.at("p_drop").get<double>();
    c.init_seed = j.at("init_seed").get<uint64_t>();
    return c;
}

void save_stage1(const StageOneModel<float>& model, const std::string& path,
                 const nlohmann::json& extra) {
    Checkpoint ck = model.store.to_checkpoint();
    ck.metadata["kind"] = "stage1";
    ck.metadata["config"] = stage1_config_to_json(model.cfg);
    if (!extra.is_null()) ck.metadata["run"] = extra;
    save_checkpoint(ck, path);
}

StageOneModel<float> load_stage1(const std::string& path) {
    Checkpoint ck = load_checkpoint(path);
    if (ck.metadata.value("kind", "") != "stage1")
        throw std::runtime_error("load_stage1: checkpoint kind mismatch in " + path);
    StageOneModel<float> m =
        StageOneModel<float>::build(stage1_config_from_json(ck.metadata.at("config")));
    m.store.load(ck);
    return m;
}

nlohmann::json stage2_config_to_json(const StageTwoConfig& c) {
    return nlohmann::json{{"in_ch", c.unet.in_ch},   {"h", c.unet.h},
                          {"w", c.unet.w},           {"width", c.unet.width},
                          {"mult", c.unet.mult},     {"blocks", c.unet.blocks},
                          {"emb_width", c.unet.emb_width}, {"gn_groups", c.unet.gn_groups},
                          {"t_max", c.t_max},        {"beta1", c.beta1},
                          {"betaT", c.betaT},        {"p_drop", c.p_drop},
                          {"init_seed", c.init_seed}};
}

StageTwoConfig stage2_config_from_json(const nlohmann::json& j) {
    StageTwoConfig c = StageTwoConfig::defaults(j.at("in_ch").get<int>(), j.at("h").get<int64_t>(),
                                                j.at("w").get<int64_t>());
    c.unet.width = j.at("width").get<int>();
    c.unet.mult = j.at("mult").get<std::vector<int>>();
    c.unet.blocks = j.at("blocks").get<int>();
    c.unet.emb_width = j.at("emb_width").get<int>();
    c.unet.gn_groups = j.at("gn_groups").get<int>();
    c.t_max = j.at("t_max").get<int>();
    c.beta1 = j.at("beta1").get<double>();
    c.betaT = j.at("betaT").get<double>();
    c.p_drop = j.at("p_drop").get<double>();
    c.init_seed = j.at("init_seed").get<uint64_t>();
    return c;
}

void save_base(const BaseModel& model, const std::string& path, bool frozen) {
    Checkpoint ck = model.store.to_checkpoint();
    ck.metadata["kind"] = "stage2_base";
    ck.metadata["config"] = stage2_config_to_json(model.cfg);
    ck.metadata["frozen"] = frozen;
    save_checkpoint(ck, path);
}

BaseModel load_base(const std::string& path, bool* frozen_out) {
    Checkpoint ck = load_checkpoint(path);
    if (ck.metadata.value("kind", "") != "stage2_base")
        throw std::runtime_error("load_base: checkpoint kind mismatch in " + path);
    BaseModel m = BaseModel::build(stage2_config_from_json(ck.metadata.at("config")));
    m.store.load(ck);
    if (frozen_out) *frozen_out = ck.metadata.value("frozen", false);
    return m;
}

void save_branch(const ControlBranch& branch, const BaseModel& base, const std::string& path) {
    Checkpoint ck = branch.store.to_checkpoint();
    ck.metadata["kind"] = "stage2_branch";
    ck.metadata["cs_channels"] = branch.cs_channels;
    ck.metadata["base_hash"] = base.store.content_hash();
    save_checkpoint(ck, path);
}

ControlBranch load_branch(const std::string& path, const BaseModel& base) {
    Checkpoint ck = load_checkpoint(path);
    if (ck.metadata.value("kind", "") != "stage2_branch")
        throw std::runtime_error("load_branch: checkpoint kind mismatch in " + path);
    ControlBranch br = ControlBranch::build(base, ck.metadata.at("cs_channels").get<int>(), 0);
    br.store.load(ck);
    return br;
}

std::vector<TrainItem> prepare_stage1_items(const std::vector<LabeledSample>& samples,
                                            bool with_staining) {
    std::vector<TrainItem> items(samples.size());
    parallel_for(static_cast<int64_t>(samples.size()), [&](int64_t i) {
        const LabeledSample& s = samples[static_cast<size_t>(i)];
        TrainItem it;
        it.x0 = make_structure_map(s.label, s.instance);
        it.label = s.label;
        Prompt p;
        p.tissue = s.meta.tissue;
        p.bucket = bucket_of(s.meta.proportion);
        p.class_set = s.meta.class_set;
        if (with_staining) p.staining = s.meta.staining;
        it.prompt = p;
        items[static_cast<size_t>(i)] = std::move(it);
    });
    return items;
}

LabelSynthesis synthesize_label(const StageOneModel<float>& model, const Prompt& prompt,
                                int ddim_steps, float guidance_w, RandomStream rs) {
    PromptVocab vocab = PromptVocab::from_manifest(
        default_manifest(model.cfg.unet.h, model.cfg.unet.w, model.cfg.k));
    PromptTables tables = model.tables();
    Prompt label_prompt = prompt;
    label_prompt.staining.reset();  // stage-1 prompts carry no staining field
    PromptEmbedding cond = encode_prompt(label_prompt, tables, vocab);
    PromptEmbedding uncond = encode_prompt(std::nullopt, tables, vocab);
    PairModelFn fn = make_stage1_model_fn(model, cond, uncond);
    std::vector<int> stride = make_stride(model.cfg.t_max, ddim_steps);
    PairSample ps = sample_pair(fn, stride, rs, model.sch_g, model.sch_c, guidance_w,
                                model.cfg.unet.h, model.cfg.unet.w, model.cfg.k);

    LabelSynthesis out;
    out.structure = ps.x0;
    out.y0_probs = ps.y0_probs;
    out.prompt = prompt;
    ExtractResult ex = extract_instances(ps.x0, ps.y0);
    out.no_markers = ex.no_markers;
    out.instance = ex.instances;
    // Rewrite the label from the instances so instance>0 <=> label>0.
    out.label = LabelGrid(ps.y0.h, ps.y0.w);
    for (int64_t p = 0; p < ps.y0.h * ps.y0.w; ++p) {
        uint16_t id = ex.instances.ids[static_cast<size_t>(p)];
        out.label.ids[static_cast<size_t>(p)] =
            id == 0 ? 0 : static_cast<uint8_t>(ex.instance_class.at(id));
    }
    return out;
}

std::vector<LabelSynthesis> synthesize_labels(const StageOneModel<float>& model,
                                              const std::vector<Prompt>& prompts, int n_per_prompt,
                                              int ddim_steps, float guidance_w, RandomStream rs) {
    const int64_t total = static_cast<int64_t>(prompts.size()) * n_per_prompt;
    std::vector<LabelSynthesis> out(static_cast<size_t>(total));
    parallel_for(total, [&](int64_t i) {
        const Prompt& p = prompts[static_cast<size_t>(i / n_per_prompt)];
        out[static_cast<size_t>(i)] =
            synthesize_label(model, p, ddim_steps, guidance_w, rs.child(static_cast<uint64_t>(i)));
    });
    return out;
}

std::vector<LabelSynthesis> synthesize_labels_uncond(const StageOneModel<float>& model, int n,
                                                     int ddim_steps, RandomStream rs) {
    PromptVocab vocab = PromptVocab::from_manifest(
        default_manifest(model.cfg.unet.h, model.cfg.unet.w, model.cfg.k));
    PromptTables tables = model.tables();
    PromptEmbedding uncond = encode_prompt(std::nullopt, tables, vocab);
    std::vector<LabelSynthesis> out(static_cast<size_t>(n));
    parallel_for(n, [&](int64_t i) {
        PairModelFn fn = make_stage1_model_fn(model, uncond, uncond);
        std::vector<int> stride = make_stride(model.cfg.t_max, ddim_steps);
        RandomStream srs = rs.child(static_cast<uint64_t>(i));
        PairSample ps = sample_pair(fn, stride, srs, model.sch_g, model.sch_c, 1.0f,
                                    model.cfg.unet.h, model.cfg.unet.w, model.cfg.k);
        LabelSynthesis ls;
        ls.structure = ps.x0;
        ls.y0_probs = ps.y0_probs;
        ExtractResult ex = extract_instances(ps.x0, ps.y0);
        ls.no_markers = ex.no_markers;
        ls.instance = ex.instances;
        ls.label = LabelGrid(ps.y0.h, ps.y0.w);
        for (int64_t p = 0; p < ps.y0.h * ps.y0.w; ++p) {
            uint16_t id = ex.instances.ids[static_cast<size_t>(p)];
            ls.label.ids[static_cast<size_t>(p)] =
                id == 0 ? 0 : static_cast<uint8_t>(ex.instance_class.at(id));
        }
        out[static_cast<size_t>(i)] = std::move(ls);
    });
    return out;
}

void augment(const StageOneModel<float>& stage1, const Stage2Sampler& stage2,
             const std::vector<Prompt>& prompts, const AugmentConfig& cfg,
             const std::string& out_dir, const nlohmann::json& manifest_extra) {
    RandomStream rs(cfg.seed);
    std::vector<LabelSynthesis> labels = synthesize_labels(
        stage1, prompts, cfg.n_per_prompt, cfg.ddim_steps, cfg.guidance_w, rs.child("labels"));

    DatasetManifest manifest =
        default_manifest(stage1.cfg.unet.h, stage1.cfg.unet.w, stage1.cfg.k);
    PromptVocab vocab = PromptVocab::from_manifest(manifest);
    RandomStream img_rs = rs.child("images");

    std::vector<LabeledSample> samples(labels.size());
    parallel_for(static_cast<int64_t>(labels.size()), [&](int64_t i) {
        const LabelSynthesis& ls = labels[static_cast<size_t>(i)];
        Prompt img_prompt = ls.prompt;
        if (!img_prompt.staining) img_prompt.staining = vocab.stainings.front();
        RandomStream srs = img_rs.child(static_cast<uint64_t>(i));
        LabeledSample s;
        s.image = sample_image(stage2, ls.label, ls.instance, img_prompt, srs);
        s.label = ls.label;
        s.instance = ls.instance;
        int64_t fg = 0;
        for (uint8_t id : s.label.ids) fg += id > 0;
        s.meta.tissue = img_prompt.tissue;
        s.meta.staining = *img_prompt.staining;
        s.meta.proportion =
            static_cast<double>(fg) / static_cast<double>(s.label.h * s.label.w);
        s.meta.class_set = img_prompt.class_set;  // prompted condition, not content
        s.meta.prompt = render_prompt(img_prompt, vocab);
        samples[static_cast<size_t>(i)] = std::move(s);
    });
    write_dataset(samples, manifest, out_dir);

    nlohmann::json run{{"prompts", static_cast<int64_t>(prompts.size())},
                       {"n_per_prompt", cfg.n_per_prompt},
                       {"ddim_steps", cfg.ddim_steps},
                       {"guidance_w", cfg.guidance_w},
                       {"seed", cfg.seed},
                       {"stage1_hash", stage1.store.content_hash()},
                       {"base_hash", stage2.base->store.content_hash()},
                       {"branch_hash", stage2.branch->store.content_hash()},
                       {"ae_hash", stage2.ae->store.content_hash()}};
    if (!manifest_extra.is_null()) run["extra"] = manifest_extra;
    write_json((fs::path(out_dir) / "run_manifest.json").string(), run);
}

EvalReport evaluate_datasets(const std::string& real_dir, const std::string& synth_dir) {
    DatasetManifest real_m, synth_m;
    std::vector<LabeledSample> real = read_dataset(real_dir, &real_m);
    std::vector<LabeledSample> synth = read_dataset(synth_dir, &synth_m);
    if (real_m.k != synth_m.k)
        throw std::runtime_error("evaluate_datasets: class count mismatch");
    PromptVocab vocab = PromptVocab::from_manifest(synth_m);

    std::vector<LabelGrid> real_labels, synth_labels;
    std::vector<Field> real_images, synth_images;
    for (const auto& s : real) {
        real_labels.push_back(s.label);
        real_images.push_back(s.image);
    }
    for (const auto& s : synth) {
        synth_labels.push_back(s.label);
        synth_images.push_back(s.image);
    }

    nlohmann::json j;
    j["real_count"] = real.size();
    j["synth_count"] = synth.size();
    j["fsd"] = fsd(real_labels, synth_labels, real_m.k);
    if (real_images.size() >= 66 && synth_images.size() >= 66)
        j["toy_fid"] = toy_fid(real_images, synth_images);
    else
        j["toy_fid"] = nullptr;

    // Controllability: measured against each sample's prompted condition.
    std::map<std::set<int>, std::vector<LabelGrid>> by_class_set;
    std::vector<int> prompted_buckets;
    for (const auto& s : synth) {
        Prompt p = parse_prompt(s.meta.prompt, vocab);
        by_class_set[p.class_set].push_back(s.label);
        prompted_buckets.push_back(static_cast<int>(p.bucket));
    }
    j["proportion_accuracy"] = proportion_accuracy(synth_labels, prompted_buckets);
    double cc_acc = 0.0;
    int64_t cc_n = 0;
    for (auto& [cs, labels] : by_class_set) {
        if (cs.empty()) continue;
        cc_acc += class_consistency(labels, cs) * static_cast<double>(labels.size());
        cc_n += static_cast<int64_t>(labels.size());
    }
    j["class_consistency"] = cc_n > 0 ? cc_acc / static_cast<double>(cc_n) : 1.0;

    // Watershed self-consistency on both directories.
    auto mean_aji = [](const std::vector<LabeledSample>& set) {
        double acc = 0.0;
        for (const auto& s : set) {
            StructureMap sm = make_structure_map(s.label, s.instance);
            ExtractResult ex = extract_instances(sm, s.label);
            acc += aji(s.instance, ex.instances);
        }
        return set.empty() ? 0.0 : acc / static_cast<double>(set.size());
    };
    j["watershed_aji_real"] = mean_aji(real);
    j["watershed_aji_synth"] = mean_aji(synth);
    return EvalReport{j};
}

void write_json(const std::string& path, const nlohmann::json& j) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("write_json: cannot open " + path);
    os << j.dump(2) << "\n";
}

bool directories_identical(const std::string& a, const std::string& b) {
    std::vector<std::string> rel_a, rel_b;
    for (auto& e : fs::recursive_directory_iterator(a))
        if (e.is_regular_file()) rel_a.push_back(fs::relative(e.path(), a).string());
    for (auto& e : fs::recursive_directory_iterator(b))
        if (e.is_regular_file()) rel_b.push_back(fs::relative(e.path(), b).string());
    std::sort(rel_a.begin(), rel_a.end());
    std::sort(rel_b.begin(), rel_b.end());
    if (rel_a != rel_b) return false;
    for (const auto& rel : rel_a) {
        std::ifstream fa(fs::path(a) / rel, std::ios::binary);
        std::ifstream fb(fs::path(b) / rel, std::ios::binary);
        std::string ca((std::istreambuf_iterator<char>(fa)), std::istreambuf_iterator<char>());
        std::string cb((std::istreambuf_iterator<char>(fb)), std::istreambuf_iterator<char>());
        if (ca != cb) return false;
    }
    return true;
}

}  // namespace nucleo
