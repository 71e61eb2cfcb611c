#include "mmmil/config.hpp"

#include <set>

namespace mmmil {

using json = nlohmann::json;

namespace {

void reject_unknown(const json& obj, const std::set<std::string>& allowed,
                    const std::string& context) {
    if (!obj.is_object()) fail_data("config section '", context, "' must be a JSON object");
    for (const auto& [key, value] : obj.items())
        if (!allowed.count(key)) fail_data("unknown key '", key, "' in config section '", context, "'");
}

json backbone_to_json(const BackboneConfig& bc) {
    json stages = json::array();
    for (const BackboneStage& s : bc.stages) stages.push_back({s.channels, s.stride});
    return {{"stages", stages},
            {"kernel", bc.kernel},
            {"input_side", bc.input_side},
            {"in_channels", bc.in_channels},
            {"activation", activation_to_string(bc.activation)},
            {"stage_layernorm", bc.stage_layernorm}};
}

BackboneConfig backbone_from_json(const json& doc, const BackboneConfig& defaults,
                                  const std::string& context) {
    reject_unknown(doc,
                   {"stages", "kernel", "input_side", "in_channels", "activation",
                    "stage_layernorm"},
                   context);
    BackboneConfig bc = defaults;
    if (doc.contains("stages")) {
        bc.stages.clear();
        for (const auto& s : doc["stages"]) {
            if (!s.is_array() || s.size() != 2)
                fail_data(context, ": each stage must be [channels, stride]");
            bc.stages.push_back({s[0].get<int>(), s[1].get<int>()});
        }
    }
    bc.kernel = doc.value("kernel", bc.kernel);
    bc.input_side = doc.value("input_side", bc.input_side);
    bc.in_channels = doc.value("in_channels", bc.in_channels);
    if (doc.contains("activation"))
        bc.activation = activation_from_string(doc["activation"].get<std::string>());
    bc.stage_layernorm = doc.value("stage_layernorm", bc.stage_layernorm);
    return bc;
}

json fusion_to_json(const FusionConfig& fc) {
    return {{"mode", fusion_mode_to_string(fc.mode)},
            {"d", fc.d},
            {"heads", fc.heads},
            {"attn_hidden", fc.attn_hidden},
            {"fuse_on_projected", fc.fuse_on_projected},
            {"single_modality", fc.single_modality == SingleModality::cfp ? "cfp" : "oct"},
            {"bscan_strategy", bscan_strategy_to_string(fc.bscan_strategy)},
            {"mha_depth", fc.mha_depth},
            {"mha_heads", fc.mha_heads}};
}

FusionConfig fusion_from_json(const json& doc, const FusionConfig& defaults) {
    reject_unknown(doc,
                   {"mode", "d", "heads", "attn_hidden", "fuse_on_projected", "single_modality",
                    "bscan_strategy", "mha_depth", "mha_heads"},
                   "fusion");
    FusionConfig fc = defaults;
    if (doc.contains("mode")) fc.mode = fusion_mode_from_string(doc["mode"].get<std::string>());
    fc.d = doc.value("d", fc.d);
    fc.heads = doc.value("heads", fc.heads);
    fc.attn_hidden = doc.value("attn_hidden", fc.attn_hidden);
    fc.fuse_on_projected = doc.value("fuse_on_projected", fc.fuse_on_projected);
    if (doc.contains("single_modality")) {
        const std::string s = doc["single_modality"].get<std::string>();
        if (s == "cfp") fc.single_modality = SingleModality::cfp;
        else if (s == "oct") fc.single_modality = SingleModality::oct;
        else fail_data("fusion: unknown single_modality '", s, "'");
    }
    if (doc.contains("bscan_strategy"))
        fc.bscan_strategy = bscan_strategy_from_string(doc["bscan_strategy"].get<std::string>());
    fc.mha_depth = doc.value("mha_depth", fc.mha_depth);
    fc.mha_heads = doc.value("mha_heads", fc.mha_heads);
    return fc;
}

}  // namespace

void TrainConfig::validate() const {
    if (max_epochs < 1) fail_data("train: max_epochs must be >= 1");
    if (batch_size < 1) fail_data("train: batch_size must be >= 1");
    if (k_instances < 1) fail_data("train: k_instances must be >= 1");
    if (max_lr <= 0.0 || momentum < 0.0 || weight_decay < 0.0)
        fail_data("train: rates must be positive");
    if (repeats < 1) fail_data("train: repeats must be >= 1");
    if (schedule != "onecycle" && schedule != "constant")
        fail_data("train: schedule must be onecycle|constant");
    if (crop_fraction <= 0.0 || crop_fraction > 1.0)
        fail_data("train: crop_fraction must lie in (0,1]");
}

json model_config_to_json(const ModelConfig& mc) {
    return {{"cfp_backbone", backbone_to_json(mc.cfp_backbone)},
            {"oct_backbone", backbone_to_json(mc.oct_backbone)},
            {"fusion", fusion_to_json(mc.fusion)},
            {"m", mc.m},
            {"categories", mc.categories}};
}

ModelConfig model_config_from_json(const json& doc) {
    reject_unknown(doc, {"cfp_backbone", "oct_backbone", "fusion", "m", "categories"}, "model");
    ModelConfig mc;
    mc.cfp_backbone.in_channels = 3;
    mc.oct_backbone.in_channels = 1;
    if (doc.contains("cfp_backbone"))
        mc.cfp_backbone = backbone_from_json(doc["cfp_backbone"], mc.cfp_backbone, "cfp_backbone");
    if (doc.contains("oct_backbone"))
        mc.oct_backbone = backbone_from_json(doc["oct_backbone"], mc.oct_backbone, "oct_backbone");
    if (doc.contains("fusion")) mc.fusion = fusion_from_json(doc["fusion"], mc.fusion);
    mc.m = doc.value("m", mc.m);
    if (doc.contains("categories")) mc.categories = doc["categories"].get<std::vector<std::string>>();
    return mc;
}

json train_config_to_json(const TrainConfig& tc) {
    return {{"max_epochs", tc.max_epochs},
            {"batch_size", tc.batch_size},
            {"k_instances", tc.k_instances},
            {"schedule", tc.schedule},
            {"max_lr", tc.max_lr},
            {"warmup_fraction", tc.warmup_fraction},
            {"start_div", tc.start_div},
            {"final_div", tc.final_div},
            {"momentum", tc.momentum},
            {"weight_decay", tc.weight_decay},
            {"seed", tc.seed},
            {"repeats", tc.repeats},
            {"oversample", tc.oversample},
            {"crop_fraction", tc.crop_fraction},
            {"augment", tc.augment.enabled}};
}

TrainConfig train_config_from_json(const json& doc) {
    reject_unknown(doc,
                   {"max_epochs", "batch_size", "k_instances", "schedule", "max_lr",
                    "warmup_fraction", "start_div", "final_div", "momentum", "weight_decay",
                    "seed", "repeats", "oversample", "crop_fraction", "augment"},
                   "train");
    TrainConfig tc;
    tc.max_epochs = doc.value("max_epochs", tc.max_epochs);
    tc.batch_size = doc.value("batch_size", tc.batch_size);
    tc.k_instances = doc.value("k_instances", tc.k_instances);
    tc.schedule = doc.value("schedule", tc.schedule);
    tc.max_lr = doc.value("max_lr", tc.max_lr);
    tc.warmup_fraction = doc.value("warmup_fraction", tc.warmup_fraction);
    tc.start_div = doc.value("start_div", tc.start_div);
    tc.final_div = doc.value("final_div", tc.final_div);
    tc.momentum = doc.value("momentum", tc.momentum);
    tc.weight_decay = doc.value("weight_decay", tc.weight_decay);
    tc.seed = doc.value("seed", tc.seed);
    tc.repeats = doc.value("repeats", tc.repeats);
    tc.oversample = doc.value("oversample", tc.oversample);
    tc.crop_fraction = doc.value("crop_fraction", tc.crop_fraction);
    tc.augment.enabled = doc.value("augment", tc.augment.enabled);
    tc.validate();
    return tc;
}

json synth_spec_to_json(const SynthSpec& spec) {
    json cats = json::array();
    for (const SynthCategory& c : spec.categories)
        cats.push_back({{"name", c.name}, {"modality", synth_modality_to_string(c.modality)}});
    return {{"categories", cats},
            {"n_train", spec.n_train},
            {"n_val", spec.n_val},
            {"n_test", spec.n_test},
            {"n_oct", spec.n_oct},
            {"image_side", spec.image_side},
            {"blob_count", spec.blob_count},
            {"blob_radius", spec.blob_radius},
            {"blob_intensity", spec.blob_intensity},
            {"cfp_blob_radius", spec.cfp_blob_radius},
            {"cfp_blob_intensity", spec.cfp_blob_intensity},
            {"cfp_peripheral", spec.cfp_peripheral},
            {"cfp_illumination", spec.cfp_illumination},
            {"cfp_paired_lesions", spec.cfp_paired_lesions},
            {"pair_offset", spec.pair_offset},
            {"distractor_min_dist", spec.distractor_min_dist},
            {"informative_scans", spec.informative_scans},
            {"noise_sigma", spec.noise_sigma},
            {"label_prob", spec.label_prob},
            {"seed", spec.seed}};
}

SynthSpec synth_spec_from_json(const json& doc) {
    reject_unknown(doc,
                   {"categories", "n_train", "n_val", "n_test", "n_oct", "image_side",
                    "blob_count", "blob_radius", "blob_intensity", "cfp_blob_radius",
                    "cfp_blob_intensity", "cfp_peripheral", "cfp_illumination", "cfp_paired_lesions", "pair_offset", "distractor_min_dist", "informative_scans", "noise_sigma", "label_prob",
                    "seed"},
                   "data");
    SynthSpec spec;
    if (doc.contains("categories")) {
        spec.categories.clear();
        for (const auto& c : doc["categories"]) {
            reject_unknown(c, {"name", "modality"}, "data.categories");
            spec.categories.push_back({c.at("name").get<std::string>(),
                                       synth_modality_from_string(c.at("modality").get<std::string>())});
        }
    }
    spec.n_train = doc.value("n_train", spec.n_train);
    spec.n_val = doc.value("n_val", spec.n_val);
    spec.n_test = doc.value("n_test", spec.n_test);
    spec.n_oct = doc.value("n_oct", spec.n_oct);
    spec.image_side = doc.value("image_side", spec.image_side);
    spec.blob_count = doc.value("blob_count", spec.blob_count);
    spec.blob_radius = doc.value("blob_radius", spec.blob_radius);
    spec.blob_intensity = doc.value("blob_intensity", spec.blob_intensity);
    spec.cfp_blob_radius = doc.value("cfp_blob_radius", spec.cfp_blob_radius);
    spec.cfp_blob_intensity = doc.value("cfp_blob_intensity", spec.cfp_blob_intensity);
    spec.cfp_peripheral = doc.value("cfp_peripheral", spec.cfp_peripheral);
    spec.cfp_illumination = doc.value("cfp_illumination", spec.cfp_illumination);
    spec.cfp_paired_lesions = doc.value("cfp_paired_lesions", spec.cfp_paired_lesions);
    spec.pair_offset = doc.value("pair_offset", spec.pair_offset);
    spec.distractor_min_dist = doc.value("distractor_min_dist", spec.distractor_min_dist);
    spec.informative_scans = doc.value("informative_scans", spec.informative_scans);
    spec.noise_sigma = doc.value("noise_sigma", spec.noise_sigma);
    spec.label_prob = doc.value("label_prob", spec.label_prob);
    spec.seed = doc.value("seed", spec.seed);
    return spec;
}

json eval_config_to_json(const EvalConfig& ec) {
    return {{"split", ec.split},
            {"threshold", ec.threshold},
            {"bootstrap_replicates", ec.bootstrap_replicates},
            {"level", ec.level},
            {"seed", ec.seed},
            {"micro", ec.micro}};
}

EvalConfig eval_config_from_json(const json& doc) {
    reject_unknown(doc, {"split", "threshold", "bootstrap_replicates", "level", "seed", "micro"},
                   "eval");
    EvalConfig ec;
    ec.split = doc.value("split", ec.split);
    ec.threshold = doc.value("threshold", ec.threshold);
    ec.bootstrap_replicates = doc.value("bootstrap_replicates", ec.bootstrap_replicates);
    ec.level = doc.value("level", ec.level);
    ec.seed = doc.value("seed", ec.seed);
    ec.micro = doc.value("micro", ec.micro);
    split_from_string(ec.split);
    return ec;
}

json app_config_to_json(const AppConfig& config) {
    return {{"data", synth_spec_to_json(config.synth)},
            {"model", model_config_to_json(config.model)},
            {"fusion", fusion_to_json(config.model.fusion)},
            {"train", train_config_to_json(config.train)},
            {"eval", eval_config_to_json(config.eval)}};
}

AppConfig app_config_from_json(const json& doc) {
    reject_unknown(doc, {"data", "model", "fusion", "train", "eval"}, "(top level)");
    AppConfig config;
    if (doc.contains("data")) config.synth = synth_spec_from_json(doc["data"]);
    if (doc.contains("model")) config.model = model_config_from_json(doc["model"]);
    if (doc.contains("fusion"))
        config.model.fusion = fusion_from_json(doc["fusion"], config.model.fusion);
    if (doc.contains("train")) config.train = train_config_from_json(doc["train"]);
    if (doc.contains("eval")) config.eval = eval_config_from_json(doc["eval"]);
    // fusion.d defaults to the backbone output dim when left at 0
    if (config.model.fusion.d == 0)
        config.model.fusion.d = config.model.cfp_backbone.feature_dim();
    // the CFP-only single-modal model converges slowly: 100 epochs unless set
    const bool epochs_explicit = doc.contains("train") && doc["train"].contains("max_epochs");
    if (!epochs_explicit && config.model.fusion.mode == FusionMode::single_mil &&
        config.model.fusion.single_modality == SingleModality::cfp)
        config.train.max_epochs = 100;
    return config;
}

void apply_override(json& doc, const std::string& assignment) {
    const size_t eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0)
        fail_usage("override '", assignment, "' is not of the form key.path=value");
    const std::string path = assignment.substr(0, eq);
    const std::string raw = assignment.substr(eq + 1);

    json value;
    try {
        value = json::parse(raw);
    } catch (const json::exception&) {
        value = raw;  // bare strings are fine
    }

    json* cursor = &doc;
    size_t start = 0;
    while (true) {
        const size_t dot = path.find('.', start);
        const std::string key = path.substr(start, dot - start);
        if (key.empty()) fail_usage("override '", assignment, "' has an empty path segment");
        if (dot == std::string::npos) {
            (*cursor)[key] = value;
            return;
        }
        cursor = &(*cursor)[key];
        start = dot + 1;
    }
}

}  // namespace mmmil
