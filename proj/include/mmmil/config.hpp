#pragma once

#include <nlohmann/json.hpp>

#include "mmmil/dataset.hpp"
#include "mmmil/network.hpp"
#include "mmmil/synth.hpp"

namespace mmmil {

struct TrainConfig {
    int max_epochs = 50;
    int batch_size = 8;
    int k_instances = 6;  // per modality per training case
    std::string schedule = "onecycle";
    double max_lr = 0.01;
    double warmup_fraction = 0.3;
    double start_div = 25.0;
    double final_div = 1e4;
    double momentum = 0.9;
    double weight_decay = 1e-5;
    uint64_t seed = 1;
    int repeats = 3;
    bool oversample = true;  // train-time CFP bag: k crops vs the bare image
    double crop_fraction = 0.75;
    AugmentPolicy augment;

    void validate() const;
};

struct EvalConfig {
    std::string split = "test";
    double threshold = 0.5;
    int bootstrap_replicates = 2000;
    double level = 0.95;
    uint64_t seed = 7;
    bool micro = false;  // add pooled micro-averaged overall values
};

/// One configuration document drives every command:
/// {"data": {...}, "model": {...}, "fusion": {...}, "train": {...}, "eval": {...}}.
struct AppConfig {
    SynthSpec synth;
    ModelConfig model;
    TrainConfig train;
    EvalConfig eval;
};

nlohmann::json app_config_to_json(const AppConfig& config);

/// Parses a config document; unknown keys anywhere are errors.
AppConfig app_config_from_json(const nlohmann::json& doc);

/// Applies a dotted-path override such as "fusion.heads=4"; the value is
/// parsed as JSON when possible, else taken as a string.
void apply_override(nlohmann::json& doc, const std::string& assignment);

// Section-level (de)serializers shared with the checkpoint header.
nlohmann::json model_config_to_json(const ModelConfig& config);
ModelConfig model_config_from_json(const nlohmann::json& doc);
nlohmann::json train_config_to_json(const TrainConfig& config);
TrainConfig train_config_from_json(const nlohmann::json& doc);
nlohmann::json synth_spec_to_json(const SynthSpec& spec);
SynthSpec synth_spec_from_json(const nlohmann::json& doc);
nlohmann::json eval_config_to_json(const EvalConfig& config);
EvalConfig eval_config_from_json(const nlohmann::json& doc);

}  // namespace mmmil
