#pragma once

#include <functional>

#include "mmmil/checkpoint.hpp"
#include "mmmil/metrics.hpp"

namespace mmmil {

struct EpochLog {
    int epoch = 0;
    double train_loss = 0.0;
    double val_ap = 0.0;
    double lr = 0.0;
};

struct TrainResult {
    Checkpoint best;
    std::vector<EpochLog> log;
    double best_val_ap = 0.0;
    int best_epoch = -1;
    uint64_t seed = 0;
};

using ProgressFn = std::function<void(const EpochLog&)>;

/// BCE training loop: shuffled mini-batches, per-case instance sampling and
/// augmentation, SGD with momentum under a OneCycle schedule; after every
/// epoch validation metrics use deterministic test-time over-sampling, and
/// the best-validation-AP snapshot is retained.
TrainResult train_model(const Manifest& manifest, const ModelConfig& model_config,
                        const TrainConfig& train_config, const ProgressFn& progress = nullptr);

struct RepeatResult {
    TrainResult best;
    std::vector<double> val_aps;           // one per successful repeat
    std::vector<std::string> failures;     // error text per failed repeat
    int selected_repeat = -1;
};

/// Trains `repeats` times with seeds seed+0..repeats−1 and returns the run
/// maximizing validation macro AP; ties break toward the lower seed.
/// Individual failures are recorded and skipped; throws only if all fail.
RepeatResult repeat_and_select(const Manifest& manifest, const ModelConfig& model_config,
                               const TrainConfig& train_config,
                               const ProgressFn& progress = nullptr);

struct CasePrediction {
    std::string case_id;
    std::vector<double> probabilities;
    std::vector<int> labels;
};

struct EvalResult {
    MetricReport report;
    std::vector<CasePrediction> predictions;
};

EvalResult evaluate(const Checkpoint& ckpt, const Manifest& manifest, Split split,
                    const EvalConfig& eval_config);

/// Validation-style sweep returning only the macro AP (no bootstrap).
double validation_macro_ap(const Network& net, const std::vector<const CaseRecord*>& cases,
                           const InferenceOptions& opts, const std::vector<CaseImages>* cache);

}  // namespace mmmil
