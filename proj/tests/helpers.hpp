#pragma once

#include <filesystem>

#include "mmmil/network.hpp"

namespace mmmil::testing {

inline Tensor random_tensor(const Shape& shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    std::vector<double> vals(static_cast<size_t>(shape_numel(shape)));
    for (double& v : vals) v = rng.uniform(lo, hi);
    return Tensor::from(shape, std::move(vals));
}

/// Desk-scale toy model: two-stage backbones to d=8 on 8x8 inputs. The tanh
/// activation keeps the network smooth, so finite-difference checks are valid
/// everywhere (relu kinks are exercised by the per-primitive checks).
inline ModelConfig tiny_model_config(int heads = 2, int m = 2,
                                     FusionMode mode = FusionMode::mmmil) {
    ModelConfig config;
    config.cfp_backbone.stages = {{4, 1}, {8, 2}};
    config.cfp_backbone.kernel = 3;
    config.cfp_backbone.input_side = 8;
    config.cfp_backbone.in_channels = 3;
    config.cfp_backbone.activation = Activation::tanh;
    config.oct_backbone = config.cfp_backbone;
    config.oct_backbone.in_channels = 1;
    config.fusion.mode = mode;
    config.fusion.d = 8;
    config.fusion.heads = heads;
    config.fusion.attn_hidden = 16;
    config.m = m;
    return config;
}

struct TempDir {
    std::filesystem::path path;
    explicit TempDir(const std::string& tag) {
        path = std::filesystem::temp_directory_path() / ("mmmil_" + tag);
        std::filesystem::remove_all(path);
        std::filesystem::create_directories(path);
    }
    ~TempDir() { std::filesystem::remove_all(path); }
};

// Independent metric oracles, deliberately written as plain enumerations so
// they share no code path with the library implementations.

/// AP without sorting: per positive, precision over the set of items scoring
/// at least as high. Valid for distinct scores.
inline std::optional<double> brute_force_ap(const std::vector<double>& scores,
                                            const std::vector<int>& labels) {
    int positives = 0;
    for (int v : labels) positives += v;
    if (positives == 0) return std::nullopt;
    double ap = 0.0;
    for (size_t i = 0; i < scores.size(); ++i) {
        if (labels[i] != 1) continue;
        int at_or_above = 0, pos_at_or_above = 0;
        for (size_t j = 0; j < scores.size(); ++j) {
            if (scores[j] >= scores[i]) {
                ++at_or_above;
                pos_at_or_above += labels[j];
            }
        }
        ap += static_cast<double>(pos_at_or_above) / at_or_above;
    }
    return ap / positives;
}

/// AUC as a direct positive-negative pair enumeration.
inline std::optional<double> brute_force_auc(const std::vector<double>& scores,
                                             const std::vector<int>& labels) {
    double wins = 0.0;
    long pairs = 0;
    for (size_t i = 0; i < scores.size(); ++i) {
        if (labels[i] != 1) continue;
        for (size_t j = 0; j < scores.size(); ++j) {
            if (labels[j] != 0) continue;
            ++pairs;
            if (scores[i] > scores[j]) wins += 1.0;
            else if (scores[i] == scores[j]) wins += 0.5;
        }
    }
    if (pairs == 0) return std::nullopt;
    return wins / pairs;
}

}  // namespace mmmil::testing
