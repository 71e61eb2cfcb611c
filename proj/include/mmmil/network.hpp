#pragma once

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "mmmil/backbone.hpp"
#include "mmmil/dataset.hpp"
#include "mmmil/fusion.hpp"

namespace mmmil {

struct ModelConfig {
    BackboneConfig cfp_backbone{.in_channels = 3};
    BackboneConfig oct_backbone{.in_channels = 1};
    FusionConfig fusion;
    int m = 7;
    std::vector<std::string> categories;

    void validate() const;
};

/// End-to-end per-case classifier: backbones → SW-GAP → fusion →
/// per-head linear classifiers → mean pooling → sigmoid.
class Network {
public:
    Network(const ModelConfig& config, uint64_t init_seed);

    struct Forward {
        Tensor probs;                      // [1×m]
        std::vector<Tensor> head_scores;   // per classifier head, [1×m]
        std::vector<Tensor> head_weights;  // per attention head, [n_total]
        std::vector<Tensor> head_fused;    // per attention head
        Tensor projected;                  // stacked projected features (mmmil)
        Tensor cfp_fmaps;                  // [n_cfp×d×w×h] when a CFP bag was used
        Tensor oct_fmaps;                  // [n_oct×d×w×h] when an OCT bag was used
        int n_cfp = 0;
        int n_oct = 0;
    };

    /// Either batch may be undefined when the fusion mode ignores it
    /// (single-modality MIL). `attn_mask` is the additive pre-softmax score
    /// mask over the stacked instances (test hook).
    Forward forward(const Tensor& cfp_batch, const Tensor& oct_batch,
                    const Tensor* attn_mask = nullptr) const;

    const ModelConfig& config() const { return config_; }
    int classifier_heads() const { return static_cast<int>(classifier_w_.size()); }

    std::vector<Parameter*> parameters();
    std::vector<Parameter*> fusion_parameters();
    int64_t parameter_total();

private:
    ModelConfig config_;
    std::unique_ptr<Backbone> bb_cfp_;
    std::unique_ptr<Backbone> bb_oct_;
    std::unique_ptr<MmMilFusion> mmmil_;
    std::unique_ptr<SingleMilFusion> single_mil_;
    std::unique_ptr<MhaFusion> mha_;
    std::vector<Parameter> classifier_w_;
    std::vector<Parameter> classifier_b_;
};

struct Prediction {
    std::vector<double> probabilities;            // m values in (0,1)
    std::vector<std::vector<double>> head_scores;  // pre-sigmoid, h×m
};

struct InstanceMap {
    int w = 0;
    int h = 0;
    std::vector<double> values;  // row-major w×h
};

struct CaseExplanation {
    std::string case_id;
    Prediction prediction;
    std::vector<double> attention_cfp;             // head-averaged, per CFP instance
    std::vector<double> attention_oct;             // head-averaged, per B-scan
    std::vector<std::vector<double>> head_weights;  // per head, stacked [cfp..., oct...]
    std::vector<InstanceMap> cfp_maps;             // attention-weighted activation maps
    std::vector<InstanceMap> oct_maps;
    double cfp_share = 0.0;  // head-averaged modality share; cfp+oct == 1
    double oct_share = 0.0;
    std::vector<double> head_cfp_share;  // per head
};

struct InferenceOptions {
    double crop_fraction = 0.75;
    bool oversample = true;  // 12-instance CFP pseudo-sequence vs the bare image
    ChannelStats cfp_stats;
    ChannelStats oct_stats;
};

/// Builds the test-time bags for a case under the given fusion mode.
/// CFP: 12-instance pseudo-sequence (or the bare image when over-sampling is
/// off, or always for concat). OCT: the full sequence (one selected B-scan
/// for concat).
std::pair<InstanceBag, InstanceBag> test_time_bags(const Network& net, const CaseImages& images,
                                                   const InferenceOptions& opts);

Prediction predict_case(const Network& net, const CaseImages& images,
                        const InferenceOptions& opts);

/// Prediction plus attention weights, modality shares and per-instance
/// attention-weighted activation maps. Requires an attention-based fusion.
CaseExplanation explain_case(const Network& net, const CaseImages& images,
                             const InferenceOptions& opts, const std::string& case_id = "");

struct HeadShareEntry {
    std::string category;
    int positives = 0;
    std::vector<double> per_head_cfp_share;  // mean over positive cases
    std::vector<double> per_head_oct_share;  // summed independently from the OCT weights
    double mean_cfp_share = 0.0;             // head-averaged variant
    double mean_oct_share = 0.0;
};

/// Per-category mean CFP attention share over positive cases, per head and
/// head-averaged. Categories without positives are omitted.
std::vector<HeadShareEntry> modality_attention_share(
    const std::vector<CaseExplanation>& explanations,
    const std::vector<std::vector<int>>& labels, const std::vector<std::string>& categories);

}  // namespace mmmil
