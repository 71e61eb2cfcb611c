#pragma once

#include <optional>
#include <string>
#include <vector>

#include "mmmil/ops.hpp"
#include "mmmil/optim.hpp"

namespace mmmil {

enum class FusionMode { mmmil, concat, single_mil, mha };
enum class BScanStrategy { first, middle, last };
enum class SingleModality { cfp, oct };

FusionMode fusion_mode_from_string(const std::string& s);
std::string fusion_mode_to_string(FusionMode m);
BScanStrategy bscan_strategy_from_string(const std::string& s);
std::string bscan_strategy_to_string(BScanStrategy s);

struct FusionConfig {
    FusionMode mode = FusionMode::mmmil;
    int d = 64;
    int heads = 4;
    int attn_hidden = 128;
    bool fuse_on_projected = true;  // weighted sum over projected features (see mmmil_fuse)
    SingleModality single_modality = SingleModality::oct;
    BScanStrategy bscan_strategy = BScanStrategy::middle;
    int mha_depth = 1;
    int mha_heads = 1;

    void validate() const;
};

/// Modality-specific affine d→d followed by layer normalization, mapping each
/// modality's features into a shared additive space.
class CrossModalProjection {
public:
    CrossModalProjection(int d, const std::string& name_prefix, Rng& rng);
    Tensor forward(const Tensor& features) const;  // [n×d] -> [n×d]
    void collect_parameters(std::vector<Parameter*>& out);

private:
    Parameter weight_, bias_, ln_gain_, ln_bias_;
};

/// Gated two-layer scorer with a softmax across instances:
///   softmax(Linear_{hidden×1}(tanh(Linear_{d×hidden}(f)))).
class InstanceAttention {
public:
    InstanceAttention(int d, int hidden, const std::string& name_prefix, Rng& rng);

    /// Attention distribution over the rows of `features` [n×d]. An optional
    /// additive `score_mask` [n] is applied before the softmax (test hook;
    /// large negative entries silence instances).
    Tensor weights(const Tensor& features, const Tensor* score_mask = nullptr) const;
    void collect_parameters(std::vector<Parameter*>& out);

private:
    Parameter w1_, b1_, w2_, b2_;
};

struct FusionOutput {
    std::vector<Tensor> fused;    // per head, [1×d] ([1×2d] for concat)
    std::vector<Tensor> weights;  // per head, [n_total]; empty for concat/mha
    Tensor projected;             // [n_total×d] stacked projected features (mmmil only)
    Tensor stacked_raw;           // [n_total×d] stacked input features
};

/// Multi-modal multiple-instance fusion: one shared cross-modal projection
/// per modality plus `heads` independent instance-attention blocks. Each
/// head emits a weighted sum over the 2n stacked instances.
class MmMilFusion {
public:
    MmMilFusion(const FusionConfig& config, Rng& rng);

    FusionOutput forward(const Tensor& cfp_features, const Tensor& oct_features,
                         const Tensor* score_mask = nullptr) const;

    int heads() const { return static_cast<int>(attention_.size()); }
    void collect_parameters(std::vector<Parameter*>& out);

private:
    FusionConfig config_;
    CrossModalProjection proj_cfp_, proj_oct_;
    std::vector<InstanceAttention> attention_;
};

/// Single-modality MIL baseline: attention and weighted sum over raw features.
class SingleMilFusion {
public:
    SingleMilFusion(const FusionConfig& config, Rng& rng);
    FusionOutput forward(const Tensor& features, const Tensor* score_mask = nullptr) const;
    void collect_parameters(std::vector<Parameter*>& out);

private:
    InstanceAttention attention_;
};

/// Concatenation fusion (two-stream CNN baseline). Parameter-free; the
/// classifier behind it maps 2d→m.
Tensor concat_fuse(const Tensor& cfp_feature, const Tensor& oct_feature);

/// B-scan picked by a concat-fusion selection strategy.
int bscan_index(BScanStrategy strategy, int n);

/// Post-norm transformer encoder stack over the 2n instance tokens; the case
/// feature is the mean over output tokens.
class MhaFusion {
public:
    MhaFusion(const FusionConfig& config, Rng& rng);
    FusionOutput forward(const Tensor& tokens) const;  // [n×d] -> fused [1×d]
    void collect_parameters(std::vector<Parameter*>& out);

private:
    struct Layer {
        Parameter wq, bq, wk, bk, wv, bv, wo, bo;
        Parameter ff1_w, ff1_b, ff2_w, ff2_b;
        Parameter ln1_gain, ln1_bias, ln2_gain, ln2_bias;
    };
    FusionConfig config_;
    std::vector<Layer> layers_;
};

// Closed-form trainable-parameter counts for the fusion modules (classifier
// affines are counted by the surrounding network, not here).
int64_t mmmil_fusion_param_count(int d, int heads, int attn_hidden = 128);
int64_t single_mil_param_count(int d, int attn_hidden = 128);
int64_t mha_fusion_param_count(int d, int depth);

}  // namespace mmmil
