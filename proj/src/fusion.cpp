#include "mmmil/fusion.hpp"

#include <cmath>

namespace mmmil {

FusionMode fusion_mode_from_string(const std::string& s) {
    if (s == "mmmil") return FusionMode::mmmil;
    if (s == "concat") return FusionMode::concat;
    if (s == "single_mil") return FusionMode::single_mil;
    if (s == "mha") return FusionMode::mha;
    fail_data("unknown fusion mode '", s, "' (expected mmmil|concat|single_mil|mha)");
}

std::string fusion_mode_to_string(FusionMode m) {
    switch (m) {
        case FusionMode::mmmil: return "mmmil";
        case FusionMode::concat: return "concat";
        case FusionMode::single_mil: return "single_mil";
        case FusionMode::mha: return "mha";
    }
    return "mmmil";
}

BScanStrategy bscan_strategy_from_string(const std::string& s) {
    if (s == "first") return BScanStrategy::first;
    if (s == "middle") return BScanStrategy::middle;
    if (s == "last") return BScanStrategy::last;
    fail_data("unknown B-scan strategy '", s, "' (expected first|middle|last)");
}

std::string bscan_strategy_to_string(BScanStrategy s) {
    switch (s) {
        case BScanStrategy::first: return "first";
        case BScanStrategy::middle: return "middle";
        case BScanStrategy::last: return "last";
    }
    return "middle";
}

void FusionConfig::validate() const {
    if (d < 1) fail_data("fusion: d must be positive");
    if (heads < 1) fail_data("fusion: heads must be >= 1");
    if (attn_hidden < 1) fail_data("fusion: attention hidden size must be positive");
    if (mode == FusionMode::mha) {
        if (mha_depth < 1) fail_data("fusion: mha depth must be >= 1");
        if (mha_heads < 1 || d % mha_heads != 0)
            fail_data("fusion: d=", d, " not divisible by mha heads=", mha_heads);
    }
}

CrossModalProjection::CrossModalProjection(int d, const std::string& name_prefix, Rng& rng)
    : weight_(name_prefix + ".w", xavier_uniform({d, d}, d, d, rng)),
      bias_(name_prefix + ".b", Tensor::zeros({d})),
      ln_gain_(name_prefix + ".ln_gain", Tensor::full({d}, 1.0)),
      ln_bias_(name_prefix + ".ln_bias", Tensor::zeros({d})) {}

Tensor CrossModalProjection::forward(const Tensor& features) const {
    return ops::layernorm(ops::affine(features, weight_.tensor, bias_.tensor), ln_gain_.tensor,
                          ln_bias_.tensor);
}

void CrossModalProjection::collect_parameters(std::vector<Parameter*>& out) {
    out.push_back(&weight_);
    out.push_back(&bias_);
    out.push_back(&ln_gain_);
    out.push_back(&ln_bias_);
}

InstanceAttention::InstanceAttention(int d, int hidden, const std::string& name_prefix, Rng& rng)
    : w1_(name_prefix + ".w1", xavier_uniform({d, hidden}, d, hidden, rng)),
      b1_(name_prefix + ".b1", Tensor::zeros({hidden})),
      w2_(name_prefix + ".w2", xavier_uniform({hidden, 1}, hidden, 1, rng)),
      b2_(name_prefix + ".b2", Tensor::zeros({1})) {}

Tensor InstanceAttention::weights(const Tensor& features, const Tensor* score_mask) const {
    if (features.rank() != 2 || features.dim(0) < 1)
        fail_runtime("instance_attention: expected a non-empty [n×d] batch, got ",
                     shape_str(features.shape()));
    const int n = features.dim(0);
    Tensor hidden = ops::activate(ops::affine(features, w1_.tensor, b1_.tensor), Activation::tanh);
    Tensor scores = ops::reshape(ops::affine(hidden, w2_.tensor, b2_.tensor), {n});
    if (score_mask) {
        if (score_mask->rank() != 1 || score_mask->dim(0) != n)
            fail_runtime("instance_attention: mask shape ", shape_str(score_mask->shape()),
                         " does not match ", n, " instances");
        scores = ops::add(scores, *score_mask);
    }
    return ops::softmax_vec(scores);
}

void InstanceAttention::collect_parameters(std::vector<Parameter*>& out) {
    out.push_back(&w1_);
    out.push_back(&b1_);
    out.push_back(&w2_);
    out.push_back(&b2_);
}

MmMilFusion::MmMilFusion(const FusionConfig& config, Rng& rng)
    : config_(config),
      proj_cfp_(config.d, "fusion.projection.cfp", rng),
      proj_oct_(config.d, "fusion.projection.oct", rng) {
    config_.validate();
    for (int k = 0; k < config.heads; ++k)
        attention_.emplace_back(config.d, config.attn_hidden, cat("fusion.head", k, ".attn"), rng);
}

FusionOutput MmMilFusion::forward(const Tensor& cfp_features, const Tensor& oct_features,
                                  const Tensor* score_mask) const {
    if (cfp_features.rank() != 2 || oct_features.rank() != 2)
        fail_runtime("mmmil_fuse: expected [n×d] feature batches");
    if (cfp_features.dim(1) != config_.d || oct_features.dim(1) != config_.d)
        fail_runtime("mmmil_fuse: feature dim mismatch, cfp=", shape_str(cfp_features.shape()),
                     " oct=", shape_str(oct_features.shape()), " config d=", config_.d);
    if (cfp_features.dim(0) < 1 || oct_features.dim(0) < 1)
        fail_runtime("mmmil_fuse: each modality needs at least one instance");

    FusionOutput out;
    // stacked order is [cfp instances..., oct instances...]
    out.projected = ops::concat_rows(
        {proj_cfp_.forward(cfp_features), proj_oct_.forward(oct_features)});
    out.stacked_raw = ops::concat_rows({cfp_features, oct_features});
    const Tensor& base = config_.fuse_on_projected ? out.projected : out.stacked_raw;
    const int n_total = out.projected.dim(0);
    for (const InstanceAttention& head : attention_) {
        Tensor w = head.weights(out.projected, score_mask);
        out.weights.push_back(w);
        out.fused.push_back(ops::matmul(ops::reshape(w, {1, n_total}), base));
    }
    return out;
}

void MmMilFusion::collect_parameters(std::vector<Parameter*>& out) {
    proj_cfp_.collect_parameters(out);
    proj_oct_.collect_parameters(out);
    for (InstanceAttention& a : attention_) a.collect_parameters(out);
}

SingleMilFusion::SingleMilFusion(const FusionConfig& config, Rng& rng)
    : attention_(config.d, config.attn_hidden, "fusion.attn", rng) {}

FusionOutput SingleMilFusion::forward(const Tensor& features, const Tensor* score_mask) const {
    if (features.rank() != 2 || features.dim(0) < 1)
        fail_runtime("mil_fuse: expected a non-empty [n×d] batch, got ",
                     shape_str(features.shape()));
    FusionOutput out;
    out.stacked_raw = features;
    Tensor w = attention_.weights(features, score_mask);
    out.weights.push_back(w);
    out.fused.push_back(ops::matmul(ops::reshape(w, {1, features.dim(0)}), features));
    return out;
}

void SingleMilFusion::collect_parameters(std::vector<Parameter*>& out) {
    attention_.collect_parameters(out);
}

Tensor concat_fuse(const Tensor& cfp_feature, const Tensor& oct_feature) {
    Tensor a = cfp_feature.rank() == 1 ? ops::reshape(cfp_feature, {1, cfp_feature.dim(0)})
                                       : cfp_feature;
    Tensor b = oct_feature.rank() == 1 ? ops::reshape(oct_feature, {1, oct_feature.dim(0)})
                                       : oct_feature;
    return ops::concat_cols(a, b);
}

int bscan_index(BScanStrategy strategy, int n) {
    if (n < 1) fail_runtime("bscan_index: empty OCT sequence");
    switch (strategy) {
        case BScanStrategy::first: return 0;
        case BScanStrategy::middle: return n / 2;
        case BScanStrategy::last: return n - 1;
    }
    return 0;
}

MhaFusion::MhaFusion(const FusionConfig& config, Rng& rng) : config_(config) {
    config_.validate();
    const int d = config.d;
    for (int l = 0; l < config.mha_depth; ++l) {
        const std::string p = cat("fusion.layer", l);
        Layer layer{
            {p + ".wq", xavier_uniform({d, d}, d, d, rng)},
            {p + ".bq", Tensor::zeros({d})},
            {p + ".wk", xavier_uniform({d, d}, d, d, rng)},
            {p + ".bk", Tensor::zeros({d})},
            {p + ".wv", xavier_uniform({d, d}, d, d, rng)},
            {p + ".bv", Tensor::zeros({d})},
            {p + ".wo", xavier_uniform({d, d}, d, d, rng)},
            {p + ".bo", Tensor::zeros({d})},
            {p + ".ff1_w", xavier_uniform({d, 4 * d}, d, 4 * d, rng)},
            {p + ".ff1_b", Tensor::zeros({4 * d})},
            {p + ".ff2_w", xavier_uniform({4 * d, d}, 4 * d, d, rng)},
            {p + ".ff2_b", Tensor::zeros({d})},
            {p + ".ln1_gain", Tensor::full({d}, 1.0)},
            {p + ".ln1_bias", Tensor::zeros({d})},
            {p + ".ln2_gain", Tensor::full({d}, 1.0)},
            {p + ".ln2_bias", Tensor::zeros({d})},
        };
        layers_.push_back(std::move(layer));
    }
}

FusionOutput MhaFusion::forward(const Tensor& tokens) const {
    if (tokens.rank() != 2 || tokens.dim(1) != config_.d)
        fail_runtime("mha_fuse: expected [n×", config_.d, "] tokens, got ",
                     shape_str(tokens.shape()));
    const int n = tokens.dim(0);
    const int d = config_.d;
    const int h = config_.mha_heads;
    const int dh = d / h;
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));

    Tensor x = tokens;
    for (const Layer& layer : layers_) {
        Tensor q = ops::affine(x, layer.wq.tensor, layer.bq.tensor);
        Tensor k = ops::affine(x, layer.wk.tensor, layer.bk.tensor);
        Tensor v = ops::affine(x, layer.wv.tensor, layer.bv.tensor);
        std::vector<Tensor> head_out;
        for (int i = 0; i < h; ++i) {
            Tensor qi = ops::slice_cols(q, i * dh, dh);
            Tensor ki = ops::slice_cols(k, i * dh, dh);
            Tensor vi = ops::slice_cols(v, i * dh, dh);
            Tensor attn = ops::softmax_rows(
                ops::scale(ops::matmul(qi, ops::transpose(ki)), inv_sqrt));
            head_out.push_back(ops::matmul(attn, vi));
        }
        Tensor merged = head_out[0];
        for (int i = 1; i < h; ++i) merged = ops::concat_cols(merged, head_out[i]);
        Tensor attn_out = ops::affine(merged, layer.wo.tensor, layer.bo.tensor);
        x = ops::layernorm(ops::add(x, attn_out), layer.ln1_gain.tensor, layer.ln1_bias.tensor);
        Tensor ff = ops::affine(
            ops::activate(ops::affine(x, layer.ff1_w.tensor, layer.ff1_b.tensor), Activation::relu),
            layer.ff2_w.tensor, layer.ff2_b.tensor);
        x = ops::layernorm(ops::add(x, ff), layer.ln2_gain.tensor, layer.ln2_bias.tensor);
    }

    FusionOutput out;
    out.stacked_raw = tokens;
    // mean over tokens as the case-level feature
    out.fused.push_back(ops::matmul(Tensor::full({1, n}, 1.0 / n), x));
    return out;
}

void MhaFusion::collect_parameters(std::vector<Parameter*>& out) {
    for (Layer& l : layers_) {
        for (Parameter* p : {&l.wq, &l.bq, &l.wk, &l.bk, &l.wv, &l.bv, &l.wo, &l.bo, &l.ff1_w,
                             &l.ff1_b, &l.ff2_w, &l.ff2_b, &l.ln1_gain, &l.ln1_bias, &l.ln2_gain,
                             &l.ln2_bias})
            out.push_back(p);
    }
}

int64_t mmmil_fusion_param_count(int d, int heads, int attn_hidden) {
    const int64_t dd = d;
    const int64_t projection = 2 * (dd * dd + dd + 2 * dd);  // affine + layernorm, per modality
    const int64_t attention = dd * attn_hidden + attn_hidden + attn_hidden + 1;
    return projection + heads * attention;
}

int64_t single_mil_param_count(int d, int attn_hidden) {
    const int64_t dd = d;
    return dd * attn_hidden + attn_hidden + attn_hidden + 1;
}

int64_t mha_fusion_param_count(int d, int depth) {
    const int64_t dd = d;
    const int64_t attn = 4 * (dd * dd + dd);
    const int64_t ff = dd * 4 * dd + 4 * dd + 4 * dd * dd + dd;
    const int64_t norms = 4 * dd;
    return depth * (attn + ff + norms);
}

}  // namespace mmmil
