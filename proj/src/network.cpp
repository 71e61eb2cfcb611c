#include "mmmil/network.hpp"

#include <algorithm>
#include <cmath>

namespace mmmil {

void ModelConfig::validate() const {
    cfp_backbone.validate();
    oct_backbone.validate();
    fusion.validate();
    if (m < 1) fail_data("model: m must be >= 1");
    if (!categories.empty() && static_cast<int>(categories.size()) != m)
        fail_data("model: ", categories.size(), " category names but m=", m);
    const bool needs_cfp = fusion.mode != FusionMode::single_mil ||
                           fusion.single_modality == SingleModality::cfp;
    const bool needs_oct = fusion.mode != FusionMode::single_mil ||
                           fusion.single_modality == SingleModality::oct;
    if (needs_cfp && cfp_backbone.feature_dim() != fusion.d)
        fail_data("model: CFP backbone emits d=", cfp_backbone.feature_dim(),
                  " but fusion expects d=", fusion.d);
    if (needs_oct && oct_backbone.feature_dim() != fusion.d)
        fail_data("model: OCT backbone emits d=", oct_backbone.feature_dim(),
                  " but fusion expects d=", fusion.d);
    if (needs_cfp && needs_oct && cfp_backbone.input_side != oct_backbone.input_side)
        fail_data("model: backbones disagree on input side");
}

Network::Network(const ModelConfig& config, uint64_t init_seed) : config_(config) {
    config_.validate();
    Rng rng(init_seed);

    const bool needs_cfp = config.fusion.mode != FusionMode::single_mil ||
                           config.fusion.single_modality == SingleModality::cfp;
    const bool needs_oct = config.fusion.mode != FusionMode::single_mil ||
                           config.fusion.single_modality == SingleModality::oct;
    if (needs_cfp) bb_cfp_ = std::make_unique<Backbone>(config.cfp_backbone, "cfp_backbone", rng);
    if (needs_oct) bb_oct_ = std::make_unique<Backbone>(config.oct_backbone, "oct_backbone", rng);

    const int d = config.fusion.d;
    int classifier_in = d;
    int n_classifiers = 1;
    switch (config.fusion.mode) {
        case FusionMode::mmmil:
            mmmil_ = std::make_unique<MmMilFusion>(config.fusion, rng);
            n_classifiers = config.fusion.heads;
            break;
        case FusionMode::single_mil:
            single_mil_ = std::make_unique<SingleMilFusion>(config.fusion, rng);
            break;
        case FusionMode::concat:
            classifier_in = 2 * d;
            break;
        case FusionMode::mha:
            mha_ = std::make_unique<MhaFusion>(config.fusion, rng);
            break;
    }
    for (int k = 0; k < n_classifiers; ++k) {
        classifier_w_.emplace_back(cat("classifier.head", k, ".w"),
                                   xavier_uniform({classifier_in, config.m}, classifier_in,
                                                  config.m, rng));
        classifier_b_.emplace_back(cat("classifier.head", k, ".b"), Tensor::zeros({config.m}));
    }
}

Network::Forward Network::forward(const Tensor& cfp_batch, const Tensor& oct_batch,
                                  const Tensor* attn_mask) const {
    Forward out;
    Tensor f_cfp, f_oct;  // per-instance pooled features [n×d]
    if (bb_cfp_ && cfp_batch.defined()) {
        out.cfp_fmaps = bb_cfp_->forward(cfp_batch);
        f_cfp = sw_gap(out.cfp_fmaps);
        out.n_cfp = cfp_batch.dim(0);
    }
    if (bb_oct_ && oct_batch.defined()) {
        out.oct_fmaps = bb_oct_->forward(oct_batch);
        f_oct = sw_gap(out.oct_fmaps);
        out.n_oct = oct_batch.dim(0);
    }

    std::vector<Tensor> fused;
    switch (config_.fusion.mode) {
        case FusionMode::mmmil: {
            if (!f_cfp.defined() || !f_oct.defined())
                fail_runtime("forward: mmmil fusion needs both modalities");
            FusionOutput fo = mmmil_->forward(f_cfp, f_oct, attn_mask);
            fused = std::move(fo.fused);
            out.head_weights = std::move(fo.weights);
            out.projected = std::move(fo.projected);
            break;
        }
        case FusionMode::single_mil: {
            const Tensor& f =
                config_.fusion.single_modality == SingleModality::cfp ? f_cfp : f_oct;
            if (!f.defined()) fail_runtime("forward: single-modality bag missing");
            FusionOutput fo = single_mil_->forward(f, attn_mask);
            fused = std::move(fo.fused);
            out.head_weights = std::move(fo.weights);
            break;
        }
        case FusionMode::concat: {
            if (!f_cfp.defined() || !f_oct.defined())
                fail_runtime("forward: concat fusion needs both modalities");
            if (f_cfp.dim(0) != 1 || f_oct.dim(0) != 1)
                fail_runtime("forward: concat fusion takes exactly one instance per modality");
            fused.push_back(concat_fuse(f_cfp, f_oct));
            break;
        }
        case FusionMode::mha: {
            if (!f_cfp.defined() || !f_oct.defined())
                fail_runtime("forward: mha fusion needs both modalities");
            FusionOutput fo = mha_->forward(ops::concat_rows({f_cfp, f_oct}));
            fused = std::move(fo.fused);
            break;
        }
    }
    out.head_fused = fused;

    // per-head decision scores, mean-pooled before the sigmoid
    Tensor score_sum;
    for (size_t k = 0; k < classifier_w_.size(); ++k) {
        Tensor score = ops::affine(fused.at(k), classifier_w_[k].tensor, classifier_b_[k].tensor);
        out.head_scores.push_back(score);
        score_sum = k == 0 ? score : ops::add(score_sum, score);
    }
    out.probs = ops::activate(ops::scale(score_sum, 1.0 / classifier_w_.size()),
                              Activation::sigmoid);
    return out;
}

std::vector<Parameter*> Network::parameters() {
    std::vector<Parameter*> out;
    if (bb_cfp_) bb_cfp_->collect_parameters(out);
    if (bb_oct_) bb_oct_->collect_parameters(out);
    if (mmmil_) mmmil_->collect_parameters(out);
    if (single_mil_) single_mil_->collect_parameters(out);
    if (mha_) mha_->collect_parameters(out);
    for (size_t k = 0; k < classifier_w_.size(); ++k) {
        out.push_back(&classifier_w_[k]);
        out.push_back(&classifier_b_[k]);
    }
    check_unique_names(out);
    return out;
}

std::vector<Parameter*> Network::fusion_parameters() {
    std::vector<Parameter*> out;
    if (mmmil_) mmmil_->collect_parameters(out);
    if (single_mil_) single_mil_->collect_parameters(out);
    if (mha_) mha_->collect_parameters(out);
    return out;
}

int64_t Network::parameter_total() { return param_count(parameters()); }

std::pair<InstanceBag, InstanceBag> test_time_bags(const Network& net, const CaseImages& images,
                                                   const InferenceOptions& opts) {
    const ModelConfig& cfg = net.config();
    const int side = cfg.cfp_backbone.input_side;

    InstanceBag cfp_bag;
    cfp_bag.modality = Modality::cfp;
    InstanceBag oct_bag;
    oct_bag.modality = Modality::oct;

    const FusionMode mode = cfg.fusion.mode;
    const bool wants_cfp =
        mode != FusionMode::single_mil || cfg.fusion.single_modality == SingleModality::cfp;
    const bool wants_oct =
        mode != FusionMode::single_mil || cfg.fusion.single_modality == SingleModality::oct;

    if (wants_cfp) {
        if (mode != FusionMode::concat && opts.oversample) {
            cfp_bag = oversample_cfp_test(images.cfp, opts.crop_fraction, side);
        } else {
            cfp_bag.instances.push_back(resize_bilinear(images.cfp, side, side));
        }
    }
    if (wants_oct) {
        if (mode == FusionMode::concat) {
            const int idx =
                bscan_index(cfg.fusion.bscan_strategy, static_cast<int>(images.oct.size()));
            oct_bag.instances.push_back(resize_bilinear(images.oct[idx], side, side));
        } else {
            for (const Image& scan : images.oct)
                oct_bag.instances.push_back(resize_bilinear(scan, side, side));
        }
    }
    return {std::move(cfp_bag), std::move(oct_bag)};
}

namespace {

Network::Forward run_test_forward(const Network& net, const CaseImages& images,
                                  const InferenceOptions& opts) {
    auto [cfp_bag, oct_bag] = test_time_bags(net, images, opts);
    Tensor cfp_batch, oct_batch;
    if (cfp_bag.size() > 0) cfp_batch = bag_to_tensor(cfp_bag, opts.cfp_stats);
    if (oct_bag.size() > 0) oct_batch = bag_to_tensor(oct_bag, opts.oct_stats);
    return net.forward(cfp_batch, oct_batch);
}

Prediction to_prediction(const Network::Forward& fwd) {
    Prediction pred;
    pred.probabilities = fwd.probs.values();
    for (const Tensor& s : fwd.head_scores) pred.head_scores.push_back(s.values());
    return pred;
}

}  // namespace

Prediction predict_case(const Network& net, const CaseImages& images,
                        const InferenceOptions& opts) {
    NoGradGuard no_grad;
    return to_prediction(run_test_forward(net, images, opts));
}

CaseExplanation explain_case(const Network& net, const CaseImages& images,
                             const InferenceOptions& opts, const std::string& case_id) {
    const FusionMode mode = net.config().fusion.mode;
    if (mode != FusionMode::mmmil && mode != FusionMode::single_mil)
        fail_data("explain: fusion mode '", fusion_mode_to_string(mode),
                  "' has no instance attention");

    NoGradGuard no_grad;
    Network::Forward fwd = run_test_forward(net, images, opts);

    CaseExplanation ex;
    ex.case_id = case_id;
    ex.prediction = to_prediction(fwd);

    const int n_cfp = fwd.n_cfp, n_oct = fwd.n_oct;
    const int n_total = n_cfp + n_oct;
    const int heads = static_cast<int>(fwd.head_weights.size());
    std::vector<double> mean_weight(n_total, 0.0);
    for (const Tensor& w : fwd.head_weights) {
        const auto& wv = w.values();
        double cfp_share = 0.0;
        for (int i = 0; i < n_total; ++i) {
            mean_weight[i] += wv[i] / heads;
            if (i < n_cfp) cfp_share += wv[i];
        }
        ex.head_weights.push_back(wv);
        ex.head_cfp_share.push_back(cfp_share);
    }
    ex.attention_cfp.assign(mean_weight.begin(), mean_weight.begin() + n_cfp);
    ex.attention_oct.assign(mean_weight.begin() + n_cfp, mean_weight.end());
    for (double v : ex.attention_cfp) ex.cfp_share += v;
    for (double v : ex.attention_oct) ex.oct_share += v;

    // A_i = a_i · CW-GAP(F_i), head-averaged a_i
    auto build_maps = [](const Tensor& fmaps, const double* weights,
                         std::vector<InstanceMap>& out) {
        if (!fmaps.defined()) return;
        const Tensor maps = cw_gap(fmaps);  // [n×w×h]
        const int n = maps.dim(0), h = maps.dim(1), w = maps.dim(2);
        const auto& mv = maps.values();
        for (int i = 0; i < n; ++i) {
            InstanceMap m;
            m.w = w;
            m.h = h;
            m.values.assign(mv.begin() + static_cast<size_t>(i) * h * w,
                            mv.begin() + static_cast<size_t>(i + 1) * h * w);
            for (double& v : m.values) v *= weights[i];
            out.push_back(std::move(m));
        }
    };
    if (n_cfp > 0) build_maps(fwd.cfp_fmaps, mean_weight.data(), ex.cfp_maps);
    if (n_oct > 0) build_maps(fwd.oct_fmaps, mean_weight.data() + n_cfp, ex.oct_maps);
    return ex;
}

std::vector<HeadShareEntry> modality_attention_share(
    const std::vector<CaseExplanation>& explanations,
    const std::vector<std::vector<int>>& labels, const std::vector<std::string>& categories) {
    if (explanations.size() != labels.size())
        fail_runtime("modality_attention_share: ", explanations.size(), " explanations vs ",
                     labels.size(), " label vectors");
    std::vector<HeadShareEntry> out;
    const int m = static_cast<int>(categories.size());
    for (int c = 0; c < m; ++c) {
        HeadShareEntry entry;
        entry.category = categories[c];
        for (size_t i = 0; i < explanations.size(); ++i) {
            if (labels[i].at(c) != 1) continue;
            const CaseExplanation& ex = explanations[i];
            const size_t n_cfp = ex.attention_cfp.size();
            if (entry.per_head_cfp_share.empty()) {
                entry.per_head_cfp_share.assign(ex.head_cfp_share.size(), 0.0);
                entry.per_head_oct_share.assign(ex.head_cfp_share.size(), 0.0);
            }
            for (size_t k = 0; k < ex.head_cfp_share.size(); ++k) {
                entry.per_head_cfp_share[k] += ex.head_cfp_share[k];
                // OCT shares summed from the weights themselves, not as 1−cfp
                double oct = 0.0;
                for (size_t j = n_cfp; j < ex.head_weights[k].size(); ++j)
                    oct += ex.head_weights[k][j];
                entry.per_head_oct_share[k] += oct;
            }
            entry.mean_cfp_share += ex.cfp_share;
            entry.mean_oct_share += ex.oct_share;
            entry.positives++;
        }
        if (entry.positives == 0) continue;  // absent, not zero
        for (double& v : entry.per_head_cfp_share) v /= entry.positives;
        for (double& v : entry.per_head_oct_share) v /= entry.positives;
        entry.mean_cfp_share /= entry.positives;
        entry.mean_oct_share /= entry.positives;
        out.push_back(std::move(entry));
    }
    return out;
}

}  // namespace mmmil
