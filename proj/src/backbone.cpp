#include "mmmil/backbone.hpp"

namespace mmmil {

int BackboneConfig::feature_dim() const {
    if (stages.empty()) fail_runtime("backbone config has no stages");
    return stages.back().channels;
}

int BackboneConfig::output_side() const {
    int side = input_side;
    const int pad = kernel / 2;
    for (const BackboneStage& s : stages) side = (side + 2 * pad - kernel) / s.stride + 1;
    return side;
}

void BackboneConfig::validate() const {
    if (stages.empty()) fail_data("backbone: at least one stage required");
    for (const BackboneStage& s : stages) {
        if (s.channels < 1) fail_data("backbone: stage channels must be positive");
        if (s.stride < 1) fail_data("backbone: stage stride must be positive");
    }
    if (kernel < 1 || kernel % 2 == 0) fail_data("backbone: kernel must be odd and positive");
    if (input_side < 1) fail_data("backbone: input side must be positive");
    if (in_channels != 1 && in_channels != 3) fail_data("backbone: in_channels must be 1 or 3");
    if (output_side() < 1)
        fail_data("backbone: stages reduce a ", input_side, "-pixel input below 1x1");
}

Backbone::Backbone(const BackboneConfig& config, const std::string& name_prefix, Rng& rng)
    : config_(config) {
    config_.validate();
    int in_ch = config_.in_channels;
    int side = config_.input_side;
    const int k = config_.kernel;
    const int pad = k / 2;
    for (size_t i = 0; i < config_.stages.size(); ++i) {
        const int out_ch = config_.stages[i].channels;
        const int fan_in = in_ch * k * k;
        const int fan_out = out_ch * k * k;
        kernels_.emplace_back(cat(name_prefix, ".stage", i, ".kernel"),
                              xavier_uniform({out_ch, in_ch, k, k}, fan_in, fan_out, rng));
        biases_.emplace_back(cat(name_prefix, ".stage", i, ".bias"),
                             Tensor::zeros({out_ch}));
        side = (side + 2 * pad - k) / config_.stages[i].stride + 1;
        stage_sides_.push_back(side);
        if (config_.stage_layernorm) {
            const int flat = out_ch * side * side;
            ln_gains_.emplace_back(cat(name_prefix, ".stage", i, ".ln_gain"),
                                   Tensor::full({flat}, 1.0));
            ln_biases_.emplace_back(cat(name_prefix, ".stage", i, ".ln_bias"),
                                    Tensor::zeros({flat}));
        }
        in_ch = out_ch;
    }
}

Tensor Backbone::forward(const Tensor& batch) const {
    if (batch.rank() != 4 || batch.dim(1) != config_.in_channels ||
        batch.dim(2) != config_.input_side || batch.dim(3) != config_.input_side)
        fail_runtime("backbone: expected [n x ", config_.in_channels, " x ", config_.input_side,
                     " x ", config_.input_side, "] input, got ", shape_str(batch.shape()));
    Tensor x = batch;
    const int pad = config_.kernel / 2;
    for (size_t i = 0; i < kernels_.size(); ++i) {
        x = ops::conv2d(x, kernels_[i].tensor, config_.stages[i].stride, pad);
        x = ops::add_channel_bias(x, biases_[i].tensor);
        x = ops::activate(x, config_.activation);
        if (config_.stage_layernorm) {
            const Shape shape = x.shape();
            const int flat = shape[1] * shape[2] * shape[3];
            x = ops::reshape(ops::layernorm(ops::reshape(x, {shape[0], flat}),
                                            ln_gains_[i].tensor, ln_biases_[i].tensor),
                             shape);
        }
    }
    return x;
}

void Backbone::collect_parameters(std::vector<Parameter*>& out) {
    for (size_t i = 0; i < kernels_.size(); ++i) {
        out.push_back(&kernels_[i]);
        out.push_back(&biases_[i]);
        if (config_.stage_layernorm) {
            out.push_back(&ln_gains_[i]);
            out.push_back(&ln_biases_[i]);
        }
    }
}

Tensor sw_gap(const Tensor& feature_maps) { return ops::spatial_mean(feature_maps); }

Tensor cw_gap(const Tensor& feature_maps) { return ops::channel_mean(feature_maps); }

}  // namespace mmmil
