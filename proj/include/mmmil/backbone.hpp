#pragma once

#include <string>
#include <vector>

#include "mmmil/ops.hpp"
#include "mmmil/optim.hpp"

namespace mmmil {

struct BackboneStage {
    int channels = 16;
    int stride = 2;
};

/// Small configurable CNN standing in for a large pretrained backbone.
struct BackboneConfig {
    std::vector<BackboneStage> stages = {{16, 2}, {32, 2}, {64, 2}, {64, 2}};
    int kernel = 3;
    int input_side = 256;
    int in_channels = 3;
    Activation activation = Activation::relu;
    bool stage_layernorm = false;  // layer-normalize each stage's flattened output

    int feature_dim() const;   // channel count of the last stage (d)
    int output_side() const;   // spatial side of the emitted feature maps
    void validate() const;
};

/// Stack of stride-s convolutions with per-channel bias and a pointwise
/// activation. Forward maps [n×C×S×S] instance batches to [n×d×w×h]
/// feature maps, one per instance.
class Backbone {
public:
    Backbone(const BackboneConfig& config, const std::string& name_prefix, Rng& rng);

    Tensor forward(const Tensor& batch) const;

    const BackboneConfig& config() const { return config_; }
    int feature_dim() const { return config_.feature_dim(); }
    void collect_parameters(std::vector<Parameter*>& out);

private:
    BackboneConfig config_;
    std::vector<Parameter> kernels_;
    std::vector<Parameter> biases_;
    std::vector<Parameter> ln_gains_;  // present only with stage_layernorm
    std::vector<Parameter> ln_biases_;
    std::vector<int> stage_sides_;
};

/// Spatial-wise global average pooling: [n×d×w×h] -> per-instance d-vectors [n×d].
Tensor sw_gap(const Tensor& feature_maps);

/// Channel-wise global average pooling: [n×d×w×h] -> per-instance maps [n×w×h].
Tensor cw_gap(const Tensor& feature_maps);

}  // namespace mmmil
