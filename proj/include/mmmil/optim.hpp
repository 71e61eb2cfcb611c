#pragma once

#include <string>
#include <vector>

#include "mmmil/tensor.hpp"

namespace mmmil {

/// A named trainable tensor. Names are hierarchical paths unique per model.
struct Parameter {
    std::string name;
    Tensor tensor;

    Parameter() = default;
    Parameter(std::string n, Tensor t) : name(std::move(n)), tensor(std::move(t)) {
        tensor.set_requires_grad(true);
    }
    int64_t numel() const { return tensor.size(); }
};

int64_t param_count(const std::vector<Parameter*>& params);

/// Throws when two parameters share a name.
void check_unique_names(const std::vector<Parameter*>& params);

/// Glorot-style uniform init in ±sqrt(6/(fan_in+fan_out)).
Tensor xavier_uniform(const Shape& shape, int fan_in, int fan_out, Rng& rng);

/// SGD with classical momentum and coupled L2 weight decay:
///   g   <- grad + wd·param
///   buf <- momentum·buf + g
///   p   <- p − lr·buf
class SgdOptimizer {
public:
    SgdOptimizer(std::vector<Parameter*> params, double momentum = 0.9,
                 double weight_decay = 1e-5);

    void step(double lr);
    void zero_grad();

    double momentum() const { return momentum_; }
    double weight_decay() const { return weight_decay_; }
    const std::vector<double>& buffer(size_t i) const { return buffers_[i]; }

private:
    std::vector<Parameter*> params_;
    std::vector<std::vector<double>> buffers_;  // one per parameter, zero-initialized
    double momentum_;
    double weight_decay_;
};

/// Learning-rate schedule. The onecycle kind rises with a cosine ramp from
/// max_lr/start_div to max_lr over warmup_fraction of the steps, then decays
/// with a cosine to max_lr/final_div, hitting the peak exactly once.
struct LrSchedule {
    enum class Kind { constant, onecycle };

    Kind kind = Kind::onecycle;
    double max_lr = 0.01;
    long total_steps = 1;
    double warmup_fraction = 0.3;
    double start_div = 25.0;
    double final_div = 1e4;

    static LrSchedule constant(double lr);
    static LrSchedule onecycle(double max_lr, long total_steps, double warmup_fraction = 0.3,
                               double start_div = 25.0, double final_div = 1e4);

    double lr_at(long step) const;
    long peak_step() const;
};

}  // namespace mmmil
