#include "mmmil/optim.hpp"

#include <cmath>
#include <unordered_set>

namespace mmmil {

int64_t param_count(const std::vector<Parameter*>& params) {
    int64_t total = 0;
    for (const Parameter* p : params) total += p->numel();
    return total;
}

void check_unique_names(const std::vector<Parameter*>& params) {
    std::unordered_set<std::string> seen;
    for (const Parameter* p : params)
        if (!seen.insert(p->name).second) fail_runtime("duplicate parameter name '", p->name, "'");
}

Tensor xavier_uniform(const Shape& shape, int fan_in, int fan_out, Rng& rng) {
    const double bound = std::sqrt(6.0 / (fan_in + fan_out));
    std::vector<double> vals(static_cast<size_t>(shape_numel(shape)));
    for (double& v : vals) v = rng.uniform(-bound, bound);
    return Tensor::from(shape, std::move(vals));
}

SgdOptimizer::SgdOptimizer(std::vector<Parameter*> params, double momentum, double weight_decay)
    : params_(std::move(params)), momentum_(momentum), weight_decay_(weight_decay) {
    buffers_.reserve(params_.size());
    for (const Parameter* p : params_)
        buffers_.emplace_back(static_cast<size_t>(p->numel()), 0.0);
}

void SgdOptimizer::step(double lr) {
    for (size_t i = 0; i < params_.size(); ++i) {
        Parameter* p = params_[i];
        if (!p->tensor.has_grad())
            fail_runtime("sgd_step: parameter '", p->name, "' has no gradient");
        const auto& grad = p->tensor.grad();
        auto& vals = p->tensor.mutable_values();
        auto& buf = buffers_[i];
        for (size_t j = 0; j < vals.size(); ++j) {
            const double g = grad[j] + weight_decay_ * vals[j];
            buf[j] = momentum_ * buf[j] + g;
            vals[j] -= lr * buf[j];
        }
    }
}

void SgdOptimizer::zero_grad() {
    for (Parameter* p : params_) p->tensor.zero_grad();
}

LrSchedule LrSchedule::constant(double lr) {
    LrSchedule s;
    s.kind = Kind::constant;
    s.max_lr = lr;
    s.total_steps = 1;
    return s;
}

LrSchedule LrSchedule::onecycle(double max_lr, long total_steps, double warmup_fraction,
                                double start_div, double final_div) {
    if (total_steps < 1) fail_runtime("onecycle: total_steps must be positive, got ", total_steps);
    if (warmup_fraction <= 0.0 || warmup_fraction >= 1.0)
        fail_runtime("onecycle: warmup_fraction must lie in (0,1), got ", warmup_fraction);
    if (start_div <= 1.0 || final_div <= 1.0)
        fail_runtime("onecycle: start_div/final_div must exceed 1");
    LrSchedule s;
    s.kind = Kind::onecycle;
    s.max_lr = max_lr;
    s.total_steps = total_steps;
    s.warmup_fraction = warmup_fraction;
    s.start_div = start_div;
    s.final_div = final_div;
    return s;
}

long LrSchedule::peak_step() const {
    long p = std::lround(warmup_fraction * static_cast<double>(total_steps));
    if (p >= total_steps) p = total_steps - 1;
    return p;
}

namespace {
// Cosine interpolation from `from` (t=0) to `to` (t=1).
double cosine_between(double from, double to, double t) {
    return to + (from - to) * 0.5 * (1.0 + std::cos(3.14159265358979323846 * t));
}
}  // namespace

double LrSchedule::lr_at(long step) const {
    if (kind == Kind::constant) return max_lr;
    if (step < 0 || step >= total_steps)
        fail_runtime("onecycle: step ", step, " outside [0, ", total_steps, ")");
    const long peak = peak_step();
    if (step == peak) return max_lr;
    if (step < peak)
        return cosine_between(max_lr / start_div, max_lr, static_cast<double>(step) / peak);
    const long tail = total_steps - 1 - peak;
    if (tail <= 0) return max_lr / final_div;
    return cosine_between(max_lr, max_lr / final_div, static_cast<double>(step - peak) / tail);
}

}  // namespace mmmil
