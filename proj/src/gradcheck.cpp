#include "mmmil/gradcheck.hpp"

#include <cmath>
#include <limits>
#include <tuple>

namespace mmmil {

GradCheckReport grad_check(const std::function<Tensor()>& forward,
                           const std::vector<std::pair<std::string, Tensor>>& inputs,
                           double eps) {
    for (const auto& [name, t] : inputs)
        if (!t.requires_grad())
            fail_runtime("grad_check: input '", name, "' does not require grad");

    Tensor loss = forward();
    if (loss.size() != 1)
        fail_runtime("grad_check: forward() must return a scalar, got ",
                     shape_str(loss.shape()));
    for (const auto& [name, t] : inputs) const_cast<Tensor&>(t).zero_grad();
    loss.backward();

    // Snapshot the analytic grads before the finite-difference sweeps mutate anything.
    std::vector<std::vector<double>> analytic;
    analytic.reserve(inputs.size());
    for (const auto& [name, t] : inputs)
        analytic.push_back(t.has_grad() ? t.grad() : std::vector<double>(t.size(), 0.0));

    GradCheckReport report;
    const double loss_scale = std::abs(loss.item());
    for (size_t k = 0; k < inputs.size(); ++k) {
        Tensor t = inputs[k].second;
        auto& vals = t.mutable_values();
        GradCheckEntry entry{inputs[k].first, 0.0};
        NoGradGuard no_grad;  // finite differences only need values
        for (size_t i = 0; i < vals.size(); ++i) {
            const double saved = vals[i];
            auto central = [&](double step) {
                vals[i] = saved + step;
                const double up = forward().item();
                vals[i] = saved - step;
                const double down = forward().item();
                vals[i] = saved;
                return std::pair{up - down, 2.0 * step};
            };
            auto [diff, denom] = central(eps);
            if (std::abs(diff) <= 8.0 * std::numeric_limits<double>::epsilon() * loss_scale) {
                // the difference is below the rounding resolution of the loss
                // (a flat direction); re-measure with a coarser step so the
                // quotient is not dominated by ULP noise
                std::tie(diff, denom) = central(eps * 64.0);
            }
            const double numeric = diff / denom;
            const double a = analytic[k][i];
            const double rel =
                std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-8});
            if (rel > entry.max_rel_err) entry.max_rel_err = rel;
        }
        report.max_rel_err = std::max(report.max_rel_err, entry.max_rel_err);
        report.entries.push_back(std::move(entry));
    }
    return report;
}

}  // namespace mmmil
