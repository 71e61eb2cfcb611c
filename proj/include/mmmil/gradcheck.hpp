#pragma once

#include <functional>
#include <string>
#include <vector>

#include "mmmil/tensor.hpp"

namespace mmmil {

struct GradCheckEntry {
    std::string name;
    double max_rel_err = 0.0;
};

struct GradCheckReport {
    std::vector<GradCheckEntry> entries;
    double max_rel_err = 0.0;
    bool ok(double tol) const { return max_rel_err < tol; }
};

/// Central finite differences against the recorded backward pass.
///
/// `forward` must rebuild the graph from the current contents of `inputs`
/// and return a scalar. Relative error per coordinate is
/// |analytic − numeric| / max(|analytic|, |numeric|, 1e-8).
GradCheckReport grad_check(const std::function<Tensor()>& forward,
                           const std::vector<std::pair<std::string, Tensor>>& inputs,
                           double eps = 1e-5);

}  // namespace mmmil
