#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "mmmil/common.hpp"

namespace mmmil {

/// Scores and binary labels for one category over a case set.
struct RankingInput {
    std::vector<double> scores;
    std::vector<int> labels;
};

/// Average precision: mean over the positive ranks of precision-at-rank,
/// after a descending stable sort. Ties are broken by a deterministic
/// fixed-seed pre-shuffle so tied orderings are reproducible.
/// Absent when the input has no positives.
std::optional<double> average_precision(const RankingInput& input);

/// Mann–Whitney AUC: (wins + 0.5·ties) / (P·N), computed via midranks.
/// Absent when either class is missing.
std::optional<double> auc_roc(const RankingInput& input);

struct ThresholdedMetrics {
    std::optional<double> sensitivity;
    std::optional<double> specificity;
    std::optional<double> f1;  // harmonic mean of Sen and Spe
};

ThresholdedMetrics sens_spec_f1(const std::vector<double>& probabilities,
                                const std::vector<int>& labels, double threshold = 0.5);

/// Unweighted mean over the defined values; absent when none are defined.
std::optional<double> macro_aggregate(const std::vector<std::optional<double>>& values);

struct BootstrapInterval {
    double lower = 0.0;
    double upper = 0.0;
    int skipped_replicates = 0;  // degenerate resamples (metric absent)
};

/// Case-level percentile bootstrap. `metric` receives the resampled case
/// indices and may return nullopt for a degenerate replicate, which is
/// skipped and counted. Deterministic given the seed; bounds clipped to [0,1].
std::optional<BootstrapInterval> bootstrap_ci(
    int n_cases, const std::function<std::optional<double>(const std::vector<int>&)>& metric,
    int replicates = 2000, double level = 0.95, uint64_t seed = 0);

struct CategoryMetrics {
    std::string category;
    std::optional<double> ap;
    std::optional<double> auc;
    std::optional<double> sensitivity;
    std::optional<double> specificity;
    std::optional<double> f1;
    std::optional<BootstrapInterval> ap_ci;
};

struct MicroMetrics {
    std::optional<double> ap;  // over the flattened (case, category) pairs
    std::optional<double> auc;
    std::optional<double> sensitivity;  // pooled confusion counts
    std::optional<double> specificity;
    std::optional<double> f1;
};

struct MetricReport {
    std::vector<CategoryMetrics> per_category;
    std::optional<double> macro_ap;
    std::optional<double> macro_auc;
    std::optional<double> macro_sensitivity;
    std::optional<double> macro_specificity;
    std::optional<double> macro_f1;
    std::optional<BootstrapInterval> macro_ap_ci;
    std::optional<MicroMetrics> micro;  // filled only when requested
};

/// Full multi-label report from per-case probability rows and label rows.
/// Bootstrap runs when `bootstrap_replicates` > 0. Overall values are macro
/// (unweighted category means); `with_micro` adds pooled micro variants.
MetricReport compute_metric_report(const std::vector<std::vector<double>>& probabilities,
                                   const std::vector<std::vector<int>>& labels,
                                   const std::vector<std::string>& categories,
                                   double threshold = 0.5, int bootstrap_replicates = 0,
                                   double level = 0.95, uint64_t seed = 0,
                                   bool with_micro = false);

}  // namespace mmmil
