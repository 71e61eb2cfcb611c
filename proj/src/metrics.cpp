#include "mmmil/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace mmmil {

namespace {

// Fixed seed for the tie-breaking pre-shuffle; part of the metric definition.
constexpr uint64_t kTieShuffleSeed = 0x5feceb66ffc86f38ull;

void check_ranking(const RankingInput& input) {
    if (input.scores.size() != input.labels.size())
        fail_runtime("ranking: ", input.scores.size(), " scores vs ", input.labels.size(),
                     " labels");
    for (int v : input.labels)
        if (v != 0 && v != 1) fail_runtime("ranking: labels must be 0/1");
}

}  // namespace

std::optional<double> average_precision(const RankingInput& input) {
    check_ranking(input);
    const int n = static_cast<int>(input.scores.size());
    int positives = 0;
    for (int v : input.labels) positives += v;
    if (positives == 0) return std::nullopt;

    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    Rng rng(kTieShuffleSeed);
    rng.shuffle(order);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        return input.scores[a] > input.scores[b];
    });

    double ap = 0.0;
    int seen_positives = 0;
    for (int rank = 1; rank <= n; ++rank) {
        if (input.labels[order[rank - 1]] == 1) {
            seen_positives++;
            ap += static_cast<double>(seen_positives) / rank;
        }
    }
    return ap / positives;
}

std::optional<double> auc_roc(const RankingInput& input) {
    check_ranking(input);
    const int n = static_cast<int>(input.scores.size());
    int positives = 0;
    for (int v : input.labels) positives += v;
    const int negatives = n - positives;
    if (positives == 0 || negatives == 0) return std::nullopt;

    // midrank formulation of (wins + 0.5·ties)/(P·N)
    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        return input.scores[a] < input.scores[b];
    });
    std::vector<double> rank(n, 0.0);
    int i = 0;
    while (i < n) {
        int j = i;
        while (j + 1 < n && input.scores[order[j + 1]] == input.scores[order[i]]) ++j;
        const double mid = (i + 1 + j + 1) / 2.0;
        for (int k = i; k <= j; ++k) rank[order[k]] = mid;
        i = j + 1;
    }
    double rank_sum = 0.0;
    for (int k = 0; k < n; ++k)
        if (input.labels[k] == 1) rank_sum += rank[k];
    return (rank_sum - positives * (positives + 1) / 2.0) /
           (static_cast<double>(positives) * negatives);
}

ThresholdedMetrics sens_spec_f1(const std::vector<double>& probabilities,
                                const std::vector<int>& labels, double threshold) {
    if (probabilities.size() != labels.size())
        fail_runtime("sens_spec_f1: ", probabilities.size(), " probabilities vs ", labels.size(),
                     " labels");
    int tp = 0, fn = 0, tn = 0, fp = 0;
    for (size_t i = 0; i < labels.size(); ++i) {
        const bool predicted = probabilities[i] >= threshold;
        if (labels[i] == 1) {
            predicted ? ++tp : ++fn;
        } else {
            predicted ? ++fp : ++tn;
        }
    }
    ThresholdedMetrics out;
    if (tp + fn > 0) out.sensitivity = static_cast<double>(tp) / (tp + fn);
    if (tn + fp > 0) out.specificity = static_cast<double>(tn) / (tn + fp);
    if (out.sensitivity && out.specificity) {
        const double s = *out.sensitivity, p = *out.specificity;
        out.f1 = (s + p) == 0.0 ? 0.0 : 2.0 * s * p / (s + p);
    }
    return out;
}

std::optional<double> macro_aggregate(const std::vector<std::optional<double>>& values) {
    double sum = 0.0;
    int count = 0;
    for (const auto& v : values)
        if (v) {
            sum += *v;
            ++count;
        }
    if (count == 0) return std::nullopt;
    return sum / count;
}

std::optional<BootstrapInterval> bootstrap_ci(
    int n_cases, const std::function<std::optional<double>(const std::vector<int>&)>& metric,
    int replicates, double level, uint64_t seed) {
    if (n_cases < 2) return std::nullopt;
    if (replicates < 1) fail_runtime("bootstrap: replicates must be >= 1");
    if (level <= 0.0 || level >= 1.0) fail_runtime("bootstrap: level must lie in (0,1)");

    std::vector<double> samples;
    samples.reserve(replicates);
    int skipped = 0;
    std::vector<int> indices(n_cases);
    for (int b = 0; b < replicates; ++b) {
        Rng rng(Rng::mix(seed, static_cast<uint64_t>(b)));
        for (int& idx : indices) idx = rng.uniform_int(0, n_cases - 1);
        const auto value = metric(indices);
        if (value) {
            samples.push_back(*value);
        } else {
            ++skipped;
        }
    }
    if (samples.empty()) return std::nullopt;
    std::sort(samples.begin(), samples.end());

    // linearly interpolated percentile
    auto quantile = [&](double q) {
        const double pos = q * (samples.size() - 1);
        const size_t lo = static_cast<size_t>(pos);
        const size_t hi = std::min(lo + 1, samples.size() - 1);
        const double frac = pos - lo;
        return samples[lo] * (1.0 - frac) + samples[hi] * frac;
    };
    const double alpha = (1.0 - level) / 2.0;
    BootstrapInterval ci;
    ci.lower = std::clamp(quantile(alpha), 0.0, 1.0);
    ci.upper = std::clamp(quantile(1.0 - alpha), 0.0, 1.0);
    ci.skipped_replicates = skipped;
    return ci;
}

MetricReport compute_metric_report(const std::vector<std::vector<double>>& probabilities,
                                   const std::vector<std::vector<int>>& labels,
                                   const std::vector<std::string>& categories, double threshold,
                                   int bootstrap_replicates, double level, uint64_t seed,
                                   bool with_micro) {
    const int n_cases = static_cast<int>(probabilities.size());
    if (probabilities.size() != labels.size())
        fail_runtime("metric_report: ", probabilities.size(), " probability rows vs ",
                     labels.size(), " label rows");
    const int m = static_cast<int>(categories.size());
    for (int i = 0; i < n_cases; ++i)
        if (static_cast<int>(probabilities[i].size()) != m ||
            static_cast<int>(labels[i].size()) != m)
            fail_runtime("metric_report: row ", i, " does not have ", m, " categories");

    MetricReport report;
    std::vector<std::optional<double>> aps, aucs, sens, spes, f1s;
    for (int c = 0; c < m; ++c) {
        RankingInput ranking;
        std::vector<double> probs;
        std::vector<int> labs;
        for (int i = 0; i < n_cases; ++i) {
            ranking.scores.push_back(probabilities[i][c]);
            ranking.labels.push_back(labels[i][c]);
            probs.push_back(probabilities[i][c]);
            labs.push_back(labels[i][c]);
        }
        CategoryMetrics cm;
        cm.category = categories[c];
        cm.ap = average_precision(ranking);
        cm.auc = auc_roc(ranking);
        const ThresholdedMetrics tm = sens_spec_f1(probs, labs, threshold);
        cm.sensitivity = tm.sensitivity;
        cm.specificity = tm.specificity;
        cm.f1 = tm.f1;
        if (bootstrap_replicates > 0 && cm.ap) {
            cm.ap_ci = bootstrap_ci(
                n_cases,
                [&](const std::vector<int>& idx) {
                    RankingInput r;
                    for (int i : idx) {
                        r.scores.push_back(probabilities[i][c]);
                        r.labels.push_back(labels[i][c]);
                    }
                    return average_precision(r);
                },
                bootstrap_replicates, level, Rng::mix(seed, static_cast<uint64_t>(c)));
        }
        aps.push_back(cm.ap);
        aucs.push_back(cm.auc);
        sens.push_back(cm.sensitivity);
        spes.push_back(cm.specificity);
        f1s.push_back(cm.f1);
        report.per_category.push_back(std::move(cm));
    }
    report.macro_ap = macro_aggregate(aps);
    report.macro_auc = macro_aggregate(aucs);
    report.macro_sensitivity = macro_aggregate(sens);
    report.macro_specificity = macro_aggregate(spes);
    report.macro_f1 = macro_aggregate(f1s);
    if (with_micro) {
        RankingInput pooled;
        std::vector<double> pooled_probs;
        std::vector<int> pooled_labels;
        for (int i = 0; i < n_cases; ++i)
            for (int c = 0; c < m; ++c) {
                pooled.scores.push_back(probabilities[i][c]);
                pooled.labels.push_back(labels[i][c]);
                pooled_probs.push_back(probabilities[i][c]);
                pooled_labels.push_back(labels[i][c]);
            }
        MicroMetrics micro;
        micro.ap = average_precision(pooled);
        micro.auc = auc_roc(pooled);
        const ThresholdedMetrics tm = sens_spec_f1(pooled_probs, pooled_labels, threshold);
        micro.sensitivity = tm.sensitivity;
        micro.specificity = tm.specificity;
        micro.f1 = tm.f1;
        report.micro = micro;
    }
    if (bootstrap_replicates > 0 && report.macro_ap) {
        report.macro_ap_ci = bootstrap_ci(
            n_cases,
            [&](const std::vector<int>& idx) {
                std::vector<std::optional<double>> rep_aps;
                for (int c = 0; c < m; ++c) {
                    RankingInput r;
                    for (int i : idx) {
                        r.scores.push_back(probabilities[i][c]);
                        r.labels.push_back(labels[i][c]);
                    }
                    rep_aps.push_back(average_precision(r));
                }
                return macro_aggregate(rep_aps);
            },
            bootstrap_replicates, level, Rng::mix(seed, 0xfadeull));
    }
    return report;
}

}  // namespace mmmil
