#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "mmmil/metrics.hpp"

using namespace mmmil;
using mmmil::testing::brute_force_ap;
using mmmil::testing::brute_force_auc;

TEST_CASE("average precision worked examples") {
    CHECK(*average_precision({{0.9, 0.8, 0.1}, {1, 1, 0}}) == doctest::Approx(1.0));
    // precision at the positive ranks: 1/1 and 2/3
    CHECK(*average_precision({{0.9, 0.8, 0.7, 0.6}, {1, 0, 1, 0}}) ==
          doctest::Approx(5.0 / 6.0).epsilon(1e-12));
    CHECK_FALSE(average_precision({{0.4, 0.2}, {0, 0}}).has_value());
    CHECK(*average_precision({{0.1}, {1}}) == doctest::Approx(1.0));
}

TEST_CASE("auc worked examples") {
    CHECK(*auc_roc({{0.9, 0.8, 0.2, 0.1}, {1, 1, 0, 0}}) == doctest::Approx(1.0));
    CHECK(*auc_roc({{0.9, 0.4, 0.35, 0.8}, {1, 0, 1, 0}}) == doctest::Approx(0.5));
    CHECK(*auc_roc({{0.5, 0.5, 0.5}, {1, 0, 1}}) == doctest::Approx(0.5));  // all ties
    CHECK(*auc_roc({{0.1, 0.2, 0.9}, {1, 1, 0}}) == doctest::Approx(0.0));  // reversed perfect
    CHECK_FALSE(auc_roc({{0.4, 0.2}, {1, 1}}).has_value());
    CHECK_FALSE(auc_roc({{0.4, 0.2}, {0, 0}}).has_value());
}

TEST_CASE("exhaustive brute-force equivalence up to length 8") {
    Rng rng(2024);
    for (int len = 1; len <= 8; ++len) {
        for (int pattern = 0; pattern < (1 << len); ++pattern) {
            std::vector<int> labels(len);
            for (int i = 0; i < len; ++i) labels[i] = (pattern >> i) & 1;
            for (int draw = 0; draw < 20; ++draw) {
                std::vector<double> scores(len);
                for (double& s : scores) s = rng.uniform();
                const RankingInput input{scores, labels};
                const auto ap = average_precision(input);
                const auto ap_oracle = brute_force_ap(scores, labels);
                CHECK(ap.has_value() == ap_oracle.has_value());
                if (ap) CHECK(std::abs(*ap - *ap_oracle) < 1e-12);
                const auto auc = auc_roc(input);
                const auto auc_oracle = brute_force_auc(scores, labels);
                CHECK(auc.has_value() == auc_oracle.has_value());
                if (auc) CHECK(std::abs(*auc - *auc_oracle) < 1e-12);
            }
        }
    }
}

TEST_CASE("rank metrics are invariant under strictly monotone transforms") {
    Rng rng(7);
    for (int trial = 0; trial < 50; ++trial) {
        const int len = rng.uniform_int(2, 12);
        std::vector<double> scores(len);
        std::vector<int> labels(len);
        bool has_pos = false, has_neg = false;
        for (int i = 0; i < len; ++i) {
            scores[i] = rng.uniform(-2, 2);
            labels[i] = rng.uniform() < 0.5 ? 1 : 0;
            (labels[i] ? has_pos : has_neg) = true;
        }
        if (!has_pos || !has_neg) continue;
        std::vector<double> transformed(len);
        for (int i = 0; i < len; ++i)
            transformed[i] = scores[i] * scores[i] * scores[i] + scores[i];  // x³+x
        CHECK(std::abs(*average_precision({scores, labels}) -
                       *average_precision({transformed, labels})) < 1e-12);
        CHECK(std::abs(*auc_roc({scores, labels}) - *auc_roc({transformed, labels})) < 1e-12);
    }
}

TEST_CASE("tied scores are ordered reproducibly") {
    const RankingInput tied{{0.5, 0.5, 0.5, 0.5}, {1, 0, 1, 0}};
    const double first = *average_precision(tied);
    for (int i = 0; i < 5; ++i) CHECK(*average_precision(tied) == first);
}

TEST_CASE("sensitivity, specificity and their F1") {
    SUBCASE("worked example") {
        const auto m = sens_spec_f1({0.6, 0.4, 0.7}, {1, 0, 0}, 0.5);
        CHECK(*m.sensitivity == doctest::Approx(1.0));
        CHECK(*m.specificity == doctest::Approx(0.5));
        CHECK(*m.f1 == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
    }

    SUBCASE("harmonic-mean endpoints") {
        const auto perfect = sens_spec_f1({0.9, 0.1}, {1, 0}, 0.5);
        CHECK(*perfect.f1 == doctest::Approx(1.0));
        const auto degenerate = sens_spec_f1({0.9, 0.9}, {1, 0}, 0.5);
        CHECK(*degenerate.sensitivity == doctest::Approx(1.0));
        CHECK(*degenerate.specificity == doctest::Approx(0.0));
        CHECK(*degenerate.f1 == doctest::Approx(0.0));
    }

    SUBCASE("empty denominators make components absent") {
        const auto no_pos = sens_spec_f1({0.6, 0.4}, {0, 0}, 0.5);
        CHECK_FALSE(no_pos.sensitivity.has_value());
        CHECK(no_pos.specificity.has_value());
        CHECK_FALSE(no_pos.f1.has_value());
    }

    SUBCASE("f1 lies between sen and spe, equals both when equal") {
        Rng rng(3);
        for (int trial = 0; trial < 100; ++trial) {
            const int len = rng.uniform_int(4, 20);
            std::vector<double> probs(len);
            std::vector<int> labels(len);
            for (int i = 0; i < len; ++i) {
                probs[i] = rng.uniform();
                labels[i] = rng.uniform() < 0.5 ? 1 : 0;
            }
            const auto m = sens_spec_f1(probs, labels);
            if (!m.f1 || *m.sensitivity <= 0.0 || *m.specificity <= 0.0) continue;
            CHECK(*m.f1 >= std::min(*m.sensitivity, *m.specificity) - 1e-12);
            CHECK(*m.f1 <= std::max(*m.sensitivity, *m.specificity) + 1e-12);
        }
        const auto equal = sens_spec_f1({0.9, 0.1, 0.9, 0.1}, {1, 1, 0, 0}, 0.5);
        CHECK(*equal.sensitivity == doctest::Approx(0.5));
        CHECK(*equal.specificity == doctest::Approx(0.5));
        CHECK(*equal.f1 == doctest::Approx(0.5));
    }
}

TEST_CASE("macro aggregation") {
    CHECK(*macro_aggregate({0.7}) == doctest::Approx(0.7));
    CHECK(*macro_aggregate({0.2, 0.4, 0.6}) == doctest::Approx(0.4).epsilon(1e-12));
    CHECK(*macro_aggregate({0.2, std::nullopt, 0.6}) == doctest::Approx(0.4).epsilon(1e-12));
    CHECK_FALSE(macro_aggregate({std::nullopt, std::nullopt}).has_value());
}

TEST_CASE("bootstrap confidence intervals") {
    SUBCASE("constant metric collapses to a zero-width interval") {
        const auto ci = bootstrap_ci(10, [](const std::vector<int>&) { return 0.75; }, 200, 0.95, 3);
        REQUIRE(ci.has_value());
        CHECK(ci->lower == doctest::Approx(0.75));
        CHECK(ci->upper == doctest::Approx(0.75));
        CHECK(ci->skipped_replicates == 0);
    }

    SUBCASE("deterministic given the seed") {
        auto metric = [](const std::vector<int>& idx) {
            double m = 0;
            for (int i : idx) m += i;
            return std::optional<double>(m / (10.0 * idx.size()));
        };
        const auto a = bootstrap_ci(10, metric, 300, 0.95, 42);
        const auto b = bootstrap_ci(10, metric, 300, 0.95, 42);
        CHECK(a->lower == b->lower);
        CHECK(a->upper == b->upper);
        const auto c = bootstrap_ci(10, metric, 300, 0.95, 43);
        CHECK((c->lower != a->lower || c->upper != a->upper));
    }

    SUBCASE("degenerate replicates are skipped and counted") {
        // a single positive among 6 cases: resamples often miss it
        std::vector<double> scores{0.9, 0.2, 0.3, 0.1, 0.4, 0.5};
        std::vector<int> labels{1, 0, 0, 0, 0, 0};
        const auto ci = bootstrap_ci(
            6,
            [&](const std::vector<int>& idx) {
                RankingInput r;
                for (int i : idx) {
                    r.scores.push_back(scores[i]);
                    r.labels.push_back(labels[i]);
                }
                return average_precision(r);
            },
            400, 0.95, 9);
        REQUIRE(ci.has_value());
        CHECK(ci->skipped_replicates > 0);
        CHECK(ci->lower >= 0.0);
        CHECK(ci->upper <= 1.0);
    }

    SUBCASE("interval contains the point estimate on a 50-case ranking") {
        Rng rng(11);
        std::vector<double> scores(50);
        std::vector<int> labels(50);
        for (int i = 0; i < 50; ++i) {
            labels[i] = i % 3 == 0 ? 1 : 0;
            scores[i] = labels[i] ? rng.uniform(0.3, 1.0) : rng.uniform(0.0, 0.7);
        }
        const double point = *average_precision({scores, labels});
        const auto ci = bootstrap_ci(
            50,
            [&](const std::vector<int>& idx) {
                RankingInput r;
                for (int i : idx) {
                    r.scores.push_back(scores[i]);
                    r.labels.push_back(labels[i]);
                }
                return average_precision(r);
            },
            2000, 0.95, 13);
        REQUIRE(ci.has_value());
        CHECK(ci->lower <= point);
        CHECK(ci->upper >= point);
    }

    SUBCASE("fewer than two cases yields no interval") {
        CHECK_FALSE(bootstrap_ci(1, [](const std::vector<int>&) { return 0.5; }, 10).has_value());
    }
}

TEST_CASE("full metric report") {
    const std::vector<std::string> categories{"a", "b"};

    SUBCASE("perfect model scores AP 1 everywhere") {
        std::vector<std::vector<double>> probs{{0.9, 0.1}, {0.8, 0.2}, {0.1, 0.9}, {0.2, 0.8}};
        std::vector<std::vector<int>> labels{{1, 0}, {1, 0}, {0, 1}, {0, 1}};
        const MetricReport r = compute_metric_report(probs, labels, categories);
        CHECK(*r.per_category[0].ap == doctest::Approx(1.0));
        CHECK(*r.per_category[1].ap == doctest::Approx(1.0));
        CHECK(*r.macro_ap == doctest::Approx(1.0));
        CHECK(*r.macro_auc == doctest::Approx(1.0));
    }

    SUBCASE("constant-probability model has AUC 0.5 per category") {
        std::vector<std::vector<double>> probs{{0.5, 0.5}, {0.5, 0.5}, {0.5, 0.5}};
        std::vector<std::vector<int>> labels{{1, 0}, {0, 1}, {1, 1}};
        const MetricReport r = compute_metric_report(probs, labels, categories);
        CHECK(*r.per_category[0].auc == doctest::Approx(0.5));
        CHECK(*r.per_category[1].auc == doctest::Approx(0.5));
    }

    SUBCASE("category absent from the split stays absent and is excluded from macro") {
        std::vector<std::vector<double>> probs{{0.9, 0.4}, {0.2, 0.6}};
        std::vector<std::vector<int>> labels{{1, 0}, {0, 0}};  // category b never positive
        const MetricReport r = compute_metric_report(probs, labels, categories);
        CHECK_FALSE(r.per_category[1].ap.has_value());
        CHECK(*r.macro_ap == doctest::Approx(*r.per_category[0].ap));
    }

    SUBCASE("micro aggregation pools cases and categories") {
        std::vector<std::vector<double>> probs{{0.9, 0.2}, {0.3, 0.8}, {0.6, 0.1}};
        std::vector<std::vector<int>> labels{{1, 0}, {0, 1}, {1, 0}};
        const MetricReport r =
            compute_metric_report(probs, labels, categories, 0.5, 0, 0.95, 0, true);
        REQUIRE(r.micro.has_value());
        // micro AP equals AP over the flattened pairs computed directly
        RankingInput pooled;
        for (int i = 0; i < 3; ++i)
            for (int c = 0; c < 2; ++c) {
                pooled.scores.push_back(probs[i][c]);
                pooled.labels.push_back(labels[i][c]);
            }
        CHECK(*r.micro->ap == doctest::Approx(*average_precision(pooled)).epsilon(1e-15));
        CHECK(*r.micro->auc == doctest::Approx(*auc_roc(pooled)).epsilon(1e-15));
        // without the flag the field stays absent
        const MetricReport plain = compute_metric_report(probs, labels, categories);
        CHECK_FALSE(plain.micro.has_value());
    }

    SUBCASE("bootstrap intervals attach to AP and bracket it") {
        Rng rng(5);
        std::vector<std::vector<double>> probs;
        std::vector<std::vector<int>> labels;
        for (int i = 0; i < 40; ++i) {
            const int y0 = i % 2, y1 = (i / 2) % 2;
            labels.push_back({y0, y1});
            probs.push_back({y0 ? rng.uniform(0.4, 1.0) : rng.uniform(0.0, 0.6),
                             y1 ? rng.uniform(0.4, 1.0) : rng.uniform(0.0, 0.6)});
        }
        const MetricReport r = compute_metric_report(probs, labels, categories, 0.5, 500, 0.95, 3);
        REQUIRE(r.per_category[0].ap_ci.has_value());
        CHECK(r.per_category[0].ap_ci->lower <= *r.per_category[0].ap);
        CHECK(r.per_category[0].ap_ci->upper >= *r.per_category[0].ap);
        REQUIRE(r.macro_ap_ci.has_value());
        CHECK(r.macro_ap_ci->lower <= *r.macro_ap);
        CHECK(r.macro_ap_ci->upper >= *r.macro_ap);
    }
}
