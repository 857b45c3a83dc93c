#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tiltsens/dataset.hpp"
#include "tiltsens/estimator.hpp"

namespace tiltsens {

// Two-sample Kolmogorov-Smirnov statistic: sup over the pooled points of the
// ECDF gap.
double ks_statistic(std::span<const double> a, std::span<const double> b);

// Draw n observations from the fitted semiparametric law: X from the empirical
// law of xs, T ~ Bernoulli(pi1(X)), Y by inverse-CDF sampling from the fitted
// conditional CDF of the drawn arm.
Dataset generate_semiparametric(const NuisanceBundle& nb, const Dataset& xs, std::size_t n,
                                std::uint64_t seed);

// Predicate over one named covariate: interval [lo, hi] for numeric columns or
// an exact level for indicators.
struct SubgroupSpec {
    std::string name;
    std::string covariate;
    std::optional<double> lo, hi;
    std::optional<double> equals;

    bool matches(const Dataset& ds, std::size_t row) const;
};

struct GofRow {
    std::string subgroup;
    bool treat_evaluable = false;
    double treat_abs_diff = 0.0; // |treated fraction difference|, observed vs synthetic
    bool y_evaluable[2] = {false, false};
    double ks_y[2] = {0.0, 0.0}; // per-arm outcome KS, observed vs synthetic
};

struct GofReport {
    std::string note;
    std::vector<GofRow> rows;
};

// Subgroup KS table between an observed dataset and any synthetic comparator.
std::vector<GofRow> gof_rows(const Dataset& observed, const Dataset& synthetic,
                             std::span<const SubgroupSpec> subgroups);

GofReport gof_report(const Dataset& ds, const NuisanceBundle& nb,
                     std::span<const SubgroupSpec> subgroups, std::size_t n_synth,
                     std::uint64_t seed);

void write_gof_csv(const GofReport& report, const std::string& path);

// Parametric comparator: logistic regression for T, per-arm normal linear
// models for Y.
struct ParametricBaseline {
    double logit_intercept = 0.0;
    std::vector<double> logit_coef;
    struct ArmModel {
        double intercept = 0.0;
        std::vector<double> coef;
        double sigma = 1.0;
    };
    ArmModel arm[2];
};

ParametricBaseline fit_parametric_baseline(const Dataset& ds);
Dataset generate_parametric(const ParametricBaseline& pb, const Dataset& xs, std::size_t n,
                            std::uint64_t seed);

} // namespace tiltsens
