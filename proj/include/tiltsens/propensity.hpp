#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "tiltsens/dataset.hpp"

namespace tiltsens {

struct PropensityConfig {
    int knots = 10;                 // interior knots per numeric covariate
    std::vector<double> penalty_grid = {1e-3, 1e-2, 1e-1, 1.0, 1e1, 1e2, 1e3};
    int cv_folds = 5;               // V for the smoothing-parameter search
    double clip_epsilon = 0.01;     // predictions clipped to [eps, 1-eps]
    int max_iter = 100;
    double tol = 1e-8;              // max coefficient change
    std::uint64_t seed = 0;
};

// Additive logistic model: intercept + cubic B-spline smooths for numeric
// covariates (second-difference penalty) + unpenalized linear terms for
// indicators. Immutable after fitting; predictions are clipped.
class PropensityFit {
public:
    struct Term {
        bool spline = false;
        std::size_t covariate = 0;
        std::vector<double> knots;   // full clamped knot vector (spline terms)
        std::vector<double> centers; // column means absorbed into the intercept
        std::vector<double> coef;
        double lambda = 0.0;
        double xmin = 0.0, xmax = 0.0;
    };

    PropensityFit() = default;
    PropensityFit(double intercept, std::vector<Term> terms, double clip_epsilon,
                  double train_clip_rate, std::size_t dim);

    // P(T=t | X=x), clipped to [eps, 1-eps]; the two arms sum to one exactly.
    double predict(std::span<const double> x, int t) const;
    double linear_predictor(std::span<const double> x) const;

    double epsilon() const { return eps_; }
    double train_clip_rate() const { return train_clip_rate_; }
    double intercept() const { return intercept_; }
    const std::vector<Term>& terms() const { return terms_; }
    std::size_t dim() const { return dim_; }

private:
    double intercept_ = 0.0;
    std::vector<Term> terms_;
    double eps_ = 0.01;
    double train_clip_rate_ = 0.0;
    std::size_t dim_ = 0;
};

PropensityFit fit_propensity(const Dataset& train, const PropensityConfig& cfg = {});

// Cubic B-spline basis values at x for a full clamped knot vector; x outside
// the boundary knots is evaluated at the boundary.
void cubic_bspline_basis(const std::vector<double>& knots, double x, std::vector<double>& out);

} // namespace tiltsens
