#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tiltsens/bootstrap.hpp"
#include "tiltsens/dataset.hpp"
#include "tiltsens/outcome_cdf.hpp"
#include "tiltsens/propensity.hpp"
#include "tiltsens/tilting.hpp"

namespace tiltsens {

// The nuisance surface the functional consumes: pi_t(x) and the three tilted
// conditional moments. Concrete fits and exact-law test oracles both satisfy it.
class NuisanceModel {
public:
    virtual ~NuisanceModel() = default;
    virtual double pi(int t, std::span<const double> x) const = 0;
    virtual TiltedMoments tilted_moments(int t, const TiltSpec& spec,
                                         std::span<const double> x) const = 0;
};

// Propensity fit plus per-arm outcome fits trained on the same rows.
class NuisanceBundle : public NuisanceModel {
public:
    NuisanceBundle(PropensityFit propensity, OutcomeFit outcome0, OutcomeFit outcome1);

    double pi(int t, std::span<const double> x) const override;
    TiltedMoments tilted_moments(int t, const TiltSpec& spec,
                                 std::span<const double> x) const override;

    const PropensityFit& propensity() const { return propensity_; }
    const OutcomeFit& outcome(int t) const { return t == 1 ? outcome1_ : outcome0_; }

private:
    PropensityFit propensity_;
    OutcomeFit outcome0_;
    OutcomeFit outcome1_;
};

// Plug-in value of the identification functional over the empirical covariate
// law of xs.
double psi_plugin(const NuisanceModel& nm, const TiltSpec& spec, int t, const Dataset& xs);

// Efficient influence function at one observation.
double eif(const NuisanceModel& nm, const TiltSpec& spec, int t, std::span<const double> x,
           int t_obs, double y, double psi);
double eif(const NuisanceModel& nm, const TiltSpec& spec, int t, const ObservationRecord& o,
           double psi);

// One-step corrected estimator: plug-in over eval covariates plus the mean EIF.
double onestep(const NuisanceModel& nm, const TiltSpec& spec, int t, const Dataset& eval);

// Nonnegative root of sum_i min{v_i^2, tau^2}/tau^2 = log(n); +inf when no
// finite root exists (no truncation), 0 when all values are zero.
double huber_threshold(std::span<const double> values);

struct FoldDiag {
    int fold = 0;
    std::array<double, 2> psi_k = {0, 0};
    std::array<double, 2> tau = {0, 0};
    std::array<int, 2> truncated = {0, 0};
    double clip_rate = 0.0;
    std::array<double, 2> h_stage1 = {0, 0};
};

struct EstimateReport {
    std::array<double, 2> psi_tilde = {0, 0};
    double ace = 0.0;
    std::array<double, 2> se_psi = {0, 0};
    double se_ace = 0.0;
    // method name -> interval, per quantity
    std::array<std::map<std::string, Interval>, 2> ci_psi;
    std::map<std::string, Interval> ci_ace;
    std::vector<FoldDiag> per_fold;
    TiltSpec spec1, spec0;
    double clip_rate = 0.0;
    bool clip_warning = false;
    long cdf_fallbacks = 0;
};

struct CrossfitOptions {
    PropensityConfig propensity;
    SingleIndexConfig outcome;
    bool huberize = true;
    std::uint64_t seed = 1;
    int threads = 0;
    std::optional<CiSpec> ci;            // bootstrap CI request; normal is always reported
    double level = 0.95;                 // level of the always-on normal CI
    double clip_warn_threshold = 0.10;
};

// Nuisance fits per fold, trained on each fold's complement.
struct FoldFits {
    SplitPlan plan;
    std::vector<std::shared_ptr<const NuisanceBundle>> bundles; // [k-1] for fold k
};

FoldFits fit_folds(const Dataset& ds, const SplitPlan& plan, const CrossfitOptions& opts);

// Cross-fit evaluation under existing fold fits (no bootstrap).
EstimateReport evaluate_crossfit(const Dataset& ds, const FoldFits& fits, const TiltSpec& spec1,
                                 const TiltSpec& spec0, const CrossfitOptions& opts);

struct ArmEstimate {
    double psi = 0.0;
    double se = 0.0;
};

// Single-arm cross-fit evaluation under existing fold fits.
ArmEstimate evaluate_crossfit_arm(const Dataset& ds, const FoldFits& fits, const TiltSpec& spec,
                                  int t, const CrossfitOptions& opts);

EstimateReport crossfit_estimate(const Dataset& ds, const SplitPlan& plan, const TiltSpec& spec1,
                                 const TiltSpec& spec0, const CrossfitOptions& opts);

// Asymptotic variance estimate (1/n) sum_k sum_{i in fold k} phi_i^2 from
// per-fold influence values; the standard error of the estimator is
// sqrt(variance / n).
double variance_psi(const std::vector<std::vector<double>>& eif_values_per_fold);

// Empirical second-order remainder of the von Mises expansion between a
// perturbed nuisance surface and a reference one, averaged over xs.
double remainder(const NuisanceModel& nm_tilde, const NuisanceModel& nm_true,
                 const TiltSpec& spec, int t, const Dataset& xs);

// Implied counterfactual mean E[Y(t) | T=1-t] backed out of psi_hat.
double induced_mean(double psi_hat, const Dataset& ds, int t);

struct GridCell {
    double gamma1 = 0.0, gamma0 = 0.0;
    double psi1 = 0.0, psi0 = 0.0, ace = 0.0, se_ace = 0.0;
    std::string ci_method = "normal";
    Interval ci;
    std::string classification = "indeterminate";
    bool failed = false;
    std::string error;
};

struct GridReport {
    std::vector<double> gamma1_grid, gamma0_grid;
    std::vector<GridCell> cells; // row-major over gamma1 x gamma0
    int n_failed = 0;
};

GridReport sensitivity_grid(const Dataset& ds, const SplitPlan& plan,
                            std::span<const double> gamma1_grid,
                            std::span<const double> gamma0_grid, const TiltFunction& s1,
                            const TiltFunction& s0, const CrossfitOptions& opts);

void write_grid_csv(const GridReport& report, const std::string& path);

} // namespace tiltsens
