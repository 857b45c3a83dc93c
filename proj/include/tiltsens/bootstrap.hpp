#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "tiltsens/dataset.hpp"

namespace tiltsens {

struct Interval {
    double lo = 0.0;
    double hi = 0.0;
};

struct CiSpec {
    enum class Method { normal, percentile, double_symmetric_t };
    Method method = Method::normal;
    double level = 0.95;
    int B1 = 250;
    int B2 = 250;
    std::uint64_t seed = 0;
};

CiSpec::Method ci_method_from_string(const std::string& s);
std::string ci_method_to_string(CiSpec::Method m);

// n draws with replacement; deterministic under seed.
Dataset resample(const Dataset& ds, std::uint64_t seed);

Interval normal_ci(double est, double se, double level);

// Type-7 empirical quantiles at (1 +/- level)/2; NaN replicates are excluded
// and counted in *dropped when provided.
Interval percentile_ci(std::span<const double> replicates, double level,
                       int* dropped = nullptr);

struct EstWithSe {
    double est = 0.0;
    double se = 0.0;
};

struct MultiEst {
    std::vector<double> est;
    std::vector<double> se;
};

// Estimators receive the resampled data and a derived seed for any internal
// randomness (fold plans are regenerated from it inside each resample).
using EstimatorFn = std::function<EstWithSe(const Dataset&, std::uint64_t seed)>;
using MultiEstimatorFn = std::function<MultiEst(const Dataset&, std::uint64_t seed)>;

// Symmetric-t percentile interval calibrated by a nested resampling level.
Interval double_bootstrap_ci(const Dataset& ds, const EstimatorFn& fn, const CiSpec& spec,
                             int threads = 0);

// Same scheme, calibrating every quantity from one resampling tree.
std::vector<Interval> double_bootstrap_ci_multi(const Dataset& ds, const MultiEstimatorFn& fn,
                                                const CiSpec& spec, int threads = 0);

} // namespace tiltsens
