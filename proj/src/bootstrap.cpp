#include "tiltsens/bootstrap.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "tiltsens/errors.hpp"
#include "tiltsens/parallel.hpp"
#include "tiltsens/rng.hpp"
#include "tiltsens/stats.hpp"

namespace tiltsens {

CiSpec::Method ci_method_from_string(const std::string& s) {
    if (s == "normal") return CiSpec::Method::normal;
    if (s == "percentile") return CiSpec::Method::percentile;
    if (s == "double_symmetric_t") return CiSpec::Method::double_symmetric_t;
    throw ConfigError("unknown CI method: " + s);
}

std::string ci_method_to_string(CiSpec::Method m) {
    switch (m) {
    case CiSpec::Method::normal: return "normal";
    case CiSpec::Method::percentile: return "percentile";
    case CiSpec::Method::double_symmetric_t: return "double_symmetric_t";
    }
    return "?";
}

namespace {

// (B+1)p order-statistic convention for bootstrap quantiles of the studentized
// statistics; the plain type-7 sample quantile is mean-biased low in the upper
// tail at these resample counts, which costs the calibrated interval coverage.
double bootstrap_quantile_sorted(const std::vector<double>& sorted, double p) {
    double h = (static_cast<double>(sorted.size()) + 1.0) * p;
    double fl = std::floor(h);
    if (fl < 1.0) return sorted.front();
    if (fl >= static_cast<double>(sorted.size())) return sorted.back();
    std::size_t lo = static_cast<std::size_t>(fl) - 1;
    return sorted[lo] + (h - fl) * (sorted[lo + 1] - sorted[lo]);
}

} // namespace

Dataset resample(const Dataset& ds, std::uint64_t seed) {
    auto eng = make_engine(derive_seed(seed, 0xB007u));
    std::uniform_int_distribution<std::size_t> pick(0, ds.n() - 1);
    std::vector<std::size_t> idx(ds.n());
    for (auto& i : idx) i = pick(eng);
    return ds.subset(idx);
}

Interval normal_ci(double est, double se, double level) {
    if (se < 0.0) throw ValidationError("normal_ci: se must be >= 0");
    if (!(level > 0.0 && level < 1.0)) throw ValidationError("normal_ci: level must be in (0,1)");
    if (se == 0.0) return {est, est};
    double z = normal_quantile(0.5 * (1.0 + level));
    return {est - z * se, est + z * se};
}

Interval percentile_ci(std::span<const double> replicates, double level, int* dropped) {
    if (!(level > 0.0 && level < 1.0))
        throw ValidationError("percentile_ci: level must be in (0,1)");
    std::vector<double> reps;
    reps.reserve(replicates.size());
    int nan_count = 0;
    for (double r : replicates) {
        if (std::isnan(r))
            ++nan_count;
        else
            reps.push_back(r);
    }
    if (dropped) *dropped = nan_count;
    if (reps.size() < 2)
        throw ValidationError("percentile_ci: need at least 2 finite replicates");
    std::sort(reps.begin(), reps.end());
    return {quantile_type7_sorted(reps, 0.5 * (1.0 - level)),
            quantile_type7_sorted(reps, 0.5 * (1.0 + level))};
}

std::vector<Interval> double_bootstrap_ci_multi(const Dataset& ds, const MultiEstimatorFn& fn,
                                                const CiSpec& spec, int threads) {
    if (spec.method != CiSpec::Method::double_symmetric_t)
        throw ConfigError("double_bootstrap_ci: method must be double_symmetric_t");
    if (spec.B1 < 2 || spec.B2 < 2)
        throw ConfigError("double_bootstrap_ci: B1 and B2 must be >= 2");

    MultiEst base = fn(ds, derive_seed(spec.seed, 0, 0));
    const std::size_t Q = base.est.size();
    const std::size_t B1 = static_cast<std::size_t>(spec.B1);
    const std::size_t B2 = static_cast<std::size_t>(spec.B2);

    // Degenerate data (zero spread everywhere) calibrates to a point interval.
    bool all_degenerate = true;
    for (std::size_t q = 0; q < Q; ++q)
        if (base.se[q] > 0.0) all_degenerate = false;
    if (all_degenerate) {
        std::vector<Interval> out(Q);
        for (std::size_t q = 0; q < Q; ++q) out[q] = {base.est[q], base.est[q]};
        return out;
    }

    // outer_t[q][b]; inner_t[b] holds per-quantity sorted |t**| samples
    std::vector<std::vector<double>> outer_t(Q, std::vector<double>(B1, 0.0));
    std::vector<std::vector<std::vector<double>>> inner_t(B1);
    std::vector<char> outer_ok(B1, 1);

    parallel_for(B1, threads, [&](std::size_t b) {
        Dataset dsb = resample(ds, derive_seed(spec.seed, b + 1, 0));
        MultiEst rb = fn(dsb, derive_seed(spec.seed, b + 1, 1));
        std::vector<std::vector<double>> tt(Q);
        std::size_t inner_drops = 0;
        for (std::size_t c = 0; c < B2; ++c) {
            Dataset dsc = resample(dsb, derive_seed(spec.seed, b + 1, c + 2));
            MultiEst rc = fn(dsc, derive_seed(spec.seed, b + 1, c + 2, 7));
            bool ok = true;
            for (std::size_t q = 0; q < Q; ++q)
                if (!(rc.se[q] > 0.0) || !std::isfinite(rc.se[q]) || !std::isfinite(rc.est[q]))
                    ok = false;
            if (!ok) {
                ++inner_drops;
                continue;
            }
            for (std::size_t q = 0; q < Q; ++q)
                tt[q].push_back(std::abs(rc.est[q] - rb.est[q]) / rc.se[q]);
        }
        bool ok = inner_drops <= B2 / 5;
        for (std::size_t q = 0; q < Q; ++q) {
            if (!(rb.se[q] > 0.0) || !std::isfinite(rb.se[q]) || !std::isfinite(rb.est[q]))
                ok = false;
        }
        if (ok) {
            for (std::size_t q = 0; q < Q; ++q) {
                outer_t[q][b] = std::abs(rb.est[q] - base.est[q]) / rb.se[q];
                std::sort(tt[q].begin(), tt[q].end());
            }
            inner_t[b] = std::move(tt);
        } else {
            outer_ok[b] = 0;
        }
    });

    std::vector<std::size_t> kept;
    for (std::size_t b = 0; b < B1; ++b)
        if (outer_ok[b]) kept.push_back(b);
    if (kept.size() < B1 - B1 / 5 || kept.size() < 2)
        throw NumericError("double bootstrap calibration failure: more than 20% of outer "
                           "replicates dropped (degenerate resample SEs)");

    // Calibration: nominal inner levels on a grid, linear interpolation of the
    // achieved outer coverage.
    std::vector<double> grid;
    for (double lam = 0.80; lam < 0.9951; lam += 0.005) grid.push_back(lam);

    std::vector<Interval> out(Q);
    for (std::size_t q = 0; q < Q; ++q) {
        if (!(base.se[q] > 0.0)) {
            out[q] = {base.est[q], base.est[q]};
            continue;
        }
        std::vector<double> coverage(grid.size(), 0.0);
        for (std::size_t g = 0; g < grid.size(); ++g) {
            std::size_t covered = 0;
            for (std::size_t b : kept) {
                if (inner_t[b][q].empty()) continue;
                double qb = quantile_type7_sorted(inner_t[b][q], grid[g]);
                if (outer_t[q][b] <= qb) ++covered;
            }
            coverage[g] = static_cast<double>(covered) / static_cast<double>(kept.size());
        }
        double lam_star = grid.back();
        if (coverage.front() >= spec.level) {
            lam_star = grid.front();
        } else {
            for (std::size_t g = 1; g < grid.size(); ++g) {
                if (coverage[g] >= spec.level) {
                    double c0 = coverage[g - 1], c1 = coverage[g];
                    double w = c1 > c0 ? (spec.level - c0) / (c1 - c0) : 1.0;
                    lam_star = grid[g - 1] + w * (grid[g] - grid[g - 1]);
                    break;
                }
            }
        }
        std::vector<double> ot;
        ot.reserve(kept.size());
        for (std::size_t b : kept) ot.push_back(outer_t[q][b]);
        std::sort(ot.begin(), ot.end());
        double t_cal = bootstrap_quantile_sorted(ot, lam_star);
        out[q] = {base.est[q] - t_cal * base.se[q], base.est[q] + t_cal * base.se[q]};
    }
    return out;
}

Interval double_bootstrap_ci(const Dataset& ds, const EstimatorFn& fn, const CiSpec& spec,
                             int threads) {
    MultiEstimatorFn multi = [&fn](const Dataset& d, std::uint64_t seed) {
        EstWithSe r = fn(d, seed);
        return MultiEst{{r.est}, {r.se}};
    };
    return double_bootstrap_ci_multi(ds, multi, spec, threads)[0];
}

} // namespace tiltsens
