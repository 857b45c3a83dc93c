#include "tiltsens/estimator.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

#include "tiltsens/csv.hpp"
#include "tiltsens/errors.hpp"
#include "tiltsens/parallel.hpp"
#include "tiltsens/rng.hpp"
#include "tiltsens/stats.hpp"

namespace tiltsens {

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();
}

NuisanceBundle::NuisanceBundle(PropensityFit propensity, OutcomeFit outcome0,
                               OutcomeFit outcome1)
    : propensity_(std::move(propensity)), outcome0_(std::move(outcome0)),
      outcome1_(std::move(outcome1)) {
    if (outcome0_.arm() != 0 || outcome1_.arm() != 1)
        throw ValidationError("NuisanceBundle: outcome fits must be arms 0 and 1");
}

double NuisanceBundle::pi(int t, std::span<const double> x) const {
    return propensity_.predict(x, t);
}

TiltedMoments NuisanceBundle::tilted_moments(int t, const TiltSpec& spec,
                                             std::span<const double> x) const {
    return outcome(t).tilted_moments(spec, x);
}

// ---------------------------------------------------------------------------
// Functional, EIF, one-step
// ---------------------------------------------------------------------------

namespace {

// Integrand of the identification functional at one covariate value.
double plugin_term(const NuisanceModel& nm, const TiltSpec& spec, int t,
                   std::span<const double> x) {
    double pi_t = nm.pi(t, x);
    double pi_o = nm.pi(1 - t, x);
    TiltedMoments m = nm.tilted_moments(t, spec, x);
    return m.mean_y * pi_t + (m.mean_y_tilt / m.mgf) * pi_o;
}

// nu_t(P)(O) = phi_t(P)(O) + psi_t(P); the uncentered influence kernel.
double nu_value(const NuisanceModel& nm, const TiltSpec& spec, int t, std::span<const double> x,
                int t_obs, double y) {
    TiltedMoments m = nm.tilted_moments(t, spec, x);
    if (t_obs == t) {
        double pi_t = nm.pi(t, x);
        double pi_o = nm.pi(1 - t, x);
        if (!(pi_t > 0.0)) throw NumericError("nu: pi_t(x) not positive (clipping missing?)");
        double ratio = pi_o / pi_t;
        double e = exp_tilt(spec, y);
        return y + y * ratio * e / m.mgf - ratio * e * m.mean_y_tilt / (m.mgf * m.mgf);
    }
    return m.mean_y_tilt / m.mgf;
}

} // namespace

double psi_plugin(const NuisanceModel& nm, const TiltSpec& spec, int t, const Dataset& xs) {
    if (xs.n() == 0) throw ValidationError("psi_plugin: empty covariate sample");
    double acc = 0.0;
    for (std::size_t i = 0; i < xs.n(); ++i) acc += plugin_term(nm, spec, t, xs.x(i));
    return acc / static_cast<double>(xs.n());
}

double eif(const NuisanceModel& nm, const TiltSpec& spec, int t, std::span<const double> x,
           int t_obs, double y, double psi) {
    double v = nu_value(nm, spec, t, x, t_obs, y) - psi;
    if (!std::isfinite(v)) throw NumericError("eif: non-finite influence value");
    return v;
}

double eif(const NuisanceModel& nm, const TiltSpec& spec, int t, const ObservationRecord& o,
           double psi) {
    return eif(nm, spec, t, o.x, o.t, o.y, psi);
}

double onestep(const NuisanceModel& nm, const TiltSpec& spec, int t, const Dataset& eval) {
    if (eval.n() == 0) throw ValidationError("onestep: empty evaluation set");
    double acc = 0.0;
    for (std::size_t i = 0; i < eval.n(); ++i)
        acc += nu_value(nm, spec, t, eval.x(i), eval.t(i), eval.y(i));
    double v = acc / static_cast<double>(eval.n());
    if (!std::isfinite(v)) throw NumericError("onestep: non-finite estimate");
    return v;
}

// ---------------------------------------------------------------------------
// Huberization
// ---------------------------------------------------------------------------

double huber_threshold(std::span<const double> values) {
    if (values.size() < 2)
        throw ValidationError("huber_threshold: need at least 2 values");
    const double L = std::log(static_cast<double>(values.size()));
    double S = 0.0, M = 0.0, min_nz = kInf;
    std::size_t cnt = 0;
    for (double v : values) {
        double a = std::abs(v);
        S += v * v;
        M = std::max(M, a);
        if (a > 0.0) {
            ++cnt;
            min_nz = std::min(min_nz, a);
        }
    }
    if (M == 0.0) return 0.0; // truncation inert
    // Root at or above max|v|: no value is truncated and the closed form holds.
    if (S / (M * M) >= L) return std::sqrt(S / L);
    // No crossing at all: too few nonzero values to reach log(n).
    if (static_cast<double>(cnt) <= L) return kInf;

    auto f = [&](double tau) {
        double t2 = tau * tau;
        double acc = 0.0;
        for (double v : values) acc += std::min(v * v, t2);
        return acc / t2 - L;
    };
    double lo = min_nz, hi = M; // f(lo) = cnt - L > 0, f(hi) < 0
    while (hi - lo > 1e-12 * hi) {
        double mid = 0.5 * (lo + hi);
        (f(mid) > 0.0 ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
}

// ---------------------------------------------------------------------------
// Cross-fitting
// ---------------------------------------------------------------------------

FoldFits fit_folds(const Dataset& ds, const SplitPlan& plan, const CrossfitOptions& opts) {
    if (plan.assignment.size() != ds.n())
        throw ValidationError("fit_folds: split plan does not match dataset");
    FoldFits fits;
    fits.plan = plan;
    fits.bundles.resize(static_cast<std::size_t>(plan.K));
    parallel_for(static_cast<std::size_t>(plan.K), opts.threads, [&](std::size_t k0) {
        int k = static_cast<int>(k0) + 1;
        try {
            auto rows = plan.complement_rows(k);
            Dataset train = ds.subset(rows);
            PropensityConfig pcfg = opts.propensity;
            pcfg.seed = derive_seed(opts.seed, static_cast<std::uint64_t>(k), 1);
            PropensityFit pf = fit_propensity(train, pcfg);

            SingleIndexConfig scfg = opts.outcome;
            scfg.seed = derive_seed(opts.seed, static_cast<std::uint64_t>(k), 2);
            Dataset train0 = train.subset(train.arm_indices(0));
            Dataset train1 = train.subset(train.arm_indices(1));
            OutcomeFit f0 = fit_single_index(train0, scfg);
            scfg.seed = derive_seed(opts.seed, static_cast<std::uint64_t>(k), 3);
            OutcomeFit f1 = fit_single_index(train1, scfg);
            fits.bundles[k0] = std::make_shared<NuisanceBundle>(
                std::move(pf), std::move(f0), std::move(f1));
        } catch (const std::exception& e) {
            throw NumericError("fold " + std::to_string(k) + " nuisance fit failed: " + e.what());
        }
    });
    return fits;
}

namespace {

struct ArmFoldEval {
    double plugin = 0.0;
    double psi_k = 0.0;
    double tau = kInf;
    int truncated = 0;
    std::vector<double> phi; // aligned with fold rows
};

ArmFoldEval eval_arm_fold(const Dataset& ds, std::span<const std::size_t> rows,
                          const NuisanceModel& nm, const TiltSpec& spec, int t, bool huberize) {
    ArmFoldEval ev;
    const std::size_t nk = rows.size();
    std::vector<double> nu(nk);
    double plug_acc = 0.0;
    for (std::size_t r = 0; r < nk; ++r) {
        std::size_t i = rows[r];
        auto x = ds.x(i);
        plug_acc += plugin_term(nm, spec, t, x);
        nu[r] = nu_value(nm, spec, t, x, ds.t(i), ds.y(i));
        if (!std::isfinite(nu[r]))
            throw NumericError("crossfit: non-finite influence value in fold evaluation");
    }
    ev.plugin = plug_acc / static_cast<double>(nk);
    ev.tau = huberize ? huber_threshold(nu) : kInf;
    double acc = 0.0;
    for (double v : nu) {
        double tv = std::min(std::abs(v), ev.tau);
        if (tv < std::abs(v)) ++ev.truncated;
        acc += std::copysign(tv, v);
    }
    ev.psi_k = acc / static_cast<double>(nk);
    ev.phi.resize(nk);
    for (std::size_t r = 0; r < nk; ++r) ev.phi[r] = nu[r] - ev.plugin;
    return ev;
}

} // namespace

double variance_psi(const std::vector<std::vector<double>>& eif_values_per_fold) {
    std::size_t n = 0;
    double acc = 0.0;
    for (const auto& fold : eif_values_per_fold) {
        n += fold.size();
        for (double v : fold) acc += v * v;
    }
    if (n == 0) throw ValidationError("variance_psi: no influence values");
    return acc / static_cast<double>(n);
}

EstimateReport evaluate_crossfit(const Dataset& ds, const FoldFits& fits, const TiltSpec& spec1,
                                 const TiltSpec& spec0, const CrossfitOptions& opts) {
    const SplitPlan& plan = fits.plan;
    const int K = plan.K;
    EstimateReport rep;
    rep.spec1 = spec1;
    rep.spec0 = spec0;

    struct FoldOut {
        ArmFoldEval arm[2];
        double clip_rate = 0.0;
        std::size_t nk = 0;
    };
    std::vector<FoldOut> outs(static_cast<std::size_t>(K));

    parallel_for(static_cast<std::size_t>(K), opts.threads, [&](std::size_t k0) {
        int k = static_cast<int>(k0) + 1;
        auto rows = plan.fold_rows(k);
        const NuisanceBundle& nb = *fits.bundles[k0];
        FoldOut& out = outs[k0];
        out.nk = rows.size();
        out.arm[1] = eval_arm_fold(ds, rows, nb, spec1, 1, opts.huberize);
        out.arm[0] = eval_arm_fold(ds, rows, nb, spec0, 0, opts.huberize);
        std::size_t clipped = 0;
        double eps = nb.propensity().epsilon();
        for (std::size_t i : rows) {
            double p1 = nb.pi(1, ds.x(i));
            if (p1 <= eps || p1 >= 1.0 - eps) ++clipped;
        }
        out.clip_rate = rows.empty() ? 0.0 : double(clipped) / double(rows.size());
    });

    std::vector<std::vector<double>> phi1, phi0, phid;
    double clip_acc = 0.0;
    std::size_t n_total = 0;
    for (int k = 0; k < K; ++k) {
        const FoldOut& out = outs[static_cast<std::size_t>(k)];
        FoldDiag diag;
        diag.fold = k + 1;
        for (int t = 0; t < 2; ++t) {
            diag.psi_k[static_cast<std::size_t>(t)] = out.arm[t].psi_k;
            diag.tau[static_cast<std::size_t>(t)] = out.arm[t].tau;
            diag.truncated[static_cast<std::size_t>(t)] = out.arm[t].truncated;
            diag.h_stage1[static_cast<std::size_t>(t)] =
                fits.bundles[static_cast<std::size_t>(k)]->outcome(t).h_stage1();
        }
        diag.clip_rate = out.clip_rate;
        rep.per_fold.push_back(diag);

        rep.psi_tilde[1] += out.arm[1].psi_k / K;
        rep.psi_tilde[0] += out.arm[0].psi_k / K;
        phi1.push_back(out.arm[1].phi);
        phi0.push_back(out.arm[0].phi);
        std::vector<double> d(out.arm[1].phi.size());
        for (std::size_t r = 0; r < d.size(); ++r)
            d[r] = out.arm[1].phi[r] - out.arm[0].phi[r];
        phid.push_back(std::move(d));
        clip_acc += out.clip_rate * static_cast<double>(out.nk);
        n_total += out.nk;
        rep.cdf_fallbacks += fits.bundles[static_cast<std::size_t>(k)]->outcome(0).fallback_count() +
                             fits.bundles[static_cast<std::size_t>(k)]->outcome(1).fallback_count();
    }
    rep.ace = rep.psi_tilde[1] - rep.psi_tilde[0];
    double n = static_cast<double>(n_total);
    rep.se_psi[1] = std::sqrt(variance_psi(phi1) / n);
    rep.se_psi[0] = std::sqrt(variance_psi(phi0) / n);
    rep.se_ace = std::sqrt(variance_psi(phid) / n);
    rep.clip_rate = clip_acc / n;
    rep.clip_warning = rep.clip_rate > opts.clip_warn_threshold;

    for (int t = 0; t < 2; ++t)
        rep.ci_psi[static_cast<std::size_t>(t)]["normal"] =
            normal_ci(rep.psi_tilde[static_cast<std::size_t>(t)],
                      rep.se_psi[static_cast<std::size_t>(t)], opts.level);
    rep.ci_ace["normal"] = normal_ci(rep.ace, rep.se_ace, opts.level);
    return rep;
}

ArmEstimate evaluate_crossfit_arm(const Dataset& ds, const FoldFits& fits, const TiltSpec& spec,
                                  int t, const CrossfitOptions& opts) {
    const SplitPlan& plan = fits.plan;
    ArmEstimate out;
    std::vector<std::vector<double>> phis;
    std::size_t n_total = 0;
    for (int k = 1; k <= plan.K; ++k) {
        auto rows = plan.fold_rows(k);
        ArmFoldEval ev = eval_arm_fold(ds, rows, *fits.bundles[static_cast<std::size_t>(k - 1)],
                                       spec, t, opts.huberize);
        out.psi += ev.psi_k / plan.K;
        n_total += rows.size();
        phis.push_back(std::move(ev.phi));
    }
    out.se = std::sqrt(variance_psi(phis) / static_cast<double>(n_total));
    return out;
}

namespace {

// One full refit-and-evaluate pass on bootstrap data, reporting
// (psi1, psi0, ace) with their influence-function SEs.
MultiEst bootstrap_point(const Dataset& d, std::uint64_t seed, int K, const TiltSpec& spec1,
                         const TiltSpec& spec0, const CrossfitOptions& base_opts) {
    CrossfitOptions o = base_opts;
    o.ci.reset();
    o.seed = derive_seed(seed, 0xE57u);
    o.threads = 1;
    SplitPlan plan = make_folds(d, K, derive_seed(seed, 0xF01Du));
    FoldFits fits = fit_folds(d, plan, o);
    EstimateReport r = evaluate_crossfit(d, fits, spec1, spec0, o);
    return MultiEst{{r.psi_tilde[1], r.psi_tilde[0], r.ace},
                    {r.se_psi[1], r.se_psi[0], r.se_ace}};
}

void attach_bootstrap_cis(const Dataset& ds, int K, const TiltSpec& spec1, const TiltSpec& spec0,
                          const CrossfitOptions& opts, EstimateReport& rep) {
    if (!opts.ci) return;
    const CiSpec& ci = *opts.ci;
    if (ci.method == CiSpec::Method::normal) return; // already reported

    if (ci.method == CiSpec::Method::percentile) {
        std::size_t B = static_cast<std::size_t>(ci.B1);
        std::vector<std::array<double, 3>> reps(B, {std::nan(""), std::nan(""), std::nan("")});
        parallel_for(B, opts.threads, [&](std::size_t b) {
            try {
                Dataset rs = resample(ds, derive_seed(ci.seed, b + 1, 11));
                MultiEst m = bootstrap_point(rs, derive_seed(ci.seed, b + 1, 13), K, spec1,
                                             spec0, opts);
                reps[b] = {m.est[0], m.est[1], m.est[2]};
            } catch (const std::exception&) {
                // NaN replicate; excluded (and counted) by percentile_ci
            }
        });
        const char* name = "percentile";
        for (int q = 0; q < 3; ++q) {
            std::vector<double> col(B);
            for (std::size_t b = 0; b < B; ++b) col[b] = reps[b][static_cast<std::size_t>(q)];
            Interval iv = percentile_ci(col, ci.level);
            if (q == 0) rep.ci_psi[1][name] = iv;
            if (q == 1) rep.ci_psi[0][name] = iv;
            if (q == 2) rep.ci_ace[name] = iv;
        }
        return;
    }

    // double_symmetric_t
    MultiEstimatorFn fn = [&](const Dataset& d, std::uint64_t seed) -> MultiEst {
        try {
            return bootstrap_point(d, seed, K, spec1, spec0, opts);
        } catch (const std::exception&) {
            return MultiEst{{std::nan(""), std::nan(""), std::nan("")},
                            {std::nan(""), std::nan(""), std::nan("")}};
        }
    };
    auto ivs = double_bootstrap_ci_multi(ds, fn, ci, opts.threads);
    const char* name = "double_symmetric_t";
    rep.ci_psi[1][name] = ivs[0];
    rep.ci_psi[0][name] = ivs[1];
    rep.ci_ace[name] = ivs[2];
}

} // namespace

EstimateReport crossfit_estimate(const Dataset& ds, const SplitPlan& plan, const TiltSpec& spec1,
                                 const TiltSpec& spec0, const CrossfitOptions& opts) {
    FoldFits fits = fit_folds(ds, plan, opts);
    EstimateReport rep = evaluate_crossfit(ds, fits, spec1, spec0, opts);
    attach_bootstrap_cis(ds, plan.K, spec1, spec0, opts, rep);
    return rep;
}

// ---------------------------------------------------------------------------
// Remainder diagnostic (second-order term of the von Mises expansion)
// ---------------------------------------------------------------------------

double remainder(const NuisanceModel& nm_tilde, const NuisanceModel& nm_true,
                 const TiltSpec& spec, int t, const Dataset& xs) {
    if (xs.n() == 0) throw ValidationError("remainder: empty covariate sample");
    double acc = 0.0;
    for (std::size_t i = 0; i < xs.n(); ++i) {
        auto x = xs.x(i);
        TiltedMoments mt = nm_tilde.tilted_moments(t, spec, x);
        TiltedMoments m = nm_true.tilted_moments(t, spec, x);
        double pit_t = nm_tilde.pi(t, x);
        double pit_o = nm_tilde.pi(1 - t, x);
        double pi_t = nm_true.pi(t, x);
        double pi_o = nm_true.pi(1 - t, x);
        if (!(pit_t > 0.0) || !(mt.mgf > 0.0) || !(m.mgf > 0.0))
            throw NumericError("remainder: denominator not positive");
        double first =
            (m.mean_y_tilt * mt.mgf - mt.mean_y_tilt * m.mgf) / (pit_t * mt.mgf);
        double second = (pit_o * pi_t) / mt.mgf - (pi_o * pit_t) / m.mgf;
        acc += first * second;
    }
    return acc / static_cast<double>(xs.n());
}

double induced_mean(double psi_hat, const Dataset& ds, int t) {
    std::size_t n_t = ds.arm_count(t);
    std::size_t n_o = ds.n() - n_t;
    if (n_t == 0 || n_o == 0)
        throw ValidationError("induced_mean: both treatment arms must be present");
    double p_t = static_cast<double>(n_t) / static_cast<double>(ds.n());
    double p_o = static_cast<double>(n_o) / static_cast<double>(ds.n());
    double ey_t = ds.arm_mean_y(t);
    return (psi_hat - ey_t * p_t) / p_o;
}

// ---------------------------------------------------------------------------
// Sensitivity grid
// ---------------------------------------------------------------------------

GridReport sensitivity_grid(const Dataset& ds, const SplitPlan& plan,
                            std::span<const double> gamma1_grid,
                            std::span<const double> gamma0_grid, const TiltFunction& s1,
                            const TiltFunction& s0, const CrossfitOptions& opts) {
    if (gamma1_grid.empty() || gamma0_grid.empty())
        throw ValidationError("sensitivity_grid: gamma grids must be nonempty");

    // Nuisances are free of gamma: one fit per fold, reused across the grid.
    FoldFits fits = fit_folds(ds, plan, opts);

    GridReport report;
    report.gamma1_grid.assign(gamma1_grid.begin(), gamma1_grid.end());
    report.gamma0_grid.assign(gamma0_grid.begin(), gamma0_grid.end());
    const std::size_t n_cells = gamma1_grid.size() * gamma0_grid.size();
    report.cells.resize(n_cells);

    parallel_for(n_cells, opts.threads, [&](std::size_t c) {
        std::size_t i1 = c / gamma0_grid.size();
        std::size_t i0 = c % gamma0_grid.size();
        GridCell& cell = report.cells[c];
        cell.gamma1 = gamma1_grid[i1];
        cell.gamma0 = gamma0_grid[i0];
        TiltSpec spec1{1, cell.gamma1, s1};
        TiltSpec spec0{0, cell.gamma0, s0};
        try {
            CrossfitOptions cell_opts = opts;
            cell_opts.threads = 1;
            EstimateReport rep = evaluate_crossfit(ds, fits, spec1, spec0, cell_opts);
            attach_bootstrap_cis(ds, plan.K, spec1, spec0, cell_opts, rep);
            cell.psi1 = rep.psi_tilde[1];
            cell.psi0 = rep.psi_tilde[0];
            cell.ace = rep.ace;
            cell.se_ace = rep.se_ace;
            std::string method = "normal";
            if (opts.ci && opts.ci->method != CiSpec::Method::normal)
                method = ci_method_to_string(opts.ci->method);
            cell.ci_method = method;
            cell.ci = rep.ci_ace.at(method);
            if (cell.ci.hi < 0.0)
                cell.classification = "worse";
            else if (cell.ci.lo > 0.0)
                cell.classification = "better";
            else
                cell.classification = "indeterminate";
        } catch (const std::exception& e) {
            cell.failed = true;
            cell.classification = "failed";
            cell.error = e.what();
            cell.psi1 = cell.psi0 = cell.ace = cell.se_ace = std::nan("");
            cell.ci = {std::nan(""), std::nan("")};
        }
    });
    for (const auto& cell : report.cells) report.n_failed += cell.failed ? 1 : 0;
    return report;
}

void write_grid_csv(const GridReport& report, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write file: " + path);
    out << "gamma1,gamma0,psi1,psi0,ace,se_ace,ci_method,ci_lo,ci_hi,classification\n";
    for (const auto& c : report.cells) {
        out << format_double(c.gamma1) << "," << format_double(c.gamma0) << ","
            << format_double(c.psi1) << "," << format_double(c.psi0) << ","
            << format_double(c.ace) << "," << format_double(c.se_ace) << "," << c.ci_method
            << "," << format_double(c.ci.lo) << "," << format_double(c.ci.hi) << ","
            << c.classification << "\n";
    }
}

} // namespace tiltsens
