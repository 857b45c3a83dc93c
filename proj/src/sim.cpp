#include "tiltsens/sim.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include "tiltsens/csv.hpp"
#include "tiltsens/errors.hpp"
#include "tiltsens/parallel.hpp"
#include "tiltsens/rng.hpp"
#include "tiltsens/stats.hpp"

namespace tiltsens {

namespace {
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

struct CellDef {
    int arm;
    double gamma;
    TiltSpec spec;
};

bool wants(const SimulationConfig& cfg, CiSpec::Method m) {
    return std::find(cfg.methods.begin(), cfg.methods.end(), m) != cfg.methods.end();
}

} // namespace

double true_psi(const NuisanceModel& truth, const Dataset& xs, const TiltSpec& spec, int t) {
    return psi_plugin(truth, spec, t, xs);
}

SimulationResult run_simulation(const SimulationConfig& cfg) {
    if (!cfg.truth || !cfg.covariates)
        throw ConfigError("run_simulation: truth bundle and covariate sample are required");
    if (cfg.replications < 1) throw ConfigError("run_simulation: replications must be >= 1");
    for (std::size_t n : cfg.sizes)
        if (n < 100) throw ConfigError("run_simulation: sample sizes must be >= 100");
    if (cfg.gamma1_grid.empty() && cfg.gamma0_grid.empty())
        throw ConfigError("run_simulation: at least one gamma grid must be nonempty");

    std::vector<CellDef> defs;
    for (double g : cfg.gamma1_grid) defs.push_back({1, g, TiltSpec{1, g, cfg.s1}});
    for (double g : cfg.gamma0_grid) defs.push_back({0, g, TiltSpec{0, g, cfg.s0}});
    const std::size_t C = defs.size();
    const std::size_t R = static_cast<std::size_t>(cfg.replications);

    std::vector<double> psi_true_cell(C);
    for (std::size_t c = 0; c < C; ++c)
        psi_true_cell[c] = true_psi(*cfg.truth, *cfg.covariates, defs[c].spec, defs[c].arm);

    const bool want_normal = wants(cfg, CiSpec::Method::normal);
    const bool want_pct = wants(cfg, CiSpec::Method::percentile);
    const bool want_dbl = wants(cfg, CiSpec::Method::double_symmetric_t);

    SimulationResult result;
    for (std::size_t n : cfg.sizes) {
        struct RepOut {
            bool failed = false;
            std::vector<double> est, se;
            std::vector<char> cov_pct, cov_dbl;
        };
        std::vector<RepOut> reps(R);

        parallel_for(R, cfg.threads, [&](std::size_t r) {
            RepOut& out = reps[r];
            std::uint64_t seed_r = derive_seed(cfg.seed, n, r);
            try {
                Dataset ds = generate_semiparametric(*cfg.truth, *cfg.covariates, n, seed_r);
                SplitPlan plan = make_folds(ds, cfg.K, derive_seed(seed_r, 1));
                CrossfitOptions opts = cfg.fit_opts;
                opts.seed = derive_seed(seed_r, 2);
                opts.threads = 1;
                opts.ci.reset();
                FoldFits fits = fit_folds(ds, plan, opts);

                out.est.resize(C);
                out.se.resize(C);
                for (std::size_t c = 0; c < C; ++c) {
                    ArmEstimate ae =
                        evaluate_crossfit_arm(ds, fits, defs[c].spec, defs[c].arm, opts);
                    out.est[c] = ae.psi;
                    out.se[c] = ae.se;
                }

                auto refit_eval_all = [&](const Dataset& d, std::uint64_t seed) -> MultiEst {
                    CrossfitOptions o = opts;
                    o.seed = derive_seed(seed, 3);
                    SplitPlan pl = make_folds(d, cfg.K, derive_seed(seed, 4));
                    FoldFits f = fit_folds(d, pl, o);
                    MultiEst m;
                    m.est.resize(C);
                    m.se.resize(C);
                    for (std::size_t c = 0; c < C; ++c) {
                        ArmEstimate ae = evaluate_crossfit_arm(d, f, defs[c].spec, defs[c].arm, o);
                        m.est[c] = ae.psi;
                        m.se[c] = ae.se;
                    }
                    return m;
                };

                if (want_pct) {
                    std::vector<std::vector<double>> boot(C);
                    for (int b = 0; b < cfg.B1; ++b) {
                        Dataset rs = resample(ds, derive_seed(seed_r, 5, b));
                        MultiEst m = refit_eval_all(rs, derive_seed(seed_r, 6, b));
                        for (std::size_t c = 0; c < C; ++c) boot[c].push_back(m.est[c]);
                    }
                    out.cov_pct.resize(C);
                    for (std::size_t c = 0; c < C; ++c) {
                        Interval iv = percentile_ci(boot[c], cfg.level);
                        out.cov_pct[c] =
                            iv.lo <= psi_true_cell[c] && psi_true_cell[c] <= iv.hi;
                    }
                }
                if (want_dbl) {
                    CiSpec dspec;
                    dspec.method = CiSpec::Method::double_symmetric_t;
                    dspec.level = cfg.level;
                    dspec.B1 = cfg.B1;
                    dspec.B2 = cfg.B2;
                    dspec.seed = derive_seed(seed_r, 7);
                    MultiEstimatorFn fn = [&](const Dataset& d, std::uint64_t seed) {
                        try {
                            return refit_eval_all(d, seed);
                        } catch (const std::exception&) {
                            MultiEst m;
                            m.est.assign(C, kNaN);
                            m.se.assign(C, kNaN);
                            return m;
                        }
                    };
                    auto ivs = double_bootstrap_ci_multi(ds, fn, dspec, 1);
                    out.cov_dbl.resize(C);
                    for (std::size_t c = 0; c < C; ++c)
                        out.cov_dbl[c] =
                            ivs[c].lo <= psi_true_cell[c] && psi_true_cell[c] <= ivs[c].hi;
                }
            } catch (const std::exception&) {
                out.failed = true;
            }
        });

        int n_failed = 0;
        for (const auto& rep : reps) n_failed += rep.failed ? 1 : 0;
        result.failures += n_failed;

        double z = normal_quantile(0.5 * (1.0 + cfg.level));
        for (std::size_t c = 0; c < C; ++c) {
            SimCell cell;
            cell.arm = defs[c].arm;
            cell.gamma = defs[c].gamma;
            cell.n = n;
            cell.psi_true = psi_true_cell[c];
            cell.failures = n_failed;
            cell.cov_normal = cell.mc_se_normal = kNaN;
            cell.cov_percentile = cell.mc_se_percentile = kNaN;
            cell.cov_double = cell.mc_se_double = kNaN;

            double sum_est = 0.0, sum_se = 0.0;
            int used = 0, cov_n = 0, cov_p = 0, cov_d = 0;
            for (const auto& rep : reps) {
                if (rep.failed) continue;
                ++used;
                sum_est += rep.est[c];
                sum_se += rep.se[c];
                if (want_normal) {
                    double lo = rep.est[c] - z * rep.se[c];
                    double hi = rep.est[c] + z * rep.se[c];
                    cov_n += (lo <= psi_true_cell[c] && psi_true_cell[c] <= hi);
                }
                if (want_pct) cov_p += rep.cov_pct[c];
                if (want_dbl) cov_d += rep.cov_dbl[c];
            }
            cell.replications_used = used;
            if (used > 0) {
                double mean_est = sum_est / used;
                cell.percent_bias = 100.0 * (mean_est - cell.psi_true) / cell.psi_true;
                cell.mean_se = sum_se / used;
                auto cov_stats = [used](int covered, double& cov, double& mc_se) {
                    cov = static_cast<double>(covered) / used;
                    mc_se = std::sqrt(cov * (1.0 - cov) / used);
                };
                if (want_normal) cov_stats(cov_n, cell.cov_normal, cell.mc_se_normal);
                if (want_pct) cov_stats(cov_p, cell.cov_percentile, cell.mc_se_percentile);
                if (want_dbl) cov_stats(cov_d, cell.cov_double, cell.mc_se_double);
            } else {
                cell.percent_bias = kNaN;
                cell.mean_se = kNaN;
            }
            result.cells.push_back(std::move(cell));
        }
    }

    double total_runs = static_cast<double>(R * cfg.sizes.size());
    if (result.failures > cfg.max_failure_rate * total_runs) result.valid = false;
    return result;
}

void write_sim_csv(const SimulationResult& result, int arm, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write file: " + path);
    out << "gamma,n,percent_bias,cov_normal,cov_percentile,cov_double\n";
    auto fmt = [](double v) { return std::isnan(v) ? std::string("NA") : format_double(v); };
    for (const auto& c : result.cells) {
        if (c.arm != arm) continue;
        out << format_double(c.gamma) << "," << c.n << "," << fmt(c.percent_bias) << ","
            << fmt(c.cov_normal) << "," << fmt(c.cov_percentile) << "," << fmt(c.cov_double)
            << "\n";
    }
}

} // namespace tiltsens
