// tiltsens command-line tool: fit nuisance models, sweep sensitivity
// parameters, run induced-mean and goodness-of-fit diagnostics, and drive the
// simulation harness. One JSON config per run; all randomness is seeded from
// the config, so reruns are byte-identical.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "tiltsens/artifact.hpp"
#include "tiltsens/csv.hpp"
#include "tiltsens/diagnostics.hpp"
#include "tiltsens/errors.hpp"
#include "tiltsens/estimator.hpp"
#include "tiltsens/parallel.hpp"
#include "tiltsens/rng.hpp"
#include "tiltsens/sim.hpp"

using nlohmann::json;
using namespace tiltsens;

namespace {

int g_log_level = 1; // 0 quiet, 1 info, 2 debug

void log_info(const std::string& msg) {
    if (g_log_level >= 1) std::fprintf(stderr, "[tiltsens] %s\n", msg.c_str());
}

json load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config: " + path);
    try {
        json j;
        in >> j;
        return j;
    } catch (const json::exception& e) {
        throw ConfigError("config parse error: " + std::string(e.what()));
    }
}

CsvSchema schema_from_json(const json& j) {
    CsvSchema schema;
    for (const auto& [name, spec] : j.items()) {
        ColumnSpec cs;
        std::string role = spec.at("role").get<std::string>();
        if (role == "covariate")
            cs.role = ColumnRole::covariate;
        else if (role == "treatment")
            cs.role = ColumnRole::treatment;
        else if (role == "outcome")
            cs.role = ColumnRole::outcome;
        else if (role == "ignore")
            cs.role = ColumnRole::ignore;
        else
            throw ConfigError("unknown column role: " + role);
        std::string kind = spec.value("kind", "numeric");
        if (kind == "categorical")
            cs.kind = CovariateKind::categorical;
        else if (kind != "numeric")
            throw ConfigError("unknown covariate kind: " + kind);
        schema.columns[name] = cs;
    }
    return schema;
}

Dataset load_data(const json& cfg) {
    if (!cfg.contains("data")) throw ConfigError("config requires a 'data' block");
    const json& d = cfg.at("data");
    std::string path = d.at("path").get<std::string>();
    if (!std::filesystem::exists(path)) throw ConfigError("data file does not exist: " + path);
    return load_csv(path, schema_from_json(d.at("columns")));
}

std::vector<double> gamma_grid_from_json(const json& j) {
    std::vector<double> grid;
    if (j.is_number()) {
        grid.push_back(j.get<double>());
    } else if (j.is_array()) {
        grid = j.get<std::vector<double>>();
    } else if (j.is_object()) {
        double from = j.at("from").get<double>();
        double to = j.at("to").get<double>();
        double step = j.at("step").get<double>();
        if (!(step > 0.0)) throw ConfigError("gamma grid step must be > 0");
        int count = static_cast<int>(std::floor((to - from) / step + 1e-9)) + 1;
        for (int i = 0; i < count; ++i) grid.push_back(from + i * step);
    } else {
        throw ConfigError("gamma grid must be a number, array, or {from,to,step}");
    }
    if (grid.empty()) throw ConfigError("gamma grid is empty");
    return grid;
}

TiltFunction tilt_from_config(const json& cfg, const char* key) {
    if (cfg.contains("tilt") && cfg.at("tilt").contains(key))
        return tilt_function_from_json(cfg.at("tilt").at(key));
    return IdentityTilt{};
}

CrossfitOptions options_from_config(const json& cfg, int threads) {
    CrossfitOptions opts;
    if (!cfg.contains("seed")) throw ConfigError("config requires an explicit 'seed'");
    opts.seed = cfg.at("seed").get<std::uint64_t>();
    opts.threads = threads;
    opts.huberize = cfg.value("huberize", true);
    if (cfg.contains("propensity")) {
        const json& p = cfg.at("propensity");
        opts.propensity.knots = p.value("knots", opts.propensity.knots);
        opts.propensity.cv_folds = p.value("cv_folds", opts.propensity.cv_folds);
        opts.propensity.clip_epsilon = p.value("clip_epsilon", opts.propensity.clip_epsilon);
        opts.propensity.max_iter = p.value("max_iter", opts.propensity.max_iter);
        opts.propensity.tol = p.value("tol", opts.propensity.tol);
        if (p.contains("penalty_grid"))
            opts.propensity.penalty_grid = p.at("penalty_grid").get<std::vector<double>>();
    }
    if (cfg.contains("outcome")) {
        const json& o = cfg.at("outcome");
        opts.outcome.restarts = o.value("restarts", opts.outcome.restarts);
        opts.outcome.h_grid_size = o.value("h_grid_size", opts.outcome.h_grid_size);
        opts.outcome.max_iter = o.value("max_iter", opts.outcome.max_iter);
        opts.outcome.h_tol = o.value("h_tol", opts.outcome.h_tol);
        opts.outcome.beta_tol = o.value("beta_tol", opts.outcome.beta_tol);
        opts.outcome.h_lower_mult = o.value("h_lower_mult", opts.outcome.h_lower_mult);
        opts.outcome.h_upper_mult = o.value("h_upper_mult", opts.outcome.h_upper_mult);
    }
    if (cfg.contains("ci")) {
        const json& c = cfg.at("ci");
        CiSpec ci;
        ci.method = ci_method_from_string(c.value("method", "normal"));
        ci.level = c.value("level", 0.95);
        ci.B1 = c.value("B1", 250);
        ci.B2 = c.value("B2", 250);
        ci.seed = c.value("seed", opts.seed);
        opts.level = ci.level;
        opts.ci = ci;
    }
    return opts;
}

FitArtifact fit_full(const Dataset& ds, const CrossfitOptions& opts) {
    PropensityConfig pcfg = opts.propensity;
    pcfg.seed = derive_seed(opts.seed, 0xF17u, 1);
    PropensityFit pf = fit_propensity(ds, pcfg);
    SingleIndexConfig scfg = opts.outcome;
    scfg.seed = derive_seed(opts.seed, 0xF17u, 2);
    OutcomeFit f0 = fit_single_index(ds.subset(ds.arm_indices(0)), scfg);
    scfg.seed = derive_seed(opts.seed, 0xF17u, 3);
    OutcomeFit f1 = fit_single_index(ds.subset(ds.arm_indices(1)), scfg);
    FitArtifact artifact;
    artifact.bundle = std::make_shared<NuisanceBundle>(std::move(pf), std::move(f0), std::move(f1));
    artifact.data = std::make_shared<Dataset>(ds);
    return artifact;
}

FitArtifact truth_from_config(const json& cfg, const CrossfitOptions& opts) {
    if (cfg.contains("artifact")) {
        std::string path = cfg.at("artifact").get<std::string>();
        if (!std::filesystem::exists(path)) throw ConfigError("artifact does not exist: " + path);
        return load_artifact(path);
    }
    log_info("no artifact given; fitting nuisance models on the data");
    return fit_full(load_data(cfg), opts);
}

std::vector<SubgroupSpec> subgroups_from_config(const json& cfg) {
    if (!cfg.contains("subgroups")) throw ConfigError("config requires 'subgroups'");
    std::vector<SubgroupSpec> out;
    for (const auto& j : cfg.at("subgroups")) {
        SubgroupSpec sg;
        sg.name = j.at("name").get<std::string>();
        sg.covariate = j.at("covariate").get<std::string>();
        if (j.contains("min")) sg.lo = j.at("min").get<double>();
        if (j.contains("max")) sg.hi = j.at("max").get<double>();
        if (j.contains("equals")) sg.equals = j.at("equals").get<double>();
        out.push_back(std::move(sg));
    }
    return out;
}

std::string out_path(const std::string& dir, const std::string& file) {
    std::filesystem::create_directories(dir);
    return (std::filesystem::path(dir) / file).string();
}

// ---------------------------------------------------------------------------
// Minimal SVG contour rendering (marching squares on the ACE surface)
// ---------------------------------------------------------------------------

void write_contour_svg(const GridReport& grid, const std::string& path) {
    const auto& g1 = grid.gamma1_grid; // y axis
    const auto& g0 = grid.gamma0_grid; // x axis
    const int W = 640, H = 520, ML = 70, MB = 60, MT = 30, MR = 20;
    const double plot_w = W - ML - MR, plot_h = H - MT - MB;
    auto ace_at = [&](std::size_t i1, std::size_t i0) {
        return grid.cells[i1 * g0.size() + i0].ace;
    };
    auto xpos = [&](double idx0) {
        double f = g0.size() > 1 ? idx0 / double(g0.size() - 1) : 0.5;
        return ML + f * plot_w;
    };
    auto ypos = [&](double idx1) {
        double f = g1.size() > 1 ? idx1 / double(g1.size() - 1) : 0.5;
        return MT + (1.0 - f) * plot_h;
    };

    std::ofstream svg(path);
    if (!svg) throw ConfigError("cannot write file: " + path);
    svg << "<svg xmlns='http://www.w3.org/2000/svg' width='" << W << "' height='" << H
        << "'>\n<rect width='100%' height='100%' fill='white'/>\n";

    for (std::size_t i1 = 0; i1 < g1.size(); ++i1) {
        for (std::size_t i0 = 0; i0 < g0.size(); ++i0) {
            const GridCell& cell = grid.cells[i1 * g0.size() + i0];
            const char* color = "#d9d9d9";
            if (cell.failed)
                color = "#404040";
            else if (cell.classification == "worse")
                color = "#c0504d";
            else if (cell.classification == "better")
                color = "#4f81bd";
            double x = xpos(double(i0) - 0.5), y = ypos(double(i1) + 0.5);
            double w = g0.size() > 1 ? plot_w / double(g0.size() - 1) : plot_w;
            double h = g1.size() > 1 ? plot_h / double(g1.size() - 1) : plot_h;
            svg << "<rect x='" << x << "' y='" << y << "' width='" << w << "' height='" << h
                << "' fill='" << color << "' fill-opacity='0.6'/>\n";
        }
    }

    // zero-level segments of the ACE surface
    if (g0.size() > 1 && g1.size() > 1) {
        for (std::size_t i1 = 0; i1 + 1 < g1.size(); ++i1) {
            for (std::size_t i0 = 0; i0 + 1 < g0.size(); ++i0) {
                double v[4] = {ace_at(i1, i0), ace_at(i1, i0 + 1), ace_at(i1 + 1, i0 + 1),
                               ace_at(i1 + 1, i0)};
                bool bad = false;
                for (double vv : v)
                    if (!std::isfinite(vv)) bad = true;
                if (bad) continue;
                // edge order: bottom (i1 row), right, top, left
                struct Pt {
                    double x, y;
                };
                std::vector<Pt> pts;
                auto edge = [&](double a, double b, double xa, double ya, double xb, double yb) {
                    if ((a < 0) == (b < 0)) return;
                    double f = a / (a - b);
                    pts.push_back({xa + f * (xb - xa), ya + f * (yb - ya)});
                };
                double x0 = xpos(double(i0)), x1 = xpos(double(i0 + 1));
                double y0 = ypos(double(i1)), y1 = ypos(double(i1 + 1));
                edge(v[0], v[1], x0, y0, x1, y0);
                edge(v[1], v[2], x1, y0, x1, y1);
                edge(v[3], v[2], x0, y1, x1, y1);
                edge(v[0], v[3], x0, y0, x0, y1);
                if (pts.size() >= 2)
                    svg << "<line x1='" << pts[0].x << "' y1='" << pts[0].y << "' x2='"
                        << pts[1].x << "' y2='" << pts[1].y
                        << "' stroke='black' stroke-width='1.5'/>\n";
            }
        }
    }

    // axes
    svg << "<rect x='" << ML << "' y='" << MT << "' width='" << plot_w << "' height='" << plot_h
        << "' fill='none' stroke='black'/>\n";
    svg << "<text x='" << ML + plot_w / 2 << "' y='" << H - 15
        << "' text-anchor='middle' font-size='14'>gamma0</text>\n";
    svg << "<text x='18' y='" << MT + plot_h / 2
        << "' text-anchor='middle' font-size='14' transform='rotate(-90 18 "
        << MT + plot_h / 2 << ")'>gamma1</text>\n";
    svg << "<text x='" << ML << "' y='" << H - 35 << "' font-size='11'>" << format_double(g0.front())
        << "</text>\n";
    svg << "<text x='" << ML + plot_w << "' y='" << H - 35 << "' text-anchor='end' font-size='11'>"
        << format_double(g0.back()) << "</text>\n";
    svg << "<text x='" << ML - 6 << "' y='" << MT + plot_h
        << "' text-anchor='end' font-size='11'>" << format_double(g1.front()) << "</text>\n";
    svg << "<text x='" << ML - 6 << "' y='" << MT + 10 << "' text-anchor='end' font-size='11'>"
        << format_double(g1.back()) << "</text>\n";
    svg << "</svg>\n";
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

int cmd_fit(const json& cfg, const std::string& out, int threads) {
    Dataset ds = load_data(cfg);
    CrossfitOptions opts = options_from_config(cfg, threads);
    log_info("fitting nuisance models on " + std::to_string(ds.n()) + " rows");
    FitArtifact artifact = fit_full(ds, opts);
    save_artifact(artifact, out_path(out, "fit.json"));
    write_summary_csv(empirical_summary(ds), out_path(out, "summary.csv"));

    json telemetry;
    telemetry["n"] = ds.n();
    telemetry["p"] = ds.p();
    telemetry["train_clip_rate"] = artifact.bundle->propensity().train_clip_rate();
    for (int arm = 0; arm < 2; ++arm) {
        const OutcomeFit& f = artifact.bundle->outcome(arm);
        json ja;
        ja["beta"] = f.beta();
        ja["h_stage1"] = f.h_stage1();
        ja["h_stage2"] = f.h_stage2();
        ja["train_n"] = f.train_n();
        telemetry["outcome_arm" + std::to_string(arm)] = ja;
    }
    {
        json lam = json::array();
        for (const auto& t : artifact.bundle->propensity().terms())
            lam.push_back({{"covariate", t.covariate}, {"spline", t.spline}, {"lambda", t.lambda}});
        telemetry["propensity_terms"] = lam;
    }
    std::ofstream tout(out_path(out, "fit_telemetry.json"));
    tout << telemetry.dump(1, '\t') << "\n";

    for (int arm = 0; arm < 2; ++arm) {
        const OutcomeFit& f = artifact.bundle->outcome(arm);
        std::string betas;
        for (double b : f.beta()) betas += format_double(b) + " ";
        std::printf("arm %d: beta = [ %s], h_stage1 = %s, h_stage2 = %s\n", arm, betas.c_str(),
                    format_double(f.h_stage1()).c_str(), format_double(f.h_stage2()).c_str());
    }
    std::printf("propensity train clip rate = %s\n",
                format_double(artifact.bundle->propensity().train_clip_rate()).c_str());
    return 0;
}

int cmd_estimate(const json& cfg, const std::string& out, int threads) {
    Dataset ds = load_data(cfg);
    CrossfitOptions opts = options_from_config(cfg, threads);
    int K = cfg.contains("folds") ? cfg.at("folds").value("K", 5) : 5;
    SplitPlan plan = make_folds(ds, K, derive_seed(opts.seed, 0xF01Du));
    auto g1 = gamma_grid_from_json(cfg.value("gamma1", json(0.0)));
    auto g0 = gamma_grid_from_json(cfg.value("gamma0", json(0.0)));
    TiltFunction s1 = tilt_from_config(cfg, "s1");
    TiltFunction s0 = tilt_from_config(cfg, "s0");
    log_info("estimating over a " + std::to_string(g1.size()) + " x " + std::to_string(g0.size()) +
             " gamma grid, K=" + std::to_string(K));
    GridReport grid = sensitivity_grid(ds, plan, g1, g0, s1, s0, opts);
    write_grid_csv(grid, out_path(out, "grid.csv"));
    if (cfg.value("svg", false)) write_contour_svg(grid, out_path(out, "contour.svg"));
    if (grid.n_failed > 0) {
        log_info(std::to_string(grid.n_failed) + " grid cells failed");
        return 4;
    }
    return 0;
}

int cmd_induced(const json& cfg, const std::string& out, int threads) {
    Dataset ds = load_data(cfg);
    CrossfitOptions opts = options_from_config(cfg, threads);
    int K = cfg.contains("folds") ? cfg.at("folds").value("K", 5) : 5;
    SplitPlan plan = make_folds(ds, K, derive_seed(opts.seed, 0xF01Du));
    FoldFits fits = fit_folds(ds, plan, opts);
    auto g1 = gamma_grid_from_json(cfg.value("gamma1", json(0.0)));
    auto g0 = gamma_grid_from_json(cfg.value("gamma0", json(0.0)));
    TiltFunction s1 = tilt_from_config(cfg, "s1");
    TiltFunction s0 = tilt_from_config(cfg, "s0");

    std::ofstream csv(out_path(out, "induced.csv"));
    csv << "arm,gamma,psi,se_psi,induced_mean,induced_se,ci_lo,ci_hi\n";
    for (int arm = 1; arm >= 0; --arm) {
        const auto& grid = arm == 1 ? g1 : g0;
        const TiltFunction& s = arm == 1 ? s1 : s0;
        double p_other = static_cast<double>(ds.arm_count(1 - arm)) / static_cast<double>(ds.n());
        for (double g : grid) {
            TiltSpec spec{arm, g, s};
            ArmEstimate ae = evaluate_crossfit_arm(ds, fits, spec, arm, opts);
            double ind = induced_mean(ae.psi, ds, arm);
            double ind_se = ae.se / p_other;
            Interval ci = normal_ci(ind, ind_se, opts.level);
            csv << arm << "," << format_double(g) << "," << format_double(ae.psi) << ","
                << format_double(ae.se) << "," << format_double(ind) << ","
                << format_double(ind_se) << "," << format_double(ci.lo) << ","
                << format_double(ci.hi) << "\n";
        }
    }
    return 0;
}

int cmd_gof(const json& cfg, const std::string& out, int threads) {
    Dataset ds = load_data(cfg);
    CrossfitOptions opts = options_from_config(cfg, threads);
    FitArtifact artifact = truth_from_config(cfg, opts);
    auto subgroups = subgroups_from_config(cfg);
    std::size_t n_synth = cfg.value("n_synth", 100000);

    Dataset semi = generate_semiparametric(*artifact.bundle, ds, n_synth,
                                           derive_seed(opts.seed, 0x90Fu, 1));
    auto semi_rows = gof_rows(ds, semi, subgroups);
    bool baseline = cfg.value("parametric_baseline", false);
    std::vector<GofRow> par_rows;
    if (baseline) {
        ParametricBaseline pb = fit_parametric_baseline(ds);
        Dataset par = generate_parametric(pb, ds, n_synth, derive_seed(opts.seed, 0x90Fu, 2));
        par_rows = gof_rows(ds, par, subgroups);
    }

    std::ofstream csv(out_path(out, "gof.csv"));
    csv << "# treatment column reports |difference of subgroup treated fractions| "
           "(scalar analogue of the conditional-probability comparison)\n";
    csv << "subgroup,treat_abs_diff_semi,ks_y_t1_semi,ks_y_t0_semi";
    if (baseline) csv << ",treat_abs_diff_par,ks_y_t1_par,ks_y_t0_par";
    csv << "\n";
    auto cell = [](const GofRow& r, int what) {
        if (what == 0) return r.treat_evaluable ? format_double(r.treat_abs_diff) : std::string("NA");
        int arm = what == 1 ? 1 : 0;
        return r.y_evaluable[arm] ? format_double(r.ks_y[arm]) : std::string("NA");
    };
    for (std::size_t i = 0; i < semi_rows.size(); ++i) {
        csv << semi_rows[i].subgroup << "," << cell(semi_rows[i], 0) << "," << cell(semi_rows[i], 1)
            << "," << cell(semi_rows[i], 2);
        if (baseline)
            csv << "," << cell(par_rows[i], 0) << "," << cell(par_rows[i], 1) << ","
                << cell(par_rows[i], 2);
        csv << "\n";
    }
    return 0;
}

int cmd_simulate(const json& cfg, const std::string& out, int threads) {
    CrossfitOptions opts = options_from_config(cfg, threads);
    FitArtifact truth = truth_from_config(cfg, opts);

    SimulationConfig sim;
    sim.truth = truth.bundle;
    sim.covariates = truth.data;
    sim.s1 = tilt_from_config(cfg, "s1");
    sim.s0 = tilt_from_config(cfg, "s0");
    if (cfg.contains("gamma1")) sim.gamma1_grid = gamma_grid_from_json(cfg.at("gamma1"));
    if (cfg.contains("gamma0")) sim.gamma0_grid = gamma_grid_from_json(cfg.at("gamma0"));
    sim.fit_opts = opts;
    sim.seed = opts.seed;
    sim.threads = threads;
    sim.K = cfg.contains("folds") ? cfg.at("folds").value("K", 5) : 5;
    if (cfg.contains("sim")) {
        const json& s = cfg.at("sim");
        if (s.contains("sizes")) sim.sizes = s.at("sizes").get<std::vector<std::size_t>>();
        sim.replications = s.value("replications", sim.replications);
        sim.level = s.value("level", sim.level);
        sim.B1 = s.value("B1", sim.B1);
        sim.B2 = s.value("B2", sim.B2);
        if (s.contains("methods")) {
            sim.methods.clear();
            for (const auto& m : s.at("methods"))
                sim.methods.push_back(ci_method_from_string(m.get<std::string>()));
        }
    }
    log_info("running simulation: R=" + std::to_string(sim.replications));
    SimulationResult res = run_simulation(sim);
    write_sim_csv(res, 1, out_path(out, "sim_arm1.csv"));
    write_sim_csv(res, 0, out_path(out, "sim_arm0.csv"));
    json meta;
    meta["failures"] = res.failures;
    meta["valid"] = res.valid;
    std::ofstream mout(out_path(out, "sim_meta.json"));
    mout << meta.dump(1, '\t') << "\n";
    if (!res.valid) throw NumericError("simulation marked invalid: too many replication failures");
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Sensitivity analysis for average causal effects under exponential tilting"};
    app.require_subcommand(1);

    std::string config_path, out_dir = ".", log_level = "info";
    int threads = 0;
    app.add_option("--config", config_path, "JSON run configuration")->required();
    app.add_option("--out", out_dir, "output directory");
    app.add_option("--threads", threads, "worker thread budget (0 = hardware)");
    app.add_option("--log-level", log_level, "quiet|info|debug");

    auto* fit = app.add_subcommand("fit", "fit nuisance models and save the artifact");
    auto* estimate = app.add_subcommand("estimate", "cross-fit estimates over a gamma grid");
    auto* induced = app.add_subcommand("induced", "induced counterfactual mean curves");
    auto* gof = app.add_subcommand("gof", "goodness-of-fit KS diagnostics");
    auto* simulate = app.add_subcommand("simulate", "bias/coverage simulation study");
    for (auto* sub : {fit, estimate, induced, gof, simulate}) sub->fallthrough();

    CLI11_PARSE(app, argc, argv);
    g_log_level = log_level == "quiet" ? 0 : log_level == "debug" ? 2 : 1;

    try {
        json cfg = load_config(config_path);
        if (fit->parsed()) return cmd_fit(cfg, out_dir, threads);
        if (estimate->parsed()) return cmd_estimate(cfg, out_dir, threads);
        if (induced->parsed()) return cmd_induced(cfg, out_dir, threads);
        if (gof->parsed()) return cmd_gof(cfg, out_dir, threads);
        if (simulate->parsed()) return cmd_simulate(cfg, out_dir, threads);
        return 2;
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const ValidationError& e) {
        std::fprintf(stderr, "validation error: %s\n", e.what());
        return 2;
    } catch (const NumericError& e) {
        std::fprintf(stderr, "numerical failure: %s\n", e.what());
        return 3;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 3;
    }
}
