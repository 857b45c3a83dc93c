#pragma once

#include <cstdint>
#include <memory>
#include <vector>

#include "tiltsens/diagnostics.hpp"
#include "tiltsens/estimator.hpp"

namespace tiltsens {

struct SimulationConfig {
    std::shared_ptr<const NuisanceBundle> truth;
    std::shared_ptr<const Dataset> covariates; // covariate sample defining the truth's X law
    TiltFunction s1 = IdentityTilt{};
    TiltFunction s0 = IdentityTilt{};
    std::vector<double> gamma1_grid;
    std::vector<double> gamma0_grid;
    std::vector<std::size_t> sizes = {1000};
    int replications = 200;
    std::vector<CiSpec::Method> methods = {CiSpec::Method::normal};
    double level = 0.95;
    int B1 = 50, B2 = 50; // bootstrap budgets when those methods are requested
    int K = 5;
    CrossfitOptions fit_opts;
    std::uint64_t seed = 1;
    int threads = 0;
    double max_failure_rate = 0.05;
};

struct SimCell {
    int arm = 1;
    double gamma = 0.0;
    std::size_t n = 0;
    double psi_true = 0.0;
    double percent_bias = 0.0;
    double mean_se = 0.0;
    // coverage and its Monte Carlo SE per CI method; NaN when not requested
    double cov_normal, mc_se_normal;
    double cov_percentile, mc_se_percentile;
    double cov_double, mc_se_double;
    int failures = 0;
    int replications_used = 0;
};

struct SimulationResult {
    std::vector<SimCell> cells;
    int failures = 0;
    bool valid = true;
};

// Exact value of the identification functional under the truth bundle over the
// full covariate sample (no Monte Carlo).
double true_psi(const NuisanceModel& truth, const Dataset& xs, const TiltSpec& spec, int t);

SimulationResult run_simulation(const SimulationConfig& cfg);

// One CSV per arm, mirroring the reporting layout:
// gamma,n,percent_bias,cov_normal,cov_percentile,cov_double
void write_sim_csv(const SimulationResult& result, int arm, const std::string& path);

} // namespace tiltsens
