#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "tiltsens/dataset.hpp"
#include "tiltsens/errors.hpp"
#include "tiltsens/propensity.hpp"
#include "tiltsens/rng.hpp"
#include "tiltsens/stats.hpp"

using namespace tiltsens;

namespace {

// Additive logistic truth on two covariates: eta = sin(2 z) - 0.5 z + 0.8 flag.
double truth_eta(double z, double flag) { return std::sin(2.0 * z) - 0.5 * z + 0.8 * flag; }

Dataset simulate_from_truth(std::size_t n, std::uint64_t seed) {
    auto eng = make_engine(seed);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::vector<ObservationRecord> rows;
    for (std::size_t i = 0; i < n; ++i) {
        double z = 2.0 * unif(eng) - 1.0 + 0.5 * gauss(eng);
        double flag = unif(eng) < 0.35 ? 1.0 : 0.0;
        int t = unif(eng) < sigmoid(truth_eta(z, flag)) ? 1 : 0;
        rows.push_back({{z, flag}, t, 0.0});
    }
    return Dataset({"z", "flag"}, rows);
}

} // namespace

TEST_CASE("saturated fit on a binary covariate reproduces cell frequencies") {
    // cells: x=0 -> 30 treated / 70 control; x=1 -> 60 treated / 40 control
    std::vector<ObservationRecord> rows;
    for (int i = 0; i < 100; ++i) rows.push_back({{0.0}, i < 30 ? 1 : 0, 0.0});
    for (int i = 0; i < 100; ++i) rows.push_back({{1.0}, i < 60 ? 1 : 0, 0.0});
    Dataset ds({"x"}, rows);
    PropensityFit fit = fit_propensity(ds, {});
    CHECK(fit.predict(std::vector<double>{0.0}, 1) == doctest::Approx(0.30).epsilon(1e-7));
    CHECK(fit.predict(std::vector<double>{1.0}, 1) == doctest::Approx(0.60).epsilon(1e-7));
}

TEST_CASE("constant treatment is a degenerate fit") {
    std::vector<ObservationRecord> rows;
    for (int i = 0; i < 40; ++i) rows.push_back({{double(i)}, 1, 0.0});
    Dataset ds({"x"}, rows);
    CHECK_THROWS_AS(fit_propensity(ds, {}), FitError);
}

TEST_CASE("arm probabilities sum to one exactly and respect clipping") {
    Dataset ds = simulate_from_truth(400, 9);
    PropensityConfig cfg;
    cfg.clip_epsilon = 0.05;
    PropensityFit fit = fit_propensity(ds, cfg);
    auto eng = make_engine(17);
    std::normal_distribution<double> gauss(0.0, 1.0);
    for (int i = 0; i < 200; ++i) {
        std::vector<double> x{gauss(eng) * 3.0, i % 2 ? 1.0 : 0.0};
        double p1 = fit.predict(x, 1);
        double p0 = fit.predict(x, 0);
        CHECK(p1 + p0 == 1.0);
        CHECK(p1 >= 0.05);
        CHECK(p1 <= 0.95);
    }
}

TEST_CASE("clipping engages under separation") {
    // Perfectly separated continuous covariate drives raw fits to the boundary.
    std::vector<ObservationRecord> rows;
    auto eng = make_engine(3);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    for (int i = 0; i < 120; ++i) {
        double z = unif(eng);
        rows.push_back({{z + (i % 2 ? 2.0 : 0.0)}, i % 2, 0.0});
    }
    Dataset ds({"z"}, rows);
    PropensityConfig cfg;
    cfg.clip_epsilon = 0.01;
    PropensityFit fit = fit_propensity(ds, cfg);
    CHECK(fit.predict(std::vector<double>{2.9}, 1) == doctest::Approx(0.99));
    CHECK(fit.predict(std::vector<double>{0.1}, 1) == doctest::Approx(0.01));
}

TEST_CASE("zero linear predictor gives one half for both arms") {
    PropensityFit fit(0.0, {}, 0.01, 0.0, 1);
    std::vector<double> x{3.7};
    CHECK(fit.predict(x, 1) == 0.5);
    CHECK(fit.predict(x, 0) == 0.5);
}

TEST_CASE("dimension mismatch is rejected") {
    Dataset ds = simulate_from_truth(200, 4);
    PropensityFit fit = fit_propensity(ds, {});
    CHECK_THROWS_AS(fit.predict(std::vector<double>{1.0}, 1), ValidationError);
}

TEST_CASE("covariate independent of treatment predicts near the marginal rate") {
    auto eng = make_engine(21);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::vector<ObservationRecord> rows;
    for (int i = 0; i < 5000; ++i)
        rows.push_back({{gauss(eng)}, unif(eng) < 0.37 ? 1 : 0, 0.0});
    Dataset ds({"z"}, rows);
    double marginal = ds.treated_fraction();
    PropensityFit fit = fit_propensity(ds, {});
    for (std::size_t i = 0; i < ds.n(); i += 25)
        CHECK(std::abs(fit.predict(ds.x(i), 1) - marginal) < 0.05);
}

TEST_CASE("mean squared probability error shrinks as n grows") {
    double mse[3];
    std::size_t sizes[3] = {500, 2000, 8000};
    for (int s = 0; s < 3; ++s) {
        Dataset ds = simulate_from_truth(sizes[s], 100 + static_cast<std::uint64_t>(s));
        PropensityFit fit = fit_propensity(ds, {});
        // fresh evaluation points from the same covariate law
        Dataset evalds = simulate_from_truth(4000, 999);
        double acc = 0.0;
        for (std::size_t i = 0; i < evalds.n(); ++i) {
            auto x = evalds.x(i);
            double diff = fit.predict(x, 1) - sigmoid(truth_eta(x[0], x[1]));
            acc += diff * diff;
        }
        mse[s] = acc / static_cast<double>(evalds.n());
    }
    CHECK(mse[1] < mse[0]);
    CHECK(mse[2] < mse[1]);
}
