#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "support/analytic_law.hpp"
#include "tiltsens/diagnostics.hpp"
#include "tiltsens/errors.hpp"
#include "tiltsens/rng.hpp"

using namespace tiltsens;
using namespace tiltsens::testsupport;

namespace {

// One shared fitted bundle; fitting is the slow part.
const Dataset& train_data() {
    static Dataset ds = GaussianLaw{}.sample(600, 42);
    return ds;
}

const NuisanceBundle& fitted_bundle() {
    static NuisanceBundle nb = [] {
        const Dataset& ds = train_data();
        PropensityFit pf = fit_propensity(ds, {});
        SingleIndexConfig cfg;
        cfg.restarts = 1;
        OutcomeFit f0 = fit_single_index(ds.subset(ds.arm_indices(0)), cfg);
        OutcomeFit f1 = fit_single_index(ds.subset(ds.arm_indices(1)), cfg);
        return NuisanceBundle(pf, f0, f1);
    }();
    return nb;
}

} // namespace

TEST_CASE("ks_statistic on hand-checkable samples") {
    std::vector<double> a{1.0, 2.0, 3.0};
    CHECK(ks_statistic(a, a) == 0.0);
    std::vector<double> zero{0.0}, one{1.0};
    CHECK(ks_statistic(zero, one) == 1.0);
    std::vector<double> b{1.0, 2.0, 4.0};
    CHECK(ks_statistic(a, b) == doctest::Approx(1.0 / 3.0).epsilon(1e-14));
}

TEST_CASE("ks_statistic is symmetric and invariant under monotone transforms") {
    auto eng = make_engine(3);
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::vector<double> a(40), b(55);
    for (auto& v : a) v = gauss(eng);
    for (auto& v : b) v = gauss(eng) + 0.4;
    CHECK(ks_statistic(a, b) == ks_statistic(b, a));
    auto mono = [](double v) { return std::exp(0.7 * v) + v; };
    std::vector<double> am(a), bm(b);
    std::transform(am.begin(), am.end(), am.begin(), mono);
    std::transform(bm.begin(), bm.end(), bm.begin(), mono);
    CHECK(ks_statistic(am, bm) == doctest::Approx(ks_statistic(a, b)).epsilon(1e-14));
}

TEST_CASE("generate_semiparametric is deterministic under the seed") {
    const NuisanceBundle& nb = fitted_bundle();
    Dataset a = generate_semiparametric(nb, train_data(), 500, 9);
    Dataset b = generate_semiparametric(nb, train_data(), 500, 9);
    Dataset c = generate_semiparametric(nb, train_data(), 500, 10);
    bool same = true, diff = false;
    for (std::size_t i = 0; i < a.n(); ++i) {
        if (a.y(i) != b.y(i) || a.t(i) != b.t(i) || a.x(i)[0] != b.x(i)[0]) same = false;
        if (a.y(i) != c.y(i)) diff = true;
    }
    CHECK(same);
    CHECK(diff);
}

TEST_CASE("generated treated fraction tracks the mean fitted propensity") {
    const NuisanceBundle& nb = fitted_bundle();
    const Dataset& xs = train_data();
    const std::size_t n = 100000;
    Dataset synth = generate_semiparametric(nb, xs, n, 31);
    double pbar = 0.0;
    for (std::size_t i = 0; i < xs.n(); ++i) pbar += nb.pi(1, xs.x(i));
    pbar /= static_cast<double>(xs.n());
    double mc_se = std::sqrt(pbar * (1.0 - pbar) / static_cast<double>(n));
    CHECK(std::abs(synth.treated_fraction() - pbar) < 3.0 * mc_se);
}

TEST_CASE("generated arm means track the propensity-weighted fitted outcome means") {
    const NuisanceBundle& nb = fitted_bundle();
    const Dataset& xs = train_data();
    const std::size_t n = 100000;
    Dataset synth = generate_semiparametric(nb, xs, n, 57);
    TiltSpec untilted1{1, 0.0, IdentityTilt{}};
    for (int arm = 0; arm < 2; ++arm) {
        TiltSpec spec{arm, 0.0, IdentityTilt{}};
        double num = 0.0, den = 0.0;
        for (std::size_t i = 0; i < xs.n(); ++i) {
            auto x = xs.x(i);
            double p = nb.pi(arm, x);
            num += p * nb.tilted_moments(arm, spec, x).mean_y;
            den += p;
        }
        double oracle = num / den;
        std::vector<double> ys;
        for (std::size_t i = 0; i < synth.n(); ++i)
            if (synth.t(i) == arm) ys.push_back(synth.y(i));
        double m = mean(ys);
        double mc_se = sample_sd(ys) / std::sqrt(static_cast<double>(ys.size()));
        CHECK(std::abs(m - oracle) < 3.0 * mc_se);
    }
}

TEST_CASE("gof_report self-consistency: data generated from the bundle itself") {
    const NuisanceBundle& nb = fitted_bundle();
    Dataset observed = generate_semiparametric(nb, train_data(), 20000, 77);
    std::vector<SubgroupSpec> subgroups{
        {"low x", "x", -10.0, -0.3, std::nullopt},
        {"mid x", "x", -0.3, 0.3, std::nullopt},
        {"high x", "x", 0.3, 10.0, std::nullopt},
    };
    GofReport rep = gof_report(observed, nb, subgroups, 100000, 5);
    REQUIRE(rep.rows.size() == 3);
    std::vector<double> ks;
    for (const auto& r : rep.rows) {
        CHECK(r.treat_evaluable);
        for (int arm = 0; arm < 2; ++arm) {
            REQUIRE(r.y_evaluable[arm]);
            CHECK(r.ks_y[arm] >= 0.0);
            CHECK(r.ks_y[arm] <= 1.0);
            ks.push_back(r.ks_y[arm]);
        }
    }
    std::sort(ks.begin(), ks.end());
    double median = ks[ks.size() / 2];
    CHECK(median < 0.05);
}

TEST_CASE("gof_report marks unmatched subgroups and repeats duplicates identically") {
    const NuisanceBundle& nb = fitted_bundle();
    Dataset observed = generate_semiparametric(nb, train_data(), 2000, 8);
    std::vector<SubgroupSpec> subgroups{
        {"nobody", "x", 50.0, 60.0, std::nullopt},
        {"all", "x", std::nullopt, std::nullopt, std::nullopt},
        {"all again", "x", std::nullopt, std::nullopt, std::nullopt},
    };
    GofReport rep = gof_report(observed, nb, subgroups, 5000, 12);
    CHECK(!rep.rows[0].treat_evaluable);
    CHECK(!rep.rows[0].y_evaluable[0]);
    CHECK(rep.rows[1].treat_abs_diff == rep.rows[2].treat_abs_diff);
    CHECK(rep.rows[1].ks_y[1] == rep.rows[2].ks_y[1]);
}

TEST_CASE("parametric baseline recovers a linear-normal truth") {
    auto eng = make_engine(19);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::vector<ObservationRecord> rows;
    for (int i = 0; i < 4000; ++i) {
        double x = 2.0 * unif(eng) - 1.0;
        int t = unif(eng) < sigmoid(0.3 + 0.9 * x) ? 1 : 0;
        double y = (t ? 1.5 : 0.5) + 2.0 * x + 0.8 * gauss(eng);
        rows.push_back({{x}, t, y});
    }
    Dataset ds({"x"}, rows);
    ParametricBaseline pb = fit_parametric_baseline(ds);
    CHECK(pb.logit_coef[0] == doctest::Approx(0.9).epsilon(0.25));
    CHECK(pb.arm[1].intercept == doctest::Approx(1.5).epsilon(0.1));
    CHECK(pb.arm[0].coef[0] == doctest::Approx(2.0).epsilon(0.1));
    CHECK(pb.arm[0].sigma == doctest::Approx(0.8).epsilon(0.1));

    Dataset a = generate_parametric(pb, ds, 300, 4);
    Dataset b = generate_parametric(pb, ds, 300, 4);
    bool same = true;
    for (std::size_t i = 0; i < a.n(); ++i)
        if (a.y(i) != b.y(i)) same = false;
    CHECK(same);
}
