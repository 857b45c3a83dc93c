#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "tiltsens/dataset.hpp"
#include "tiltsens/errors.hpp"
#include "tiltsens/outcome_cdf.hpp"
#include "tiltsens/rng.hpp"
#include "tiltsens/stats.hpp"

using namespace tiltsens;

namespace {

// Literal transcription of the leave-one-out criterion; O(n^3), test-only.
double cv_reference(const Dataset& ds, std::span<const double> beta, double h) {
    const std::size_t n = ds.n();
    std::vector<double> u(n);
    for (std::size_t i = 0; i < n; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < ds.p(); ++j) s += beta[j] * ds.x(i)[j];
        u[i] = s;
    }
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t k = 0; k < n; ++k) {
            double num = 0.0, den = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
                if (j == i) continue;
                double w = kernel_value(4, (u[j] - u[i]) / h);
                den += w;
                if (ds.y(j) <= ds.y(k)) num += w;
            }
            double F = std::clamp(num / den, 0.0, 1.0);
            double d = (ds.y(i) <= ds.y(k) ? 1.0 : 0.0) - F;
            acc += d * d;
        }
    }
    return acc / (static_cast<double>(n) * static_cast<double>(n));
}

Dataset single_index_sample(std::size_t n, std::uint64_t seed, double beta2, int arm = 1) {
    auto eng = make_engine(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::uniform_real_distribution<double> unif(-1.5, 1.5);
    std::vector<ObservationRecord> rows;
    for (std::size_t i = 0; i < n; ++i) {
        double x1 = unif(eng), x2 = unif(eng);
        double y = x1 + beta2 * x2 + gauss(eng); // F(y|x) = Phi(y - x'beta)
        rows.push_back({{x1, x2}, arm, y});
    }
    return Dataset({"x1", "x2"}, rows);
}

OutcomeFit two_point_fit() {
    std::vector<double> idx{0.0, 0.0}, ys{0.0, 1.0};
    return OutcomeFit(1, {1.0}, 1.0, 1.0, idx, ys);
}

} // namespace

TEST_CASE("kernel order conditions hold numerically") {
    CHECK(std::abs(kernel_moment(2, 0) - 1.0) < 1e-8);
    CHECK(std::abs(kernel_moment(2, 1)) < 1e-8);
    CHECK(std::abs(kernel_moment(4, 0) - 1.0) < 1e-8);
    CHECK(std::abs(kernel_moment(4, 1)) < 1e-8);
    CHECK(std::abs(kernel_moment(4, 2)) < 1e-8);
    CHECK(std::abs(kernel_moment(4, 3)) < 1e-8);
    CHECK(std::abs(kernel_moment(4, 4)) > 0.1); // genuinely 4th order, not higher
}

TEST_CASE("cv_criterion vanishes for a constant outcome") {
    std::vector<ObservationRecord> rows;
    for (int i = 0; i < 12; ++i) rows.push_back({{double(i) / 12.0}, 1, 5.0});
    Dataset ds({"x"}, rows);
    CHECK(cv_criterion(ds, std::vector<double>{1.0}, 0.4) == doctest::Approx(0.0).epsilon(1e-14));
}

TEST_CASE("cv_criterion on two points equals the hand-computed sum") {
    Dataset ds({"x"}, {{{0.0}, 1, 0.0}, {{1.0}, 1, 1.0}});
    // each leave-one-out CDF is the other point's step; two of the four terms miss
    CHECK(cv_criterion(ds, std::vector<double>{1.0}, 1.0) == doctest::Approx(0.5).epsilon(1e-14));
}

TEST_CASE("cv_criterion matches the naive reference on random data") {
    auto eng = make_engine(77);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    std::vector<ObservationRecord> rows;
    for (int i = 0; i < 24; ++i) {
        // discrete-ish outcomes to exercise tie handling
        double y = std::floor(unif(eng) * 6.0);
        rows.push_back({{unif(eng), unif(eng)}, 1, y});
    }
    Dataset ds({"x1", "x2"}, rows);
    for (double b2 : {-0.7, 0.0, 1.3}) {
        std::vector<double> beta{1.0, b2};
        for (double h : {0.3, 0.8}) {
            double fast = cv_criterion(ds, beta, h);
            double slow = cv_reference(ds, beta, h);
            CHECK(fast == doctest::Approx(slow).epsilon(1e-11));
        }
    }
}

TEST_CASE("cv_criterion with a vanishing bandwidth reports an undefined window") {
    Dataset ds({"x"}, {{{0.0}, 1, 0.0}, {{1.0}, 1, 1.0}, {{2.0}, 1, 0.5}});
    CHECK_THROWS_AS(cv_criterion(ds, std::vector<double>{1.0}, 1e-300), NumericError);
}

TEST_CASE("fit_single_index with p=1 only searches the bandwidth") {
    Dataset ds = [] {
        auto eng = make_engine(5);
        std::normal_distribution<double> gauss(0.0, 1.0);
        std::vector<ObservationRecord> rows;
        for (int i = 0; i < 120; ++i) {
            double x = gauss(eng);
            rows.push_back({{x}, 0, x + 0.5 * gauss(eng)});
        }
        return Dataset({"x"}, rows);
    }();
    OutcomeFit fit = fit_single_index(ds, {});
    CHECK(fit.beta().size() == 1);
    CHECK(fit.beta()[0] == 1.0);
    CHECK(fit.arm() == 0);
    // definitional bandwidth ratio
    double ratio = fit.h_stage2() / fit.h_stage1();
    CHECK(ratio == doctest::Approx(std::pow(120.0, -4.0 / 45.0)).epsilon(1e-14));
}

TEST_CASE("fit_single_index is deterministic under a seed and rejects mixed arms") {
    Dataset ds = single_index_sample(90, 8, 0.5);
    SingleIndexConfig cfg;
    cfg.restarts = 2;
    cfg.max_iter = 60;
    OutcomeFit a = fit_single_index(ds, cfg);
    OutcomeFit b = fit_single_index(ds, cfg);
    CHECK(a.beta() == b.beta());
    CHECK(a.h_stage1() == b.h_stage1());

    std::vector<ObservationRecord> rows;
    for (int i = 0; i < 20; ++i) rows.push_back({{double(i)}, i % 2, double(i)});
    Dataset mixed({"x"}, rows);
    CHECK_THROWS_AS(fit_single_index(mixed, {}), ValidationError);
}

TEST_CASE("cond_cdf boundary values and the single-point step") {
    Dataset ds = single_index_sample(60, 10, 0.5);
    SingleIndexConfig cfg;
    cfg.restarts = 1;
    cfg.max_iter = 40;
    OutcomeFit fit = fit_single_index(ds, cfg);
    std::vector<double> x{0.2, -0.1};
    CHECK(fit.cond_cdf(fit.y_max() + 1.0, x) == doctest::Approx(1.0));
    CHECK(fit.cond_cdf(fit.y_min() - 1.0, x) == doctest::Approx(0.0));

    std::vector<double> idx{0.0}, ys{3.5};
    OutcomeFit point(1, {1.0}, 1.0, 1.0, idx, ys);
    std::vector<double> x0{0.0};
    CHECK(point.cond_cdf(3.4999, x0) == 0.0);
    CHECK(point.cond_cdf(3.5, x0) == 1.0);
}

TEST_CASE("cond_cdf is a nondecreasing right-continuous CDF in y") {
    Dataset ds = single_index_sample(150, 12, 0.5);
    SingleIndexConfig cfg;
    cfg.restarts = 1;
    cfg.max_iter = 60;
    OutcomeFit fit = fit_single_index(ds, cfg);
    std::vector<double> x{0.3, 0.7};
    double prev = 0.0;
    for (int k = -40; k <= 40; ++k) {
        double F = fit.cond_cdf(0.1 * k, x);
        CHECK(F >= prev - 1e-15);
        CHECK(F >= 0.0);
        CHECK(F <= 1.0);
        prev = F;
    }
    // right continuity at training atoms
    for (std::size_t i = 0; i < 5; ++i) {
        double atom = fit.train_y()[i];
        CHECK(fit.cond_cdf(atom, x) ==
              doctest::Approx(fit.cond_cdf(atom + 1e-12, x)).epsilon(1e-12));
    }
}

TEST_CASE("moments on constructed fits match hand-computed sums") {
    OutcomeFit fit = two_point_fit();
    std::vector<double> x{0.0};
    SUBCASE("normalization: g == 1 integrates to 1") {
        CHECK(fit.moment([](double) { return 1.0; }, x) == doctest::Approx(1.0).epsilon(1e-15));
    }
    SUBCASE("two equally weighted points with an exponential transform") {
        double v = fit.moment([](double y) { return std::exp(y * std::log(2.0)); }, x);
        CHECK(v == doctest::Approx(1.5).epsilon(1e-14));
    }
    SUBCASE("c_factor and tilted_mean at gamma = log 2, identity tilt") {
        TiltSpec spec{1, std::log(2.0), IdentityTilt{}};
        CHECK(fit.c_factor(spec, x) == doctest::Approx(1.5).epsilon(1e-14));
        CHECK(fit.tilted_mean(spec, x) == doctest::Approx(2.0 / 3.0).epsilon(1e-14));
    }
    SUBCASE("gamma = 0 recovers the plain conditional mean") {
        TiltSpec spec{1, 0.0, IdentityTilt{}};
        CHECK(fit.c_factor(spec, x) == doctest::Approx(1.0).epsilon(1e-15));
        CHECK(fit.tilted_mean(spec, x) == doctest::Approx(0.5).epsilon(1e-15));
    }
}

TEST_CASE("single training point: moments collapse to that point") {
    std::vector<double> idx{0.0}, ys{4.2};
    OutcomeFit fit(1, {1.0}, 1.0, 1.0, idx, ys);
    std::vector<double> x{0.0};
    CHECK(fit.moment([](double y) { return y; }, x) == doctest::Approx(4.2));
    for (double g : {-0.4, 0.0, 0.9}) {
        TiltSpec spec{1, g, IdentityTilt{}};
        CHECK(fit.tilted_mean(spec, x) == doctest::Approx(4.2).epsilon(1e-13));
        CHECK(fit.c_factor(spec, x) == doctest::Approx(std::exp(g * 4.2)).epsilon(1e-13));
    }
}

TEST_CASE("tilted_mean stays in the training range and is monotone in gamma") {
    Dataset ds = single_index_sample(200, 14, 0.5);
    SingleIndexConfig cfg;
    cfg.restarts = 1;
    cfg.max_iter = 60;
    OutcomeFit fit = fit_single_index(ds, cfg);
    std::vector<double> xs[3] = {{0.0, 0.0}, {0.8, -0.6}, {-1.2, 1.0}};
    for (const auto& x : xs) {
        double prev = -1e300;
        for (double g = -0.8; g <= 0.8; g += 0.1) {
            TiltSpec spec{1, g, IdentityTilt{}};
            double tm = fit.tilted_mean(spec, x);
            CHECK(tm >= fit.y_min() - 1e-9);
            CHECK(tm <= fit.y_max() + 1e-9);
            CHECK(tm >= prev - 1e-10);
            prev = tm;
        }
    }
}

TEST_CASE("index recovery: beta2 lands near the truth") {
    SingleIndexConfig cfg;
    cfg.restarts = 2;
    cfg.max_iter = 80;
    double err = 0.0;
    const int reps = 5;
    for (int r = 0; r < reps; ++r) {
        Dataset ds = single_index_sample(600, 200 + static_cast<std::uint64_t>(r), 0.5);
        OutcomeFit fit = fit_single_index(ds, cfg);
        err += std::abs(fit.beta()[1] - 0.5) / reps;
    }
    CHECK(err < 0.2);
}

TEST_CASE("conditional CDF accuracy improves with n on a known truth") {
    double err[3];
    std::size_t sizes[3] = {500, 2000, 8000};
    for (int s = 0; s < 3; ++s) {
        auto eng = make_engine(400 + static_cast<std::uint64_t>(s));
        std::normal_distribution<double> gauss(0.0, 1.0);
        std::uniform_real_distribution<double> unif(-1.5, 1.5);
        std::vector<ObservationRecord> rows;
        for (std::size_t i = 0; i < sizes[s]; ++i) {
            double x = unif(eng);
            rows.push_back({{x}, 1, x + gauss(eng)});
        }
        Dataset ds({"x"}, rows);
        OutcomeFit fit = fit_single_index(ds, {});
        double acc = 0.0;
        int cnt = 0;
        for (double x = -1.0; x <= 1.0; x += 0.25) {
            std::vector<double> xv{x};
            for (double y = -1.5; y <= 1.5; y += 0.25) {
                acc += std::abs(fit.cond_cdf(y, xv) - normal_cdf(y - x));
                ++cnt;
            }
        }
        err[s] = acc / cnt;
    }
    CHECK(err[1] < err[0]);
    CHECK(err[2] < err[1]);
}
