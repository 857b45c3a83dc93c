#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "tiltsens/errors.hpp"
#include "tiltsens/stats.hpp"
#include "tiltsens/tilting.hpp"

#include <nlohmann/json.hpp>

using namespace tiltsens;

TEST_CASE("normal_cdf hits known values far into the tails") {
    CHECK(normal_cdf(0.0) == doctest::Approx(0.5).epsilon(1e-14));
    CHECK(normal_cdf(1.0) == doctest::Approx(0.8413447460685429).epsilon(1e-13));
    // Phi(5) upper tail = 2.8665157187919391e-7
    CHECK(1.0 - normal_cdf(5.0) == doctest::Approx(2.8665157187919391e-7).epsilon(1e-10));
    CHECK(normal_cdf(-8.0) == doctest::Approx(6.22096057427178e-16).epsilon(1e-8));
}

TEST_CASE("eval_tilt: smooth cap at the cap point gives cap/2") {
    TiltSpec spec{1, 1.0, SmoothCapAbove{4000.0, 200.0}};
    CHECK(eval_tilt(spec, 4000.0) == doctest::Approx(2000.0).epsilon(1e-14));
}

TEST_CASE("eval_tilt: smooth ramp at the floor gives floor/2") {
    TiltSpec spec{0, 1.0, SmoothRampAbove{2000.0, 2000.0}};
    CHECK(eval_tilt(spec, 2000.0) == doctest::Approx(1000.0).epsilon(1e-14));
}

TEST_CASE("eval_tilt: smooth cap well below the cap is nearly the identity") {
    TiltSpec spec{1, 1.0, SmoothCapAbove{4000.0, 200.0}};
    double s = eval_tilt(spec, 3000.0);
    // exact value 3000 - 2000*(1 - Phi(5)) = 2999.9994266968562
    CHECK(s == doctest::Approx(2999.9994266968562).epsilon(1e-12));
    CHECK(std::abs(s / 3000.0 - 1.0) < 1e-6);
}

TEST_CASE("eval_tilt: smooth cap stays below the cap on a dense grid") {
    TiltSpec spec{1, 1.0, SmoothCapAbove{4000.0, 200.0}};
    for (int i = 0; i <= 2000; ++i) {
        double y = 8000.0 * i / 2000.0;
        CHECK(eval_tilt(spec, y) <= 4000.0 + 1e-9);
    }
}

TEST_CASE("eval_tilt: user table reproduces knots exactly and extrapolates flat") {
    TiltTable tab{{0.0, 1.0, 3.0}, {5.0, 7.0, -1.0}};
    TiltSpec spec{1, 1.0, tab};
    CHECK(eval_tilt(spec, 0.0) == 5.0);
    CHECK(eval_tilt(spec, 1.0) == 7.0);
    CHECK(eval_tilt(spec, 3.0) == -1.0);
    CHECK(eval_tilt(spec, 2.0) == doctest::Approx(3.0)); // midpoint of (7,-1)
    CHECK(eval_tilt(spec, -10.0) == 5.0);
    CHECK(eval_tilt(spec, 10.0) == -1.0);
}

TEST_CASE("exp_tilt basics") {
    TiltSpec zero{1, 0.0, SmoothCapAbove{4000.0, 200.0}};
    for (double y : {-100.0, 0.0, 3500.0, 1e7}) CHECK(exp_tilt(zero, y) == 1.0);

    TiltSpec log2{1, std::log(2.0), IdentityTilt{}};
    CHECK(exp_tilt(log2, 1.0) == doctest::Approx(2.0).epsilon(1e-14));

    TiltSpec paper{1, 0.003, SmoothCapAbove{4000.0, 200.0}};
    CHECK(exp_tilt(paper, 4000.0) == doctest::Approx(403.428793492735123).epsilon(1e-12));
}

TEST_CASE("exp_tilt overflow names the offending y") {
    TiltSpec spec{1, 1.0, IdentityTilt{}};
    CHECK_THROWS_AS(exp_tilt(spec, 701.0), TiltOverflowError);
    try {
        exp_tilt(spec, 701.0);
    } catch (const TiltOverflowError& e) {
        CHECK(e.y() == 701.0);
        CHECK(std::string(e.what()).find("701") != std::string::npos);
    }
    // large negative exponents are allowed (they underflow gracefully)
    CHECK(exp_tilt(spec, -800.0) == 0.0);
}

TEST_CASE("implied_selection_logit") {
    TiltSpec spec{1, 0.0, IdentityTilt{}};
    CHECK(implied_selection_logit(spec, 0.5, 1.0) == doctest::Approx(0.0).epsilon(1e-14));
    CHECK(implied_selection_logit(spec, 0.5, 1.5) ==
          doctest::Approx(-0.405465108108164382).epsilon(1e-12));
    CHECK(implied_selection_logit(spec, 0.731058578630004879, 1.0) ==
          doctest::Approx(1.0).epsilon(1e-12));
    CHECK_THROWS_AS(implied_selection_logit(spec, 0.0, 1.0), ValidationError);
    CHECK_THROWS_AS(implied_selection_logit(spec, 1.0, 1.0), ValidationError);
    CHECK_THROWS_AS(implied_selection_logit(spec, 0.5, 0.0), ValidationError);
}

TEST_CASE("tilt spec validation and JSON round trip") {
    CHECK_THROWS_AS(validate_tilt(TiltSpec{1, 0.0, SmoothCapAbove{100.0, 0.0}}), ConfigError);
    CHECK_THROWS_AS(validate_tilt(TiltSpec{1, 0.0, TiltTable{{1.0, 1.0}, {0.0, 1.0}}}),
                    ConfigError);

    auto j = nlohmann::json::parse(
        R"({"arm":1,"gamma":0.003,"s":{"kind":"smooth_cap_above","cap":4000,"scale":200}})");
    TiltSpec spec = tilt_spec_from_json(j);
    CHECK(spec.arm == 1);
    CHECK(spec.gamma == 0.003);
    TiltSpec back = tilt_spec_from_json(tilt_spec_to_json(spec));
    CHECK(eval_tilt(back, 3123.0) == eval_tilt(spec, 3123.0));
}
