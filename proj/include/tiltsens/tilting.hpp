#pragma once

#include <variant>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace tiltsens {

struct IdentityTilt {};

// s(y) = y*Phi((cap-y)/scale) + (cap-y)*(1-Phi((cap-y)/scale)); smoothly caps
// the outcome from above at `cap`.
struct SmoothCapAbove {
    double cap = 0.0;
    double scale = 1.0;
};

// s(y) = y*Phi((y-floor)/scale); smoothly ramps in above `floor`.
struct SmoothRampAbove {
    double floor = 0.0;
    double scale = 1.0;
};

// Piecewise-linear interpolation of user-supplied knots, flat beyond the ends.
struct TiltTable {
    std::vector<double> y;
    std::vector<double> s;
};

using TiltFunction = std::variant<IdentityTilt, SmoothCapAbove, SmoothRampAbove, TiltTable>;

struct TiltSpec {
    int arm = 1;
    double gamma = 0.0;
    TiltFunction s = IdentityTilt{};
};

// gamma*s(y) above this threshold aborts the run rather than saturating.
inline constexpr double kTiltExponentMax = 700.0;

void validate_tilt(const TiltSpec& spec);

double eval_tilt(const TiltSpec& spec, double y);

// exp(gamma * s(y)); throws TiltOverflowError when the exponent exceeds 700.
double exp_tilt(const TiltSpec& spec, double y);

// h(x; gamma_t) = logit(pi_other) - log(c) with pi_other = P(T=1-t|X=x) and
// c = C_t(gamma_t; x), both computed by the caller at its x.
double implied_selection_logit(const TiltSpec& spec, double pi_other, double c);

TiltSpec tilt_spec_from_json(const nlohmann::json& j);
nlohmann::json tilt_spec_to_json(const TiltSpec& spec);
TiltFunction tilt_function_from_json(const nlohmann::json& j);
nlohmann::json tilt_function_to_json(const TiltFunction& f);

} // namespace tiltsens
