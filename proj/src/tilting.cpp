#include "tiltsens/tilting.hpp"

#include <algorithm>
#include <cmath>

#include <nlohmann/json.hpp>

#include "tiltsens/errors.hpp"
#include "tiltsens/stats.hpp"

namespace tiltsens {

void validate_tilt(const TiltSpec& spec) {
    if (spec.arm != 0 && spec.arm != 1)
        throw ConfigError("tilt spec: arm must be 0 or 1");
    if (!std::isfinite(spec.gamma))
        throw ConfigError("tilt spec: gamma must be finite");
    if (const auto* cap = std::get_if<SmoothCapAbove>(&spec.s)) {
        if (!(cap->scale > 0.0)) throw ConfigError("smooth_cap_above: scale must be > 0");
    } else if (const auto* ramp = std::get_if<SmoothRampAbove>(&spec.s)) {
        if (!(ramp->scale > 0.0)) throw ConfigError("smooth_ramp_above: scale must be > 0");
    } else if (const auto* tab = std::get_if<TiltTable>(&spec.s)) {
        if (tab->y.size() < 2 || tab->y.size() != tab->s.size())
            throw ConfigError("tilt table: need >= 2 (y,s) knots of equal length");
        for (std::size_t i = 1; i < tab->y.size(); ++i)
            if (!(tab->y[i] > tab->y[i - 1]))
                throw ConfigError("tilt table: y knots must be strictly increasing");
    }
}

double eval_tilt(const TiltSpec& spec, double y) {
    return std::visit(
        [y](const auto& f) -> double {
            using T = std::decay_t<decltype(f)>;
            if constexpr (std::is_same_v<T, IdentityTilt>) {
                return y;
            } else if constexpr (std::is_same_v<T, SmoothCapAbove>) {
                double z = normal_cdf((f.cap - y) / f.scale);
                return y * z + (f.cap - y) * (1.0 - z);
            } else if constexpr (std::is_same_v<T, SmoothRampAbove>) {
                return y * normal_cdf((y - f.floor) / f.scale);
            } else {
                // flat extrapolation beyond the knot range
                if (y <= f.y.front()) return f.s.front();
                if (y >= f.y.back()) return f.s.back();
                auto it = std::upper_bound(f.y.begin(), f.y.end(), y);
                std::size_t hi = static_cast<std::size_t>(it - f.y.begin());
                std::size_t lo = hi - 1;
                double w = (y - f.y[lo]) / (f.y[hi] - f.y[lo]);
                return f.s[lo] + w * (f.s[hi] - f.s[lo]);
            }
        },
        spec.s);
}

double exp_tilt(const TiltSpec& spec, double y) {
    if (spec.gamma == 0.0) return 1.0;
    double e = spec.gamma * eval_tilt(spec, y);
    if (e > kTiltExponentMax) throw TiltOverflowError(y, e);
    return std::exp(e);
}

double implied_selection_logit(const TiltSpec& spec, double pi_other, double c) {
    (void)spec;
    if (!(pi_other > 0.0 && pi_other < 1.0))
        throw ValidationError("implied_selection_logit: probability must lie strictly in (0,1)");
    if (!(c > 0.0)) throw ValidationError("implied_selection_logit: c must be > 0");
    return std::log(pi_other / (1.0 - pi_other)) - std::log(c);
}

TiltFunction tilt_function_from_json(const nlohmann::json& j) {
    const std::string kind = j.value("kind", "identity");
    if (kind == "identity") return IdentityTilt{};
    if (kind == "smooth_cap_above")
        return SmoothCapAbove{j.at("cap").get<double>(), j.at("scale").get<double>()};
    if (kind == "smooth_ramp_above")
        return SmoothRampAbove{j.at("floor").get<double>(), j.at("scale").get<double>()};
    if (kind == "table")
        return TiltTable{j.at("y").get<std::vector<double>>(),
                         j.at("s").get<std::vector<double>>()};
    throw ConfigError("unknown tilting function kind: " + kind);
}

nlohmann::json tilt_function_to_json(const TiltFunction& f) {
    nlohmann::json j;
    std::visit(
        [&j](const auto& v) {
            using T = std::decay_t<decltype(v)>;
            if constexpr (std::is_same_v<T, IdentityTilt>) {
                j["kind"] = "identity";
            } else if constexpr (std::is_same_v<T, SmoothCapAbove>) {
                j["kind"] = "smooth_cap_above";
                j["cap"] = v.cap;
                j["scale"] = v.scale;
            } else if constexpr (std::is_same_v<T, SmoothRampAbove>) {
                j["kind"] = "smooth_ramp_above";
                j["floor"] = v.floor;
                j["scale"] = v.scale;
            } else {
                j["kind"] = "table";
                j["y"] = v.y;
                j["s"] = v.s;
            }
        },
        f);
    return j;
}

TiltSpec tilt_spec_from_json(const nlohmann::json& j) {
    TiltSpec spec;
    spec.arm = j.at("arm").get<int>();
    spec.gamma = j.at("gamma").get<double>();
    if (j.contains("s")) spec.s = tilt_function_from_json(j.at("s"));
    validate_tilt(spec);
    return spec;
}

nlohmann::json tilt_spec_to_json(const TiltSpec& spec) {
    nlohmann::json j;
    j["arm"] = spec.arm;
    j["gamma"] = spec.gamma;
    j["s"] = tilt_function_to_json(spec.s);
    return j;
}

} // namespace tiltsens
