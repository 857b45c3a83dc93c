#pragma once

// Continuous synthetic truth with closed-form nuisances: one covariate,
// logistic treatment assignment, Gaussian outcome per arm. For the identity
// tilt every tilted moment has a closed form, so the law doubles as an exact
// NuisanceModel oracle.

#include <array>
#include <cmath>

#include "tiltsens/dataset.hpp"
#include "tiltsens/estimator.hpp"
#include "tiltsens/rng.hpp"
#include "tiltsens/stats.hpp"

namespace tiltsens::testsupport {

struct GaussianLaw : NuisanceModel {
    double a = 0.2, b = 0.8;                  // logit P(T=1|x) = a + b x
    std::array<double, 2> intercept{0.0, 0.4};
    std::array<double, 2> slope{1.0, 0.8};
    std::array<double, 2> sigma{1.0, 0.7};
    double x_half_range = 1.5;                // X ~ Uniform(-r, r)

    double mean_y_at(int t, double x) const {
        return intercept[static_cast<std::size_t>(t)] + slope[static_cast<std::size_t>(t)] * x;
    }

    double pi(int t, std::span<const double> x) const override {
        double p1 = sigmoid(a + b * x[0]);
        return t == 1 ? p1 : 1.0 - p1;
    }

    TiltedMoments tilted_moments(int t, const TiltSpec& spec,
                                 std::span<const double> x) const override {
        if (!std::holds_alternative<IdentityTilt>(spec.s))
            throw std::runtime_error("GaussianLaw oracle: identity tilt only");
        double m = mean_y_at(t, x[0]);
        double s2 = sigma[static_cast<std::size_t>(t)] * sigma[static_cast<std::size_t>(t)];
        double g = spec.gamma;
        TiltedMoments out;
        out.mean_y = m;
        out.mgf = std::exp(g * m + 0.5 * g * g * s2);
        out.mean_y_tilt = (m + g * s2) * out.mgf;
        return out;
    }

    // E[pi_t(X)] for X uniform: the logistic integral has a closed form.
    double mean_pi(int t) const {
        double r = x_half_range;
        double up = std::log1p(std::exp(a + b * r));
        double lo = std::log1p(std::exp(a - b * r));
        double mean_pi1 = (up - lo) / (2.0 * r * b);
        return t == 1 ? mean_pi1 : 1.0 - mean_pi1;
    }

    // Exact psi_t(gamma) for the identity tilt: the tilted conditional mean is
    // m_t(x) + gamma sigma_t^2, so the x-integral separates.
    double exact_psi(int t, double gamma) const {
        double s2 = sigma[static_cast<std::size_t>(t)] * sigma[static_cast<std::size_t>(t)];
        return intercept[static_cast<std::size_t>(t)] + gamma * s2 * mean_pi(1 - t);
    }

    Dataset sample(std::size_t n, std::uint64_t seed) const {
        auto eng = make_engine(seed);
        std::uniform_real_distribution<double> unif(0.0, 1.0);
        std::normal_distribution<double> gauss(0.0, 1.0);
        std::vector<ObservationRecord> rows;
        rows.reserve(n);
        for (std::size_t i = 0; i < n; ++i) {
            double x = x_half_range * (2.0 * unif(eng) - 1.0);
            int t = unif(eng) < sigmoid(a + b * x) ? 1 : 0;
            double y = mean_y_at(t, x) + sigma[static_cast<std::size_t>(t)] * gauss(eng);
            rows.push_back({{x}, t, y});
        }
        return Dataset({"x"}, rows);
    }
};

} // namespace tiltsens::testsupport
