#pragma once

// Fully enumerable observed-data laws for oracle-based tests: finitely many
// covariate cells, exact treatment probabilities per cell, finite outcome
// distributions per (arm, cell). Serves both as an exact NuisanceModel and as
// an independent brute-force integrator of the identification functional.

#include <array>
#include <cmath>
#include <stdexcept>
#include <utility>
#include <vector>

#include "tiltsens/dataset.hpp"
#include "tiltsens/estimator.hpp"
#include "tiltsens/tilting.hpp"

namespace tiltsens::testsupport {

struct DiscreteLaw : NuisanceModel {
    struct Cell {
        std::vector<double> x;
        int weight = 1; // covariate-law weight (rational probabilities)
        double pi1 = 0.5;
        // per arm: list of (y, conditional probability)
        std::array<std::vector<std::pair<double, double>>, 2> outcome;
    };
    std::vector<Cell> cells;

    int total_weight() const {
        int w = 0;
        for (const auto& c : cells) w += c.weight;
        return w;
    }

    const Cell& cell_at(std::span<const double> x) const {
        for (const auto& c : cells) {
            if (c.x.size() != x.size()) continue;
            bool same = true;
            for (std::size_t j = 0; j < x.size(); ++j)
                if (c.x[j] != x[j]) same = false;
            if (same) return c;
        }
        throw std::runtime_error("DiscreteLaw: covariate value not in the law's support");
    }

    double pi(int t, std::span<const double> x) const override {
        double p1 = cell_at(x).pi1;
        return t == 1 ? p1 : 1.0 - p1;
    }

    TiltedMoments tilted_moments(int t, const TiltSpec& spec,
                                 std::span<const double> x) const override {
        const auto& atoms = cell_at(x).outcome[static_cast<std::size_t>(t)];
        TiltedMoments m;
        double sy = 0.0, se = 0.0, sye = 0.0;
        for (const auto& [y, p] : atoms) {
            double e = std::exp(spec.gamma * eval_tilt(spec, y));
            sy += p * y;
            se += p * e;
            sye += p * y * e;
        }
        m.mean_y = sy;
        m.mgf = se;
        m.mean_y_tilt = sye;
        return m;
    }

    // Brute-force enumeration of the identification formula, written directly
    // from its display: adjustment term plus tilted-mean term per cell.
    double enumerate_psi(const TiltSpec& spec, int t) const {
        double total = 0.0, wsum = 0.0;
        for (const auto& c : cells) {
            const auto& atoms = c.outcome[static_cast<std::size_t>(t)];
            double mean_y = 0.0, num = 0.0, den = 0.0;
            for (const auto& [y, p] : atoms) {
                mean_y += p * y;
                double e = std::exp(spec.gamma * eval_tilt(spec, y));
                num += p * y * e;
                den += p * e;
            }
            double pi_t = t == 1 ? c.pi1 : 1.0 - c.pi1;
            double w = static_cast<double>(c.weight);
            total += w * (mean_y * pi_t + (num / den) * (1.0 - pi_t));
            wsum += w;
        }
        return total / wsum;
    }

    // Exact expectation of f(x, t_obs, y) under the law.
    template <typename F> double expectation(F&& f) const {
        double total = 0.0, wsum = 0.0;
        for (const auto& c : cells) {
            double cell_acc = 0.0;
            for (int t_obs = 0; t_obs < 2; ++t_obs) {
                double pt = t_obs == 1 ? c.pi1 : 1.0 - c.pi1;
                for (const auto& [y, p] : c.outcome[static_cast<std::size_t>(t_obs)])
                    cell_acc += pt * p * f(std::span<const double>(c.x), t_obs, y);
            }
            total += static_cast<double>(c.weight) * cell_acc;
            wsum += static_cast<double>(c.weight);
        }
        return total / wsum;
    }

    // Covariate sample matching the cell weights (for plug-in averaging).
    Dataset covariate_sample() const {
        std::vector<ObservationRecord> rows;
        for (const auto& c : cells)
            for (int r = 0; r < c.weight; ++r) rows.push_back({c.x, 0, 0.0});
        std::vector<std::string> names;
        for (std::size_t j = 0; j < cells.front().x.size(); ++j)
            names.push_back("x" + std::to_string(j + 1));
        return Dataset(names, rows);
    }

    DiscreteLaw shifted(double c) const {
        DiscreteLaw out = *this;
        for (auto& cell : out.cells)
            for (auto& arm : cell.outcome)
                for (auto& [y, p] : arm) y += c;
        return out;
    }
};

// The worked no-covariate example: pi1 = 1/2, Y | T=1 uniform on {0,1},
// Y | T=0 uniform on {0,1} as well.
inline DiscreteLaw coinflip_law() {
    DiscreteLaw law;
    DiscreteLaw::Cell cell;
    cell.x = {0.0};
    cell.weight = 1;
    cell.pi1 = 0.5;
    cell.outcome[0] = {{0.0, 0.5}, {1.0, 0.5}};
    cell.outcome[1] = {{0.0, 0.5}, {1.0, 0.5}};
    law.cells.push_back(cell);
    return law;
}

// A three-cell, asymmetric law with four-point outcome distributions.
inline DiscreteLaw three_cell_law() {
    DiscreteLaw law;
    using Cell = DiscreteLaw::Cell;
    Cell a;
    a.x = {0.0, 1.0};
    a.weight = 2;
    a.pi1 = 0.3;
    a.outcome[0] = {{-1.0, 0.2}, {0.0, 0.3}, {1.0, 0.4}, {2.0, 0.1}};
    a.outcome[1] = {{0.0, 0.5}, {1.5, 0.25}, {2.0, 0.15}, {3.0, 0.1}};
    Cell b;
    b.x = {1.0, 0.0};
    b.weight = 3;
    b.pi1 = 0.6;
    b.outcome[0] = {{0.5, 0.5}, {1.0, 0.5}};
    b.outcome[1] = {{-0.5, 0.3}, {0.5, 0.3}, {1.0, 0.4}};
    Cell c;
    c.x = {1.0, 1.0};
    c.weight = 1;
    c.pi1 = 0.45;
    c.outcome[0] = {{2.0, 1.0}};
    c.outcome[1] = {{-1.0, 0.6}, {4.0, 0.4}};
    law.cells.push_back(a);
    law.cells.push_back(b);
    law.cells.push_back(c);
    return law;
}

} // namespace tiltsens::testsupport
