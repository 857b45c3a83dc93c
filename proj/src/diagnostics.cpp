#include "tiltsens/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include <Eigen/Dense>

#include "tiltsens/csv.hpp"
#include "tiltsens/errors.hpp"
#include "tiltsens/rng.hpp"
#include "tiltsens/stats.hpp"

namespace tiltsens {

double ks_statistic(std::span<const double> a, std::span<const double> b) {
    if (a.empty() || b.empty()) throw ValidationError("ks_statistic: empty sample");
    std::vector<double> sa(a.begin(), a.end()), sb(b.begin(), b.end());
    std::sort(sa.begin(), sa.end());
    std::sort(sb.begin(), sb.end());
    const double na = static_cast<double>(sa.size()), nb = static_cast<double>(sb.size());
    std::size_t i = 0, j = 0;
    double d = 0.0;
    while (i < sa.size() || j < sb.size()) {
        double v;
        if (i >= sa.size())
            v = sb[j];
        else if (j >= sb.size())
            v = sa[i];
        else
            v = std::min(sa[i], sb[j]);
        while (i < sa.size() && sa[i] == v) ++i;
        while (j < sb.size() && sb[j] == v) ++j;
        d = std::max(d, std::abs(static_cast<double>(i) / na - static_cast<double>(j) / nb));
    }
    return d;
}

Dataset generate_semiparametric(const NuisanceBundle& nb, const Dataset& xs, std::size_t n,
                                std::uint64_t seed) {
    if (n < 1) throw ValidationError("generate_semiparametric: n must be >= 1");
    auto eng = make_engine(derive_seed(seed, 0x5E31u));
    std::uniform_int_distribution<std::size_t> pick(0, xs.n() - 1);
    std::uniform_real_distribution<double> unif(0.0, 1.0);

    std::vector<ObservationRecord> rows;
    rows.reserve(n);
    for (std::size_t k = 0; k < n; ++k) {
        std::size_t i = pick(eng);
        auto x = xs.x(i);
        ObservationRecord r;
        r.x.assign(x.begin(), x.end());
        double p1 = nb.pi(1, x);
        r.t = unif(eng) < p1 ? 1 : 0;
        r.y = nb.outcome(r.t).sample_outcome(x, unif(eng));
        rows.push_back(std::move(r));
    }
    return Dataset(xs.covariate_names(), rows);
}

bool SubgroupSpec::matches(const Dataset& ds, std::size_t row) const {
    double v = ds.x(row)[ds.covariate_index(covariate)];
    if (equals) return v == *equals;
    if (lo && v < *lo) return false;
    if (hi && v > *hi) return false;
    return true;
}

std::vector<GofRow> gof_rows(const Dataset& observed, const Dataset& synthetic,
                             std::span<const SubgroupSpec> subgroups) {
    std::vector<GofRow> rows;
    for (const auto& sg : subgroups) {
        GofRow row;
        row.subgroup = sg.name;
        std::vector<std::size_t> obs_idx, syn_idx;
        for (std::size_t i = 0; i < observed.n(); ++i)
            if (sg.matches(observed, i)) obs_idx.push_back(i);
        for (std::size_t i = 0; i < synthetic.n(); ++i)
            if (sg.matches(synthetic, i)) syn_idx.push_back(i);

        if (!obs_idx.empty() && !syn_idx.empty()) {
            double f_obs = 0.0, f_syn = 0.0;
            for (std::size_t i : obs_idx) f_obs += observed.t(i);
            for (std::size_t i : syn_idx) f_syn += synthetic.t(i);
            f_obs /= static_cast<double>(obs_idx.size());
            f_syn /= static_cast<double>(syn_idx.size());
            row.treat_evaluable = true;
            row.treat_abs_diff = std::abs(f_obs - f_syn);
        }
        for (int arm = 0; arm < 2; ++arm) {
            std::vector<double> yo, ys;
            for (std::size_t i : obs_idx)
                if (observed.t(i) == arm) yo.push_back(observed.y(i));
            for (std::size_t i : syn_idx)
                if (synthetic.t(i) == arm) ys.push_back(synthetic.y(i));
            if (!yo.empty() && !ys.empty()) {
                row.y_evaluable[arm] = true;
                row.ks_y[arm] = ks_statistic(yo, ys);
            }
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

GofReport gof_report(const Dataset& ds, const NuisanceBundle& nb,
                     std::span<const SubgroupSpec> subgroups, std::size_t n_synth,
                     std::uint64_t seed) {
    if (subgroups.empty()) throw ValidationError("gof_report: need at least one subgroup");
    Dataset synth = generate_semiparametric(nb, ds, n_synth, seed);
    GofReport report;
    report.note = "treatment column reports |difference of subgroup treated fractions| "
                  "(scalar analogue of the conditional-probability comparison)";
    report.rows = gof_rows(ds, synth, subgroups);
    return report;
}

void write_gof_csv(const GofReport& report, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write file: " + path);
    out << "# " << report.note << "\n";
    out << "subgroup,treat_abs_diff,ks_y_t1,ks_y_t0\n";
    for (const auto& r : report.rows) {
        out << r.subgroup << ",";
        out << (r.treat_evaluable ? format_double(r.treat_abs_diff) : std::string("NA")) << ",";
        out << (r.y_evaluable[1] ? format_double(r.ks_y[1]) : std::string("NA")) << ",";
        out << (r.y_evaluable[0] ? format_double(r.ks_y[0]) : std::string("NA")) << "\n";
    }
}

ParametricBaseline fit_parametric_baseline(const Dataset& ds) {
    const std::size_t n = ds.n(), p = ds.p();
    std::size_t n1 = ds.arm_count(1);
    if (n1 == 0 || n1 == n)
        throw FitError("parametric baseline: treatment is constant");

    ParametricBaseline pb;
    // logistic regression by Newton iterations
    {
        Eigen::MatrixXd X(n, p + 1);
        Eigen::VectorXd t(n);
        for (std::size_t i = 0; i < n; ++i) {
            X(static_cast<Eigen::Index>(i), 0) = 1.0;
            auto xi = ds.x(i);
            for (std::size_t j = 0; j < p; ++j)
                X(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j + 1)) = xi[j];
            t(static_cast<Eigen::Index>(i)) = ds.t(i);
        }
        Eigen::VectorXd beta = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(p + 1));
        for (int iter = 0; iter < 100; ++iter) {
            Eigen::VectorXd eta = X * beta;
            Eigen::VectorXd mu(eta.size()), w(eta.size());
            for (Eigen::Index i = 0; i < eta.size(); ++i) {
                mu(i) = sigmoid(eta(i));
                w(i) = std::max(mu(i) * (1.0 - mu(i)), 1e-10);
            }
            Eigen::MatrixXd A = X.transpose() * w.asDiagonal() * X;
            A.diagonal().array() += 1e-10;
            Eigen::VectorXd g = X.transpose() * (t - mu);
            Eigen::VectorXd step = A.ldlt().solve(g);
            beta += step;
            if (step.cwiseAbs().maxCoeff() < 1e-10) break;
        }
        pb.logit_intercept = beta(0);
        pb.logit_coef.assign(p, 0.0);
        for (std::size_t j = 0; j < p; ++j)
            pb.logit_coef[j] = beta(static_cast<Eigen::Index>(j + 1));
    }
    // per-arm normal linear models
    for (int arm = 0; arm < 2; ++arm) {
        auto idx = ds.arm_indices(arm);
        Eigen::MatrixXd X(idx.size(), p + 1);
        Eigen::VectorXd y(idx.size());
        for (std::size_t r = 0; r < idx.size(); ++r) {
            X(static_cast<Eigen::Index>(r), 0) = 1.0;
            auto xi = ds.x(idx[r]);
            for (std::size_t j = 0; j < p; ++j)
                X(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(j + 1)) = xi[j];
            y(static_cast<Eigen::Index>(r)) = ds.y(idx[r]);
        }
        Eigen::MatrixXd A = X.transpose() * X;
        A.diagonal().array() += 1e-10;
        Eigen::VectorXd beta = A.ldlt().solve(X.transpose() * y);
        Eigen::VectorXd resid = y - X * beta;
        double dof = std::max<double>(1.0, static_cast<double>(idx.size()) - double(p + 1));
        pb.arm[arm].intercept = beta(0);
        pb.arm[arm].coef.assign(p, 0.0);
        for (std::size_t j = 0; j < p; ++j)
            pb.arm[arm].coef[j] = beta(static_cast<Eigen::Index>(j + 1));
        pb.arm[arm].sigma = std::sqrt(resid.squaredNorm() / dof);
    }
    return pb;
}

Dataset generate_parametric(const ParametricBaseline& pb, const Dataset& xs, std::size_t n,
                            std::uint64_t seed) {
    if (n < 1) throw ValidationError("generate_parametric: n must be >= 1");
    auto eng = make_engine(derive_seed(seed, 0x9A7Au));
    std::uniform_int_distribution<std::size_t> pick(0, xs.n() - 1);
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    std::normal_distribution<double> gauss(0.0, 1.0);

    std::vector<ObservationRecord> rows;
    rows.reserve(n);
    for (std::size_t k = 0; k < n; ++k) {
        std::size_t i = pick(eng);
        auto x = xs.x(i);
        ObservationRecord r;
        r.x.assign(x.begin(), x.end());
        double eta = pb.logit_intercept;
        for (std::size_t j = 0; j < x.size(); ++j) eta += pb.logit_coef[j] * x[j];
        r.t = unif(eng) < sigmoid(eta) ? 1 : 0;
        const auto& am = pb.arm[r.t];
        double m = am.intercept;
        for (std::size_t j = 0; j < x.size(); ++j) m += am.coef[j] * x[j];
        r.y = m + am.sigma * gauss(eng);
        rows.push_back(std::move(r));
    }
    return Dataset(xs.covariate_names(), rows);
}

} // namespace tiltsens
