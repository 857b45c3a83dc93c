#include "tiltsens/propensity.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <sstream>

#include <Eigen/Dense>

#include "tiltsens/errors.hpp"
#include "tiltsens/rng.hpp"
#include "tiltsens/stats.hpp"

namespace tiltsens {

void cubic_bspline_basis(const std::vector<double>& knots, double x, std::vector<double>& out) {
    constexpr int degree = 3;
    const int m = static_cast<int>(knots.size()) - degree - 1;
    out.assign(static_cast<std::size_t>(m), 0.0);
    x = std::clamp(x, knots.front(), knots.back());

    int span = static_cast<int>(std::upper_bound(knots.begin(), knots.end(), x) - knots.begin()) - 1;
    span = std::clamp(span, degree, m - 1);

    double left[degree + 1], right[degree + 1], N[degree + 1];
    N[0] = 1.0;
    for (int j = 1; j <= degree; ++j) {
        left[j] = x - knots[static_cast<std::size_t>(span + 1 - j)];
        right[j] = knots[static_cast<std::size_t>(span + j)] - x;
        double saved = 0.0;
        for (int r = 0; r < j; ++r) {
            double denom = right[r + 1] + left[j - r];
            double tmp = denom != 0.0 ? N[r] / denom : 0.0;
            N[r] = saved + right[r + 1] * tmp;
            saved = left[j - r] * tmp;
        }
        N[j] = saved;
    }
    for (int r = 0; r <= degree; ++r) out[static_cast<std::size_t>(span - degree + r)] = N[r];
}

namespace {

struct TermPlan {
    bool spline = false;
    std::size_t covariate = 0;
    std::vector<double> knots;
    double xmin = 0.0, xmax = 0.0;
    std::size_t ncol = 1;
    std::size_t offset = 0; // first column in the design matrix (after intercept)
};

std::vector<double> quantile_knots(std::vector<double> vals, int interior) {
    std::sort(vals.begin(), vals.end());
    double lo = vals.front(), hi = vals.back();
    std::vector<double> knots;
    for (int r = 0; r < 4; ++r) knots.push_back(lo);
    double prev = lo;
    for (int j = 1; j <= interior; ++j) {
        double q = quantile_type7_sorted(vals, static_cast<double>(j) / (interior + 1));
        if (q > prev && q < hi) {
            knots.push_back(q);
            prev = q;
        }
    }
    for (int r = 0; r < 4; ++r) knots.push_back(hi);
    return knots;
}

std::vector<TermPlan> plan_terms(const Dataset& ds, const PropensityConfig& cfg) {
    std::vector<TermPlan> plans;
    std::size_t offset = 0;
    for (std::size_t j = 0; j < ds.p(); ++j) {
        std::set<double> distinct;
        bool indicator = true;
        for (std::size_t i = 0; i < ds.n(); ++i) {
            double v = ds.x(i)[j];
            if (v != 0.0 && v != 1.0) indicator = false;
            if (distinct.size() < 8) distinct.insert(v);
        }
        TermPlan tp;
        tp.covariate = j;
        tp.offset = offset;
        // Indicators and near-discrete columns enter linearly: smoothing a
        // handful of support points is vacuous and the penalty basis degenerates.
        if (indicator || distinct.size() <= 4) {
            tp.spline = false;
            tp.ncol = 1;
        } else {
            std::vector<double> vals;
            vals.reserve(ds.n());
            for (std::size_t i = 0; i < ds.n(); ++i) vals.push_back(ds.x(i)[j]);
            tp.spline = true;
            tp.xmin = *std::min_element(vals.begin(), vals.end());
            tp.xmax = *std::max_element(vals.begin(), vals.end());
            tp.knots = quantile_knots(std::move(vals), cfg.knots);
            tp.ncol = tp.knots.size() - 4;
        }
        offset += tp.ncol;
        plans.push_back(std::move(tp));
    }
    return plans;
}

struct DesignMatrix {
    Eigen::MatrixXd X;              // n x (1 + P): leading intercept column
    std::vector<double> centers;    // per non-intercept column
};

DesignMatrix build_design(const Dataset& ds, const std::vector<TermPlan>& plans) {
    std::size_t P = 0;
    for (const auto& tp : plans) P += tp.ncol;
    DesignMatrix dm;
    dm.X.setZero(static_cast<Eigen::Index>(ds.n()), static_cast<Eigen::Index>(P + 1));
    dm.X.col(0).setOnes();
    std::vector<double> basis;
    for (std::size_t i = 0; i < ds.n(); ++i) {
        auto xi = ds.x(i);
        for (const auto& tp : plans) {
            if (tp.spline) {
                cubic_bspline_basis(tp.knots, xi[tp.covariate], basis);
                for (std::size_t c = 0; c < tp.ncol; ++c)
                    dm.X(static_cast<Eigen::Index>(i),
                         static_cast<Eigen::Index>(1 + tp.offset + c)) = basis[c];
            } else {
                dm.X(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(1 + tp.offset)) =
                    xi[tp.covariate];
            }
        }
    }
    dm.centers.assign(P, 0.0);
    for (std::size_t c = 0; c < P; ++c) {
        double m = dm.X.col(static_cast<Eigen::Index>(c + 1)).mean();
        dm.centers[c] = m;
        dm.X.col(static_cast<Eigen::Index>(c + 1)).array() -= m;
    }
    return dm;
}

Eigen::MatrixXd penalty_matrix(const std::vector<TermPlan>& plans,
                               const std::vector<double>& lambdas, std::size_t P) {
    Eigen::MatrixXd S = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(P + 1),
                                              static_cast<Eigen::Index>(P + 1));
    for (std::size_t j = 0; j < plans.size(); ++j) {
        const auto& tp = plans[j];
        if (!tp.spline) continue;
        const std::size_t m = tp.ncol;
        Eigen::MatrixXd D = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(m - 2),
                                                  static_cast<Eigen::Index>(m));
        for (std::size_t r = 0; r + 2 < m; ++r) {
            D(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(r)) = 1.0;
            D(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(r + 1)) = -2.0;
            D(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(r + 2)) = 1.0;
        }
        Eigen::MatrixXd Sj = lambdas[j] * (D.transpose() * D);
        Sj.diagonal().array() += 1e-9; // rank safety for the centered basis
        S.block(static_cast<Eigen::Index>(1 + tp.offset), static_cast<Eigen::Index>(1 + tp.offset),
                static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(m)) = Sj;
    }
    return S;
}

double binomial_deviance(const Eigen::VectorXd& eta, const Eigen::VectorXd& t,
                         std::span<const Eigen::Index> rows) {
    double dev = 0.0;
    for (Eigen::Index i : rows) {
        double p = std::clamp(sigmoid(eta(i)), 1e-12, 1.0 - 1e-12);
        dev += t(i) > 0.5 ? -2.0 * std::log(p) : -2.0 * std::log(1.0 - p);
    }
    return dev;
}

// Penalized IRLS on a row subset. Returns coefficients; throws FitError on
// divergence. A deviance plateau with drifting coefficients (separation) is
// accepted: the predictions have converged even though the MLE is at infinity.
Eigen::VectorXd irls(const Eigen::MatrixXd& X, const Eigen::VectorXd& t,
                     const Eigen::MatrixXd& S, std::span<const Eigen::Index> rows,
                     int max_iter, double tol) {
    const Eigen::Index P = X.cols();
    Eigen::VectorXd beta = Eigen::VectorXd::Zero(P);
    Eigen::VectorXd eta = Eigen::VectorXd::Zero(X.rows());
    double dev = binomial_deviance(eta, t, rows);
    int plateau = 0;
    std::ostringstream trace;

    for (int iter = 0; iter < max_iter; ++iter) {
        Eigen::MatrixXd A = S;
        Eigen::VectorXd rhs = Eigen::VectorXd::Zero(P);
        for (Eigen::Index i : rows) {
            double mu = sigmoid(eta(i));
            double w = std::max(mu * (1.0 - mu), 1e-10);
            double z = eta(i) + (t(i) - mu) / w;
            A.noalias() += w * (X.row(i).transpose() * X.row(i));
            rhs.noalias() += w * z * X.row(i).transpose();
        }
        Eigen::VectorXd beta_new = A.ldlt().solve(rhs);
        if (!beta_new.allFinite())
            throw FitError("propensity IRLS produced non-finite coefficients\n" + trace.str());

        // step-halving if the penalized deviance got worse
        double step = 1.0;
        Eigen::VectorXd cand;
        double dev_new = 0.0;
        for (int h = 0; h < 16; ++h) {
            cand = beta + step * (beta_new - beta);
            Eigen::VectorXd eta_c = X * cand;
            dev_new = binomial_deviance(eta_c, t, rows) + cand.dot(S * cand);
            if (dev_new <= dev * (1.0 + 1e-8) + 1e-8) break;
            step *= 0.5;
        }
        double delta = (cand - beta).cwiseAbs().maxCoeff();
        trace << "iter " << iter << ": max|dbeta| = " << delta << ", deviance = " << dev_new
              << "\n";
        beta = cand;
        eta = X * beta;
        if (delta < tol) return beta;
        if (std::abs(dev - dev_new) < 1e-12 * (1.0 + std::abs(dev_new))) {
            if (++plateau >= 3) return beta;
        } else {
            plateau = 0;
        }
        dev = dev_new;
    }
    throw FitError("propensity IRLS did not converge\n" + trace.str());
}

std::vector<std::vector<Eigen::Index>> cv_partition(const Dataset& ds, int V,
                                                    std::uint64_t seed) {
    std::vector<Eigen::Index> treated, control;
    for (std::size_t i = 0; i < ds.n(); ++i)
        (ds.t(i) == 1 ? treated : control).push_back(static_cast<Eigen::Index>(i));
    V = std::min<int>({V, static_cast<int>(treated.size()), static_cast<int>(control.size())});
    V = std::max(V, 2);
    auto eng = make_engine(derive_seed(seed, 0xCFu));
    std::shuffle(treated.begin(), treated.end(), eng);
    std::shuffle(control.begin(), control.end(), eng);
    std::vector<std::vector<Eigen::Index>> folds(static_cast<std::size_t>(V));
    for (std::size_t i = 0; i < treated.size(); ++i)
        folds[i % static_cast<std::size_t>(V)].push_back(treated[i]);
    for (std::size_t i = 0; i < control.size(); ++i)
        folds[static_cast<std::size_t>(V) - 1 - (i % static_cast<std::size_t>(V))].push_back(
            control[i]);
    return folds;
}

} // namespace

PropensityFit::PropensityFit(double intercept, std::vector<Term> terms, double clip_epsilon,
                             double train_clip_rate, std::size_t dim)
    : intercept_(intercept), terms_(std::move(terms)), eps_(clip_epsilon),
      train_clip_rate_(train_clip_rate), dim_(dim) {
    if (!(eps_ > 0.0 && eps_ < 0.5))
        throw ConfigError("clip epsilon must lie in (0, 0.5)");
}

double PropensityFit::linear_predictor(std::span<const double> x) const {
    if (x.size() != dim_)
        throw ValidationError("propensity predict: covariate dimension mismatch");
    double eta = intercept_;
    std::vector<double> basis;
    for (const auto& term : terms_) {
        if (term.spline) {
            cubic_bspline_basis(term.knots, x[term.covariate], basis);
            for (std::size_t c = 0; c < term.coef.size(); ++c)
                eta += term.coef[c] * (basis[c] - term.centers[c]);
        } else {
            eta += term.coef[0] * (x[term.covariate] - term.centers[0]);
        }
    }
    return eta;
}

double PropensityFit::predict(std::span<const double> x, int t) const {
    double p1 = std::clamp(sigmoid(linear_predictor(x)), eps_, 1.0 - eps_);
    return t == 1 ? p1 : 1.0 - p1;
}

PropensityFit fit_propensity(const Dataset& train, const PropensityConfig& cfg) {
    if (!(cfg.clip_epsilon > 0.0 && cfg.clip_epsilon < 0.5))
        throw ConfigError("clip epsilon must lie in (0, 0.5)");
    std::size_t n1 = train.arm_count(1);
    if (n1 == 0 || n1 == train.n())
        throw FitError("degenerate propensity fit: treatment is constant in training data");

    auto plans = plan_terms(train, cfg);
    auto dm = build_design(train, plans);
    std::size_t P = dm.centers.size();

    Eigen::VectorXd tv(static_cast<Eigen::Index>(train.n()));
    for (std::size_t i = 0; i < train.n(); ++i) tv(static_cast<Eigen::Index>(i)) = train.t(i);

    std::vector<Eigen::Index> all_rows(train.n());
    std::iota(all_rows.begin(), all_rows.end(), 0);

    // Per-term smoothing parameters by V-fold cross-validated deviance
    // (coordinate sweeps over the grid).
    std::vector<double> lambdas(plans.size(), 0.0);
    std::vector<std::size_t> spline_terms;
    for (std::size_t j = 0; j < plans.size(); ++j)
        if (plans[j].spline) {
            spline_terms.push_back(j);
            lambdas[j] = cfg.penalty_grid[cfg.penalty_grid.size() / 2];
        }

    if (!spline_terms.empty() && cfg.penalty_grid.size() > 1) {
        auto folds = cv_partition(train, cfg.cv_folds, cfg.seed);
        std::vector<std::vector<Eigen::Index>> train_rows(folds.size());
        for (std::size_t f = 0; f < folds.size(); ++f) {
            std::vector<char> held(train.n(), 0);
            for (Eigen::Index i : folds[f]) held[static_cast<std::size_t>(i)] = 1;
            for (std::size_t i = 0; i < train.n(); ++i)
                if (!held[i]) train_rows[f].push_back(static_cast<Eigen::Index>(i));
        }
        auto cv_deviance = [&](const std::vector<double>& lam) {
            double total = 0.0;
            for (std::size_t f = 0; f < folds.size(); ++f) {
                Eigen::MatrixXd S = penalty_matrix(plans, lam, P);
                Eigen::VectorXd beta;
                try {
                    beta = irls(dm.X, tv, S, train_rows[f], std::min(cfg.max_iter, 50), 1e-7);
                } catch (const FitError&) {
                    return std::numeric_limits<double>::infinity();
                }
                Eigen::VectorXd eta = dm.X * beta;
                total += binomial_deviance(eta, tv, folds[f]);
            }
            return total;
        };
        for (int sweep = 0; sweep < 2; ++sweep) {
            bool changed = false;
            for (std::size_t j : spline_terms) {
                double best_dev = std::numeric_limits<double>::infinity();
                double best_lam = lambdas[j];
                for (double lam : cfg.penalty_grid) {
                    auto trial = lambdas;
                    trial[j] = lam;
                    double dev = cv_deviance(trial);
                    if (dev < best_dev) {
                        best_dev = dev;
                        best_lam = lam;
                    }
                }
                if (best_lam != lambdas[j]) {
                    lambdas[j] = best_lam;
                    changed = true;
                }
            }
            if (!changed) break;
        }
    }

    Eigen::MatrixXd S = penalty_matrix(plans, lambdas, P);
    Eigen::VectorXd beta = irls(dm.X, tv, S, all_rows, cfg.max_iter, cfg.tol);

    std::vector<PropensityFit::Term> terms;
    for (std::size_t j = 0; j < plans.size(); ++j) {
        const auto& tp = plans[j];
        PropensityFit::Term term;
        term.spline = tp.spline;
        term.covariate = tp.covariate;
        term.knots = tp.knots;
        term.lambda = lambdas[j];
        term.xmin = tp.xmin;
        term.xmax = tp.xmax;
        term.centers.assign(dm.centers.begin() + static_cast<std::ptrdiff_t>(tp.offset),
                            dm.centers.begin() + static_cast<std::ptrdiff_t>(tp.offset + tp.ncol));
        term.coef.resize(tp.ncol);
        for (std::size_t c = 0; c < tp.ncol; ++c)
            term.coef[c] = beta(static_cast<Eigen::Index>(1 + tp.offset + c));
        terms.push_back(std::move(term));
    }

    Eigen::VectorXd eta = dm.X * beta;
    std::size_t clipped = 0;
    for (std::size_t i = 0; i < train.n(); ++i) {
        double p = sigmoid(eta(static_cast<Eigen::Index>(i)));
        if (p < cfg.clip_epsilon || p > 1.0 - cfg.clip_epsilon) ++clipped;
    }
    double clip_rate = static_cast<double>(clipped) / static_cast<double>(train.n());

    return PropensityFit(beta(0), std::move(terms), cfg.clip_epsilon, clip_rate, train.p());
}

} // namespace tiltsens
