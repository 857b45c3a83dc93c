#include "tiltsens/outcome_cdf.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <mutex>
#include <numeric>

#include "tiltsens/errors.hpp"
#include "tiltsens/rng.hpp"
#include "tiltsens/stats.hpp"

namespace tiltsens {

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();
// Gaussian-kernel support truncation: |K(8)| < 1e-13, negligible against the
// tolerances used anywhere downstream.
constexpr double kKernelCut = 8.0;
} // namespace

double kernel_value(int order, double v) {
    if (order == 2) return normal_pdf(v);
    if (order == 4) return 0.5 * (3.0 - v * v) * normal_pdf(v);
    throw ConfigError("kernel order must be 2 or 4");
}

void validate_kernel(const KernelSpec& spec) {
    static std::once_flag checked[2];
    if (spec.order != 2 && spec.order != 4)
        throw ConfigError("kernel order must be 2 or 4");
    std::call_once(checked[spec.order == 4 ? 1 : 0], [order = spec.order] {
        if (std::abs(kernel_moment(order, 0) - 1.0) > 1e-8)
            throw NumericError("kernel does not integrate to 1");
        for (int j = 1; j < order; ++j)
            if (std::abs(kernel_moment(order, j)) > 1e-8)
                throw NumericError("kernel moment " + std::to_string(j) + " is not zero");
    });
}

double kernel_moment(int order, int j) {
    // Simpson's rule on [-15, 15]; the integrand is smooth and decays like a
    // Gaussian, so this is far more accurate than the 1e-8 check threshold.
    const int steps = 12000;
    const double a = -15.0, b = 15.0;
    const double h = (b - a) / steps;
    double acc = 0.0;
    for (int k = 0; k <= steps; ++k) {
        double v = a + k * h;
        double f = std::pow(v, j) * kernel_value(order, v);
        double w = (k == 0 || k == steps) ? 1.0 : (k % 2 == 1 ? 4.0 : 2.0);
        acc += w * f;
    }
    return acc * h / 3.0;
}

// ---------------------------------------------------------------------------
// CV criterion
// ---------------------------------------------------------------------------

namespace {

struct CvWorkspace {
    std::size_t n = 0, p = 0;
    const Dataset* ds = nullptr;
    std::vector<double> u;           // index values by original row
    std::vector<std::uint32_t> by_u; // rows sorted by u
    std::vector<double> su;          // sorted u values
    std::vector<std::uint32_t> by_y; // rows sorted by y
    std::vector<double> w;           // dense weights by original row

    explicit CvWorkspace(const Dataset& data) : n(data.n()), p(data.p()), ds(&data) {
        u.resize(n);
        by_u.resize(n);
        su.resize(n);
        by_y.resize(n);
        w.assign(n, 0.0);
        std::iota(by_y.begin(), by_y.end(), 0u);
        std::sort(by_y.begin(), by_y.end(),
                  [&](std::uint32_t a, std::uint32_t b) { return data.y(a) < data.y(b); });
    }

    void set_beta(std::span<const double> beta) {
        for (std::size_t i = 0; i < n; ++i) {
            auto xi = ds->x(i);
            double s = 0.0;
            for (std::size_t j = 0; j < p; ++j) s += beta[j] * xi[j];
            u[i] = s;
        }
        std::iota(by_u.begin(), by_u.end(), 0u);
        std::sort(by_u.begin(), by_u.end(),
                  [&](std::uint32_t a, std::uint32_t b) { return u[a] < u[b]; });
        for (std::size_t k = 0; k < n; ++k) su[k] = u[by_u[k]];
    }

    double index_sd() const { return sample_sd(u); }

    // +inf when some row has no usable leave-one-out window.
    double criterion(double h) {
        const double inv_h = 1.0 / h;
        const double halfwidth = kKernelCut * h;
        double acc = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double ui = u[i];
            auto lo_it = std::lower_bound(su.begin(), su.end(), ui - halfwidth);
            auto hi_it = std::upper_bound(su.begin(), su.end(), ui + halfwidth);
            std::size_t lo = static_cast<std::size_t>(lo_it - su.begin());
            std::size_t hi = static_cast<std::size_t>(hi_it - su.begin());
            double wtot = 0.0;
            for (std::size_t k = lo; k < hi; ++k) {
                std::uint32_t j = by_u[k];
                if (j == i) continue;
                double v = (su[k] - ui) * inv_h;
                double wk = 0.5 * (3.0 - v * v) * normal_pdf(v);
                w[j] = wk;
                wtot += wk;
            }
            if (!(std::abs(wtot) > 1e-12)) {
                for (std::size_t k = lo; k < hi; ++k) w[by_u[k]] = 0.0;
                return kInf;
            }
            const double yi = ds->y(i);
            const double inv_wtot = 1.0 / wtot;
            double cum = 0.0;
            std::size_t k = 0;
            while (k < n) {
                const double yk = ds->y(by_y[k]);
                std::size_t g = k;
                while (g < n && ds->y(by_y[g]) == yk) {
                    cum += w[by_y[g]];
                    ++g;
                }
                // stage-1 CDF values are clamped to [0,1] here: the 4th-order
                // kernel admits negative weights
                double F = std::clamp(cum * inv_wtot, 0.0, 1.0);
                double d = (yi <= yk ? 1.0 : 0.0) - F;
                acc += d * d * static_cast<double>(g - k);
                k = g;
            }
            for (std::size_t kk = lo; kk < hi; ++kk) w[by_u[kk]] = 0.0;
        }
        return acc / (static_cast<double>(n) * static_cast<double>(n));
    }
};

struct HSearchResult {
    double h = 0.0;
    double cv = kInf;
};

// Coarse log-spaced scan over [h_lo, h_hi] followed by golden-section
// refinement of log h between the neighbors of the best grid point.
HSearchResult minimize_over_h(CvWorkspace& ws, double h_lo, double h_hi, int grid_size,
                              double rel_tol) {
    HSearchResult best;
    if (!(h_hi > h_lo)) h_hi = h_lo * 1.0000001;
    const double llo = std::log(h_lo), lhi = std::log(h_hi);
    grid_size = std::max(grid_size, 3);
    std::vector<double> lg(static_cast<std::size_t>(grid_size));
    std::vector<double> cv(static_cast<std::size_t>(grid_size));
    int best_i = -1;
    for (int g = 0; g < grid_size; ++g) {
        lg[static_cast<std::size_t>(g)] = llo + (lhi - llo) * g / (grid_size - 1);
        double c = ws.criterion(std::exp(lg[static_cast<std::size_t>(g)]));
        cv[static_cast<std::size_t>(g)] = c;
        if (c < best.cv) {
            best.cv = c;
            best.h = std::exp(lg[static_cast<std::size_t>(g)]);
            best_i = g;
        }
    }
    if (best_i < 0) return best; // nothing evaluable anywhere

    double a = lg[static_cast<std::size_t>(std::max(best_i - 1, 0))];
    double b = lg[static_cast<std::size_t>(std::min(best_i + 1, grid_size - 1))];
    const double gr = 0.6180339887498949;
    double x1 = b - gr * (b - a);
    double x2 = a + gr * (b - a);
    double f1 = ws.criterion(std::exp(x1));
    double f2 = ws.criterion(std::exp(x2));
    while (b - a > rel_tol) {
        if (f1 <= f2) {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - gr * (b - a);
            f1 = ws.criterion(std::exp(x1));
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + gr * (b - a);
            f2 = ws.criterion(std::exp(x2));
        }
        double fc = std::min(f1, f2);
        double xc = f1 <= f2 ? x1 : x2;
        if (fc < best.cv) {
            best.cv = fc;
            best.h = std::exp(xc);
        }
    }
    return best;
}

struct HRange {
    double lo = 0.0, hi = 0.0;
};

HRange h_range(double index_sd, std::size_t n, const SingleIndexConfig& cfg) {
    double scale = index_sd > 0.0 ? index_sd : 1.0;
    double nn = static_cast<double>(n);
    // I_n spans delta in (1/(4 q*), 1/5) with q* = 4
    HRange r;
    r.lo = cfg.h_lower_mult * scale * std::pow(nn, -0.2);
    r.hi = cfg.h_upper_mult * scale * std::pow(nn, -1.0 / 16.0);
    if (!(r.hi > r.lo)) r.hi = r.lo * 1.0000001;
    return r;
}

} // namespace

double cv_criterion(const Dataset& train_t, std::span<const double> beta, double h) {
    if (train_t.n() < 2) throw ValidationError("cv_criterion: need at least 2 rows");
    if (!(h > 0.0)) throw ValidationError("cv_criterion: bandwidth must be > 0");
    if (beta.size() != train_t.p() || beta[0] != 1.0)
        throw ValidationError("cv_criterion: beta must have length p with beta[0] = 1");
    CvWorkspace ws(train_t);
    ws.set_beta(beta);
    double c = ws.criterion(h);
    if (c == kInf)
        throw NumericError("cv_criterion: undefined kernel window (bandwidth too small)");
    return c;
}

// ---------------------------------------------------------------------------
// Single-index fit
// ---------------------------------------------------------------------------

namespace {

struct BetaObjective {
    CvWorkspace& ws;
    const SingleIndexConfig& cfg;
    std::size_t p;
    // best (h, cv) seen for the most recent evaluation
    double last_h = 0.0;

    double operator()(std::span<const double> free) {
        std::vector<double> beta(p);
        beta[0] = 1.0;
        for (std::size_t j = 1; j < p; ++j) beta[j] = free[j - 1];
        ws.set_beta(beta);
        HRange r = h_range(ws.index_sd(), ws.n, cfg);
        HSearchResult res = minimize_over_h(ws, r.lo, r.hi, cfg.h_grid_size, cfg.h_tol);
        last_h = res.h;
        return res.cv;
    }
};

struct NmPoint {
    std::vector<double> x;
    double f = kInf;
    double h = 0.0;
};

// Standard Nelder-Mead on the free index coordinates. Returns the best vertex.
NmPoint nelder_mead(BetaObjective& obj, const std::vector<double>& start,
                    const std::vector<double>& step, double tol, int max_iter) {
    const std::size_t d = start.size();
    std::vector<NmPoint> simplex(d + 1);
    simplex[0].x = start;
    simplex[0].f = obj(simplex[0].x);
    simplex[0].h = obj.last_h;
    for (std::size_t j = 0; j < d; ++j) {
        simplex[j + 1].x = start;
        simplex[j + 1].x[j] += step[j];
        simplex[j + 1].f = obj(simplex[j + 1].x);
        simplex[j + 1].h = obj.last_h;
    }
    auto better = [](const NmPoint& a, const NmPoint& b) { return a.f < b.f; };

    for (int iter = 0; iter < max_iter; ++iter) {
        std::sort(simplex.begin(), simplex.end(), better);
        if (std::isfinite(simplex[0].f) &&
            simplex[d].f - simplex[0].f <= tol * (std::abs(simplex[0].f) + tol))
            break;

        std::vector<double> centroid(d, 0.0);
        for (std::size_t v = 0; v < d; ++v)
            for (std::size_t j = 0; j < d; ++j) centroid[j] += simplex[v].x[j] / double(d);

        auto make_point = [&](double coef) {
            NmPoint pt;
            pt.x.resize(d);
            for (std::size_t j = 0; j < d; ++j)
                pt.x[j] = centroid[j] + coef * (simplex[d].x[j] - centroid[j]);
            pt.f = obj(pt.x);
            pt.h = obj.last_h;
            return pt;
        };

        NmPoint refl = make_point(-1.0);
        if (refl.f < simplex[0].f) {
            NmPoint expd = make_point(-2.0);
            simplex[d] = expd.f < refl.f ? expd : refl;
        } else if (refl.f < simplex[d - 1].f) {
            simplex[d] = refl;
        } else {
            NmPoint contr = make_point(refl.f < simplex[d].f ? -0.5 : 0.5);
            if (contr.f < std::min(refl.f, simplex[d].f)) {
                simplex[d] = contr;
            } else {
                for (std::size_t v = 1; v <= d; ++v) {
                    for (std::size_t j = 0; j < d; ++j)
                        simplex[v].x[j] = simplex[0].x[j] + 0.5 * (simplex[v].x[j] - simplex[0].x[j]);
                    simplex[v].f = obj(simplex[v].x);
                    simplex[v].h = obj.last_h;
                }
            }
        }
    }
    std::sort(simplex.begin(), simplex.end(), better);
    return simplex[0];
}

} // namespace

OutcomeFit fit_single_index(const Dataset& train_t, const SingleIndexConfig& cfg) {
    const std::size_t n = train_t.n();
    const std::size_t p = train_t.p();
    if (n < p + 2)
        throw ValidationError("fit_single_index: need at least p+2 rows");
    int arm = train_t.t(0);
    for (std::size_t i = 1; i < n; ++i)
        if (train_t.t(i) != arm)
            throw ValidationError("fit_single_index: training data must be arm-restricted");
    validate_kernel({4}); // stage 1
    validate_kernel({2}); // stage 2

    CvWorkspace ws(train_t);
    BetaObjective obj{ws, cfg, p, 0.0};

    std::vector<double> best_beta(p, 0.0);
    best_beta[0] = 1.0;
    double best_cv = kInf;
    double best_h = 0.0;

    if (p == 1) {
        std::vector<double> free; // identifiability normalization leaves nothing to search
        best_cv = obj(free);
        best_h = obj.last_h;
    } else {
        const std::size_t d = p - 1;
        // per-coordinate scale so random restarts match covariate magnitudes
        std::vector<double> col_sd(p, 1.0);
        for (std::size_t j = 0; j < p; ++j) {
            std::vector<double> col(n);
            for (std::size_t i = 0; i < n; ++i) col[i] = train_t.x(i)[j];
            col_sd[j] = sample_sd(col);
            if (!(col_sd[j] > 0.0)) col_sd[j] = 1.0;
        }
        std::vector<double> scale(d);
        for (std::size_t j = 0; j < d; ++j) scale[j] = col_sd[0] / col_sd[j + 1];

        auto eng = make_engine(derive_seed(cfg.seed, 0x51u));
        std::normal_distribution<double> gauss(0.0, 1.0);
        int restarts = std::max(cfg.restarts, 1);
        for (int r = 0; r < restarts; ++r) {
            std::vector<double> start(d, 0.0);
            if (r > 0)
                for (std::size_t j = 0; j < d; ++j) start[j] = gauss(eng) * scale[j];
            std::vector<double> step(d);
            for (std::size_t j = 0; j < d; ++j) step[j] = 0.5 * scale[j];
            NmPoint pt = nelder_mead(obj, start, step, cfg.beta_tol, cfg.max_iter);
            if (pt.f < best_cv) {
                best_cv = pt.f;
                best_h = pt.h;
                for (std::size_t j = 0; j < d; ++j) best_beta[j + 1] = pt.x[j];
            }
        }
    }

    if (!std::isfinite(best_cv) || !(best_h > 0.0))
        throw FitError("fit_single_index: no usable bandwidth window found in I_n "
                       "(best criterion not finite)");

    std::vector<double> index(n);
    for (std::size_t i = 0; i < n; ++i) {
        auto xi = train_t.x(i);
        double s = 0.0;
        for (std::size_t j = 0; j < p; ++j) s += best_beta[j] * xi[j];
        index[i] = s;
    }
    std::vector<double> ys(n);
    for (std::size_t i = 0; i < n; ++i) ys[i] = train_t.y(i);

    double h2 = best_h * std::pow(static_cast<double>(n), -4.0 / 45.0);
    return OutcomeFit(arm, std::move(best_beta), best_h, h2, index, ys);
}

// ---------------------------------------------------------------------------
// OutcomeFit evaluation
// ---------------------------------------------------------------------------

OutcomeFit::OutcomeFit(int arm, std::vector<double> beta, double h_stage1, double h_stage2,
                       std::span<const double> index_vals, std::span<const double> ys)
    : arm_(arm), beta_(std::move(beta)), h_stage1_(h_stage1), h_stage2_(h_stage2) {
    if (arm_ != 0 && arm_ != 1) throw ValidationError("OutcomeFit: arm must be 0 or 1");
    if (beta_.empty() || beta_[0] != 1.0)
        throw ValidationError("OutcomeFit: beta[0] must be exactly 1");
    if (!(h_stage1_ > 0.0) || !(h_stage2_ > 0.0))
        throw ValidationError("OutcomeFit: bandwidths must be > 0");
    if (index_vals.size() != ys.size() || ys.empty())
        throw ValidationError("OutcomeFit: empty or mismatched training pairs");

    std::vector<std::uint32_t> ord(ys.size());
    std::iota(ord.begin(), ord.end(), 0u);
    std::sort(ord.begin(), ord.end(), [&](std::uint32_t a, std::uint32_t b) {
        return index_vals[a] < index_vals[b];
    });
    index_.resize(ys.size());
    y_.resize(ys.size());
    for (std::size_t k = 0; k < ord.size(); ++k) {
        index_[k] = index_vals[ord[k]];
        y_[k] = ys[ord[k]];
    }
    y_order_.resize(ys.size());
    std::iota(y_order_.begin(), y_order_.end(), 0u);
    std::sort(y_order_.begin(), y_order_.end(),
              [&](std::uint32_t a, std::uint32_t b) { return y_[a] < y_[b]; });
    y_sorted_.resize(ys.size());
    for (std::size_t k = 0; k < ys.size(); ++k) y_sorted_[k] = y_[y_order_[k]];
}

double OutcomeFit::index_of(std::span<const double> x) const {
    if (x.size() != beta_.size())
        throw ValidationError("OutcomeFit: covariate dimension mismatch");
    double s = 0.0;
    for (std::size_t j = 0; j < x.size(); ++j) s += beta_[j] * x[j];
    return s;
}

bool OutcomeFit::weight_window(double u, std::size_t& lo, std::size_t& hi, double& wtot,
                               std::vector<double>& w) const {
    const double halfwidth = kKernelCut * h_stage2_;
    lo = static_cast<std::size_t>(
        std::lower_bound(index_.begin(), index_.end(), u - halfwidth) - index_.begin());
    hi = static_cast<std::size_t>(
        std::upper_bound(index_.begin(), index_.end(), u + halfwidth) - index_.begin());
    if (lo >= hi) {
        fallbacks_.fetch_add(1, std::memory_order_relaxed);
        return false;
    }
    w.resize(hi - lo);
    wtot = 0.0;
    const double inv_h = 1.0 / h_stage2_;
    for (std::size_t k = lo; k < hi; ++k) {
        double wk = normal_pdf((index_[k] - u) * inv_h);
        w[k - lo] = wk;
        wtot += wk;
    }
    return wtot > 0.0;
}

double OutcomeFit::cond_cdf(double y, std::span<const double> x) const {
    std::size_t lo, hi;
    double wtot;
    std::vector<double> w;
    if (!weight_window(index_of(x), lo, hi, wtot, w)) {
        auto it = std::upper_bound(y_sorted_.begin(), y_sorted_.end(), y);
        return static_cast<double>(it - y_sorted_.begin()) / static_cast<double>(y_sorted_.size());
    }
    double acc = 0.0;
    for (std::size_t k = lo; k < hi; ++k)
        if (y_[k] <= y) acc += w[k - lo];
    return acc / wtot;
}

double OutcomeFit::moment(const std::function<double(double)>& g,
                          std::span<const double> x) const {
    std::size_t lo, hi;
    double wtot;
    std::vector<double> w;
    if (!weight_window(index_of(x), lo, hi, wtot, w)) {
        double acc = 0.0;
        for (double yv : y_) acc += g(yv);
        return acc / static_cast<double>(y_.size());
    }
    double acc = 0.0;
    for (std::size_t k = lo; k < hi; ++k) acc += g(y_[k]) * w[k - lo];
    return acc / wtot;
}

TiltedMoments OutcomeFit::tilted_moments(const TiltSpec& spec, std::span<const double> x) const {
    std::size_t lo, hi;
    double wtot;
    std::vector<double> w;
    TiltedMoments m;
    double swy = 0.0, swe = 0.0, swye = 0.0;
    if (!weight_window(index_of(x), lo, hi, wtot, w)) {
        for (double yv : y_) {
            double e = exp_tilt(spec, yv);
            swy += yv;
            swe += e;
            swye += yv * e;
        }
        double inv = 1.0 / static_cast<double>(y_.size());
        m.mean_y = swy * inv;
        m.mgf = swe * inv;
        m.mean_y_tilt = swye * inv;
    } else {
        for (std::size_t k = lo; k < hi; ++k) {
            double wk = w[k - lo];
            double e = exp_tilt(spec, y_[k]);
            swy += wk * y_[k];
            swe += wk * e;
            swye += wk * y_[k] * e;
        }
        m.mean_y = swy / wtot;
        m.mgf = swe / wtot;
        m.mean_y_tilt = swye / wtot;
    }
    if (!(m.mgf > 0.0) || !std::isfinite(m.mgf) || !std::isfinite(m.mean_y_tilt))
        throw NumericError("tilted moment degenerate: mu_t(exp(gamma s(Y))) not positive finite");
    return m;
}

double OutcomeFit::c_factor(const TiltSpec& spec, std::span<const double> x) const {
    return tilted_moments(spec, x).mgf;
}

double OutcomeFit::tilted_mean(const TiltSpec& spec, std::span<const double> x) const {
    TiltedMoments m = tilted_moments(spec, x);
    return m.mean_y_tilt / m.mgf;
}

double OutcomeFit::sample_outcome(std::span<const double> x, double u01) const {
    std::size_t lo, hi;
    double wtot;
    std::vector<double> w;
    if (!weight_window(index_of(x), lo, hi, wtot, w)) {
        std::size_t n = y_sorted_.size();
        double pos = std::ceil(u01 * static_cast<double>(n) - 1e-12) - 1.0;
        std::size_t k = static_cast<std::size_t>(std::clamp(pos, 0.0, double(n - 1)));
        return y_sorted_[k];
    }
    double target = u01 * wtot;
    double cum = 0.0;
    double last = y_sorted_.back();
    for (std::uint32_t pos : y_order_) {
        if (pos < lo || pos >= hi) continue;
        cum += w[pos - lo];
        last = y_[pos];
        if (cum >= target) return y_[pos];
    }
    return last;
}

} // namespace tiltsens
