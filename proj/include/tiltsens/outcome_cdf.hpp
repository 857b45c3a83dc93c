#pragma once

#include <atomic>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "tiltsens/dataset.hpp"
#include "tiltsens/tilting.hpp"

namespace tiltsens {

// Gaussian-based kernels. Order 2: phi(v). Order 4: (3 - v^2)/2 * phi(v).
double kernel_value(int order, double v);
// j-th moment of the kernel by quadrature (for checking the order conditions).
double kernel_moment(int order, int j);

struct KernelSpec {
    int order = 2;
};

// Verifies the order conditions (integral 1, vanishing moments below `order`)
// numerically to 1e-8; memoized, throws NumericError on failure. Runs once per
// kernel order when a fit is first built.
void validate_kernel(const KernelSpec& spec);

struct SingleIndexConfig {
    int restarts = 5;        // Nelder-Mead random restarts (p >= 2)
    int h_grid_size = 8;     // coarse log-spaced scan before golden-section
    double h_tol = 1e-3;     // golden-section relative tolerance on log h
    double beta_tol = 1e-5;  // simplex convergence tolerance
    int max_iter = 400;      // Nelder-Mead iteration budget per restart
    double h_lower_mult = 0.5; // I_n lower endpoint, times index-value sd
    double h_upper_mult = 3.0; // I_n upper endpoint, times index-value sd
    std::uint64_t seed = 0;
};

struct TiltedMoments {
    double mean_y = 0.0;      // mu_t(Y; x)
    double mgf = 1.0;         // mu_t(exp(gamma s(Y)); x)
    double mean_y_tilt = 0.0; // mu_t(Y exp(gamma s(Y)); x)
};

// Fitted single-index conditional CDF of Y given X for one treatment arm.
// Stage 1 (4th-order kernel) selects beta and h_stage1 by cross-validation;
// delivered CDFs and moments use the 2nd-order Gaussian kernel at
// h_stage2 = h_stage1 * n^(-4/45). Immutable; evaluation is concurrency-safe.
class OutcomeFit {
public:
    OutcomeFit(int arm, std::vector<double> beta, double h_stage1, double h_stage2,
               std::span<const double> index_vals, std::span<const double> ys);

    OutcomeFit(const OutcomeFit& other)
        : arm_(other.arm_), beta_(other.beta_), h_stage1_(other.h_stage1_),
          h_stage2_(other.h_stage2_), index_(other.index_), y_(other.y_),
          y_order_(other.y_order_), y_sorted_(other.y_sorted_),
          fallbacks_(other.fallbacks_.load()) {}
    OutcomeFit(OutcomeFit&& other) noexcept
        : arm_(other.arm_), beta_(std::move(other.beta_)), h_stage1_(other.h_stage1_),
          h_stage2_(other.h_stage2_), index_(std::move(other.index_)), y_(std::move(other.y_)),
          y_order_(std::move(other.y_order_)), y_sorted_(std::move(other.y_sorted_)),
          fallbacks_(other.fallbacks_.load()) {}
    OutcomeFit& operator=(const OutcomeFit&) = delete;
    OutcomeFit& operator=(OutcomeFit&&) = delete;

    int arm() const { return arm_; }
    const std::vector<double>& beta() const { return beta_; }
    double h_stage1() const { return h_stage1_; }
    double h_stage2() const { return h_stage2_; }
    std::size_t train_n() const { return index_.size(); }
    const std::vector<double>& train_index() const { return index_; }
    const std::vector<double>& train_y() const { return y_; }
    double y_min() const { return y_sorted_.front(); }
    double y_max() const { return y_sorted_.back(); }

    double index_of(std::span<const double> x) const;

    double cond_cdf(double y, std::span<const double> x) const;
    double moment(const std::function<double(double)>& g, std::span<const double> x) const;
    double c_factor(const TiltSpec& spec, std::span<const double> x) const;
    double tilted_mean(const TiltSpec& spec, std::span<const double> x) const;
    TiltedMoments tilted_moments(const TiltSpec& spec, std::span<const double> x) const;

    // Inverse-CDF draw at x given u in (0,1): the left-continuous generalized
    // inverse of the step CDF.
    double sample_outcome(std::span<const double> x, double u) const;

    long fallback_count() const { return fallbacks_.load(); }

private:
    // Nadaraya-Watson weights on [lo,hi) of the index-sorted training points;
    // returns false when every kernel weight underflows (caller falls back to
    // the marginal ECDF).
    bool weight_window(double u, std::size_t& lo, std::size_t& hi, double& wtot,
                       std::vector<double>& w) const;

    int arm_ = 0;
    std::vector<double> beta_;
    double h_stage1_ = 0.0;
    double h_stage2_ = 0.0;
    std::vector<double> index_;    // ascending
    std::vector<double> y_;        // aligned with index_
    std::vector<std::uint32_t> y_order_; // positions of index-sorted points in y order
    std::vector<double> y_sorted_;
    mutable std::atomic<long> fallbacks_{0};
};

// Leave-one-out criterion CV(beta, h): mean over i of the integral of the
// squared ECDF residual against the empirical law of Y, stage-1 kernel.
// Throws NumericError when some observation has no usable kernel window.
double cv_criterion(const Dataset& train_t, std::span<const double> beta, double h);

OutcomeFit fit_single_index(const Dataset& train_t, const SingleIndexConfig& cfg = {});

} // namespace tiltsens
