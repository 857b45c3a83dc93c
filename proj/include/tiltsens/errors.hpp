#pragma once

#include <stdexcept>
#include <string>

namespace tiltsens {

// Bad configuration or file schema (wrong columns, malformed JSON, invalid option).
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Input data violates a domain invariant (non-binary treatment, missing value,
// infeasible split request, ...).
class ValidationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Numerical failure at runtime: divergent fit, tilt overflow, degenerate calibration.
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class TiltOverflowError : public NumericError {
public:
    TiltOverflowError(double y, double exponent)
        : NumericError("tilt overflow: gamma*s(y) = " + std::to_string(exponent) +
                       " exceeds 700 at y = " + std::to_string(y)),
          y_(y), exponent_(exponent) {}
    double y() const { return y_; }
    double exponent() const { return exponent_; }

private:
    double y_;
    double exponent_;
};

// Fit did not converge within its budget; carries the best point found so far.
class FitError : public NumericError {
public:
    using NumericError::NumericError;
};

} // namespace tiltsens
