#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace bicar {

/// Input or configuration problem (bad file, inconsistent labels, invalid
/// option). Maps to CLI exit code 2.
struct ValidationError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Numerical failure (non-SPD matrix where SPD is required, optimizer
/// breakdown). Maps to CLI exit code 3.
struct NumericalError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// log(sum_i exp(x_i)) without overflow; -inf for an empty range.
double log_sum_exp(std::span<const double> x);

/// Kahan-compensated sum.
double kahan_sum(std::span<const double> x);

/// Linear-interpolation quantile (the common "type 7" convention) of an
/// unsorted sample. p in [0, 1].
double quantile(std::vector<double> x, double p);

double interquartile_range(const std::vector<double>& x);

/// Online mean/variance accumulator (Welford). variance() uses the n-1
/// denominator and returns 0 for fewer than two samples.
class RunningMoments {
public:
    void add(double x) {
        ++n_;
        const double d = x - mean_;
        mean_ += d / static_cast<double>(n_);
        m2_ += d * (x - mean_);
    }
    std::size_t count() const { return n_; }
    double mean() const { return mean_; }
    double variance() const { return n_ > 1 ? m2_ / static_cast<double>(n_ - 1) : 0.0; }

private:
    std::size_t n_ = 0;
    double mean_ = 0.0;
    double m2_ = 0.0;
};

/// Sample skewness m3 / m2^{3/2} (biased moment form).
double sample_skewness(std::span<const double> x);

/// Shortest round-trip decimal rendering of a double ("%.17g" trimmed).
/// Used everywhere a number is written to disk so that repeated runs are
/// byte-identical.
std::string format_double(double v);

}  // namespace bicar
