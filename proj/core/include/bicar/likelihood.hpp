#pragma once

#include <vector>

namespace bicar {

class Rng;

/// Zero-mean, variance-omega skew-normal error model. Location m and scale s
/// are derived from (omega, alpha) so that the mean is exactly 0 and the
/// variance exactly omega:
///   delta = alpha / sqrt(1 + alpha^2)
///   s^2 (1 - 2 delta^2 / pi) = omega,   m = -s delta sqrt(2/pi).
struct SkewNormal {
    double omega = 1.0;
    double alpha = 0.0;
    double m = 0.0;
    double s = 1.0;
    double gamma1 = 0.0;
};

/// Construct the standardized spec; throws ValidationError for omega <= 0.
SkewNormal sn_standardize(double omega, double alpha);

/// log[ 2/s phi((x-m)/s) Phi(alpha (x-m)/s) ], stable far into the tails.
double sn_logpdf(double x, const SkewNormal& sn);

/// First and second derivative of sn_logpdf with respect to x.
struct SnDerivs {
    double logpdf;
    double d1;
    double d2;  ///< strictly negative (the density is log-concave)
};
SnDerivs sn_logpdf_derivs(double x, const SkewNormal& sn);

double sn_sample(const SkewNormal& sn, Rng& rng);

/// Skewness of the skew-normal as a function of the shape parameter;
/// odd in alpha, bounded by ~0.99527.
double gamma1_of_alpha(double alpha);

/// Inverse map; throws ValidationError when |gamma1| >= the supremum.
double alpha_of_gamma1(double gamma1);

/// Largest attainable |gamma1| (the alpha -> infinity limit).
double gamma1_sup();

/// log Phi(x) for the standard normal, accurate for large negative x.
double log_norm_cdf(double x);

/// phi(t) / Phi(t), the inverse Mills ratio, stable for t << 0.
double inverse_mills(double t);

/// Penalised-complexity prior on the skew-normal shape with rate lambda.
/// The distance d(a) = sqrt(2 KLD(SN(a) || N)) between the moment-matched
/// skew-normal and its normal base model is precomputed by quadrature on a
/// monotone grid in |alpha| and interpolated with a monotone cubic; the
/// density is
///   pi(a) = (lambda/2) exp(-lambda d(|a|)) d'(|a|) / (1 - exp(-lambda d_max))
/// over |a| <= alpha_max (d saturates, so the truncation constant is needed
/// for unit mass).
class PcPriorAlpha {
public:
    explicit PcPriorAlpha(double lambda, double alpha_max = 30.0, int knots = 512);

    double log_density(double alpha) const;
    double distance(double alpha) const;        ///< d(|alpha|)
    double distance_deriv(double alpha) const;  ///< d d/d|alpha|, >= 0
    double lambda() const { return lambda_; }
    double alpha_max() const { return alpha_max_; }

    /// Shared lambda = 4 instance, built once.
    static const PcPriorAlpha& standard();

private:
    double lambda_;
    double alpha_max_;
    std::vector<double> knots_;   ///< |alpha| grid, increasing from 0
    std::vector<double> d_;       ///< distance at knots
    std::vector<double> slope_;   ///< monotone-cubic derivative at knots
    double log_norm_;             ///< log(1 - exp(-lambda d_max))

    int interval_of(double a) const;
};

/// Process-wide cache of PcPriorAlpha instances keyed by lambda (grid
/// construction costs ~10^6 density evaluations).
const PcPriorAlpha& pc_prior_cached(double lambda);

}  // namespace bicar
