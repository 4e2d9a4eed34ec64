#pragma once

#include <Eigen/Dense>

#include <vector>

namespace bicar {

/// Model-comparison statistics computed from an S x J matrix of
/// per-observation log-likelihood draws (J = number of observed scalar
/// responses).
struct CriteriaBundle {
    double neg_lpml = 0.0;
    double waic = 0.0;
    double lppd = 0.0;
    double p_waic = 0.0;
    double dic = 0.0;
    double expected_deviance = 0.0;
    double p_d = 0.0;
    double mse = 0.0;
    std::vector<double> cpo;        ///< per observation, natural scale
    std::vector<bool> cpo_flagged;  ///< unreliable importance weights
    int cpo_flagged_count = 0;
};

struct WaicResult {
    double waic, lppd, p_waic;
};
/// lppd via log-sum-exp; p_waic as the unbiased per-column variance.
WaicResult waic(const Eigen::MatrixXd& loglik_draws);

struct DicResult {
    double dic, expected_deviance, p_d;
};
/// loglik_at_mean: per-observation log-likelihood at the posterior mean.
DicResult dic(const Eigen::MatrixXd& loglik_draws, const Eigen::VectorXd& loglik_at_mean);

struct CpoResult {
    double neg_lpml = 0.0;
    std::vector<double> cpo;
    std::vector<bool> flagged;
    int flagged_count = 0;
};
/// Harmonic-mean CPO in log space. Observations whose importance ratios have
/// a generalized-Pareto tail index above `khat_threshold` are flagged and
/// excluded from the LPML sum.
CpoResult cpo_lpml(const Eigen::MatrixXd& loglik_draws, double khat_threshold = 0.7);

double predictive_mse(const Eigen::VectorXd& y, const Eigen::VectorXd& yhat);

/// Gaussian-kernel density estimate with the Silverman bandwidth
/// h = 0.9 min(sd, IQR/1.34) n^{-1/5}, evaluated on a 512-point grid
/// spanning the data +/- 3h. The curve is normalized to unit trapezoid mass
/// on its grid.
struct KdeCurve {
    std::vector<double> x;
    std::vector<double> density;
    double bandwidth = 0.0;
};
KdeCurve residual_kde(const std::vector<double>& residuals, int grid_points = 512);

/// Generalized-Pareto shape estimate (Zhang-Stephens) for the largest ~20%
/// of a sample; the usual importance-weight reliability diagnostic.
double pareto_khat(std::vector<double> sample);

}  // namespace bicar
