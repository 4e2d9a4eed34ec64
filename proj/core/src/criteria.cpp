#include "bicar/criteria.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "bicar/util.hpp"

namespace bicar {

namespace {

double column_logsumexp(const Eigen::MatrixXd& m, Eigen::Index j) {
    const double mx = m.col(j).maxCoeff();
    if (!std::isfinite(mx)) return mx;
    double acc = 0.0;
    for (Eigen::Index s = 0; s < m.rows(); ++s) acc += std::exp(m(s, j) - mx);
    return mx + std::log(acc);
}

}  // namespace

WaicResult waic(const Eigen::MatrixXd& loglik_draws) {
    const auto S = loglik_draws.rows();
    const auto J = loglik_draws.cols();
    if (S < 2) throw ValidationError("waic: need at least 2 draws");

    double lppd = 0.0, p_waic = 0.0;
    const double logS = std::log(static_cast<double>(S));
    for (Eigen::Index j = 0; j < J; ++j) {
        lppd += column_logsumexp(loglik_draws, j) - logS;
        RunningMoments mom;
        for (Eigen::Index s = 0; s < S; ++s) mom.add(loglik_draws(s, j));
        p_waic += mom.variance();
    }
    return {-2.0 * (lppd - p_waic), lppd, p_waic};
}

DicResult dic(const Eigen::MatrixXd& loglik_draws, const Eigen::VectorXd& loglik_at_mean) {
    const auto S = loglik_draws.rows();
    if (S < 2) throw ValidationError("dic: need at least 2 draws");
    if (loglik_at_mean.size() != loglik_draws.cols())
        throw ValidationError("dic: loglik_at_mean length mismatch");

    double mean_total = 0.0;
    for (Eigen::Index s = 0; s < S; ++s) mean_total += loglik_draws.row(s).sum();
    mean_total /= static_cast<double>(S);

    DicResult r;
    r.expected_deviance = -2.0 * mean_total;
    const double dev_at_mean = -2.0 * loglik_at_mean.sum();
    r.p_d = r.expected_deviance - dev_at_mean;
    r.dic = r.expected_deviance + r.p_d;
    return r;
}

double pareto_khat(std::vector<double> sample) {
    // Zhang & Stephens (2009) profile-posterior estimator of the GPD shape,
    // fitted to exceedances over the ~80th percentile.
    std::sort(sample.begin(), sample.end());
    const auto n_all = sample.size();
    if (n_all < 20) return -std::numeric_limits<double>::infinity();

    const auto tail_len = std::max<std::size_t>(5, static_cast<std::size_t>(0.2 * n_all));
    const double cutoff = sample[n_all - tail_len - 1];
    std::vector<double> z;
    z.reserve(tail_len);
    for (std::size_t i = n_all - tail_len; i < n_all; ++i) {
        const double e = sample[i] - cutoff;
        if (e > 0.0) z.push_back(e);
    }
    const auto n = z.size();
    if (n < 5) return -std::numeric_limits<double>::infinity();

    const auto m = static_cast<std::size_t>(30.0 + std::floor(std::sqrt(static_cast<double>(n))));
    const double z_first_quart = z[static_cast<std::size_t>(std::floor(n / 4.0 + 0.5)) > 0
                                       ? static_cast<std::size_t>(std::floor(n / 4.0 + 0.5)) - 1
                                       : 0];
    const double z_max = z[n - 1];

    std::vector<double> theta(m), logw(m);
    for (std::size_t j = 0; j < m; ++j) {
        theta[j] = 1.0 / z_max +
                   (1.0 - std::sqrt(m / (static_cast<double>(j) + 0.5))) / (3.0 * z_first_quart);
        double k = 0.0;
        for (double zi : z) k += std::log1p(-theta[j] * zi);
        k /= static_cast<double>(n);
        logw[j] = static_cast<double>(n) * (std::log(-theta[j] / k) - k - 1.0);
    }
    const double lse = log_sum_exp(logw);
    double theta_hat = 0.0;
    for (std::size_t j = 0; j < m; ++j) theta_hat += theta[j] * std::exp(logw[j] - lse);

    double khat = 0.0;
    for (double zi : z) khat += std::log1p(-theta_hat * zi);
    return khat / static_cast<double>(n);
}

CpoResult cpo_lpml(const Eigen::MatrixXd& loglik_draws, double khat_threshold) {
    const auto S = loglik_draws.rows();
    const auto J = loglik_draws.cols();
    if (S < 2) throw ValidationError("cpo_lpml: need at least 2 draws");

    CpoResult r;
    r.cpo.resize(J);
    r.flagged.resize(J, false);
    const double logS = std::log(static_cast<double>(S));

    std::vector<double> ratios(S);
    for (Eigen::Index j = 0; j < J; ++j) {
        // log cpo_j = log S - logsumexp_s(-l_sj)
        double mx = -std::numeric_limits<double>::infinity();
        for (Eigen::Index s = 0; s < S; ++s) mx = std::max(mx, -loglik_draws(s, j));
        double acc = 0.0;
        for (Eigen::Index s = 0; s < S; ++s) acc += std::exp(-loglik_draws(s, j) - mx);
        const double log_cpo = logS - (mx + std::log(acc));
        r.cpo[j] = std::exp(log_cpo);

        for (Eigen::Index s = 0; s < S; ++s) ratios[s] = std::exp(-loglik_draws(s, j) - mx);
        const double khat = pareto_khat(ratios);
        if (khat > khat_threshold) {
            r.flagged[j] = true;
            ++r.flagged_count;
        } else {
            r.neg_lpml -= log_cpo;
        }
    }
    return r;
}

double predictive_mse(const Eigen::VectorXd& y, const Eigen::VectorXd& yhat) {
    if (y.size() != yhat.size()) throw ValidationError("predictive_mse: length mismatch");
    if (y.size() == 0) throw ValidationError("predictive_mse: empty input");
    return (y - yhat).squaredNorm() / static_cast<double>(y.size());
}

KdeCurve residual_kde(const std::vector<double>& residuals, int grid_points) {
    const auto n = residuals.size();
    if (n < 2) throw ValidationError("residual_kde: need at least 2 residuals");

    RunningMoments mom;
    for (double r : residuals) mom.add(r);
    const double sd = std::sqrt(mom.variance());
    const double iqr = interquartile_range(residuals);
    const double spread = std::min(sd, iqr / 1.34);
    if (!(spread > 0.0)) throw ValidationError("residual_kde: zero-variance residuals");

    KdeCurve curve;
    curve.bandwidth = 0.9 * spread * std::pow(static_cast<double>(n), -0.2);
    const double h = curve.bandwidth;

    const auto [mn, mx] = std::minmax_element(residuals.begin(), residuals.end());
    const double lo = *mn - 3.0 * h;
    const double hi = *mx + 3.0 * h;
    const double step = (hi - lo) / (grid_points - 1);

    curve.x.resize(grid_points);
    curve.density.resize(grid_points);
    const double norm = 1.0 / (static_cast<double>(n) * h * std::sqrt(2.0 * std::numbers::pi));
    for (int i = 0; i < grid_points; ++i) {
        const double x = lo + step * i;
        curve.x[i] = x;
        double acc = 0.0;
        for (double r : residuals) {
            const double u = (x - r) / h;
            acc += std::exp(-0.5 * u * u);
        }
        curve.density[i] = norm * acc;
    }

    // Normalize to unit trapezoid mass on the grid (the raw kernel sum loses
    // the tail mass cut off at +/- 3h).
    double mass = 0.0;
    for (int i = 0; i + 1 < grid_points; ++i)
        mass += 0.5 * (curve.density[i] + curve.density[i + 1]) * step;
    for (double& d : curve.density) d /= mass;
    return curve;
}

}  // namespace bicar
