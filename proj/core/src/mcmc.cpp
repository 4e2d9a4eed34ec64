#include "bicar/mcmc.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "bicar/likelihood.hpp"
#include "bicar/util.hpp"

namespace bicar {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// Negative log posterior of theta at fixed hypers, up to psi-only constants.
double neg_log_post_theta(const AssembledModel& m, const Eigen::MatrixXd& Qz,
                          const Eigen::VectorXd& theta, const NaturalHypers& h) {
    double quad = 0.0;
    for (int j = 0; j < m.M; ++j) {
        const double d = theta(j) - m.prior_mean(j);
        quad += m.fixed_prior_prec(j) * d * d;
    }
    if (m.spec.has_z()) {
        const Eigen::VectorXd z = m.z_of(theta);
        quad += z.dot(Qz * z);
    }
    const Eigen::VectorXd ll = loglik_observed(m, theta, h);
    return 0.5 * quad - ll.sum();
}

// Log target of the hyper coordinates given theta: prior + psi-dependent
// parts of the latent prior + likelihood. Constants in psi are dropped.
double hyper_target(const AssembledModel& m, const Eigen::VectorXd& u,
                    const Eigen::VectorXd& theta) {
    const double lp = m.hyper.log_prior(u);
    if (!std::isfinite(lp)) return kNegInf;
    const NaturalHypers h = m.hyper.to_natural(u);
    double t = lp + loglik_observed(m, theta, h).sum();
    if (m.spec.has_z()) {
        const Eigen::MatrixXd Qz = m.z_precision(h);
        const Eigen::VectorXd z = m.z_of(theta);
        t += 0.5 * m.z_logdet_constrained(h, Qz) - 0.5 * z.dot(Qz * z);
    }
    return t;
}

struct ScalarSummary {
    double mean, sd, q05, q50, q95;
};

ScalarSummary summarize(std::vector<double> draws) {
    RunningMoments mom;
    for (double v : draws) mom.add(v);
    ScalarSummary s;
    s.mean = mom.mean();
    s.sd = std::sqrt(mom.variance());
    std::sort(draws.begin(), draws.end());
    auto q = [&](double p) {
        const double h = (draws.size() - 1.0) * p;
        const auto lo = static_cast<std::size_t>(std::floor(h));
        const auto hi = std::min(lo + 1, draws.size() - 1);
        return draws[lo] + (h - lo) * (draws[hi] - draws[lo]);
    };
    s.q05 = q(0.05);
    s.q50 = q(0.50);
    s.q95 = q(0.95);
    return s;
}

}  // namespace

double split_rhat(const std::vector<double>& chain) {
    const auto n = chain.size() / 2;
    if (n < 2) return std::numeric_limits<double>::quiet_NaN();
    RunningMoments a, b;
    for (std::size_t i = 0; i < n; ++i) a.add(chain[i]);
    for (std::size_t i = n; i < 2 * n; ++i) b.add(chain[i]);
    const double W = 0.5 * (a.variance() + b.variance());
    if (W <= 0.0) return 1.0;
    const double mean_all = 0.5 * (a.mean() + b.mean());
    const double B = static_cast<double>(n) * ((a.mean() - mean_all) * (a.mean() - mean_all) +
                                               (b.mean() - mean_all) * (b.mean() - mean_all));
    const double nn = static_cast<double>(n);
    const double var_plus = (nn - 1.0) / nn * W + B / nn;
    return std::sqrt(var_plus / W);
}

double effective_sample_size(const std::vector<double>& chain) {
    const auto n = chain.size();
    if (n < 4) return static_cast<double>(n);
    double mean = 0.0;
    for (double v : chain) mean += v;
    mean /= static_cast<double>(n);
    double c0 = 0.0;
    for (double v : chain) c0 += (v - mean) * (v - mean);
    c0 /= static_cast<double>(n);
    if (c0 <= 0.0) return static_cast<double>(n);

    auto acov = [&](std::size_t lag) {
        double acc = 0.0;
        for (std::size_t i = 0; i + lag < n; ++i)
            acc += (chain[i] - mean) * (chain[i + lag] - mean);
        return acc / static_cast<double>(n);
    };

    double sum_rho = 0.0;
    for (std::size_t t = 1; t + 1 < n; t += 2) {
        const double pair = acov(t) + acov(t + 1);
        if (pair <= 0.0) break;
        sum_rho += pair / c0;
    }
    return static_cast<double>(n) / (1.0 + 2.0 * sum_rho);
}

PosteriorFit mcmc_oracle(const AssembledModel& m, const McmcOptions& opts) {
    Rng rng(opts.seed);
    const int d = m.hyper.dim();

    Eigen::VectorXd u = m.hyper.initial_point(m.init_hints());
    NaturalHypers h = m.hyper.to_natural(u);
    GaussianApprox ga = latent_gaussian_approx(m, h, opts.newton);
    Eigen::MatrixXd Qz =
        m.spec.has_z() ? m.z_precision(h) : Eigen::MatrixXd::Zero(0, 0);
    Eigen::VectorXd theta = ga.mode;
    double f_theta = neg_log_post_theta(m, Qz, theta, h);
    double t_hyper = hyper_target(m, u, theta);

    std::vector<double> log_step(d, std::log(0.5));
    std::vector<int> coord_accepts(d, 0);
    long theta_accepts = 0, theta_proposals = 0;

    const int total = opts.warmup + opts.iterations;
    const int kept = opts.iterations / opts.thin;

    Eigen::MatrixXd theta_draws(kept, m.M);
    Eigen::MatrixXd u_draws(kept, d);
    Eigen::MatrixXd loglik(kept, m.n_observed_total);
    int row = 0;

    for (int it = 0; it < total; ++it) {
        // --- theta block: independence proposal from the Gaussian approx.
        {
            const Eigen::VectorXd prop = sample_constrained(m, ga, rng);
            const double f_prop = neg_log_post_theta(m, Qz, prop, h);
            const Eigen::VectorXd dc = theta - ga.mode;
            const Eigen::VectorXd dp = prop - ga.mode;
            const double q_cur = -0.5 * dc.dot(ga.H * dc);
            const double q_prop = -0.5 * dp.dot(ga.H * dp);
            const double log_r = (-f_prop + f_theta) + (q_cur - q_prop);
            ++theta_proposals;
            if (std::log(rng.uniform01()) < log_r) {
                theta = prop;
                f_theta = f_prop;
                ++theta_accepts;
                t_hyper = hyper_target(m, u, theta);
            }
        }

        // --- hyperparameter coordinates: random-walk Metropolis.
        bool psi_changed = false;
        for (int j = 0; j < d; ++j) {
            Eigen::VectorXd up = u;
            up(j) += std::exp(log_step[j]) * rng.normal();
            const double t_prop = hyper_target(m, up, theta);
            const bool accept = std::log(rng.uniform01()) < t_prop - t_hyper;
            if (accept) {
                u = up;
                t_hyper = t_prop;
                psi_changed = true;
                ++coord_accepts[j];
            }
            if (it < opts.warmup) {
                // Robbins-Monro toward the target acceptance rate.
                const double gamma = std::pow(it + 1.0, -0.6);
                log_step[j] += gamma * ((accept ? 1.0 : 0.0) - opts.target_accept);
            }
        }

        if (psi_changed) {
            h = m.hyper.to_natural(u);
            ga = latent_gaussian_approx(m, h, opts.newton, &theta);
            if (m.spec.has_z()) Qz = m.z_precision(h);
            f_theta = neg_log_post_theta(m, Qz, theta, h);
        }

        if (it >= opts.warmup && (it - opts.warmup) % opts.thin == 0 && row < kept) {
            theta_draws.row(row) = theta.transpose();
            u_draws.row(row) = u.transpose();
            loglik.row(row) = loglik_observed(m, theta, h).transpose();
            ++row;
        }
    }

    // --- summaries
    PosteriorFit fit;
    fit.label = m.spec.label;
    fit.engine = "mcmc";
    fit.seed = opts.seed;

    fit.theta_mean = theta_draws.colwise().mean();
    fit.theta_sd.resize(m.M);
    for (int j = 0; j < m.M; ++j) {
        RunningMoments mom;
        for (int s = 0; s < row; ++s) mom.add(theta_draws(s, j));
        fit.theta_sd(j) = std::sqrt(mom.variance());
    }

    const char* outcome_label[2] = {"math", "ital"};
    const auto fixed_names = m.fixed_effect_names();
    auto column = [&](int j) {
        std::vector<double> v(row);
        for (int s = 0; s < row; ++s) v[s] = theta_draws(s, j);
        return v;
    };
    for (int kk = 0; kk < 2; ++kk) {
        for (int j = 0; j < m.n_intercepts + m.p; ++j) {
            const ScalarSummary s = summarize(column(kk * m.M_half + j));
            fit.fixed_effects.push_back(
                {fixed_names[j], outcome_label[kk], s.mean, s.sd, s.q05, s.q50, s.q95});
        }
    }
    if (m.spec.has_z()) {
        for (int kk = 0; kk < 2; ++kk)
            for (int i = 0; i < m.n; ++i) {
                const ScalarSummary s = summarize(column(kk * m.M_half + m.off_z_half + i));
                fit.area_effects.push_back({"z_area" + std::to_string(i), outcome_label[kk],
                                            s.mean, s.sd, s.q05, s.q50, s.q95});
            }
    }

    const auto natural_names = m.hyper.natural_names();
    for (int j = 0; j < d; ++j) {
        std::vector<double> nat(row);
        for (int s = 0; s < row; ++s)
            nat[s] = m.hyper.natural_of(m.hyper.coords()[j], u_draws(s, j));
        const ScalarSummary s = summarize(nat);
        fit.hypers.push_back({natural_names[j], s.mean, s.sd, s.q05, s.q50, s.q95});
    }

    fit.yhat1 = m.eta(fit.theta_mean, 0);
    fit.yhat2 = m.eta(fit.theta_mean, 1);

    const Eigen::VectorXd u_mean = u_draws.colwise().mean();
    fit.hyper_point = m.hyper.to_natural(u_mean);

    const WaicResult w = waic(loglik);
    fit.criteria.waic = w.waic;
    fit.criteria.lppd = w.lppd;
    fit.criteria.p_waic = w.p_waic;
    const DicResult dc = dic(loglik, loglik_observed(m, fit.theta_mean, fit.hyper_point));
    fit.criteria.dic = dc.dic;
    fit.criteria.expected_deviance = dc.expected_deviance;
    fit.criteria.p_d = dc.p_d;
    const CpoResult cp = cpo_lpml(loglik);
    fit.criteria.neg_lpml = cp.neg_lpml;
    fit.criteria.cpo = cp.cpo;
    fit.criteria.cpo_flagged = cp.flagged;
    fit.criteria.cpo_flagged_count = cp.flagged_count;
    {
        std::vector<double> se;
        for (int kk = 0; kk < 2; ++kk) {
            const Eigen::VectorXd& yh = kk == 0 ? fit.yhat1 : fit.yhat2;
            for (int i = 0; i < m.N; ++i)
                if (m.observed[kk][i]) se.push_back((m.y[kk](i) - yh(i)) * (m.y[kk](i) - yh(i)));
        }
        fit.criteria.mse = se.empty() ? 0.0 : kahan_sum(se) / static_cast<double>(se.size());
    }

    // --- convergence diagnostics on fixed effects and hypers.
    double rhat_max = 0.0, ess_min = std::numeric_limits<double>::infinity();
    auto monitor = [&](const std::vector<double>& chain) {
        const double r = split_rhat(chain);
        if (std::isfinite(r)) rhat_max = std::max(rhat_max, r);
        ess_min = std::min(ess_min, effective_sample_size(chain));
    };
    for (int kk = 0; kk < 2; ++kk)
        for (int j = 0; j < m.n_intercepts + m.p; ++j) monitor(column(kk * m.M_half + j));
    for (int j = 0; j < d; ++j) {
        std::vector<double> v(row);
        for (int s = 0; s < row; ++s) v[s] = u_draws(s, j);
        monitor(v);
    }
    fit.convergence.rhat_max = rhat_max;
    fit.convergence.ess_min = std::isfinite(ess_min) ? ess_min : 0.0;
    fit.convergence.accept_theta =
        theta_proposals > 0 ? static_cast<double>(theta_accepts) / theta_proposals : 0.0;
    fit.convergence.converged = rhat_max <= opts.rhat_limit;
    if (!fit.convergence.converged)
        fit.convergence.flags.push_back("rhat_above_" + format_double(opts.rhat_limit));
    if (m.A_theta.rows() > 0)
        fit.convergence.max_constraint_residual =
            (m.A_theta * fit.theta_mean).lpNorm<Eigen::Infinity>();
    return fit;
}

}  // namespace bicar
