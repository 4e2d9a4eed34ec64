#include "bicar/inference.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <numbers>
#include <thread>

#include "bicar/likelihood.hpp"
#include "bicar/util.hpp"

namespace bicar {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();
const double kLog2Pi = std::log(2.0 * std::numbers::pi);

// Per-outcome likelihood derivatives with respect to the linear predictor.
struct LikTerms {
    Eigen::VectorXd g;  ///< d loglik / d eta, zero on missing rows
    Eigen::VectorXd w;  ///< -d^2 loglik / d eta^2, zero on missing rows
    double loglik = 0.0;
};

LikTerms likelihood_terms(const AssembledModel& m, int outcome, const Eigen::VectorXd& eta,
                          const NaturalHypers& h) {
    LikTerms t;
    t.g = Eigen::VectorXd::Zero(m.N);
    t.w = Eigen::VectorXd::Zero(m.N);
    if (m.spec.likelihoods[outcome] == OutcomeLikelihood::gaussian) {
        const double inv_omega = 1.0 / h.omega[outcome];
        const double log_norm = -0.5 * std::log(h.omega[outcome]) - 0.5 * kLog2Pi;
        for (int i = 0; i < m.N; ++i) {
            if (!m.observed[outcome][i]) continue;
            const double r = m.y[outcome](i) - eta(i);
            t.g(i) = r * inv_omega;
            t.w(i) = inv_omega;
            t.loglik += log_norm - 0.5 * r * r * inv_omega;
        }
    } else {
        const SkewNormal sn = sn_standardize(h.omega[outcome], h.alpha[outcome]);
        for (int i = 0; i < m.N; ++i) {
            if (!m.observed[outcome][i]) continue;
            const SnDerivs d = sn_logpdf_derivs(m.y[outcome](i) - eta(i), sn);
            // eta enters through the residual, so signs flip on the first
            // derivative and stay on the second.
            t.g(i) = -d.d1;
            t.w(i) = -d.d2;
            t.loglik += d.logpdf;
        }
    }
    return t;
}

// B' diag(w) B for one outcome block.
Eigen::MatrixXd weighted_gram(const AssembledModel& m, const Eigen::VectorXd& w) {
    return m.B_half.transpose() * w.asDiagonal() * m.B_half;
}

struct Objective {
    double value = 0.0;       ///< negative log posterior (up to psi constants)
    double loglik = 0.0;
};

Objective objective_at(const AssembledModel& m, const Eigen::MatrixXd& Qz,
                       const Eigen::VectorXd& theta, const NaturalHypers& h) {
    Objective o;
    double quad = 0.0;
    for (int j = 0; j < m.M; ++j) {
        const double d = theta(j) - m.prior_mean(j);
        quad += m.fixed_prior_prec(j) * d * d;
    }
    if (m.spec.has_z()) {
        const Eigen::VectorXd z = m.z_of(theta);
        quad += z.dot(Qz * z);
    }
    for (int kk = 0; kk < 2; ++kk)
        o.loglik += likelihood_terms(m, kk, m.eta(theta, kk), h).loglik;
    o.value = 0.5 * quad - o.loglik;
    return o;
}

// Gradient of the negative log posterior.
Eigen::VectorXd objective_gradient(const AssembledModel& m, const Eigen::MatrixXd& Qz,
                                   const Eigen::VectorXd& theta, const NaturalHypers& h) {
    Eigen::VectorXd grad =
        m.fixed_prior_prec.cwiseProduct(theta - m.prior_mean);
    if (m.spec.has_z()) {
        const Eigen::VectorXd qz = Qz * m.z_of(theta);
        for (int kk = 0; kk < 2; ++kk)
            grad.segment(static_cast<Eigen::Index>(kk) * m.M_half + m.off_z_half, m.n) +=
                qz.segment(static_cast<Eigen::Index>(kk) * m.n, m.n);
    }
    for (int kk = 0; kk < 2; ++kk) {
        const LikTerms t = likelihood_terms(m, kk, m.eta(theta, kk), h);
        grad.segment(static_cast<Eigen::Index>(kk) * m.M_half, m.M_half) -=
            m.B_half.transpose() * t.g;
    }
    return grad;
}

void embed_z_block(const AssembledModel& m, const Eigen::MatrixXd& Qz, Eigen::MatrixXd& H) {
    for (int a = 0; a < 2; ++a)
        for (int b = 0; b < 2; ++b)
            H.block(static_cast<Eigen::Index>(a) * m.M_half + m.off_z_half,
                    static_cast<Eigen::Index>(b) * m.M_half + m.off_z_half, m.n, m.n) +=
                Qz.block(static_cast<Eigen::Index>(a) * m.n,
                         static_cast<Eigen::Index>(b) * m.n, m.n, m.n);
}

}  // namespace

GaussianApprox latent_gaussian_approx(const AssembledModel& m, const NaturalHypers& h,
                                      const NewtonOptions& opts,
                                      const Eigen::VectorXd* warm_start) {
    const bool has_z = m.spec.has_z();
    const Eigen::MatrixXd Qz =
        has_z ? m.z_precision(h) : Eigen::MatrixXd::Zero(0, 0);
    const auto n_con = m.A_theta.rows();

    GaussianApprox ga;
    Eigen::VectorXd theta = warm_start ? *warm_start : m.prior_mean;
    Objective obj = objective_at(m, Qz, theta, h);

    for (int iter = 1; iter <= opts.max_iterations; ++iter) {
        // Second-order expansion of the likelihood at the current point.
        Eigen::MatrixXd H = Eigen::MatrixXd::Zero(m.M, m.M);
        H.diagonal() = m.fixed_prior_prec;
        if (has_z) embed_z_block(m, Qz, H);

        Eigen::VectorXd rhs = m.fixed_prior_prec.cwiseProduct(m.prior_mean);
        for (int kk = 0; kk < 2; ++kk) {
            const Eigen::VectorXd eta = m.eta(theta, kk);
            const LikTerms t = likelihood_terms(m, kk, eta, h);
            const auto base = static_cast<Eigen::Index>(kk) * m.M_half;
            if (m.spec.likelihoods[kk] == OutcomeLikelihood::gaussian &&
                m.n_observed_total == 2 * m.N) {
                // Fully observed Gaussian block: reuse the cached Gram matrix.
                H.block(base, base, m.M_half, m.M_half) += m.BtB / h.omega[kk];
            } else {
                H.block(base, base, m.M_half, m.M_half) += weighted_gram(m, t.w);
            }
            rhs.segment(base, m.M_half) += m.B_half.transpose() * (t.g + t.w.cwiseProduct(eta));
        }

        ga.Hllt.compute(H);
        if (ga.Hllt.info() != Eigen::Success)
            throw NumericalError("latent_gaussian_approx: Hessian not positive definite");

        Eigen::VectorXd proposal = ga.Hllt.solve(rhs);
        if (n_con > 0) {
            ga.krig_S = ga.Hllt.solve(m.A_theta.transpose());
            ga.krig_K.compute(m.A_theta * ga.krig_S);
            if (ga.krig_K.info() != Eigen::Success)
                throw NumericalError("latent_gaussian_approx: constraint system singular");
            proposal -= ga.krig_S * ga.krig_K.solve(m.A_theta * proposal);
        }

        // Step halving on objective increase (the skew-normal expansion is
        // not exact, so guard the step).
        Eigen::VectorXd step = proposal - theta;
        double scale = 1.0;
        Objective next = objective_at(m, Qz, theta + step, h);
        int halvings = 0;
        while (next.value > obj.value + 1e-12 * std::abs(obj.value) &&
               halvings < opts.max_halvings) {
            scale *= 0.5;
            next = objective_at(m, Qz, theta + scale * step, h);
            ++halvings;
        }
        if (halvings == opts.max_halvings)
            throw NumericalError("latent_gaussian_approx: step halving failed to decrease");

        theta += scale * step;
        obj = next;
        ga.H = std::move(H);
        ga.iterations = iter;

        const Eigen::VectorXd grad = objective_gradient(m, Qz, theta, h);
        ga.gradient_norm = (m.Ztilde.transpose() * grad).norm();
        if (ga.gradient_norm < opts.gradient_tol) {
            ga.converged = true;
            break;
        }
    }

    // Recompute the factorization at the final point (H may lag one step for
    // skew-normal blocks, and the kriging pieces must match it).
    {
        Eigen::MatrixXd H = Eigen::MatrixXd::Zero(m.M, m.M);
        H.diagonal() = m.fixed_prior_prec;
        if (has_z) embed_z_block(m, Qz, H);
        for (int kk = 0; kk < 2; ++kk) {
            const LikTerms t = likelihood_terms(m, kk, m.eta(theta, kk), h);
            const auto base = static_cast<Eigen::Index>(kk) * m.M_half;
            H.block(base, base, m.M_half, m.M_half) += weighted_gram(m, t.w);
        }
        ga.H = std::move(H);
        ga.Hllt.compute(ga.H);
        if (ga.Hllt.info() != Eigen::Success)
            throw NumericalError("latent_gaussian_approx: Hessian not positive definite");
        if (n_con > 0) {
            ga.krig_S = ga.Hllt.solve(m.A_theta.transpose());
            ga.krig_K.compute(m.A_theta * ga.krig_S);
        }
    }

    ga.mode = theta;
    ga.loglik_at_mode = obj.loglik;

    // Constrained marginal variances: diag(H^{-1} - S K^{-1} S').
    Eigen::MatrixXd Hinv = ga.Hllt.solve(Eigen::MatrixXd::Identity(m.M, m.M));
    ga.marginal_sd.resize(m.M);
    if (n_con > 0) {
        const Eigen::MatrixXd corr = ga.krig_S * ga.krig_K.solve(ga.krig_S.transpose());
        for (int j = 0; j < m.M; ++j)
            ga.marginal_sd(j) = std::sqrt(std::max(Hinv(j, j) - corr(j, j), 0.0));
    } else {
        for (int j = 0; j < m.M; ++j) ga.marginal_sd(j) = std::sqrt(std::max(Hinv(j, j), 0.0));
    }

    // Laplace log marginal pi(y | psi) with exact constants:
    //   fixed-effect prior at the mode
    // + constrained latent prior at the mode
    // + loglik at the mode
    // + ((M - m)/2) log 2pi - (1/2) logdet(Z' H Z),
    // the last term via logdet(Z'HZ) = logdet H + logdet(A H^{-1} A')
    //                                  - logdet(A A').
    double lm = obj.loglik;
    for (int kk = 0; kk < 2; ++kk) {
        const auto base = static_cast<Eigen::Index>(kk) * m.M_half;
        for (int j = 0; j < m.n_intercepts + m.p; ++j) {
            const double prec = m.fixed_prior_prec(base + j);
            const double d = theta(base + j) - m.prior_mean(base + j);
            lm += 0.5 * std::log(prec) - 0.5 * kLog2Pi - 0.5 * prec * d * d;
        }
    }
    if (has_z) {
        const Eigen::VectorXd z = m.z_of(theta);
        const double rank = static_cast<double>(2 * m.n - n_con);
        lm += -0.5 * rank * kLog2Pi + 0.5 * m.z_logdet_constrained(h, Qz) -
              0.5 * z.dot(Qz * z);
    }
    double logdet_H = 2.0 * ga.Hllt.matrixLLT().diagonal().array().log().sum();
    if (n_con > 0) {
        logdet_H += 2.0 * ga.krig_K.matrixLLT().diagonal().array().log().sum();
        Eigen::LLT<Eigen::MatrixXd> aat(m.A_theta * m.A_theta.transpose());
        logdet_H -= 2.0 * aat.matrixLLT().diagonal().array().log().sum();
    }
    lm += 0.5 * static_cast<double>(m.M - n_con) * kLog2Pi - 0.5 * logdet_H;
    ga.log_marginal = lm;
    return ga;
}

Eigen::VectorXd sample_constrained(const AssembledModel& m, const GaussianApprox& ga, Rng& rng) {
    Eigen::VectorXd eps(m.M);
    for (int j = 0; j < m.M; ++j) eps(j) = rng.normal();
    Eigen::VectorXd x = ga.mode + ga.Hllt.matrixU().solve(eps);
    if (m.A_theta.rows() > 0)
        x -= ga.krig_S * ga.krig_K.solve(m.A_theta * x);
    return x;
}

// ---------------------------------------------------------------------------
// Hyperparameter exploration.

namespace {

struct Evaluator {
    const AssembledModel& m;
    const NewtonOptions& newton;
    Eigen::VectorXd warm;

    double operator()(const Eigen::VectorXd& u, GaussianApprox* out = nullptr) {
        const double lp = m.hyper.log_prior(u);
        if (!std::isfinite(lp)) return kNegInf;
        const NaturalHypers h = m.hyper.to_natural(u);
        try {
            GaussianApprox ga = latent_gaussian_approx(m, h, newton, &warm);
            const double value = lp + ga.log_marginal;
            if (!std::isfinite(value)) return kNegInf;
            warm = ga.mode;
            if (out) *out = std::move(ga);
            return value;
        } catch (const NumericalError&) {
            return kNegInf;
        }
    }
};

Eigen::VectorXd fd_gradient(Evaluator& eval, const Eigen::VectorXd& u, double step) {
    const int d = static_cast<int>(u.size());
    Eigen::VectorXd g(d);
    for (int j = 0; j < d; ++j) {
        const double h = step * std::max(1.0, std::abs(u(j)));
        Eigen::VectorXd up = u, dn = u;
        up(j) += h;
        dn(j) -= h;
        const double fu = eval(up);
        const double fd = eval(dn);
        g(j) = (fu - fd) / (2.0 * h);
    }
    return g;
}

}  // namespace

PsiGrid hyper_posterior_explore(const AssembledModel& m, const ExploreOptions& opts,
                                const NewtonOptions& newton) {
    const int d = m.hyper.dim();
    PsiGrid grid;

    Evaluator eval{m, newton, m.prior_mean};
    Eigen::VectorXd u = m.hyper.initial_point(m.init_hints());
    double fu = eval(u);

    if (!std::isfinite(fu)) {
        // Fallback: coarse star over a prior-plausible box around the start.
        grid.fallback_grid = true;
        grid.flags.push_back("optimizer_start_invalid");
        double best = kNegInf;
        Eigen::VectorXd best_u = u;
        for (int j = 0; j < d; ++j) {
            for (double off : {-2.0, -1.0, 1.0, 2.0}) {
                Eigen::VectorXd cand = u;
                cand(j) += off;
                const double f = eval(cand);
                if (f > best) {
                    best = f;
                    best_u = cand;
                }
            }
        }
        if (!std::isfinite(best))
            throw NumericalError("hyper_posterior_explore: no finite starting point");
        u = best_u;
        fu = best;
    }

    // BFGS (on the maximization problem) with Armijo backtracking.
    Eigen::MatrixXd Hinv = Eigen::MatrixXd::Identity(d, d);
    Eigen::VectorXd g = fd_gradient(eval, u, opts.fd_step);
    int iter = 0;
    for (; iter < opts.max_optimizer_iterations; ++iter) {
        if (g.lpNorm<Eigen::Infinity>() < 1e-5) break;
        Eigen::VectorXd dir = Hinv * g;
        if (dir.dot(g) <= 0.0) dir = g;  // reset to steepest ascent

        double a = 1.0;
        double fnew = kNegInf;
        Eigen::VectorXd unew;
        bool accepted = false;
        for (int ls = 0; ls < 30; ++ls) {
            unew = u + a * dir;
            fnew = eval(unew);
            if (std::isfinite(fnew) && fnew >= fu + 1e-4 * a * g.dot(dir)) {
                accepted = true;
                break;
            }
            a *= 0.5;
        }
        if (!accepted) break;

        const Eigen::VectorXd gnew = fd_gradient(eval, unew, opts.fd_step);
        const Eigen::VectorXd s = unew - u;
        const Eigen::VectorXd yv = g - gnew;  // gradient of -F changes sign
        const double sy = s.dot(yv);
        if (sy > 1e-12) {
            const Eigen::VectorXd Hy = Hinv * yv;
            Hinv += ((sy + yv.dot(Hy)) / (sy * sy)) * (s * s.transpose()) -
                    (Hy * s.transpose() + s * Hy.transpose()) / sy;
        }
        const double moved = s.norm();
        u = unew;
        fu = fnew;
        g = gnew;
        if (moved < 1e-9 * (1.0 + u.norm())) break;
    }
    grid.optimizer_iterations = iter;
    grid.optimizer_converged = g.lpNorm<Eigen::Infinity>() < 1e-3;
    if (!grid.optimizer_converged) grid.flags.push_back("optimizer_gradient_not_small");

    grid.mode_u = u;

    // Hessian diagonal by central second differences -> per-axis sd.
    grid.step_sd.resize(d);
    for (int j = 0; j < d; ++j) {
        const double h = 0.1 * std::max(1.0, std::abs(u(j)));
        Eigen::VectorXd up = u, dn = u;
        up(j) += h;
        dn(j) -= h;
        const double curvature = -(eval(up) - 2.0 * fu + eval(dn)) / (h * h);
        if (curvature > 0.0) {
            grid.step_sd(j) = 1.0 / std::sqrt(curvature);
        } else {
            grid.step_sd(j) = 0.75;
            grid.flags.push_back("flat_hessian_axis_" + std::to_string(j));
        }
    }

    // Star grid: center plus +/- offsets per axis, all warm-started from the
    // center mode so results do not depend on evaluation order.
    GaussianApprox center_ga;
    Evaluator center_eval{m, newton, m.prior_mean};
    const double center_lp = center_eval(u, &center_ga);
    if (!std::isfinite(center_lp))
        throw NumericalError("hyper_posterior_explore: center evaluation failed");

    struct Cand {
        Eigen::VectorXd u;
        int axis;
        int offset;
    };
    std::vector<Cand> cands;
    for (int j = 0; j < d; ++j) {
        for (int o = 1; o <= opts.grid_half_points; ++o) {
            for (int sign : {-1, +1}) {
                Cand c{u, j, sign * o};
                c.u(j) += sign * o * opts.grid_step * grid.step_sd(j);
                cands.push_back(std::move(c));
            }
        }
    }

    std::vector<PsiGridPoint> pts(cands.size());
    auto eval_candidate = [&](std::size_t i) {
        Evaluator e{m, newton, center_ga.mode};
        PsiGridPoint pt;
        pt.u = cands[i].u;
        pt.axis = cands[i].axis;
        pt.offset = cands[i].offset;
        pt.log_post = e(pt.u, &pt.approx);
        if (std::isfinite(pt.log_post)) pt.natural = m.hyper.to_natural(pt.u);
        pts[i] = std::move(pt);
    };
    const int threads = std::max(1, opts.threads);
    if (threads == 1 || cands.size() < 2) {
        for (std::size_t i = 0; i < cands.size(); ++i) eval_candidate(i);
    } else {
        std::vector<std::thread> pool;
        std::atomic<std::size_t> next{0};
        for (int t = 0; t < threads; ++t)
            pool.emplace_back([&] {
                for (std::size_t i = next.fetch_add(1); i < cands.size(); i = next.fetch_add(1))
                    eval_candidate(i);
            });
        for (auto& th : pool) th.join();
    }

    PsiGridPoint center;
    center.u = u;
    center.natural = m.hyper.to_natural(u);
    center.log_post = center_lp;
    center.approx = std::move(center_ga);
    grid.points.push_back(std::move(center));

    for (auto& pt : pts) {
        if (!std::isfinite(pt.log_post) || pt.log_post < center_lp - opts.prune_logdrop) {
            ++grid.pruned_points;
            continue;
        }
        grid.points.push_back(std::move(pt));
    }

    // Normalized weights.
    double max_lp = kNegInf;
    for (const auto& pt : grid.points) max_lp = std::max(max_lp, pt.log_post);
    double total = 0.0;
    for (auto& pt : grid.points) {
        pt.weight = std::exp(pt.log_post - max_lp);
        total += pt.weight;
    }
    for (auto& pt : grid.points) pt.weight /= total;
    return grid;
}

// ---------------------------------------------------------------------------
// Mixture marginals, predictions, criteria.

namespace {

// Mixture CDF inversion by bisection; components with tiny sd act as steps.
double mixture_quantile(const std::vector<double>& w, const std::vector<double>& mu,
                        const std::vector<double>& sd, double prob) {
    double lo = std::numeric_limits<double>::infinity();
    double hi = -std::numeric_limits<double>::infinity();
    for (std::size_t g = 0; g < w.size(); ++g) {
        lo = std::min(lo, mu[g] - 8.0 * std::max(sd[g], 1e-12));
        hi = std::max(hi, mu[g] + 8.0 * std::max(sd[g], 1e-12));
    }
    auto cdf = [&](double q) {
        double acc = 0.0;
        for (std::size_t g = 0; g < w.size(); ++g) {
            if (sd[g] > 1e-300)
                acc += w[g] * 0.5 * std::erfc(-(q - mu[g]) / (sd[g] * std::numbers::sqrt2));
            else if (q >= mu[g])
                acc += w[g];
        }
        return acc;
    };
    for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (lo + hi);
        if (cdf(mid) < prob)
            lo = mid;
        else
            hi = mid;
    }
    return 0.5 * (lo + hi);
}

SummaryRow mixture_summary(const PsiGrid& grid, int coord) {
    std::vector<double> w, mu, sd;
    for (const auto& pt : grid.points) {
        w.push_back(pt.weight);
        mu.push_back(pt.approx.mode(coord));
        sd.push_back(pt.approx.marginal_sd(coord));
    }
    SummaryRow row;
    double mean = 0.0, second = 0.0;
    for (std::size_t g = 0; g < w.size(); ++g) {
        mean += w[g] * mu[g];
        second += w[g] * (sd[g] * sd[g] + mu[g] * mu[g]);
    }
    row.mean = mean;
    row.sd = std::sqrt(std::max(second - mean * mean, 0.0));
    row.q05 = mixture_quantile(w, mu, sd, 0.05);
    row.q50 = mixture_quantile(w, mu, sd, 0.50);
    row.q95 = mixture_quantile(w, mu, sd, 0.95);
    return row;
}

// Natural cubic spline through a handful of points; evaluated on a fine grid.
struct CubicSpline {
    std::vector<double> x, y, m2;  // second derivatives

    CubicSpline(std::vector<double> xs, std::vector<double> ys)
        : x(std::move(xs)), y(std::move(ys)) {
        const auto n = x.size();
        m2.assign(n, 0.0);
        if (n < 3) return;
        std::vector<double> a(n, 0.0), b(n, 0.0), c(n, 0.0), r(n, 0.0);
        for (std::size_t i = 1; i + 1 < n; ++i) {
            a[i] = (x[i] - x[i - 1]) / 6.0;
            b[i] = (x[i + 1] - x[i - 1]) / 3.0;
            c[i] = (x[i + 1] - x[i]) / 6.0;
            r[i] = (y[i + 1] - y[i]) / (x[i + 1] - x[i]) - (y[i] - y[i - 1]) / (x[i] - x[i - 1]);
        }
        for (std::size_t i = 2; i + 1 < n; ++i) {
            const double f = a[i] / b[i - 1];
            b[i] -= f * c[i - 1];
            r[i] -= f * r[i - 1];
        }
        for (std::size_t i = n - 2; i >= 1; --i) {
            m2[i] = (r[i] - c[i] * m2[i + 1]) / b[i];
            if (i == 1) break;
        }
    }

    double operator()(double q) const {
        const auto n = x.size();
        auto it = std::upper_bound(x.begin(), x.end(), q);
        std::size_t hi = std::clamp<std::size_t>(static_cast<std::size_t>(it - x.begin()), 1, n - 1);
        const std::size_t lo = hi - 1;
        const double h = x[hi] - x[lo];
        const double A = (x[hi] - q) / h;
        const double B = (q - x[lo]) / h;
        return A * y[lo] + B * y[hi] +
               ((A * A * A - A) * m2[lo] + (B * B * B - B) * m2[hi]) * h * h / 6.0;
    }
};

HyperSummaryRow hyper_marginal_summary(const AssembledModel& m, const PsiGrid& grid, int coord) {
    const auto kind = m.hyper.coords()[coord];
    // Axis evaluations along this coordinate (center included).
    std::vector<std::pair<double, double>> axis;  // (u_j, log_post)
    for (const auto& pt : grid.points)
        if (pt.axis == coord || pt.axis == -1) axis.emplace_back(pt.u(coord), pt.log_post);
    std::sort(axis.begin(), axis.end());

    // Build a discrete density on a fine internal-scale grid.
    std::vector<double> uq, logp;
    const int fine = 201;
    std::vector<double> ug(fine), pg(fine);
    if (axis.size() >= 3) {
        std::vector<double> xs, ys;
        for (auto& [a, b] : axis) {
            xs.push_back(a);
            ys.push_back(b);
        }
        CubicSpline spline(xs, ys);
        const double lo = xs.front(), hi = xs.back();
        for (int i = 0; i < fine; ++i) {
            ug[i] = lo + (hi - lo) * i / (fine - 1.0);
            pg[i] = spline(ug[i]);
        }
    } else {
        // Gaussian fallback in internal coordinates.
        const double mu = grid.mode_u(coord);
        const double sd = grid.step_sd(coord);
        for (int i = 0; i < fine; ++i) {
            ug[i] = mu - 4.0 * sd + 8.0 * sd * i / (fine - 1.0);
            const double zz = (ug[i] - mu) / sd;
            pg[i] = -0.5 * zz * zz;
        }
    }
    double mx = *std::max_element(pg.begin(), pg.end());
    std::vector<double> dens(fine);
    double mass = 0.0;
    const double du = ug[1] - ug[0];
    for (int i = 0; i < fine; ++i) {
        dens[i] = std::exp(pg[i] - mx);
        mass += dens[i] * du;
    }
    for (double& v : dens) v /= mass;

    // Natural-scale summaries through the per-coordinate monotone transform.
    HyperSummaryRow row;
    double mean = 0.0, second = 0.0;
    for (int i = 0; i < fine; ++i) {
        const double xnat = m.hyper.natural_of(kind, ug[i]);
        mean += dens[i] * du * xnat;
        second += dens[i] * du * xnat * xnat;
    }
    row.mean = mean;
    row.sd = std::sqrt(std::max(second - mean * mean, 0.0));

    auto quantile_u = [&](double prob) {
        double acc = 0.0;
        for (int i = 0; i < fine; ++i) {
            const double next = acc + dens[i] * du;
            if (next >= prob) {
                const double frac = (prob - acc) / std::max(next - acc, 1e-300);
                const double lo_edge = ug[i] - 0.5 * du;
                return lo_edge + frac * du;
            }
            acc = next;
        }
        return ug[fine - 1];
    };
    row.lb = m.hyper.natural_of(kind, quantile_u(0.05));
    row.median = m.hyper.natural_of(kind, quantile_u(0.50));
    row.ub = m.hyper.natural_of(kind, quantile_u(0.95));
    return row;
}

}  // namespace

PosteriorFit marginals_and_predictions(const AssembledModel& m, const PsiGrid& grid,
                                       const FitOptions& opts) {
    if (grid.points.empty()) throw NumericalError("marginals_and_predictions: empty grid");
    PosteriorFit fit;
    fit.label = m.spec.label;
    fit.engine = "laplace";
    fit.seed = opts.seed;

    // Posterior mean/sd of every latent coordinate from the mixture.
    fit.theta_mean = Eigen::VectorXd::Zero(m.M);
    Eigen::VectorXd second = Eigen::VectorXd::Zero(m.M);
    for (const auto& pt : grid.points) {
        fit.theta_mean += pt.weight * pt.approx.mode;
        second += pt.weight * (pt.approx.marginal_sd.cwiseAbs2() + pt.approx.mode.cwiseAbs2());
    }
    fit.theta_sd = (second - fit.theta_mean.cwiseAbs2()).cwiseMax(0.0).cwiseSqrt();

    const char* outcome_label[2] = {"math", "ital"};
    const auto fixed_names = m.fixed_effect_names();
    for (int kk = 0; kk < 2; ++kk) {
        for (int j = 0; j < m.n_intercepts + m.p; ++j) {
            SummaryRow row = mixture_summary(grid, kk * m.M_half + j);
            row.name = fixed_names[j];
            row.outcome = outcome_label[kk];
            fit.fixed_effects.push_back(std::move(row));
        }
    }
    if (m.spec.has_z()) {
        for (int kk = 0; kk < 2; ++kk) {
            for (int i = 0; i < m.n; ++i) {
                SummaryRow row = mixture_summary(grid, kk * m.M_half + m.off_z_half + i);
                row.name = "z_area" + std::to_string(i);
                row.outcome = outcome_label[kk];
                fit.area_effects.push_back(std::move(row));
            }
        }
    }

    for (int j = 0; j < m.hyper.dim(); ++j) {
        HyperSummaryRow row = hyper_marginal_summary(m, grid, j);
        row.name = m.hyper.natural_names()[j];
        fit.hypers.push_back(std::move(row));
    }

    fit.yhat1 = m.eta(fit.theta_mean, 0);
    fit.yhat2 = m.eta(fit.theta_mean, 1);

    for (const auto& pt : grid.points) fit.grid_weights.push_back(pt.weight);

    // Plug-in hyper point for DIC: grid-weighted mean in internal coords.
    Eigen::VectorXd u_mean = Eigen::VectorXd::Zero(m.hyper.dim());
    for (const auto& pt : grid.points) u_mean += pt.weight * pt.u;
    fit.hyper_point = m.hyper.to_natural(u_mean);

    // Criteria from seeded draws of the mixture.
    const int S = opts.criteria_draws;
    Rng master(opts.seed);
    Eigen::MatrixXd loglik(S, m.n_observed_total);
    std::vector<double> cumw;
    double acc = 0.0;
    for (const auto& pt : grid.points) {
        acc += pt.weight;
        cumw.push_back(acc);
    }
    for (int s = 0; s < S; ++s) {
        Rng rs = master.spawn(static_cast<std::uint64_t>(s));
        const double pick = rs.uniform01();
        std::size_t gsel = 0;
        while (gsel + 1 < cumw.size() && cumw[gsel] < pick) ++gsel;
        const auto& pt = grid.points[gsel];
        const Eigen::VectorXd draw = sample_constrained(m, pt.approx, rs);
        loglik.row(s) = loglik_observed(m, draw, pt.natural).transpose();
    }

    const WaicResult w = waic(loglik);
    fit.criteria.waic = w.waic;
    fit.criteria.lppd = w.lppd;
    fit.criteria.p_waic = w.p_waic;
    const Eigen::VectorXd ll_at_mean = loglik_observed(m, fit.theta_mean, fit.hyper_point);
    const DicResult d = dic(loglik, ll_at_mean);
    fit.criteria.dic = d.dic;
    fit.criteria.expected_deviance = d.expected_deviance;
    fit.criteria.p_d = d.p_d;
    const CpoResult c = cpo_lpml(loglik);
    fit.criteria.neg_lpml = c.neg_lpml;
    fit.criteria.cpo = c.cpo;
    fit.criteria.cpo_flagged = c.flagged;
    fit.criteria.cpo_flagged_count = c.flagged_count;

    // Predictive MSE over observed entries.
    {
        std::vector<double> se;
        for (int kk = 0; kk < 2; ++kk) {
            const Eigen::VectorXd& yh = kk == 0 ? fit.yhat1 : fit.yhat2;
            for (int i = 0; i < m.N; ++i)
                if (m.observed[kk][i]) se.push_back((m.y[kk](i) - yh(i)) * (m.y[kk](i) - yh(i)));
        }
        fit.criteria.mse = se.empty() ? 0.0 : kahan_sum(se) / static_cast<double>(se.size());
    }

    // Convergence report.
    fit.convergence.grid_points = static_cast<int>(grid.points.size());
    fit.convergence.pruned_points = grid.pruned_points;
    fit.convergence.optimizer_iterations = grid.optimizer_iterations;
    fit.convergence.flags = grid.flags;
    if (grid.fallback_grid) fit.convergence.flags.push_back("fallback_grid");
    for (const auto& pt : grid.points) {
        if (!pt.approx.converged)
            fit.convergence.flags.push_back("newton_unconverged_gradient_" +
                                            format_double(pt.approx.gradient_norm));
    }
    if (m.A_theta.rows() > 0)
        fit.convergence.max_constraint_residual =
            (m.A_theta * fit.theta_mean).lpNorm<Eigen::Infinity>();
    fit.convergence.converged =
        grid.optimizer_converged && !grid.fallback_grid &&
        std::all_of(grid.points.begin(), grid.points.end(),
                    [](const PsiGridPoint& pt) { return pt.approx.converged; });
    return fit;
}

PosteriorFit fit_laplace(const AssembledModel& m, const FitOptions& opts) {
    ExploreOptions ex = opts.explore;
    if (opts.bit_reproducible) ex.threads = 1;
    const PsiGrid grid = hyper_posterior_explore(m, ex, opts.newton);
    return marginals_and_predictions(m, grid, opts);
}

// ---------------------------------------------------------------------------
// WAIC-guided removal-pattern search.

namespace {

std::string pattern_key(const RemovalPattern& p) {
    std::string key;
    for (const auto& row : p.entries)
        for (const auto& e : row) key += std::to_string(e.K) + ",";
    return key;
}

}  // namespace

WaicSearchResult search_waic_optimal(const ModelSpec& base_spec, const AreaGraph& g,
                                     const LevelMap& map, const Eigen::MatrixXd& X,
                                     const std::vector<std::string>& names,
                                     const Eigen::VectorXd& y1, const Eigen::VectorXd& y2,
                                     const WaicSearchOptions& opts) {
    if (static_cast<int>(opts.caps.size()) != g.G)
        throw ValidationError("search_waic_optimal: caps size != component count");
    const auto sizes = g.component_sizes();
    std::vector<int> limit(g.G);
    for (int c = 0; c < g.G; ++c) limit[c] = std::min(opts.caps[c], sizes[c] - 1);

    const int p = static_cast<int>(X.cols());
    std::vector<std::string> cov_names = names;
    if (cov_names.empty())
        for (int j = 0; j < p; ++j) cov_names.push_back("x" + std::to_string(j));

    WaicSearchResult result;
    result.pattern = RemovalPattern::zeros(cov_names, g.G);

    std::map<std::string, double> cache;
    auto evaluate = [&](const RemovalPattern& pat) {
        const std::string key = pattern_key(pat);
        if (auto it = cache.find(key); it != cache.end()) return it->second;
        if (result.evaluations >= opts.budget) {
            result.budget_exhausted = true;
            return std::numeric_limits<double>::infinity();
        }
        ++result.evaluations;
        ModelSpec spec = base_spec;
        spec.confounding = Confounding::spatial_plus;
        spec.pattern = pat;
        const AssembledModel m = assemble_model(spec, g, map, X, cov_names, y1, y2);
        const PosteriorFit fit = fit_laplace(m, opts.fit);
        cache[key] = fit.criteria.waic;
        return fit.criteria.waic;
    };

    if (opts.exhaustive) {
        long combos = 1;
        for (int m2 = 0; m2 < p; ++m2)
            for (int c = 0; c < g.G; ++c) combos *= (limit[c] + 1);
        if (combos > 4000)
            throw ValidationError("search_waic_optimal: exhaustive enumeration too large (" +
                                  std::to_string(combos) + " patterns)");
        // Odometer enumeration over all (covariate, component) counts.
        std::vector<int> K(static_cast<std::size_t>(p) * g.G, 0);
        double best = std::numeric_limits<double>::infinity();
        RemovalPattern best_pat = result.pattern;
        bool done = false;
        while (!done) {
            RemovalPattern pat = RemovalPattern::zeros(cov_names, g.G);
            for (int m2 = 0; m2 < p; ++m2)
                for (int c = 0; c < g.G; ++c) pat.entries[m2][c].K = K[m2 * g.G + c];
            const double w = evaluate(pat);
            if (w < best) {
                best = w;
                best_pat = pat;
            }
            int pos = 0;
            while (pos < static_cast<int>(K.size())) {
                const int c = pos % g.G;
                if (K[pos] < limit[c]) {
                    ++K[pos];
                    std::fill(K.begin(), K.begin() + pos, 0);
                    break;
                }
                ++pos;
            }
            if (pos == static_cast<int>(K.size())) done = true;
            if (result.budget_exhausted) break;
        }
        result.pattern = best_pat;
        result.waic = best;
        return result;
    }

    // Coordinate descent: cycle covariates, within each the components, and
    // scan K in [0, cap] holding everything else fixed.
    double current = evaluate(result.pattern);
    bool changed = true;
    while (changed && !result.budget_exhausted) {
        changed = false;
        for (int m2 = 0; m2 < p && !result.budget_exhausted; ++m2) {
            for (int c = 0; c < g.G && !result.budget_exhausted; ++c) {
                int best_k = result.pattern.entries[m2][c].K;
                double best_w = current;
                for (int K = 0; K <= limit[c]; ++K) {
                    RemovalPattern cand = result.pattern;
                    cand.entries[m2][c].K = K;
                    const double w = evaluate(cand);
                    // Lexicographic (WAIC, K) tie-break.
                    if (w < best_w || (w == best_w && K < best_k)) {
                        best_w = w;
                        best_k = K;
                    }
                }
                if (best_k != result.pattern.entries[m2][c].K) {
                    result.pattern.entries[m2][c].K = best_k;
                    current = best_w;
                    changed = true;
                }
            }
        }
    }
    result.waic = current;
    return result;
}

}  // namespace bicar
