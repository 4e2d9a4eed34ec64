#include <doctest.h>

#include <cmath>
#include <numbers>

#include "bicar/inference.hpp"
#include "bicar/simulate.hpp"
#include "bicar/util.hpp"
#include "helpers.hpp"

using namespace bicar;

namespace {

// One-area "graph" so the latent model collapses to fixed effects only.
struct FlatToy {
    AreaGraph graph = build_graph(1, {});
    LevelMap map;
    Eigen::MatrixXd X;
    Eigen::VectorXd y1, y2;

    explicit FlatToy(int N, std::uint64_t seed = 1) {
        map = build_levelmap(std::vector<int>(N, 0), {0});
        Rng rng(seed);
        X.resize(N, 1);
        y1.resize(N);
        y2.resize(N);
        for (int h = 0; h < N; ++h) {
            X(h, 0) = rng.uniform01();
            y1(h) = 2.0 + 1.5 * X(h, 0) + rng.normal(0.0, 2.0);
            y2(h) = -1.0 + 0.5 * X(h, 0) + rng.normal(0.0, 2.0);
        }
    }

    ModelSpec spec(OutcomeLikelihood second = OutcomeLikelihood::gaussian) const {
        ModelSpec s;
        s.family = LatentFamily::none;
        s.likelihoods = {OutcomeLikelihood::gaussian, second};
        s.priors.beta_c_mean = 0.0;  // keep the toy centered
        return s;
    }
};

Eigen::VectorXd hyper_point(const AssembledModel& m, double w1, double w2, double alpha) {
    Eigen::VectorXd u = Eigen::VectorXd::Zero(m.hyper.dim());
    const auto& coords = m.hyper.coords();
    for (int i = 0; i < m.hyper.dim(); ++i) {
        switch (coords[i]) {
            case HyperLayout::Coord::log_omega_1: u(i) = std::log(w1); break;
            case HyperLayout::Coord::log_omega_2: u(i) = std::log(w2); break;
            case HyperLayout::Coord::asinh_alpha_2: u(i) = std::asinh(alpha); break;
            default: break;
        }
    }
    return u;
}

}  // namespace

TEST_CASE("all-Gaussian model converges in one Newton iteration") {
    FlatToy toy(12);
    const AssembledModel m =
        assemble_model(toy.spec(), toy.graph, toy.map, toy.X, {"x"}, toy.y1, toy.y2);
    const NaturalHypers h = m.hyper.to_natural(hyper_point(m, 4.0, 4.0, 0.0));
    const GaussianApprox ga = latent_gaussian_approx(m, h);
    CHECK(ga.converged);
    CHECK(ga.iterations == 1);
    CHECK(ga.gradient_norm < 1e-8);
}

TEST_CASE("conjugate posterior matches the closed form to 1e-10") {
    FlatToy toy(8);
    const AssembledModel m =
        assemble_model(toy.spec(), toy.graph, toy.map, toy.X, {"x"}, toy.y1, toy.y2);
    const double omega = 3.0;
    const NaturalHypers h = m.hyper.to_natural(hyper_point(m, omega, omega, 0.0));
    const GaussianApprox ga = latent_gaussian_approx(m, h);

    // Closed form per outcome: posterior precision X'X/omega + P, with the
    // design [1 | x] and prior N(mu0, V).
    Eigen::MatrixXd D(m.N, 2);
    D.col(0).setOnes();
    D.col(1) = toy.X.col(0);
    Eigen::Matrix2d P = Eigen::Matrix2d::Zero();
    P(0, 0) = 1.0 / m.spec.priors.beta_c_variance;
    P(1, 1) = 1.0 / m.spec.priors.beta_variance;
    for (int kk = 0; kk < 2; ++kk) {
        const Eigen::VectorXd& y = kk == 0 ? toy.y1 : toy.y2;
        const Eigen::Matrix2d prec = D.transpose() * D / omega + P;
        const Eigen::Vector2d mean = prec.inverse() * (D.transpose() * y / omega);
        const Eigen::Matrix2d cov = prec.inverse();
        CHECK(ga.mode(kk * m.M_half + 0) == doctest::Approx(mean(0)).epsilon(1e-10));
        CHECK(ga.mode(kk * m.M_half + 1) == doctest::Approx(mean(1)).epsilon(1e-10));
        CHECK(ga.marginal_sd(kk * m.M_half + 0) ==
              doctest::Approx(std::sqrt(cov(0, 0))).epsilon(1e-10));
        CHECK(ga.marginal_sd(kk * m.M_half + 1) ==
              doctest::Approx(std::sqrt(cov(1, 1))).epsilon(1e-10));
    }
}

TEST_CASE("skew-normal branch at alpha 0 equals the Gaussian branch") {
    FlatToy toy(10);
    const AssembledModel mg =
        assemble_model(toy.spec(OutcomeLikelihood::gaussian), toy.graph, toy.map, toy.X, {"x"},
                       toy.y1, toy.y2);
    const AssembledModel ms =
        assemble_model(toy.spec(OutcomeLikelihood::skew_normal), toy.graph, toy.map, toy.X, {"x"},
                       toy.y1, toy.y2);
    const NaturalHypers hg = mg.hyper.to_natural(hyper_point(mg, 2.5, 3.5, 0.0));
    const NaturalHypers hs = ms.hyper.to_natural(hyper_point(ms, 2.5, 3.5, 0.0));
    const GaussianApprox ga = latent_gaussian_approx(mg, hg);
    const GaussianApprox gs = latent_gaussian_approx(ms, hs);
    CHECK((ga.mode - gs.mode).cwiseAbs().maxCoeff() < 1e-9);
    CHECK((ga.marginal_sd - gs.marginal_sd).cwiseAbs().maxCoeff() < 1e-9);
    CHECK(ga.log_marginal == doctest::Approx(gs.log_marginal).epsilon(1e-9));
}

TEST_CASE("finite differences confirm the mode is stationary") {
    // Reconstruct the negative log posterior from public pieces and check
    // the projected FD gradient vanishes at the reported mode.
    Scenario sc;
    sc.graph_spec = "lattice:3x3";
    sc.obs_per_area = 5;
    sc.n_covariates = 2;
    sc.beta = Eigen::VectorXd::Zero(4);
    sc.beta(0) = 1.0;
    sc.beta(3) = -0.5;
    sc.beta_c = Eigen::VectorXd::Constant(2, 180.0);
    sc.truth.sigma2 = {4.0, 3.0};
    sc.truth.rho = 0.5;
    sc.truth.omega = {6.0, 7.0};
    sc.truth.alpha = {0.0, -2.0};
    sc.seed = 77;
    sc.seed_set = true;
    const SimulatedData sim = generate(sc);

    ModelSpec spec;  // icar, gaussian + skew-normal
    const AssembledModel m = assemble_model(spec, sim.graph, sim.map, sim.X,
                                            sim.covariate_names, sim.y1, sim.y2);
    Eigen::VectorXd u = m.hyper.initial_point(m.init_hints());
    const NaturalHypers h = m.hyper.to_natural(u);
    const GaussianApprox ga = latent_gaussian_approx(m, h);
    REQUIRE(ga.converged);

    const Eigen::MatrixXd Qz = m.z_precision(h);
    auto neg_log_post = [&](const Eigen::VectorXd& theta) {
        double quad = 0.0;
        for (int j = 0; j < m.M; ++j) {
            const double d = theta(j) - m.prior_mean(j);
            quad += m.fixed_prior_prec(j) * d * d;
        }
        const Eigen::VectorXd z = m.z_of(theta);
        quad += z.dot(Qz * z);
        return 0.5 * quad - loglik_observed(m, theta, h).sum();
    };

    const double fd_h = 1e-5;
    Eigen::VectorXd grad(m.M);
    for (int j = 0; j < m.M; ++j) {
        Eigen::VectorXd up = ga.mode, dn = ga.mode;
        up(j) += fd_h;
        dn(j) -= fd_h;
        grad(j) = (neg_log_post(up) - neg_log_post(dn)) / (2 * fd_h);
    }
    const Eigen::VectorXd projected = m.Ztilde.transpose() * grad;
    const double scale = std::max(1.0, std::abs(neg_log_post(ga.mode)));
    CHECK(projected.cwiseAbs().maxCoeff() / scale < 1e-5);

    // constraints hold at the mode
    CHECK((m.A_theta * ga.mode).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("Laplace log marginal matches brute-force quadrature (Gaussian)") {
    FlatToy toy(5);
    // two latent dimensions: intercept per outcome, no covariates
    const Eigen::MatrixXd X0(toy.map.N, 0);
    const AssembledModel m =
        assemble_model(toy.spec(), toy.graph, toy.map, X0, {}, toy.y1, toy.y2);
    REQUIRE(m.M == 2);
    const double omega = 2.0;
    const NaturalHypers h = m.hyper.to_natural(hyper_point(m, omega, omega, 0.0));
    const GaussianApprox ga = latent_gaussian_approx(m, h);

    // brute force: tensor Simpson over the two intercepts
    auto integrand = [&](double t1, double t2) {
        Eigen::VectorXd theta(2);
        theta << t1, t2;
        const double v = m.spec.priors.beta_c_variance;
        const double lp = loglik_observed(m, theta, h).sum() -
                          std::log(2 * std::numbers::pi * v) -
                          0.5 * (t1 * t1 + t2 * t2) / v;
        return std::exp(lp - ga.log_marginal);  // scaled to O(1)
    };
    const double c1 = ga.mode(0), c2 = ga.mode(1);
    const double s1 = ga.marginal_sd(0), s2 = ga.marginal_sd(1);
    const int n = 400;
    const double lo1 = c1 - 9 * s1, hi1 = c1 + 9 * s1;
    const double lo2 = c2 - 9 * s2, hi2 = c2 + 9 * s2;
    const double h1 = (hi1 - lo1) / n, h2 = (hi2 - lo2) / n;
    double acc = 0.0;
    for (int i = 0; i <= n; ++i) {
        const double w1 = (i == 0 || i == n) ? 1.0 : (i % 2 ? 4.0 : 2.0);
        double inner = 0.0;
        for (int j = 0; j <= n; ++j) {
            const double w2 = (j == 0 || j == n) ? 1.0 : (j % 2 ? 4.0 : 2.0);
            inner += w2 * integrand(lo1 + i * h1, lo2 + j * h2);
        }
        acc += w1 * inner * h2 / 3.0;
    }
    acc *= h1 / 3.0;
    // ratio of true marginal to the Laplace value
    CHECK(std::log(acc) == doctest::Approx(0.0).epsilon(1e-3));
}

TEST_CASE("Laplace log marginal close to quadrature under skewness") {
    FlatToy toy(40, 3);
    const Eigen::MatrixXd X0(toy.map.N, 0);
    const AssembledModel m = assemble_model(toy.spec(OutcomeLikelihood::skew_normal), toy.graph,
                                            toy.map, X0, {}, toy.y1, toy.y2);
    const NaturalHypers h = m.hyper.to_natural(hyper_point(m, 2.0, 2.0, 3.0));
    const GaussianApprox ga = latent_gaussian_approx(m, h);

    auto logpost = [&](double t1, double t2) {
        Eigen::VectorXd theta(2);
        theta << t1, t2;
        double lp = loglik_observed(m, theta, h).sum();
        const double v = m.spec.priors.beta_c_variance;
        lp += -std::log(2 * std::numbers::pi * v) - 0.5 * (t1 * t1 + t2 * t2) / v;
        return lp;
    };
    const int n = 300;
    const double s1 = ga.marginal_sd(0), s2 = ga.marginal_sd(1);
    const double lo1 = ga.mode(0) - 9 * s1, h1 = 18 * s1 / n;
    const double lo2 = ga.mode(1) - 9 * s2, h2 = 18 * s2 / n;
    double acc = 0.0;
    for (int i = 0; i <= n; ++i) {
        const double w1 = (i == 0 || i == n) ? 1.0 : (i % 2 ? 4.0 : 2.0);
        for (int j = 0; j <= n; ++j) {
            const double w2 = (j == 0 || j == n) ? 1.0 : (j % 2 ? 4.0 : 2.0);
            acc += w1 * w2 * std::exp(logpost(lo1 + i * h1, lo2 + j * h2) - ga.log_marginal);
        }
    }
    acc *= h1 * h2 / 9.0;
    CHECK(std::abs(std::log(acc)) < 0.05);
}

TEST_CASE("grid exploration and mixture marginals") {
    Scenario sc;
    sc.graph_spec = "lattice:4x5";
    sc.obs_per_area = 6;
    sc.n_covariates = 4;
    sc.beta = Eigen::VectorXd::Zero(8);
    sc.beta << 2, -1.5, 1, 0.5, 1.2, -0.8, 0.6, 0.3;
    sc.beta_c = Eigen::VectorXd::Zero(2);
    sc.beta_c << 190, 186;
    sc.truth.sigma2 = {20.0, 15.0};
    sc.truth.rho = 0.8;
    sc.truth.omega = {100.0, 120.0};
    sc.truth.alpha = {0.0, -3.0};
    sc.seed = 11;
    sc.seed_set = true;
    const SimulatedData sim = generate(sc);

    ModelSpec spec;
    const AssembledModel m = assemble_model(spec, sim.graph, sim.map, sim.X,
                                            sim.covariate_names, sim.y1, sim.y2);
    FitOptions opts;
    opts.criteria_draws = 800;
    opts.seed = 5;
    const PsiGrid grid = hyper_posterior_explore(m, opts.explore, opts.newton);

    // weights normalized, center first, pruning bound respected
    double total = 0.0;
    for (const auto& pt : grid.points) total += pt.weight;
    CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(grid.points.front().axis == -1);
    const double max_lp = grid.points.front().log_post;
    for (const auto& pt : grid.points) CHECK(pt.log_post >= max_lp - 6.0 - 1e-9);

    const PosteriorFit fit = marginals_and_predictions(m, grid, opts);

    // mixture mean equals the weight-averaged component means
    Eigen::VectorXd manual = Eigen::VectorXd::Zero(m.M);
    for (const auto& pt : grid.points) manual += pt.weight * pt.approx.mode;
    CHECK((manual - fit.theta_mean).cwiseAbs().maxCoeff() < 1e-12);

    // quantile monotonicity and positive sds
    for (const auto& row : fit.fixed_effects) {
        CHECK(row.q05 <= row.q50);
        CHECK(row.q50 <= row.q95);
        CHECK(row.sd > 0.0);
    }
    for (const auto& row : fit.hypers) {
        CHECK(row.lb <= row.median);
        CHECK(row.median <= row.ub);
    }

    // constraint residuals at the reported mean
    CHECK(fit.convergence.max_constraint_residual < 1e-6);

    // criteria finite and plausible
    CHECK(std::isfinite(fit.criteria.waic));
    CHECK(std::isfinite(fit.criteria.neg_lpml));
    CHECK(std::isfinite(fit.criteria.dic));
    CHECK(fit.criteria.p_waic > 0.0);
    CHECK(fit.criteria.mse > 0.0);
}

TEST_CASE("single grid point reproduces the Gaussian approximation") {
    FlatToy toy(15);
    const AssembledModel m =
        assemble_model(toy.spec(), toy.graph, toy.map, toy.X, {"x"}, toy.y1, toy.y2);
    FitOptions opts;
    opts.criteria_draws = 200;
    opts.explore.grid_half_points = 0;  // center only
    const PsiGrid grid = hyper_posterior_explore(m, opts.explore, opts.newton);
    REQUIRE(grid.points.size() == 1);
    const PosteriorFit fit = marginals_and_predictions(m, grid, opts);
    const GaussianApprox& ga = grid.points.front().approx;
    for (std::size_t i = 0; i < fit.fixed_effects.size(); ++i) {
        const auto& row = fit.fixed_effects[i];
        const int coord = static_cast<int>(i < 2 ? i : i + m.M_half - 2);
        CHECK(row.mean == doctest::Approx(ga.mode(coord)).epsilon(1e-9));
        CHECK(row.sd == doctest::Approx(ga.marginal_sd(coord)).epsilon(1e-9));
        CHECK(row.q50 == doctest::Approx(ga.mode(coord)).epsilon(1e-7));
    }
}

TEST_CASE("predictions extend to areas with no training rows") {
    // 3 areas in a path; area 2 has only prediction rows.
    const AreaGraph g = make_path(3);
    std::vector<int> area_of{0, 0, 1, 1, 2, 2};
    const LevelMap map = build_levelmap(area_of, g.components);
    Rng rng(13);
    Eigen::MatrixXd X(6, 1);
    Eigen::VectorXd y1(6), y2(6);
    for (int h = 0; h < 6; ++h) {
        X(h, 0) = rng.uniform01();
        y1(h) = 180 + X(h, 0) + rng.normal();
        y2(h) = 178 + X(h, 0) + rng.normal();
    }
    y1(4) = y1(5) = std::numeric_limits<double>::quiet_NaN();
    y2(4) = y2(5) = std::numeric_limits<double>::quiet_NaN();

    ModelSpec spec;
    const AssembledModel m = assemble_model(spec, g, map, X, {"x"}, y1, y2);
    FitOptions opts;
    opts.criteria_draws = 300;
    opts.explore.grid_half_points = 1;
    const PosteriorFit fit = fit_laplace(m, opts);

    // yhat for the held-out area equals the assembled trend at theta_mean
    for (int h = 4; h < 6; ++h) {
        const double manual = fit.theta_mean(0) + X(h, 0) * fit.theta_mean(1) +
                              fit.theta_mean(m.off_z_half + 2);
        CHECK(fit.yhat1(h) == doctest::Approx(manual).epsilon(1e-12));
        CHECK(std::isfinite(fit.yhat1(h)));
    }
    // the held-out area carries a z summary
    bool found = false;
    for (const auto& row : fit.area_effects)
        if (row.name == "z_area2" && row.outcome == "math") found = true;
    CHECK(found);
}
