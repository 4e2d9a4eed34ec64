#include <doctest.h>

#include <cmath>
#include <sstream>

#include "bicar/deconfound.hpp"
#include "bicar/io.hpp"
#include "bicar/likelihood.hpp"
#include "bicar/mcmc.hpp"
#include "bicar/simulate.hpp"
#include "bicar/util.hpp"

using namespace bicar;

TEST_CASE("constrained icar draws sum to zero exactly") {
    const AreaGraph g = disjoint_union({make_lattice(3, 4), make_path(4), make_path(3)});
    Eigen::Matrix2d Lambda;
    Lambda << 1.0, -0.3, -0.3, 0.8;
    Lambda = Lambda.inverse().eval();
    Rng rng(1);
    for (int rep = 0; rep < 20; ++rep) {
        const Eigen::VectorXd z = sample_constrained_icar(g, Lambda, rng);
        for (int c = 0; c < g.G; ++c) {
            double s1 = 0, s2 = 0;
            for (int i = 0; i < g.n; ++i) {
                if (g.components[i] != c) continue;
                s1 += z(i);
                s2 += z(g.n + i);
            }
            CHECK(std::abs(s1) < 1e-12);
            CHECK(std::abs(s2) < 1e-12);
        }
    }
}

TEST_CASE("icar draw covariance matches the pseudoinverse") {
    const AreaGraph g = make_path(4);
    const Eigen::Matrix2d Sigma = (Eigen::Matrix2d() << 2.0, 0.6, 0.6, 1.0).finished();
    const Eigen::Matrix2d Lambda = Sigma.inverse();

    // target covariance: Sigma kron (scaled R)^+
    const ScaledStructure sc = scale_structure(g);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sc.R);
    Eigen::MatrixXd Rplus = Eigen::MatrixXd::Zero(g.n, g.n);
    for (int j = 0; j < g.n; ++j) {
        if (es.eigenvalues()(j) < 1e-9) continue;
        Rplus += es.eigenvectors().col(j) * es.eigenvectors().col(j).transpose() /
                 es.eigenvalues()(j);
    }
    const Eigen::MatrixXd target = kronecker(Sigma, Rplus);

    Rng rng(2);
    const int S = 100000;
    Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(2 * g.n, 2 * g.n);
    for (int s = 0; s < S; ++s) {
        const Eigen::VectorXd z = sample_constrained_icar(g, Lambda, rng);
        acc += z * z.transpose();
    }
    acc /= static_cast<double>(S);
    const double scale = target.cwiseAbs().maxCoeff();
    CHECK((acc - target).cwiseAbs().maxCoeff() / scale < 0.02);
}

TEST_CASE("cross-outcome correlation of icar draws tracks rho") {
    const AreaGraph g = make_lattice(4, 5);
    NaturalHypers h;
    h.sigma2 = {25.0, 16.0};
    h.rho = 0.975;
    const Eigen::Matrix2d Lambda = h.lambda(true);
    Rng rng(3);
    const int S = 100000;
    RunningMoments m1, m2;
    double cross = 0.0;
    const int probe = 7;  // an arbitrary area
    std::vector<double> z1(S), z2(S);
    for (int s = 0; s < S; ++s) {
        const Eigen::VectorXd z = sample_constrained_icar(g, Lambda, rng);
        z1[s] = z(probe);
        z2[s] = z(g.n + probe);
        m1.add(z1[s]);
        m2.add(z2[s]);
    }
    for (int s = 0; s < S; ++s) cross += (z1[s] - m1.mean()) * (z2[s] - m2.mean());
    cross /= (S - 1.0);
    const double corr = cross / std::sqrt(m1.variance() * m2.variance());
    CHECK(corr == doctest::Approx(0.975).epsilon(0.011));
}

TEST_CASE("generate: null model responses are normal") {
    Scenario sc;
    sc.graph_spec = "lattice:10x10";
    sc.obs_per_area = 100;
    sc.n_covariates = 0;
    sc.beta = Eigen::VectorXd::Zero(0);
    sc.beta_c = Eigen::VectorXd::Constant(2, 185.0);
    sc.family = LatentFamily::none;
    sc.likelihoods = {OutcomeLikelihood::gaussian, OutcomeLikelihood::gaussian};
    sc.truth.omega = {9.0, 9.0};
    sc.seed = 4;
    sc.seed_set = true;
    const SimulatedData sim = generate(sc);
    REQUIRE(sim.map.N == 10000);

    // moment-based normality screen at the 1% level
    std::vector<double> ys(sim.y1.data(), sim.y1.data() + sim.y1.size());
    RunningMoments mom;
    for (double v : ys) mom.add(v);
    CHECK(mom.mean() == doctest::Approx(185.0).epsilon(0.001));
    CHECK(mom.variance() == doctest::Approx(9.0).epsilon(0.05));
    const double skew_z = sample_skewness(ys) / std::sqrt(6.0 / sim.map.N);
    CHECK(std::abs(skew_z) < 2.58);
}

TEST_CASE("generate: negative alpha yields negative sample skewness") {
    Scenario sc;
    sc.graph_spec = "lattice:8x8";
    sc.obs_per_area = 300;
    sc.n_covariates = 0;
    sc.beta = Eigen::VectorXd::Zero(0);
    sc.beta_c = Eigen::VectorXd::Constant(2, 0.0);
    sc.family = LatentFamily::none;
    sc.truth.omega = {1.0, 1.0};
    sc.truth.alpha = {0.0, -5.0};
    sc.seed = 6;
    sc.seed_set = true;
    const SimulatedData sim = generate(sc);
    std::vector<double> eps(sim.eps2.data(), sim.eps2.data() + sim.eps2.size());
    const double skew = sample_skewness(eps);
    CHECK(skew < 0.0);
    CHECK(skew == doctest::Approx(gamma1_of_alpha(-5.0)).epsilon(0.06));
}

TEST_CASE("confounding injection raises the Moran diagnostic") {
    Scenario sc;
    sc.graph_spec = "lattice:5x6";
    sc.obs_per_area = 8;
    sc.n_covariates = 4;
    sc.beta = Eigen::VectorXd::Zero(8);
    sc.beta_c = Eigen::VectorXd::Constant(2, 180.0);
    sc.truth.sigma2 = {9.0, 9.0};
    sc.truth.rho = 0.5;
    sc.truth.omega = {25.0, 25.0};
    sc.truth.alpha = {0.0, -2.0};
    sc.confound_covariate = 2;
    sc.confound_strength = 2.0;
    sc.confound_component = 0;
    sc.seed = 8;
    sc.seed_set = true;
    const SimulatedData sim = generate(sc);

    const CovariateSet cov = aggregate(sim.X, sim.covariate_names, sim.map);
    const MoranResult r = moran_i(cov.Xbar.col(2), sim.graph);
    CHECK(r.I_std > 1.645);
}

TEST_CASE("same seed gives identical dataset bytes") {
    Scenario sc;
    sc.graph_spec = "lattice:3x4+path:3";
    sc.obs_per_area = 5;
    sc.n_covariates = 4;
    sc.beta = Eigen::VectorXd::Ones(8);
    sc.beta_c = Eigen::VectorXd::Constant(4, 182.0);
    sc.truth.sigma2 = {10.0, 8.0};
    sc.truth.rho = 0.7;
    sc.truth.omega = {50.0, 60.0};
    sc.truth.alpha = {0.0, -2.0};
    sc.missing_fraction = 0.1;
    sc.seed = 12;
    sc.seed_set = true;

    std::ostringstream a, b;
    write_observations(a, dataset_from_simulated(generate(sc)));
    write_observations(b, dataset_from_simulated(generate(sc)));
    CHECK(a.str() == b.str());
    CHECK(a.str().size() > 1000);

    sc.seed = 13;
    std::ostringstream c;
    write_observations(c, dataset_from_simulated(generate(sc)));
    CHECK(a.str() != c.str());
}

TEST_CASE("scenario file round trip") {
    Scenario sc;
    sc.graph_spec = "lattice:4x3+path:5+path:3";
    sc.obs_per_area = 8;
    sc.n_covariates = 4;
    sc.beta = Eigen::VectorXd::LinSpaced(8, -1.0, 2.0);
    sc.beta_c = Eigen::VectorXd::Constant(6, 180.0);
    sc.truth.sigma2 = {25.0, 16.0};
    sc.truth.rho = 0.9;
    sc.truth.omega = {110.0, 132.0};
    sc.truth.alpha = {0.0, -4.0};
    sc.confound_covariate = 2;
    sc.confound_strength = 2.0;
    sc.seed = 42;
    sc.seed_set = true;

    std::stringstream ss;
    write_scenario(ss, sc);
    ss.seekg(0);
    const Scenario back = read_scenario(ss);
    CHECK(back.seed == 42);
    CHECK(back.graph_spec == sc.graph_spec);
    CHECK((back.beta - sc.beta).cwiseAbs().maxCoeff() == 0.0);
    CHECK(back.truth.rho == sc.truth.rho);
    CHECK(back.confound_covariate == 2);

    // seed is mandatory
    std::stringstream bad("graph=path:4\n");
    const Scenario s2 = read_scenario(bad);
    CHECK_THROWS_AS(generate(s2), ValidationError);
}

TEST_CASE("interval coverage of the oracle on generated data" * doctest::timeout(800)) {
    // 90% credible intervals from the MCMC oracle cover each true beta in at
    // least 85% of (replicate x coefficient) cells.
    Scenario base;
    base.graph_spec = "lattice:3x4";
    base.obs_per_area = 6;
    base.n_covariates = 2;
    base.beta.resize(4);
    base.beta << 3.0, -2.0, 2.0, 1.0;
    base.beta_c.resize(2);
    base.beta_c << 188.0, 183.0;
    base.truth.sigma2 = {9.0, 6.0};
    base.truth.rho = 0.7;
    base.truth.omega = {16.0, 20.0};
    base.truth.alpha = {0.0, -2.0};
    base.seed_set = true;

    ModelSpec spec;
    int covered = 0, cells = 0;
    const int replicates = 40;
    for (int rep = 0; rep < replicates; ++rep) {
        base.seed = 1000 + rep;
        const SimulatedData sim = generate(base);
        const AssembledModel m = assemble_model(spec, sim.graph, sim.map, sim.X,
                                                sim.covariate_names, sim.y1, sim.y2);
        McmcOptions opts;
        opts.iterations = 1200;
        opts.warmup = 400;
        opts.seed = 9000 + rep;
        const PosteriorFit fit = mcmc_oracle(m, opts);
        // fixed_effects rows: intercept, then covariates, per outcome
        for (int kk = 0; kk < 2; ++kk) {
            for (int j = 0; j < 2; ++j) {
                const auto& row = fit.fixed_effects[kk * 3 + 1 + j];
                const double truth = base.beta(kk * 2 + j);
                ++cells;
                if (row.q05 <= truth && truth <= row.q95) ++covered;
            }
        }
    }
    const double coverage = static_cast<double>(covered) / cells;
    CHECK(coverage >= 0.85);
}
