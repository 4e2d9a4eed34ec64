#include <doctest.h>

#include "bicar/multilevel.hpp"
#include "bicar/rng.hpp"
#include "bicar/util.hpp"

using namespace bicar;

TEST_CASE("build_levelmap basic") {
    // 4 obs in areas [A,A,B,B], both areas in component 0
    const LevelMap map = build_levelmap({0, 0, 1, 1}, {0, 0});
    CHECK(map.N == 4);
    CHECK(map.n == 2);
    CHECK(map.G == 1);
    CHECK(map.counts == std::vector<int>{2, 2});

    const Eigen::MatrixXd xi = map.xi_dense();
    Eigen::MatrixXd expected(4, 2);
    expected << 1, 0, 1, 0, 0, 1, 0, 1;
    CHECK((xi - expected).cwiseAbs().maxCoeff() == 0.0);
    CHECK(map.C_dense().rows() == 2);
    CHECK(map.C_dense().col(0).sum() == 2.0);
}

TEST_CASE("column sums of xi count observations per area") {
    Rng rng(5);
    std::vector<int> area_of(873);
    std::vector<int> comp_of(105, 0);
    for (auto& a : area_of) a = rng.uniform_int(0, 104);
    const LevelMap map = build_levelmap(area_of, comp_of);
    const Eigen::VectorXd colsum = map.xi_dense().colwise().sum();
    double total = 0;
    for (int i = 0; i < map.n; ++i) {
        CHECK(colsum(i) == doctest::Approx(map.counts[i]));
        total += colsum(i);
    }
    CHECK(total == doctest::Approx(873));
}

TEST_CASE("empty macro-area is reported but not fatal") {
    const LevelMap map = build_levelmap({0, 0}, {0, 0, 0});
    CHECK(map.counts == std::vector<int>{2, 0, 0});
    CHECK(map.empty_areas() == std::vector<int>{1, 2});
}

TEST_CASE("build_levelmap rejects unknown area") {
    CHECK_THROWS_AS(build_levelmap({0, 5}, {0, 0}), ValidationError);
}

TEST_CASE("aggregate arithmetic means") {
    const LevelMap map = build_levelmap({0, 0, 1, 1}, {0, 0});
    Eigen::MatrixXd X(4, 1);
    X << 1, 3, 5, 7;
    const CovariateSet cov = aggregate(X, {"x"}, map);
    CHECK(cov.Xbar(0, 0) == doctest::Approx(2.0));
    CHECK(cov.Xbar(1, 0) == doctest::Approx(6.0));
    Eigen::VectorXd expected_dx(4);
    expected_dx << -1, 1, -1, 1;
    CHECK((cov.DeltaX.col(0) - expected_dx).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("aggregate constant column") {
    const LevelMap map = build_levelmap({0, 1, 1}, {0, 0});
    const Eigen::MatrixXd X = Eigen::MatrixXd::Constant(3, 1, 4.2);
    const CovariateSet cov = aggregate(X, {}, map);
    CHECK((cov.Xbar.array() - 4.2).abs().maxCoeff() < 1e-14);
    CHECK(cov.DeltaX.cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("aggregate reconstruction and orthogonality") {
    Rng rng(17);
    std::vector<int> area_of(20);
    for (auto& a : area_of) a = rng.uniform_int(0, 4);
    // ensure every area inhabited
    for (int i = 0; i < 5; ++i) area_of[i] = i;
    const LevelMap map = build_levelmap(area_of, {0, 0, 0, 0, 0});
    Eigen::MatrixXd X(20, 3);
    for (int i = 0; i < 20; ++i)
        for (int j = 0; j < 3; ++j) X(i, j) = rng.normal();
    const CovariateSet cov = aggregate(X, {}, map);

    const Eigen::MatrixXd xi = map.xi_dense();
    CHECK((xi * cov.Xbar + cov.DeltaX - X).cwiseAbs().maxCoeff() < 1e-12);
    // xi' DeltaX = 0 (within-area residuals orthogonal to the mean space)
    CHECK((xi.transpose() * cov.DeltaX).cwiseAbs().maxCoeff() < 1e-10);
    // xi'xi diagonal with counts
    const Eigen::MatrixXd xtx = xi.transpose() * xi;
    for (int i = 0; i < 5; ++i) CHECK(xtx(i, i) == doctest::Approx(map.counts[i]));
    CHECK((xtx - Eigen::MatrixXd(xtx.diagonal().asDiagonal())).cwiseAbs().maxCoeff() == 0.0);
    // idempotence: aggregating xi*Xbar returns Xbar
    const CovariateSet again = aggregate(xi * cov.Xbar, {}, map);
    CHECK((again.Xbar - cov.Xbar).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("aggregate rejects empty areas with ids") {
    const LevelMap map = build_levelmap({0, 0}, {0, 0, 0});
    const Eigen::MatrixXd X = Eigen::MatrixXd::Ones(2, 1);
    CHECK_THROWS_WITH_AS(aggregate(X, {}, map), doctest::Contains("1, 2"), ValidationError);
}

TEST_CASE("expand and area_means are adjoint-ish") {
    const LevelMap map = build_levelmap({0, 1, 1, 2}, {0, 0, 1});
    Eigen::VectorXd v(3);
    v << 1, 2, 3;
    const Eigen::VectorXd obs = expand_to_observations(v, map);
    CHECK(obs(0) == 1.0);
    CHECK(obs(2) == 2.0);
    CHECK(obs(3) == 3.0);
    const Eigen::VectorXd back = area_means(obs, map);
    CHECK((back - v).cwiseAbs().maxCoeff() < 1e-14);
}
