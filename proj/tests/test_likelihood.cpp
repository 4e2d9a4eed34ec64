#include <doctest.h>

#include <cmath>
#include <numbers>

#include "bicar/likelihood.hpp"
#include "bicar/rng.hpp"
#include "bicar/util.hpp"
#include "helpers.hpp"

using namespace bicar;

namespace {
double norm_pdf(double x) { return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi); }
}  // namespace

TEST_CASE("sn_standardize closed forms") {
    // alpha = 0 reduces to a plain normal
    const SkewNormal sn0 = sn_standardize(4.0, 0.0);
    CHECK(sn0.m == doctest::Approx(0.0));
    CHECK(sn0.s == doctest::Approx(2.0));

    // alpha -> infinity limit: s = 1/sqrt(1 - 2/pi), m = -s sqrt(2/pi)
    const SkewNormal sn_inf = sn_standardize(1.0, 1e12);
    CHECK(sn_inf.s == doctest::Approx(1.65868).epsilon(1e-4));
    CHECK(sn_inf.m == doctest::Approx(-1.32340).epsilon(1e-4));

    CHECK_THROWS_AS(sn_standardize(0.0, 1.0), ValidationError);
    CHECK_THROWS_AS(sn_standardize(-1.0, 1.0), ValidationError);
}

TEST_CASE("sn quadrature mean and variance") {
    for (double alpha : {-4.0, -1.0, 0.0, 1.0, 4.0}) {
        for (double omega : {0.5, 1.0, 132.0}) {
            const SkewNormal sn = sn_standardize(omega, alpha);
            const double lo = sn.m - 14.0 * sn.s, hi = sn.m + 14.0 * sn.s;
            const double mass =
                test::simpson([&](double x) { return std::exp(sn_logpdf(x, sn)); }, lo, hi, 8000);
            const double mean = test::simpson(
                [&](double x) { return x * std::exp(sn_logpdf(x, sn)); }, lo, hi, 8000);
            const double second = test::simpson(
                [&](double x) { return x * x * std::exp(sn_logpdf(x, sn)); }, lo, hi, 8000);
            CHECK(mass == doctest::Approx(1.0).epsilon(1e-9));
            CHECK(std::abs(mean) < 1e-8 * std::max(1.0, omega));
            CHECK(std::abs(second - mean * mean - omega) < 1e-8 * std::max(1.0, omega));
        }
    }
}

TEST_CASE("sn_logpdf matches normal at alpha 0 and integrates to 1") {
    const SkewNormal sn = sn_standardize(2.5, 0.0);
    for (double x : {-3.0, -0.5, 0.0, 1.7}) {
        const double expected = std::log(norm_pdf(x / sn.s) / sn.s);
        CHECK(sn_logpdf(x, sn) == doctest::Approx(expected).epsilon(1e-12));
    }

    const SkewNormal sk = sn_standardize(1.0, 3.0);
    const double mass = test::simpson([&](double x) { return std::exp(sn_logpdf(x, sk)); },
                                      sk.m - 14.0 * sk.s, sk.m + 14.0 * sk.s, 8000);
    CHECK(mass == doctest::Approx(1.0).epsilon(1e-8));
}

TEST_CASE("sn_logpdf tail stability") {
    const SkewNormal sn = sn_standardize(1.0, 8.0);
    // deep left tail: Phi(alpha u) underflows naively
    const double v = sn_logpdf(-40.0, sn);
    CHECK(std::isfinite(v));
    CHECK(v < -700.0);
    CHECK_THROWS_AS(sn_logpdf(std::numeric_limits<double>::infinity(), sn), ValidationError);
}

TEST_CASE("sn mirror symmetry in alpha") {
    const SkewNormal pos = sn_standardize(2.0, 3.5);
    const SkewNormal neg = sn_standardize(2.0, -3.5);
    for (double x : {-2.0, -0.3, 0.0, 0.7, 2.5})
        CHECK(sn_logpdf(x, pos) == doctest::Approx(sn_logpdf(-x, neg)).epsilon(1e-12));
}

TEST_CASE("sn derivatives match finite differences") {
    const SkewNormal sn = sn_standardize(1.3, -2.0);
    const double h = 1e-6, h2 = 1e-4;
    for (double x : {-1.5, 0.0, 0.9, 3.0}) {
        const SnDerivs d = sn_logpdf_derivs(x, sn);
        const double fd1 = (sn_logpdf(x + h, sn) - sn_logpdf(x - h, sn)) / (2 * h);
        const double fd2 = (sn_logpdf(x + h2, sn) - 2 * sn_logpdf(x, sn) + sn_logpdf(x - h2, sn)) /
                           (h2 * h2);
        CHECK(d.logpdf == doctest::Approx(sn_logpdf(x, sn)));
        CHECK(d.d1 == doctest::Approx(fd1).epsilon(1e-6));
        CHECK(d.d2 == doctest::Approx(fd2).epsilon(1e-4));
        CHECK(d.d2 < 0.0);  // log-concavity
    }
}

TEST_CASE("sn sampling moments and skewness") {
    Rng rng(99);
    const SkewNormal sn = sn_standardize(1.0, 4.0);
    std::vector<double> draws(1000000);
    for (auto& d : draws) d = sn_sample(sn, rng);
    RunningMoments mom;
    for (double d : draws) mom.add(d);
    CHECK(std::abs(mom.mean()) < 0.005);
    CHECK(mom.variance() == doctest::Approx(1.0).epsilon(0.01));
    CHECK(sample_skewness(draws) == doctest::Approx(gamma1_of_alpha(4.0)).epsilon(0.03));
}

TEST_CASE("gamma1 values and bounds") {
    CHECK(gamma1_of_alpha(0.0) == 0.0);
    CHECK(gamma1_of_alpha(1.0) == doctest::Approx(0.13698).epsilon(1e-3));
    CHECK(gamma1_of_alpha(1e12) == doctest::Approx(0.995271).epsilon(1e-5));
    CHECK(gamma1_sup() < 0.99528);
    CHECK(gamma1_sup() > 0.99527);
    // odd function
    CHECK(gamma1_of_alpha(-2.0) == doctest::Approx(-gamma1_of_alpha(2.0)));
}

TEST_CASE("gamma1 inverse round trip") {
    for (double g = -0.97; g <= 0.97; g += 0.097) {
        const double alpha = alpha_of_gamma1(g);
        CHECK(gamma1_of_alpha(alpha) == doctest::Approx(g).epsilon(1e-10));
    }
    CHECK(alpha_of_gamma1(0.0) == 0.0);
    CHECK_THROWS_AS(alpha_of_gamma1(0.9953), ValidationError);
    CHECK_THROWS_AS(alpha_of_gamma1(-1.2), ValidationError);
}

TEST_CASE("log_norm_cdf accuracy") {
    CHECK(log_norm_cdf(0.0) == doctest::Approx(std::log(0.5)).epsilon(1e-14));
    CHECK(log_norm_cdf(1.0) == doctest::Approx(std::log(0.841344746068543)).epsilon(1e-12));
    // asymptotic branch against a long-double erfc oracle
    for (double x : {-21.0, -26.0, -35.0, -50.0}) {
        const long double ref =
            std::log(0.5L * erfcl(-static_cast<long double>(x) / sqrtl(2.0L)));
        CHECK(log_norm_cdf(x) ==
              doctest::Approx(static_cast<double>(ref)).epsilon(1e-12));
    }
    // deep tail: must stay finite far beyond erfc underflow
    CHECK(std::isfinite(log_norm_cdf(-300.0)));
    CHECK(log_norm_cdf(-300.0) < -44000.0);
}

TEST_CASE("pc prior distance properties") {
    const PcPriorAlpha& prior = PcPriorAlpha::standard();
    CHECK(prior.distance(0.0) == 0.0);
    // strictly increasing in |alpha|
    double last = 0.0;
    for (double a = 0.05; a < 30.0; a *= 1.4) {
        const double d = prior.distance(a);
        CHECK(d > last);
        last = d;
    }
    // symmetric in alpha
    CHECK(prior.distance(-2.0) == doctest::Approx(prior.distance(2.0)));
}

TEST_CASE("pc prior integrates to one over the grid range") {
    const PcPriorAlpha& prior = PcPriorAlpha::standard();
    // integrate the two-sided density over (-alpha_max, alpha_max)
    const double amax = prior.alpha_max() - 1e-9;
    const double mass = test::simpson(
        [&](double a) {
            const double ld = prior.log_density(a);
            return std::isfinite(ld) ? std::exp(ld) : 0.0;
        },
        -amax, amax, 200000);
    CHECK(mass == doctest::Approx(1.0).epsilon(1e-4));
}

TEST_CASE("pc prior density shape") {
    const PcPriorAlpha& prior = PcPriorAlpha::standard();
    // the distance derivative vanishes at 0 (cubic onset), so the density
    // dips there; nearby values are finite
    CHECK(std::isfinite(prior.log_density(0.5)));
    CHECK(std::isfinite(prior.log_density(-4.0)));
    CHECK(prior.log_density(31.0) == -std::numeric_limits<double>::infinity());
}
