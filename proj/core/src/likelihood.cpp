#include "bicar/likelihood.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>

#include "bicar/rng.hpp"
#include "bicar/util.hpp"

namespace bicar {

namespace {

constexpr double kPi = std::numbers::pi;
const double kLogSqrt2Pi = 0.5 * std::log(2.0 * kPi);

double norm_logpdf(double x) { return -0.5 * x * x - kLogSqrt2Pi; }

}  // namespace

double log_norm_cdf(double x) {
    if (x > -20.0) {
        // erfc is accurate and does not underflow here.
        return std::log(0.5 * std::erfc(-x / std::numbers::sqrt2));
    }
    // Asymptotic expansion:
    // Phi(x) ~ phi(x)/(-x) (1 - 1/x^2 + 3/x^4 - 15/x^6 + 105/x^8).
    const double x2 = x * x;
    const double x4 = x2 * x2;
    const double series = 1.0 - 1.0 / x2 + 3.0 / x4 - 15.0 / (x4 * x2) + 105.0 / (x4 * x4);
    return norm_logpdf(x) - std::log(-x) + std::log(series);
}

double inverse_mills(double t) {
    if (t < -20.0) {
        // phi/Phi ~ -t / (1 - 1/t^2 + 3/t^4 - 15/t^6 + 105/t^8)
        const double t2 = t * t;
        const double t4 = t2 * t2;
        return -t / (1.0 - 1.0 / t2 + 3.0 / t4 - 15.0 / (t4 * t2) + 105.0 / (t4 * t4));
    }
    return std::exp(norm_logpdf(t) - log_norm_cdf(t));
}

SkewNormal sn_standardize(double omega, double alpha) {
    if (!(omega > 0.0)) throw ValidationError("sn_standardize: omega must be positive");
    SkewNormal sn;
    sn.omega = omega;
    sn.alpha = alpha;
    const double delta = alpha / std::sqrt(1.0 + alpha * alpha);
    const double d2 = delta * delta;
    sn.s = std::sqrt(omega / (1.0 - 2.0 * d2 / kPi));
    sn.m = -sn.s * delta * std::sqrt(2.0 / kPi);
    sn.gamma1 = gamma1_of_alpha(alpha);
    return sn;
}

double sn_logpdf(double x, const SkewNormal& sn) {
    if (!std::isfinite(x)) throw ValidationError("sn_logpdf: non-finite x");
    const double u = (x - sn.m) / sn.s;
    return std::numbers::ln2 - std::log(sn.s) + norm_logpdf(u) + log_norm_cdf(sn.alpha * u);
}

SnDerivs sn_logpdf_derivs(double x, const SkewNormal& sn) {
    const double u = (x - sn.m) / sn.s;
    const double zeta = inverse_mills(sn.alpha * u);
    SnDerivs out;
    out.logpdf = std::numbers::ln2 - std::log(sn.s) + norm_logpdf(u) + log_norm_cdf(sn.alpha * u);
    out.d1 = (-u + sn.alpha * zeta) / sn.s;
    // zeta'(t) = -zeta (t + zeta) in (-1, 0), so d2 < 0 always.
    const double zeta_prime = -zeta * (sn.alpha * u + zeta);
    out.d2 = (-1.0 + sn.alpha * sn.alpha * zeta_prime) / (sn.s * sn.s);
    return out;
}

double sn_sample(const SkewNormal& sn, Rng& rng) {
    const double delta = sn.alpha / std::sqrt(1.0 + sn.alpha * sn.alpha);
    const double u0 = rng.normal();
    const double u1 = rng.normal();
    const double z = delta * std::abs(u0) + std::sqrt(1.0 - delta * delta) * u1;
    return sn.m + sn.s * z;
}

double gamma1_of_alpha(double alpha) {
    if (alpha == 0.0) return 0.0;
    const double a2 = alpha * alpha;
    const double t = 2.0 * a2 / (kPi * (1.0 + a2));  // = 2 delta^2 / pi
    const double mag = 0.5 * (4.0 - kPi) * std::pow(t / (1.0 - t), 1.5);
    return std::copysign(mag, alpha);
}

double gamma1_sup() {
    // alpha -> infinity: t -> 2/pi.
    const double t = 2.0 / kPi;
    return 0.5 * (4.0 - kPi) * std::pow(t / (1.0 - t), 1.5);
}

double alpha_of_gamma1(double gamma1) {
    if (gamma1 == 0.0) return 0.0;
    const double sup = gamma1_sup();
    if (std::abs(gamma1) >= sup)
        throw ValidationError("alpha_of_gamma1: |gamma1| >= " + format_double(sup));
    // Algebraic inverse: r = (|g|/c)^{2/3}, t = r/(1+r), delta^2 = pi t / 2.
    const double c = 0.5 * (4.0 - kPi);
    const double r = std::pow(std::abs(gamma1) / c, 2.0 / 3.0);
    const double t = r / (1.0 + r);
    const double d2 = kPi * t / 2.0;
    const double alpha = std::sqrt(d2 / (1.0 - d2));
    return std::copysign(alpha, gamma1);
}

// ---------------------------------------------------------------------------
// PC prior on the shape parameter.

namespace {

// KLD( standardized SN(alpha) || N(0,1) ) by composite Simpson quadrature.
// Both densities have mean 0 and variance 1, so [-14, 14] captures the mass
// far below the target accuracy.
double sn_kld_to_normal(double alpha) {
    if (alpha == 0.0) return 0.0;
    const SkewNormal sn = sn_standardize(1.0, alpha);
    const int segments = 4000;  // Simpson: even count
    const double lo = -14.0, hi = 14.0;
    const double h = (hi - lo) / segments;
    double acc = 0.0, comp = 0.0;
    auto integrand = [&](double x) {
        const double lf = sn_logpdf(x, sn);
        if (lf < -700.0) return 0.0;  // f log(f/g) -> 0
        const double f = std::exp(lf);
        return f * (lf - norm_logpdf(x));
    };
    for (int i = 0; i <= segments; ++i) {
        const double x = lo + h * i;
        const double w = (i == 0 || i == segments) ? 1.0 : (i % 2 == 1 ? 4.0 : 2.0);
        const double term = w * integrand(x) - comp;
        const double t = acc + term;
        comp = (t - acc) - term;
        acc = t;
    }
    const double kld = acc * h / 3.0;
    return std::max(kld, 0.0);
}

// Fritsch-Carlson monotone cubic slopes for increasing data.
std::vector<double> pchip_slopes(const std::vector<double>& x, const std::vector<double>& y) {
    const auto n = x.size();
    std::vector<double> d(n - 1), m(n);
    for (std::size_t i = 0; i + 1 < n; ++i) d[i] = (y[i + 1] - y[i]) / (x[i + 1] - x[i]);
    m[0] = d[0];
    m[n - 1] = d[n - 2];
    for (std::size_t i = 1; i + 1 < n; ++i) {
        if (d[i - 1] * d[i] <= 0.0) {
            m[i] = 0.0;
        } else {
            const double w1 = 2.0 * (x[i + 1] - x[i]) + (x[i] - x[i - 1]);
            const double w2 = (x[i + 1] - x[i]) + 2.0 * (x[i] - x[i - 1]);
            m[i] = (w1 + w2) / (w1 / d[i - 1] + w2 / d[i]);
        }
    }
    // Limit endpoint slopes to preserve monotonicity.
    for (std::size_t i : {std::size_t{0}, n - 1}) {
        const double di = (i == 0) ? d[0] : d[n - 2];
        if (m[i] * di <= 0.0)
            m[i] = 0.0;
        else if (std::abs(m[i]) > 3.0 * std::abs(di))
            m[i] = 3.0 * di;
    }
    return m;
}

}  // namespace

PcPriorAlpha::PcPriorAlpha(double lambda, double alpha_max, int knots)
    : lambda_(lambda), alpha_max_(alpha_max) {
    if (!(lambda > 0.0)) throw ValidationError("PcPriorAlpha: lambda must be positive");
    if (knots < 8) throw ValidationError("PcPriorAlpha: too few knots");

    // |alpha| grid: 0 plus log-spaced points down to 1e-3.
    knots_.resize(knots);
    knots_[0] = 0.0;
    const double lo = std::log(1e-3), hi = std::log(alpha_max);
    for (int i = 1; i < knots; ++i)
        knots_[i] = std::exp(lo + (hi - lo) * (i - 1) / static_cast<double>(knots - 2));
    knots_.back() = alpha_max;

    d_.resize(knots);
    for (int i = 0; i < knots; ++i) d_[i] = std::sqrt(2.0 * sn_kld_to_normal(knots_[i]));

    slope_ = pchip_slopes(knots_, d_);
    log_norm_ = std::log1p(-std::exp(-lambda_ * d_.back()));
}

int PcPriorAlpha::interval_of(double a) const {
    const auto it = std::upper_bound(knots_.begin(), knots_.end(), a);
    auto idx = static_cast<int>(it - knots_.begin()) - 1;
    return std::clamp(idx, 0, static_cast<int>(knots_.size()) - 2);
}

double PcPriorAlpha::distance(double alpha) const {
    const double a = std::min(std::abs(alpha), alpha_max_);
    const int i = interval_of(a);
    const double h = knots_[i + 1] - knots_[i];
    const double t = (a - knots_[i]) / h;
    const double h00 = (1.0 + 2.0 * t) * (1.0 - t) * (1.0 - t);
    const double h10 = t * (1.0 - t) * (1.0 - t);
    const double h01 = t * t * (3.0 - 2.0 * t);
    const double h11 = t * t * (t - 1.0);
    return h00 * d_[i] + h10 * h * slope_[i] + h01 * d_[i + 1] + h11 * h * slope_[i + 1];
}

double PcPriorAlpha::distance_deriv(double alpha) const {
    const double a = std::abs(alpha);
    if (a >= alpha_max_) return 0.0;
    const int i = interval_of(a);
    const double h = knots_[i + 1] - knots_[i];
    const double t = (a - knots_[i]) / h;
    const double g00 = 6.0 * t * (t - 1.0) / h;
    const double g10 = (3.0 * t - 1.0) * (t - 1.0);
    const double g01 = -g00;
    const double g11 = t * (3.0 * t - 2.0);
    const double deriv =
        g00 * d_[i] + g10 * slope_[i] + g01 * d_[i + 1] + g11 * slope_[i + 1];
    return std::max(deriv, 0.0);
}

double PcPriorAlpha::log_density(double alpha) const {
    if (std::abs(alpha) >= alpha_max_) return -std::numeric_limits<double>::infinity();
    const double d = distance(alpha);
    const double dd = distance_deriv(alpha);
    if (dd <= 0.0) return -std::numeric_limits<double>::infinity();
    return std::log(lambda_ / 2.0) - lambda_ * d + std::log(dd) - log_norm_;
}

const PcPriorAlpha& PcPriorAlpha::standard() {
    static const PcPriorAlpha prior(4.0);
    return prior;
}

const PcPriorAlpha& pc_prior_cached(double lambda) {
    if (lambda == 4.0) return PcPriorAlpha::standard();
    static std::mutex mu;
    static std::map<double, std::unique_ptr<PcPriorAlpha>> cache;
    std::lock_guard<std::mutex> lock(mu);
    auto& slot = cache[lambda];
    if (!slot) slot = std::make_unique<PcPriorAlpha>(lambda);
    return *slot;
}

}  // namespace bicar
