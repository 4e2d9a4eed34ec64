#include "bicar/util.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

namespace bicar {

double log_sum_exp(std::span<const double> x) {
    if (x.empty()) return -std::numeric_limits<double>::infinity();
    double m = -std::numeric_limits<double>::infinity();
    for (double v : x) m = std::max(m, v);
    if (!std::isfinite(m)) return m;
    double acc = 0.0;
    for (double v : x) acc += std::exp(v - m);
    return m + std::log(acc);
}

double kahan_sum(std::span<const double> x) {
    double sum = 0.0, c = 0.0;
    for (double v : x) {
        const double y = v - c;
        const double t = sum + y;
        c = (t - sum) - y;
        sum = t;
    }
    return sum;
}

double quantile(std::vector<double> x, double p) {
    if (x.empty()) throw ValidationError("quantile: empty sample");
    if (p < 0.0 || p > 1.0) throw ValidationError("quantile: p outside [0,1]");
    std::sort(x.begin(), x.end());
    const double h = (static_cast<double>(x.size()) - 1.0) * p;
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const auto hi = std::min(lo + 1, x.size() - 1);
    const double frac = h - static_cast<double>(lo);
    return x[lo] + frac * (x[hi] - x[lo]);
}

double interquartile_range(const std::vector<double>& x) {
    return quantile(x, 0.75) - quantile(x, 0.25);
}

double sample_skewness(std::span<const double> x) {
    if (x.size() < 2) throw ValidationError("sample_skewness: need at least 2 values");
    double mean = 0.0;
    for (double v : x) mean += v;
    mean /= static_cast<double>(x.size());
    double m2 = 0.0, m3 = 0.0;
    for (double v : x) {
        const double d = v - mean;
        m2 += d * d;
        m3 += d * d * d;
    }
    m2 /= static_cast<double>(x.size());
    m3 /= static_cast<double>(x.size());
    if (m2 <= 0.0) throw ValidationError("sample_skewness: zero variance");
    return m3 / std::pow(m2, 1.5);
}

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace bicar
