#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <utility>
#include <vector>

#include "bicar/graph.hpp"
#include "bicar/rng.hpp"

namespace bicar::test {

/// Random connected-component graph: nodes split into `components` groups,
/// each wired with a random spanning tree plus extra edges.
inline AreaGraph random_graph(int n, int components, Rng& rng) {
    std::vector<int> sizes(components, 1);
    for (int i = components; i < n; ++i) ++sizes[rng.uniform_int(0, components - 1)];

    std::vector<std::pair<int, int>> edges;
    int base = 0;
    for (int c = 0; c < components; ++c) {
        const int size = sizes[c];
        for (int v = 1; v < size; ++v)
            edges.emplace_back(base + rng.uniform_int(0, v - 1), base + v);
        const int extra = size > 2 ? rng.uniform_int(0, size) : 0;
        for (int e = 0; e < extra; ++e) {
            const int a = rng.uniform_int(0, size - 1);
            const int b = rng.uniform_int(0, size - 1);
            if (a != b) edges.emplace_back(base + std::min(a, b), base + std::max(a, b));
        }
        base += size;
    }
    return build_graph(n, edges);
}

/// Random 2x2 SPD matrix with moderate conditioning.
inline Eigen::Matrix2d random_spd2(Rng& rng) {
    Eigen::Matrix2d A;
    A << rng.normal(), rng.normal(), rng.normal(), rng.normal();
    return A * A.transpose() + 0.3 * Eigen::Matrix2d::Identity();
}

/// Composite Simpson quadrature (n must be even).
inline double simpson(const std::function<double(double)>& f, double a, double b, int n) {
    const double h = (b - a) / n;
    double acc = f(a) + f(b);
    for (int i = 1; i < n; ++i) acc += f(a + h * i) * (i % 2 == 1 ? 4.0 : 2.0);
    return acc * h / 3.0;
}

/// Numerical matrix rank via eigenvalue threshold relative to the largest.
inline int numeric_rank(const Eigen::MatrixXd& M, double rel_tol = 1e-9) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(M);
    const Eigen::VectorXd ev = es.eigenvalues().cwiseAbs();
    const double cutoff = rel_tol * ev.maxCoeff();
    int rank = 0;
    for (Eigen::Index i = 0; i < ev.size(); ++i)
        if (ev(i) > cutoff) ++rank;
    return rank;
}

}  // namespace bicar::test
