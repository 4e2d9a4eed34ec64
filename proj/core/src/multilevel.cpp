#include "bicar/multilevel.hpp"

#include <algorithm>

#include "bicar/util.hpp"

namespace bicar {

Eigen::MatrixXd LevelMap::xi_dense() const {
    Eigen::MatrixXd xi = Eigen::MatrixXd::Zero(N, n);
    for (int h = 0; h < N; ++h) xi(h, area_of[h]) = 1.0;
    return xi;
}

Eigen::MatrixXd LevelMap::C_dense() const {
    Eigen::MatrixXd C = Eigen::MatrixXd::Zero(n, G);
    for (int i = 0; i < n; ++i) C(i, component_of[i]) = 1.0;
    return C;
}

std::vector<int> LevelMap::empty_areas() const {
    std::vector<int> empty;
    for (int i = 0; i < n; ++i)
        if (counts[i] == 0) empty.push_back(i);
    return empty;
}

LevelMap build_levelmap(const std::vector<int>& area_of, const std::vector<int>& component_of) {
    LevelMap map;
    map.N = static_cast<int>(area_of.size());
    map.n = static_cast<int>(component_of.size());
    if (map.n == 0) throw ValidationError("build_levelmap: no macro-areas");

    map.G = 0;
    for (int i = 0; i < map.n; ++i) {
        const int c = component_of[i];
        if (c < 0)
            throw ValidationError("build_levelmap: macro-area " + std::to_string(i) +
                                  " has negative component label");
        map.G = std::max(map.G, c + 1);
    }

    map.counts.assign(map.n, 0);
    for (int h = 0; h < map.N; ++h) {
        const int a = area_of[h];
        if (a < 0 || a >= map.n)
            throw ValidationError("build_levelmap: observation " + std::to_string(h) +
                                  " references unknown macro-area " + std::to_string(a));
        ++map.counts[a];
    }
    map.area_of = area_of;
    map.component_of = component_of;
    return map;
}

CovariateSet aggregate(const Eigen::MatrixXd& X, const std::vector<std::string>& names,
                       const LevelMap& map) {
    if (X.rows() != map.N) throw ValidationError("aggregate: X rows do not match observation count");
    if (!names.empty() && static_cast<int>(names.size()) != X.cols())
        throw ValidationError("aggregate: name count does not match column count");

    const auto empty = map.empty_areas();
    if (!empty.empty()) {
        std::string ids;
        for (int i : empty) ids += (ids.empty() ? "" : ", ") + std::to_string(i);
        throw ValidationError("aggregate: xi'xi singular; macro-area(s) without observations: " + ids);
    }

    CovariateSet cov;
    cov.X = X;
    cov.names = names;
    cov.Xbar = Eigen::MatrixXd::Zero(map.n, X.cols());
    for (int h = 0; h < map.N; ++h) cov.Xbar.row(map.area_of[h]) += X.row(h);
    for (int i = 0; i < map.n; ++i) cov.Xbar.row(i) /= static_cast<double>(map.counts[i]);

    cov.DeltaX = X;
    for (int h = 0; h < map.N; ++h) cov.DeltaX.row(h) -= cov.Xbar.row(map.area_of[h]);
    return cov;
}

Eigen::VectorXd expand_to_observations(const Eigen::VectorXd& area_values, const LevelMap& map) {
    if (area_values.size() != map.n)
        throw ValidationError("expand_to_observations: length mismatch");
    Eigen::VectorXd out(map.N);
    for (int h = 0; h < map.N; ++h) out(h) = area_values(map.area_of[h]);
    return out;
}

Eigen::VectorXd area_means(const Eigen::VectorXd& obs_values, const LevelMap& map) {
    if (obs_values.size() != map.N) throw ValidationError("area_means: length mismatch");
    const auto empty = map.empty_areas();
    if (!empty.empty())
        throw ValidationError("area_means: macro-area " + std::to_string(empty.front()) +
                              " has no observations");
    Eigen::VectorXd sums = Eigen::VectorXd::Zero(map.n);
    for (int h = 0; h < map.N; ++h) sums(map.area_of[h]) += obs_values(h);
    for (int i = 0; i < map.n; ++i) sums(i) /= static_cast<double>(map.counts[i]);
    return sums;
}

}  // namespace bicar
