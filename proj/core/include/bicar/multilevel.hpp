#pragma once

#include <Eigen/Dense>

#include <string>
#include <vector>

namespace bicar {

/// Two-level structure: N observations (municipalities) mapped onto n
/// macro-areas, macro-areas mapped onto G graph components. The aggregation
/// matrix xi (N x n, one 1 per row) and the component matrix C (n x G) are
/// kept as index vectors; dense views are materialized on demand.
struct LevelMap {
    int N = 0;
    int n = 0;
    int G = 0;
    std::vector<int> area_of;       ///< length N, values in [0, n)
    std::vector<int> component_of;  ///< length n, values in [0, G)
    std::vector<int> counts;        ///< N_i per macro-area; zero allowed

    Eigen::MatrixXd xi_dense() const;
    Eigen::MatrixXd C_dense() const;
    /// Macro-areas with no observations (reported, not fatal).
    std::vector<int> empty_areas() const;
};

/// Covariates at both levels: X = xi * Xbar + DeltaX exactly, with Xbar the
/// unweighted within-area means and DeltaX the within-area residuals.
struct CovariateSet {
    Eigen::MatrixXd X;       ///< N x p
    std::vector<std::string> names;
    Eigen::MatrixXd Xbar;    ///< n x p
    Eigen::MatrixXd DeltaX;  ///< N x p
};

LevelMap build_levelmap(const std::vector<int>& area_of, const std::vector<int>& component_of);

/// Unweighted within-area means and residuals. Rejects (with the offending
/// area ids) if any macro-area has no observations: xi'xi would be singular.
CovariateSet aggregate(const Eigen::MatrixXd& X, const std::vector<std::string>& names,
                       const LevelMap& map);

/// Apply the area-level map to an area vector: (xi * v)_h = v[area_of[h]].
Eigen::VectorXd expand_to_observations(const Eigen::VectorXd& area_values, const LevelMap& map);

/// Group means: (xi'xi)^{-1} xi' v for an observation-level vector.
Eigen::VectorXd area_means(const Eigen::VectorXd& obs_values, const LevelMap& map);

}  // namespace bicar
