#pragma once

#include <Eigen/Dense>

#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "bicar/graph.hpp"
#include "bicar/multilevel.hpp"

namespace bicar {

/// Moran's I with null moments under the normality assumption:
///   E0 = -1/(n-1)
///   V0 = [n^2 S1 - n S2 + 3 S0^2] / [(n^2 - 1) S0^2] - E0^2
/// with S0 = sum w_ij, S1 = (1/2) sum (w_ij + w_ji)^2, S2 = sum_i (row_i +
/// col_i)^2.
struct MoranResult {
    double I = 0.0;
    double E0 = 0.0;
    double V0 = 0.0;
    double I_std = 0.0;
};

MoranResult moran_i(const Eigen::VectorXd& x, const AreaGraph& g);

/// (I - E0) / sqrt(V0) for externally supplied null moments.
double moran_standardize(double I, double E0, double V0);

/// Per-covariate, per-component count of low-frequency eigenvectors to
/// remove ("low frequency" = smallest nonzero Laplacian eigenvalues, i.e.
/// the last columns before the null space in decreasing order). An explicit
/// 1-based index list, counted from the low-frequency end (1 = the Fiedler
/// vector), may replace the count for non-contiguous removals.
struct RemovalPattern {
    struct Entry {
        int K = 0;
        std::optional<std::vector<int>> explicit_indices;
        double achieved_i_std = std::numeric_limits<double>::quiet_NaN();
    };
    std::vector<std::string> covariates;          ///< size p
    std::vector<std::vector<Entry>> entries;      ///< [covariate][component]

    static RemovalPattern zeros(const std::vector<std::string>& covariates, int G);
    bool all_zero() const;
    /// Largest K (or index) referenced per component; for validation.
    void validate(const AreaGraph& g) const;
};

/// Split an area-level covariate into (nonspatial, spatial, null-space)
/// parts on the Laplacian eigenbasis: x = x_ns + x_s + x_0, mutually
/// orthogonal. The spatial part collects the pattern's eigenvectors.
struct CovariateSplit {
    Eigen::VectorXd x_ns;
    Eigen::VectorXd x_s;
    Eigen::VectorXd x_0;
};

CovariateSplit decompose_covariate(const Eigen::VectorXd& xbar, const ComponentEigen& eig,
                                   const std::vector<RemovalPattern::Entry>& pattern_row);

/// Observation-level deconfounded design xi * Xbar_ns + DeltaX. With
/// rescale, each column is scaled to keep the original column's standard
/// deviation; columns whose deconfounded sd is zero are reported and left
/// unscaled.
struct DeconfoundedDesign {
    Eigen::MatrixXd X;
    std::vector<int> unscalable_columns;
};

DeconfoundedDesign deconfounded_design(const CovariateSet& cov, const ComponentEigen& eig,
                                       const RemovalPattern& pattern, const LevelMap& map,
                                       bool rescale);

/// Smallest removal counts whose nonspatial part shows no Moran evidence of
/// autocorrelation (I_std < threshold). Counts are incremented jointly:
/// largest component first, then the others in decreasing size, repeating.
/// Components hitting their cap are skipped. If the threshold is not reached
/// within the caps the capped pattern is returned with `capped` set.
struct MoranSearchResult {
    RemovalPattern pattern;
    bool capped = false;
};

MoranSearchResult search_moran_minimal(const CovariateSet& cov, const AreaGraph& g,
                                       const ComponentEigen& eig, const LevelMap& map,
                                       const std::vector<int>& caps, double threshold = 1.645);

}  // namespace bicar
