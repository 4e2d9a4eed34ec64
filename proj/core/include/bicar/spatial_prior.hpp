#pragma once

#include <Eigen/Dense>

#include <string>
#include <vector>

#include "bicar/graph.hpp"
#include "bicar/multilevel.hpp"

namespace bicar {

enum class LatentFamily { none, iid, indep_icar, icar, pcar };

std::string to_string(LatentFamily f);
LatentFamily latent_family_from_string(const std::string& s);

/// Laplacian with each component block multiplied by the geometric mean of
/// the diagonal of that block's pseudoinverse, so the typical (geometric
/// mean) constrained marginal variance is 1 per component. Singleton
/// components get factor 1 and are flagged.
struct ScaledStructure {
    Eigen::MatrixXd R;                     ///< scaled Laplacian
    std::vector<double> factors;           ///< per component
    std::vector<int> singleton_components; ///< flagged, factor forced to 1
};
ScaledStructure scale_structure(const AreaGraph& g);

/// Latent-field precision: Lambda (k x k, SPD across outcomes) Kronecker the
/// family's structure matrix. ICAR keeps the Laplacian's rank deficiency;
/// PCAR's D - phi W is full rank for phi in (0, 1).
struct LatentPrecision {
    LatentFamily family = LatentFamily::icar;
    int k = 2;
    Eigen::MatrixXd structure;  ///< n x n
    Eigen::MatrixXd Lambda;     ///< k x k
    Eigen::MatrixXd full;       ///< kron(Lambda, structure), (k n) x (k n)
};

LatentPrecision build_icar_precision(const AreaGraph& g, const Eigen::MatrixXd& Lambda,
                                     bool scaled);
LatentPrecision build_pcar_precision(const AreaGraph& g, const Eigen::MatrixXd& Lambda,
                                     double phi);

/// Linear constraint system A z = 0 on the stacked latent field
/// z = (z_1', ..., z_k')' of length k n.
///  - sum_to_zero: one row per (outcome, component) summing that outcome's
///    entries over the component; m = k G.
///  - rsr: rows X_tot' xi per outcome, row-reduced to full rank; constrains
///    the field to the orthogonal complement of the design's column space
///    at observation level.
struct ConstraintSet {
    enum class Kind { sum_to_zero, rsr } kind = Kind::sum_to_zero;
    Eigen::MatrixXd A;  ///< m x (k n), full row rank
    int k = 2;
};

ConstraintSet build_sum_to_zero_constraints(const AreaGraph& g, int k);

/// X_tot must have full column rank; otherwise the dependent columns are
/// reported. Constraint rows that are linearly dependent (e.g. a covariate
/// with zero area means) are dropped deterministically.
ConstraintSet build_rsr_constraints(const AreaGraph& g, const LevelMap& map,
                                    const Eigen::MatrixXd& X_tot, int k);

/// kron(A, B) for dense matrices.
Eigen::MatrixXd kronecker(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B);

/// Orthonormal basis of the null space of A (kernel), by full-pivot QR of
/// A'. For an empty A returns the identity.
Eigen::MatrixXd kernel_basis(const Eigen::MatrixXd& A, int cols);

}  // namespace bicar
