#include "bicar/spatial_prior.hpp"

#include <Eigen/QR>

#include <algorithm>
#include <cmath>

#include "bicar/util.hpp"

namespace bicar {

std::string to_string(LatentFamily f) {
    switch (f) {
        case LatentFamily::none: return "null";
        case LatentFamily::iid: return "iid";
        case LatentFamily::indep_icar: return "indep-icar";
        case LatentFamily::icar: return "icar";
        case LatentFamily::pcar: return "pcar";
    }
    return "?";
}

LatentFamily latent_family_from_string(const std::string& s) {
    if (s == "null" || s == "none") return LatentFamily::none;
    if (s == "iid") return LatentFamily::iid;
    if (s == "indep-icar" || s == "indep_icar") return LatentFamily::indep_icar;
    if (s == "icar") return LatentFamily::icar;
    if (s == "pcar") return LatentFamily::pcar;
    throw ValidationError("unknown latent family: " + s);
}

ScaledStructure scale_structure(const AreaGraph& g) {
    ScaledStructure out;
    out.R = g.R;
    out.factors.assign(g.G, 1.0);
    for (int c = 0; c < g.G; ++c) {
        const auto nodes = g.component_nodes(c);
        if (nodes.size() < 2) {
            out.singleton_components.push_back(c);
            continue;  // factor 1 by convention
        }
        const Eigen::VectorXd diag = component_pseudoinverse_diag(g, c);
        const double s = std::exp(diag.array().log().mean());
        out.factors[c] = s;
        for (int i : nodes)
            for (int j : nodes) out.R(i, j) *= s;
    }
    return out;
}

namespace {

void require_spd(const Eigen::MatrixXd& Lambda) {
    if (Lambda.rows() != Lambda.cols()) throw ValidationError("Lambda must be square");
    if (!Lambda.isApprox(Lambda.transpose(), 1e-10))
        throw ValidationError("Lambda must be symmetric");
    Eigen::LLT<Eigen::MatrixXd> llt(Lambda);
    if (llt.info() != Eigen::Success)
        throw NumericalError("Lambda is not positive definite (Cholesky failed)");
}

}  // namespace

Eigen::MatrixXd kronecker(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B) {
    Eigen::MatrixXd out(A.rows() * B.rows(), A.cols() * B.cols());
    for (Eigen::Index i = 0; i < A.rows(); ++i)
        for (Eigen::Index j = 0; j < A.cols(); ++j)
            out.block(i * B.rows(), j * B.cols(), B.rows(), B.cols()) = A(i, j) * B;
    return out;
}

LatentPrecision build_icar_precision(const AreaGraph& g, const Eigen::MatrixXd& Lambda,
                                     bool scaled) {
    require_spd(Lambda);
    LatentPrecision p;
    p.family = LatentFamily::icar;
    p.k = static_cast<int>(Lambda.rows());
    p.structure = scaled ? scale_structure(g).R : g.R;
    p.Lambda = Lambda;
    p.full = kronecker(Lambda, p.structure);
    return p;
}

LatentPrecision build_pcar_precision(const AreaGraph& g, const Eigen::MatrixXd& Lambda,
                                     double phi) {
    require_spd(Lambda);
    if (!(phi > 0.0 && phi < 1.0))
        throw ValidationError("build_pcar_precision: phi must lie in (0, 1), got " +
                              format_double(phi));
    LatentPrecision p;
    p.family = LatentFamily::pcar;
    p.k = static_cast<int>(Lambda.rows());
    p.structure = Eigen::MatrixXd(g.degrees.asDiagonal());
    p.structure -= phi * g.W;
    p.Lambda = Lambda;
    p.full = kronecker(Lambda, p.structure);
    return p;
}

ConstraintSet build_sum_to_zero_constraints(const AreaGraph& g, int k) {
    ConstraintSet cs;
    cs.kind = ConstraintSet::Kind::sum_to_zero;
    cs.k = k;
    cs.A = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(k) * g.G,
                                 static_cast<Eigen::Index>(k) * g.n);
    for (int outcome = 0; outcome < k; ++outcome)
        for (int i = 0; i < g.n; ++i)
            cs.A(outcome * g.G + g.components[i], outcome * g.n + i) = 1.0;
    return cs;
}

ConstraintSet build_rsr_constraints(const AreaGraph& g, const LevelMap& map,
                                    const Eigen::MatrixXd& X_tot, int k) {
    if (X_tot.rows() != map.N)
        throw ValidationError("build_rsr_constraints: X_tot rows must equal observation count");

    // Full column rank check; report dependent columns by pivot order.
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(X_tot);
    qr.setThreshold(1e-10);
    if (qr.rank() < X_tot.cols()) {
        const auto perm = qr.colsPermutation().indices();
        std::string dep;
        for (Eigen::Index i = qr.rank(); i < X_tot.cols(); ++i)
            dep += (dep.empty() ? "" : ", ") + std::to_string(perm(i));
        throw ValidationError("build_rsr_constraints: X_tot rank-deficient; dependent column(s): " +
                              dep);
    }

    // Per-outcome rows (X_tot' xi): q x n, entries sum_{h in area i} x_{h m}.
    const auto q = X_tot.cols();
    Eigen::MatrixXd rows = Eigen::MatrixXd::Zero(q, g.n);
    for (int h = 0; h < map.N; ++h) rows.col(map.area_of[h]) += X_tot.row(h).transpose();

    // Keep a maximal independent subset of rows, in original order.
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> row_qr(rows.transpose());
    row_qr.setThreshold(1e-10);
    const auto rank = row_qr.rank();
    std::vector<int> keep;
    {
        const auto perm = row_qr.colsPermutation().indices();
        for (Eigen::Index i = 0; i < rank; ++i) keep.push_back(perm(i));
        std::sort(keep.begin(), keep.end());
    }

    ConstraintSet cs;
    cs.kind = ConstraintSet::Kind::rsr;
    cs.k = k;
    cs.A = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(k) * rank,
                                 static_cast<Eigen::Index>(k) * g.n);
    for (int outcome = 0; outcome < k; ++outcome)
        for (std::size_t r = 0; r < keep.size(); ++r)
            cs.A.block(outcome * rank + static_cast<Eigen::Index>(r), outcome * g.n, 1, g.n) =
                rows.row(keep[r]);
    return cs;
}

Eigen::MatrixXd kernel_basis(const Eigen::MatrixXd& A, int cols) {
    if (A.rows() == 0) return Eigen::MatrixXd::Identity(cols, cols);
    if (A.cols() != cols) throw ValidationError("kernel_basis: column mismatch");
    Eigen::FullPivHouseholderQR<Eigen::MatrixXd> qr(A.transpose());
    qr.setThreshold(1e-12);
    const auto rank = qr.rank();
    const Eigen::MatrixXd Q = qr.matrixQ();
    return Q.rightCols(cols - rank);
}

}  // namespace bicar
