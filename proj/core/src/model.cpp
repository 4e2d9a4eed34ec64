#include "bicar/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "bicar/likelihood.hpp"
#include "bicar/util.hpp"

namespace bicar {

namespace {
constexpr double kNegInf = -std::numeric_limits<double>::infinity();
const double kLog2Pi = std::log(2.0 * std::numbers::pi);
}  // namespace

std::string to_string(OutcomeLikelihood l) {
    return l == OutcomeLikelihood::gaussian ? "gaussian" : "skew-normal";
}

std::string to_string(Confounding c) {
    switch (c) {
        case Confounding::base: return "base";
        case Confounding::rsr: return "rsr";
        case Confounding::spatial_plus: return "spatial-plus";
    }
    return "?";
}

OutcomeLikelihood likelihood_from_string(const std::string& s) {
    if (s == "gaussian" || s == "normal") return OutcomeLikelihood::gaussian;
    if (s == "skew-normal" || s == "skew_normal" || s == "sn") return OutcomeLikelihood::skew_normal;
    throw ValidationError("unknown likelihood: " + s);
}

Confounding confounding_from_string(const std::string& s) {
    if (s == "base" || s == "none") return Confounding::base;
    if (s == "rsr") return Confounding::rsr;
    if (s == "spatial-plus" || s == "spatial_plus" || s == "splus") return Confounding::spatial_plus;
    throw ValidationError("unknown confounding treatment: " + s);
}

void ModelSpec::validate() const {
    if (confounding == Confounding::rsr && family == LatentFamily::none)
        throw ValidationError("RSR requires a latent field");
    if (fixed_phi && family != LatentFamily::pcar)
        throw ValidationError("fixed phi only applies to the pcar family");
    if (fixed_phi && !(*fixed_phi > 0.0 && *fixed_phi < 1.0))
        throw ValidationError("fixed phi must lie in (0, 1)");
    if (force_sum_to_zero && family != LatentFamily::pcar)
        throw ValidationError("force_sum_to_zero only applies to the pcar family");
    if (priors.wishart_df != 0 && priors.wishart_df < 2)
        throw ValidationError("wishart_df must be >= k = 2");
}

bool ModelSpec::per_component_intercepts() const {
    switch (intercepts) {
        case InterceptStyle::per_component: return true;
        case InterceptStyle::single: return false;
        case InterceptStyle::family_default:
            // Constrained (intrinsic) families identify per-component levels
            // through the intercepts; the proper CAR does not need them.
            return family != LatentFamily::pcar;
    }
    return true;
}

bool ModelSpec::any_skew() const {
    return likelihoods[0] == OutcomeLikelihood::skew_normal ||
           likelihoods[1] == OutcomeLikelihood::skew_normal;
}

Eigen::Matrix2d NaturalHypers::lambda(bool correlated) const {
    Eigen::Matrix2d Sigma;
    if (correlated) {
        const double cov = rho * std::sqrt(sigma2[0] * sigma2[1]);
        Sigma << sigma2[0], cov, cov, sigma2[1];
    } else {
        Sigma << sigma2[0], 0.0, 0.0, sigma2[1];
    }
    return Sigma.inverse();
}

// ---------------------------------------------------------------------------
// HyperLayout

HyperLayout HyperLayout::make(const ModelSpec& spec) {
    HyperLayout l;
    l.spec_ = spec;
    using C = Coord;
    switch (spec.family) {
        case LatentFamily::none:
            l.correlated_ = false;
            break;
        case LatentFamily::iid:
        case LatentFamily::indep_icar:
            l.correlated_ = false;
            l.coords_.push_back(C::log_sigma2_1);
            l.coords_.push_back(C::log_sigma2_2);
            break;
        case LatentFamily::icar:
        case LatentFamily::pcar:
            l.correlated_ = true;
            l.coords_.push_back(C::log_sigma2_1);
            l.coords_.push_back(C::log_sigma2_2);
            l.coords_.push_back(C::atanh_rho);
            break;
    }
    l.coords_.push_back(C::log_omega_1);
    l.coords_.push_back(C::log_omega_2);
    if (spec.likelihoods[0] == OutcomeLikelihood::skew_normal)
        l.coords_.push_back(C::asinh_alpha_1);
    if (spec.likelihoods[1] == OutcomeLikelihood::skew_normal)
        l.coords_.push_back(C::asinh_alpha_2);
    if (spec.family == LatentFamily::pcar && !spec.fixed_phi)
        l.coords_.push_back(C::logit_phi);

    l.wishart_df_ = spec.priors.wishart_df != 0
                        ? spec.priors.wishart_df
                        : (spec.family == LatentFamily::pcar ? 2 : 5);
    return l;
}

int HyperLayout::index_of(Coord c) const {
    for (std::size_t i = 0; i < coords_.size(); ++i)
        if (coords_[i] == c) return static_cast<int>(i);
    return -1;
}

std::vector<std::string> HyperLayout::names() const {
    std::vector<std::string> out;
    for (Coord c : coords_) {
        switch (c) {
            case Coord::log_sigma2_1: out.push_back("log_sigma2_1"); break;
            case Coord::log_sigma2_2: out.push_back("log_sigma2_2"); break;
            case Coord::atanh_rho: out.push_back("atanh_rho"); break;
            case Coord::log_omega_1: out.push_back("log_omega_1"); break;
            case Coord::log_omega_2: out.push_back("log_omega_2"); break;
            case Coord::asinh_alpha_1: out.push_back("asinh_alpha_1"); break;
            case Coord::asinh_alpha_2: out.push_back("asinh_alpha_2"); break;
            case Coord::logit_phi: out.push_back("logit_phi"); break;
        }
    }
    return out;
}

std::vector<std::string> HyperLayout::natural_names() const {
    std::vector<std::string> out;
    for (Coord c : coords_) {
        switch (c) {
            case Coord::log_sigma2_1: out.push_back("sigma2_1"); break;
            case Coord::log_sigma2_2: out.push_back("sigma2_2"); break;
            case Coord::atanh_rho: out.push_back("rho"); break;
            case Coord::log_omega_1: out.push_back("omega_1"); break;
            case Coord::log_omega_2: out.push_back("omega_2"); break;
            case Coord::asinh_alpha_1: out.push_back("gamma1_1"); break;
            case Coord::asinh_alpha_2: out.push_back("gamma1_2"); break;
            case Coord::logit_phi: out.push_back("phi"); break;
        }
    }
    return out;
}

NaturalHypers HyperLayout::to_natural(const Eigen::VectorXd& u) const {
    if (u.size() != dim()) throw ValidationError("HyperLayout: wrong coordinate count");
    NaturalHypers h;
    h.phi = spec_.fixed_phi.value_or(0.5);
    for (int i = 0; i < dim(); ++i) {
        const double v = u(i);
        switch (coords_[i]) {
            case Coord::log_sigma2_1: h.sigma2[0] = std::exp(v); break;
            case Coord::log_sigma2_2: h.sigma2[1] = std::exp(v); break;
            case Coord::atanh_rho: h.rho = std::tanh(v); break;
            case Coord::log_omega_1: h.omega[0] = std::exp(v); break;
            case Coord::log_omega_2: h.omega[1] = std::exp(v); break;
            case Coord::asinh_alpha_1: h.alpha[0] = std::sinh(v); break;
            case Coord::asinh_alpha_2: h.alpha[1] = std::sinh(v); break;
            case Coord::logit_phi: h.phi = 1.0 / (1.0 + std::exp(-v)); break;
        }
    }
    return h;
}

double HyperLayout::natural_of(Coord c, double u) const {
    switch (c) {
        case Coord::log_sigma2_1:
        case Coord::log_sigma2_2:
        case Coord::log_omega_1:
        case Coord::log_omega_2: return std::exp(u);
        case Coord::atanh_rho: return std::tanh(u);
        case Coord::asinh_alpha_1:
        case Coord::asinh_alpha_2: return gamma1_of_alpha(std::sinh(u));
        case Coord::logit_phi: return 1.0 / (1.0 + std::exp(-u));
    }
    return u;
}

namespace {

// log Wishart_2(Lambda; I, df) with E[Lambda] = df * I.
double log_wishart2(const Eigen::Matrix2d& Lambda, int df) {
    const double logdet = std::log(Lambda.determinant());
    const double half_df = 0.5 * df;
    const double log_gamma2 = 0.5 * std::log(std::numbers::pi) + std::lgamma(half_df) +
                              std::lgamma(half_df - 0.5);
    return 0.5 * (df - 3.0) * logdet - 0.5 * Lambda.trace() - df * std::numbers::ln2 -
           log_gamma2;
}

// Gamma(shape, rate) prior on 1/omega, internal coordinate v = log omega.
double log_omega_prior(double v, double shape, double rate) {
    return shape * std::log(rate) - std::lgamma(shape) - shape * v - rate * std::exp(-v);
}

}  // namespace

double HyperLayout::log_prior(const Eigen::VectorXd& u) const {
    if (u.size() != dim()) throw ValidationError("HyperLayout: wrong coordinate count");
    const NaturalHypers h = to_natural(u);
    double lp = 0.0;

    if (spec_.family == LatentFamily::icar || spec_.family == LatentFamily::pcar) {
        // Wishart on Lambda plus the Jacobian of
        // (log s1, log s2, atanh r) -> Lambda = Sigma^{-1}:
        //   log|J| = -1.5 (log s1 + log s2) - 2 log(1 - r^2).
        const Eigen::Matrix2d Lambda = h.lambda(true);
        if (Lambda.determinant() <= 0.0) return kNegInf;
        const int i1 = index_of(Coord::log_sigma2_1);
        const int i2 = index_of(Coord::log_sigma2_2);
        const int ir = index_of(Coord::atanh_rho);
        const double r2 = h.rho * h.rho;
        lp += log_wishart2(Lambda, wishart_df_);
        lp += -1.5 * (u(i1) + u(i2)) - 2.0 * std::log1p(-r2);
        (void)ir;
    } else if (spec_.family == LatentFamily::iid || spec_.family == LatentFamily::indep_icar) {
        // Improper flat prior on the standard deviation, bounded below.
        for (Coord c : {Coord::log_sigma2_1, Coord::log_sigma2_2}) {
            const double v = u(index_of(c));
            const double sigma = std::exp(0.5 * v);
            if (sigma < spec_.priors.sigma_lower) return kNegInf;
            lp += 0.5 * v - std::numbers::ln2;  // d sigma / d log sigma^2
        }
    }

    lp += log_omega_prior(u(index_of(Coord::log_omega_1)), spec_.priors.omega_gamma_shape,
                          spec_.priors.omega_gamma_rate);
    lp += log_omega_prior(u(index_of(Coord::log_omega_2)), spec_.priors.omega_gamma_shape,
                          spec_.priors.omega_gamma_rate);

    for (Coord c : {Coord::asinh_alpha_1, Coord::asinh_alpha_2}) {
        const int i = index_of(c);
        if (i < 0) continue;
        const double alpha = std::sinh(u(i));
        const double lpd = pc_prior_cached(spec_.priors.pc_alpha_lambda).log_density(alpha);
        if (!std::isfinite(lpd)) return kNegInf;
        lp += lpd + std::log(std::cosh(u(i)));
    }

    const int iphi = index_of(Coord::logit_phi);
    if (iphi >= 0) {
        // Uniform(0,1) on phi; Jacobian of the logistic map.
        const double phi = h.phi;
        lp += std::log(phi) + std::log1p(-phi);
    }
    return lp;
}

Eigen::VectorXd HyperLayout::initial_point(const InitHints& hints) const {
    Eigen::VectorXd u = Eigen::VectorXd::Zero(dim());
    for (int i = 0; i < dim(); ++i) {
        switch (coords_[i]) {
            case Coord::log_sigma2_1: u(i) = 0.0; break;  // scaled structure: unit variance
            case Coord::log_sigma2_2: u(i) = 0.0; break;
            case Coord::atanh_rho: u(i) = 0.0; break;
            case Coord::log_omega_1: u(i) = std::log(std::max(hints.var_y1 / 2.0, 1e-4)); break;
            case Coord::log_omega_2: u(i) = std::log(std::max(hints.var_y2 / 2.0, 1e-4)); break;
            case Coord::asinh_alpha_1:
            case Coord::asinh_alpha_2: {
                // Moment-matched start: sample skewness -> alpha. Avoids the
                // PC-prior density zero at alpha = 0.
                double g = std::clamp(hints.skewness_y2, -0.9, 0.9);
                if (std::abs(g) < 0.05) g = std::copysign(0.05, g == 0.0 ? -1.0 : g);
                u(i) = std::asinh(alpha_of_gamma1(g));
                break;
            }
            case Coord::logit_phi: u(i) = std::log(0.9 / 0.1); break;  // phi = 0.9
        }
    }
    return u;
}

// ---------------------------------------------------------------------------
// AssembledModel

Eigen::MatrixXd AssembledModel::z_structure(const NaturalHypers& h) const {
    if (spec.family == LatentFamily::pcar) {
        Eigen::MatrixXd S(graph.degrees.asDiagonal());
        S -= h.phi * graph.W;
        return S;
    }
    return structure_raw;
}

Eigen::MatrixXd AssembledModel::z_precision(const NaturalHypers& h) const {
    const Eigen::Matrix2d Lambda =
        h.lambda(spec.family == LatentFamily::icar || spec.family == LatentFamily::pcar);
    return kronecker(Lambda, z_structure(h));
}

double AssembledModel::z_logdet_constrained(const NaturalHypers& h,
                                            const Eigen::MatrixXd& Qz) const {
    const Eigen::Matrix2d Lambda =
        h.lambda(spec.family == LatentFamily::icar || spec.family == LatentFamily::pcar);
    const double logdet_lambda = std::log(Lambda.determinant());

    if (constraints.A.rows() == 0) {
        // Proper prior, no constraints: logdet kron(Lambda, S).
        double logdet_S = structure_logdet_nonnull;
        if (spec.family == LatentFamily::pcar) {
            Eigen::LLT<Eigen::MatrixXd> llt(z_structure(h));
            if (llt.info() != Eigen::Success)
                throw NumericalError("pcar structure not positive definite");
            logdet_S = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
        }
        return n * logdet_lambda + k * logdet_S;
    }
    if (fast_icar_logdet) {
        // Sum-to-zero kernel: value equals (n - G) log|Lambda| + k sum log
        // of the nonzero structure eigenvalues, any orthonormal basis.
        return (n - G) * logdet_lambda + structure_logdet_nonnull * k;
    }
    const Eigen::MatrixXd M2 = Z2.transpose() * Qz * Z2;
    Eigen::LLT<Eigen::MatrixXd> llt(M2);
    if (llt.info() != Eigen::Success)
        throw NumericalError("constrained latent precision not positive definite");
    return 2.0 * llt.matrixLLT().diagonal().array().log().sum();
}

Eigen::VectorXd AssembledModel::z_of(const Eigen::VectorXd& theta) const {
    Eigen::VectorXd z(static_cast<Eigen::Index>(k) * n);
    for (int kk = 0; kk < k; ++kk)
        z.segment(static_cast<Eigen::Index>(kk) * n, n) =
            theta.segment(static_cast<Eigen::Index>(kk) * M_half + off_z_half, n);
    return z;
}

std::vector<std::string> AssembledModel::fixed_effect_names() const {
    std::vector<std::string> names;
    if (n_intercepts == 1) {
        names.push_back("intercept");
    } else {
        for (int c = 0; c < n_intercepts; ++c) names.push_back("intercept_c" + std::to_string(c));
    }
    for (const auto& nm : covariate_names) names.push_back(nm);
    return names;
}

HyperLayout::InitHints AssembledModel::init_hints() const {
    HyperLayout::InitHints hints;
    auto var_of = [](const Eigen::VectorXd& v, const std::vector<bool>& obs) {
        RunningMoments m;
        for (Eigen::Index i = 0; i < v.size(); ++i)
            if (obs[i]) m.add(v(i));
        return m.count() > 1 ? m.variance() : 1.0;
    };
    hints.var_y1 = var_of(y[0], observed[0]);
    hints.var_y2 = var_of(y[1], observed[1]);
    std::vector<double> y2v;
    for (Eigen::Index i = 0; i < y[1].size(); ++i)
        if (observed[1][i]) y2v.push_back(y[1](i));
    hints.skewness_y2 = y2v.size() > 2 ? sample_skewness(y2v) : 0.0;
    return hints;
}

AssembledModel assemble_model(const ModelSpec& spec, const AreaGraph& graph, const LevelMap& map,
                              const Eigen::MatrixXd& X_raw,
                              const std::vector<std::string>& covariate_names,
                              const Eigen::VectorXd& y1, const Eigen::VectorXd& y2) {
    spec.validate();
    if (map.n != graph.n) throw ValidationError("assemble_model: map/graph area count mismatch");
    if (X_raw.rows() != map.N || y1.size() != map.N || y2.size() != map.N)
        throw ValidationError("assemble_model: row count mismatch");

    AssembledModel m;
    m.spec = spec;
    m.graph = graph;
    m.map = map;
    m.hyper = HyperLayout::make(spec);
    m.n = graph.n;
    m.N = map.N;
    m.G = graph.G;
    m.p = static_cast<int>(X_raw.cols());
    m.covariate_names = covariate_names;
    if (m.covariate_names.empty())
        for (int j = 0; j < m.p; ++j) m.covariate_names.push_back("x" + std::to_string(j));

    m.y[0] = y1;
    m.y[1] = y2;
    for (int kk = 0; kk < 2; ++kk) {
        m.observed[kk].resize(m.N);
        for (int h = 0; h < m.N; ++h) {
            m.observed[kk][h] = std::isfinite(m.y[kk](h));
            if (m.observed[kk][h]) ++m.n_observed_total;
        }
    }

    // Deconfound the covariates if requested.
    m.X = X_raw;
    if (spec.confounding == Confounding::spatial_plus) {
        spec.pattern.validate(graph);
        const CovariateSet cov = aggregate(X_raw, m.covariate_names, map);
        const ComponentEigen eig = eigendecompose(graph);
        const DeconfoundedDesign dd =
            deconfounded_design(cov, eig, spec.pattern, map, spec.rescale_deconfounded);
        m.X = dd.X;
        for (int c : dd.unscalable_columns) m.deconfound_rescale_skipped.push_back(c);
    }

    // Layout.
    m.n_intercepts = spec.per_component_intercepts() ? m.G : 1;
    const bool has_z = spec.has_z();
    m.off_z_half = m.n_intercepts + m.p;
    m.M_half = m.off_z_half + (has_z ? m.n : 0);
    m.M = 2 * m.M_half;
    m.M_fixed = 2 * (m.n_intercepts + m.p);

    // Design block [xi C | X | xi].
    m.B_half = Eigen::MatrixXd::Zero(m.N, m.M_half);
    for (int h = 0; h < m.N; ++h) {
        const int area = map.area_of[h];
        if (m.n_intercepts == 1)
            m.B_half(h, 0) = 1.0;
        else
            m.B_half(h, map.component_of[area]) = 1.0;
        m.B_half.block(h, m.n_intercepts, 1, m.p) = m.X.row(h);
        if (has_z) m.B_half(h, m.off_z_half + area) = 1.0;
    }
    m.BtB = m.B_half.transpose() * m.B_half;

    // Fixed-effect priors.
    m.prior_mean = Eigen::VectorXd::Zero(m.M);
    m.fixed_prior_prec = Eigen::VectorXd::Zero(m.M);
    for (int kk = 0; kk < 2; ++kk) {
        const int base = kk * m.M_half;
        for (int c = 0; c < m.n_intercepts; ++c) {
            m.prior_mean(base + c) = spec.priors.beta_c_mean;
            m.fixed_prior_prec(base + c) = 1.0 / spec.priors.beta_c_variance;
        }
        for (int j = 0; j < m.p; ++j)
            m.fixed_prior_prec(base + m.n_intercepts + j) = 1.0 / spec.priors.beta_variance;
    }

    // Latent structure.
    if (has_z) {
        switch (spec.family) {
            case LatentFamily::iid:
                m.structure_raw = Eigen::MatrixXd::Identity(m.n, m.n);
                m.structure_logdet_nonnull = 0.0;
                break;
            case LatentFamily::indep_icar:
            case LatentFamily::icar: {
                if (spec.scaled_structure) {
                    m.scaled = scale_structure(graph);
                    m.structure_raw = m.scaled.R;
                } else {
                    m.structure_raw = graph.R;
                }
                break;
            }
            case LatentFamily::pcar:
                m.structure_raw = graph.R;  // rebuilt per phi in z_structure
                break;
            case LatentFamily::none: break;
        }

        // Constraints.
        const bool intrinsic =
            spec.family == LatentFamily::icar || spec.family == LatentFamily::indep_icar;
        if (spec.confounding == Confounding::rsr) {
            Eigen::MatrixXd X_tot(m.N, m.n_intercepts + m.p);
            X_tot.leftCols(m.n_intercepts) = m.B_half.leftCols(m.n_intercepts);
            X_tot.rightCols(m.p) = m.X;
            m.constraints = build_rsr_constraints(graph, map, X_tot, 2);
        } else if (intrinsic || (spec.family == LatentFamily::pcar && spec.force_sum_to_zero)) {
            m.constraints = build_sum_to_zero_constraints(graph, 2);
        } else {
            m.constraints.A = Eigen::MatrixXd::Zero(0, 2 * m.n);
            m.constraints.k = 2;
        }

        m.Z2 = kernel_basis(m.constraints.A, 2 * m.n);
        m.fast_icar_logdet =
            intrinsic && m.constraints.kind == ConstraintSet::Kind::sum_to_zero &&
            m.constraints.A.rows() > 0;

        if (spec.family != LatentFamily::iid && spec.family != LatentFamily::pcar) {
            // Cache sum of log nonzero eigenvalues of the structure.
            Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m.structure_raw);
            const Eigen::VectorXd ev = es.eigenvalues();
            const double cutoff = 1e-9 * ev(ev.size() - 1);
            double acc = 0.0;
            for (Eigen::Index i = 0; i < ev.size(); ++i)
                if (ev(i) > cutoff) acc += std::log(ev(i));
            m.structure_logdet_nonnull = acc;
        }

        // Embed A over theta.
        const auto mrows = m.constraints.A.rows();
        m.A_theta = Eigen::MatrixXd::Zero(mrows, m.M);
        for (int kk = 0; kk < 2; ++kk)
            m.A_theta.block(0, kk * m.M_half + m.off_z_half, mrows, m.n) =
                m.constraints.A.block(0, static_cast<Eigen::Index>(kk) * m.n, mrows, m.n);

        // Kernel basis over theta: identity on fixed coords, Z2 on z coords.
        const auto zdim = m.Z2.cols();
        m.Ztilde = Eigen::MatrixXd::Zero(m.M, m.M_fixed + zdim);
        int col = 0;
        for (int kk = 0; kk < 2; ++kk)
            for (int j = 0; j < m.n_intercepts + m.p; ++j)
                m.Ztilde(kk * m.M_half + j, col++) = 1.0;
        for (Eigen::Index jz = 0; jz < zdim; ++jz, ++col)
            for (int kk = 0; kk < 2; ++kk)
                for (int i = 0; i < m.n; ++i)
                    m.Ztilde(kk * m.M_half + m.off_z_half + i, col) =
                        m.Z2(static_cast<Eigen::Index>(kk) * m.n + i, jz);
    } else {
        m.constraints.A = Eigen::MatrixXd::Zero(0, 0);
        m.A_theta = Eigen::MatrixXd::Zero(0, m.M);
        m.Z2 = Eigen::MatrixXd::Zero(0, 0);
        m.Ztilde = Eigen::MatrixXd::Identity(m.M, m.M);
    }

    return m;
}

Eigen::VectorXd loglik_observed(const AssembledModel& m, const Eigen::VectorXd& theta,
                                const NaturalHypers& h) {
    Eigen::VectorXd out(m.n_observed_total);
    Eigen::Index pos = 0;
    for (int kk = 0; kk < 2; ++kk) {
        const Eigen::VectorXd eta = m.eta(theta, kk);
        if (m.spec.likelihoods[kk] == OutcomeLikelihood::gaussian) {
            const double log_norm = -0.5 * std::log(h.omega[kk]) - 0.5 * kLog2Pi;
            for (int i = 0; i < m.N; ++i) {
                if (!m.observed[kk][i]) continue;
                const double r = m.y[kk](i) - eta(i);
                out(pos++) = log_norm - 0.5 * r * r / h.omega[kk];
            }
        } else {
            const SkewNormal sn = sn_standardize(h.omega[kk], h.alpha[kk]);
            for (int i = 0; i < m.N; ++i) {
                if (!m.observed[kk][i]) continue;
                out(pos++) = sn_logpdf(m.y[kk](i) - eta(i), sn);
            }
        }
    }
    return out;
}

}  // namespace bicar
