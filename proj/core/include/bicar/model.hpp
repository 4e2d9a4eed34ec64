#pragma once

#include <Eigen/Dense>

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "bicar/deconfound.hpp"
#include "bicar/graph.hpp"
#include "bicar/multilevel.hpp"
#include "bicar/spatial_prior.hpp"

namespace bicar {

enum class OutcomeLikelihood { gaussian, skew_normal };
enum class Confounding { base, rsr, spatial_plus };
enum class InterceptStyle { family_default, per_component, single };

std::string to_string(OutcomeLikelihood l);
std::string to_string(Confounding c);
OutcomeLikelihood likelihood_from_string(const std::string& s);
Confounding confounding_from_string(const std::string& s);

struct PriorSettings {
    double beta_variance = 1e3;
    double beta_c_mean = 180.0;  ///< score-scale intercept prior
    double beta_c_variance = 1e3;
    double omega_gamma_shape = 1e-3;  ///< Gamma prior on 1/omega
    double omega_gamma_rate = 1e-3;
    double pc_alpha_lambda = 4.0;
    double sigma_lower = 1e-6;  ///< flat-sd families: lower bound on sigma
    int wishart_df = 0;         ///< 0 = family default (2k+1 ICAR, k PCAR)
};

/// Complete model choice: per-outcome error model, latent family,
/// spatial-confounding treatment, prior constants, and assembly flags.
struct ModelSpec {
    std::array<OutcomeLikelihood, 2> likelihoods{OutcomeLikelihood::gaussian,
                                                 OutcomeLikelihood::skew_normal};
    LatentFamily family = LatentFamily::icar;
    Confounding confounding = Confounding::base;
    RemovalPattern pattern;  ///< spatial_plus only
    bool rescale_deconfounded = true;
    InterceptStyle intercepts = InterceptStyle::family_default;
    bool scaled_structure = true;      ///< icar / indep_icar
    std::optional<double> fixed_phi;   ///< pcar: pin phi instead of estimating
    bool force_sum_to_zero = false;    ///< pcar: impose the ICAR constraints
    PriorSettings priors;
    std::string label = "model";

    /// Throws ValidationError on contradictory settings (e.g. RSR together
    /// with Spatial+).
    void validate() const;
    /// Resolve family_default: constrained families need component-specific
    /// intercepts, the proper CAR uses a single per-outcome intercept.
    bool per_component_intercepts() const;
    bool has_z() const { return family != LatentFamily::none; }
    bool any_skew() const;
};

/// Hyperparameters on the natural scale. sigma2/rho parameterize the
/// INVERSE of the between-outcome precision Lambda (i.e. the covariance);
/// omega are error variances; alpha skew-normal shapes; phi the proper-CAR
/// association.
struct NaturalHypers {
    std::array<double, 2> sigma2{1.0, 1.0};
    double rho = 0.0;
    std::array<double, 2> omega{1.0, 1.0};
    std::array<double, 2> alpha{0.0, 0.0};
    double phi = 0.5;

    /// Lambda = inverse of [[s1, r sqrt(s1 s2)], [., s2]] (bivariate
    /// families) or diag(1/s1, 1/s2) (independent families).
    Eigen::Matrix2d lambda(bool correlated) const;
};

/// Map between the unconstrained internal coordinates
/// (log sigma1^2, log sigma2^2, atanh rho, log omega1, log omega2,
///  asinh alpha [, logit phi]) and the natural scale, plus the log prior
/// density in internal coordinates (Jacobians included).
class HyperLayout {
public:
    enum class Coord {
        log_sigma2_1,
        log_sigma2_2,
        atanh_rho,
        log_omega_1,
        log_omega_2,
        asinh_alpha_1,
        asinh_alpha_2,
        logit_phi,
    };

    static HyperLayout make(const ModelSpec& spec);

    int dim() const { return static_cast<int>(coords_.size()); }
    const std::vector<Coord>& coords() const { return coords_; }
    int index_of(Coord c) const;  ///< -1 if absent

    std::vector<std::string> names() const;          ///< internal coordinate names
    std::vector<std::string> natural_names() const;  ///< sigma2_1, rho, omega_1, gamma1_2, phi

    NaturalHypers to_natural(const Eigen::VectorXd& u) const;
    /// Scalar natural transform of one coordinate (monotone); the alpha
    /// coordinates report gamma1.
    double natural_of(Coord c, double u) const;

    /// Log prior density of the internal vector; -inf outside the domain.
    double log_prior(const Eigen::VectorXd& u) const;

    /// Deterministic optimizer start derived from data moments.
    struct InitHints {
        double var_y1 = 1.0;
        double var_y2 = 1.0;
        double skewness_y2 = 0.0;
    };
    Eigen::VectorXd initial_point(const InitHints& hints) const;

private:
    std::vector<Coord> coords_;
    ModelSpec spec_;
    bool correlated_ = true;
    int wishart_df_ = 5;
};

/// Everything the engine needs, precomputed once per (spec, data):
/// the per-outcome design block, fixed-effect priors, constraint system and
/// its kernel basis, the latent structure matrix, and cached spectral
/// quantities. The latent vector is laid out as two outcome halves
/// [beta_C | beta | z] so the full design is block-diagonal.
struct AssembledModel {
    ModelSpec spec;
    AreaGraph graph;
    LevelMap map;
    HyperLayout hyper;

    int k = 2;
    int n = 0, N = 0, G = 0, p = 0;
    int n_intercepts = 0;  ///< per outcome: G or 1
    int M_half = 0, M = 0, M_fixed = 0;
    int off_z_half = 0;  ///< z offset within a half

    std::vector<std::string> covariate_names;
    Eigen::MatrixXd X;       ///< covariates as fitted (deconfounded if Spatial+)
    Eigen::MatrixXd B_half;  ///< N x M_half design block, shared by outcomes
    Eigen::MatrixXd BtB;     ///< cached B_half' B_half

    std::array<Eigen::VectorXd, 2> y;           ///< NaN = missing
    std::array<std::vector<bool>, 2> observed;
    int n_observed_total = 0;

    Eigen::VectorXd prior_mean;        ///< length M; z part 0
    Eigen::VectorXd fixed_prior_prec;  ///< length M; 0 over z

    Eigen::MatrixXd structure_raw;  ///< family structure (pcar: Laplacian parts via graph)
    ScaledStructure scaled;
    ConstraintSet constraints;  ///< A over stacked z (may have 0 rows)
    Eigen::MatrixXd A_theta;    ///< constraints embedded over theta
    Eigen::MatrixXd Z2;         ///< orthonormal kernel basis of A over z
    Eigen::MatrixXd Ztilde;     ///< kernel basis of A_theta over theta
    bool fast_icar_logdet = false;
    double structure_logdet_nonnull = 0.0;  ///< sum log of nonzero structure eigenvalues

    std::vector<double> deconfound_rescale_skipped;  ///< columns left unscaled

    /// n x n structure matrix for given hypers (pcar depends on phi).
    Eigen::MatrixXd z_structure(const NaturalHypers& h) const;
    /// kron(Lambda, structure), (k n) x (k n).
    Eigen::MatrixXd z_precision(const NaturalHypers& h) const;
    /// log det of Z2' Qz Z2 (the constrained latent prior normalizer).
    double z_logdet_constrained(const NaturalHypers& h, const Eigen::MatrixXd& Qz) const;

    Eigen::VectorXd half(const Eigen::VectorXd& theta, int outcome) const {
        return theta.segment(static_cast<Eigen::Index>(outcome) * M_half, M_half);
    }
    Eigen::VectorXd eta(const Eigen::VectorXd& theta, int outcome) const {
        return B_half * half(theta, outcome);
    }
    Eigen::VectorXd z_of(const Eigen::VectorXd& theta) const;

    std::vector<std::string> fixed_effect_names() const;  ///< length M_fixed? per half
    HyperLayout::InitHints init_hints() const;
};

/// Assemble the model against data. y vectors use NaN for missing entries
/// (prediction rows); covariates must be complete.
AssembledModel assemble_model(const ModelSpec& spec, const AreaGraph& graph, const LevelMap& map,
                              const Eigen::MatrixXd& X_raw,
                              const std::vector<std::string>& covariate_names,
                              const Eigen::VectorXd& y1, const Eigen::VectorXd& y2);

/// Per-observation log-likelihood for every observed (outcome, row) pair in
/// canonical order (outcome 0 rows ascending, then outcome 1).
Eigen::VectorXd loglik_observed(const AssembledModel& m, const Eigen::VectorXd& theta,
                                const NaturalHypers& h);

}  // namespace bicar
