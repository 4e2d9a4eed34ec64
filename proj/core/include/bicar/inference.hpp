#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "bicar/criteria.hpp"
#include "bicar/model.hpp"
#include "bicar/rng.hpp"

namespace bicar {

struct NewtonOptions {
    int max_iterations = 50;
    double gradient_tol = 1e-8;
    int max_halvings = 30;
};

/// Gaussian approximation of the latent field at its conditional mode under
/// the linear constraints, for one hyperparameter point. Newton iterations
/// expand non-quadratic (skew-normal) likelihood terms to second order at
/// the running point; constraints are imposed at each step and on the final
/// moments by conditioning by kriging:
///   x* = x - H^{-1} A' (A H^{-1} A')^{-1} A x.
struct GaussianApprox {
    Eigen::VectorXd mode;  ///< constrained
    Eigen::MatrixXd H;     ///< precision of the quadratic at the mode
    Eigen::LLT<Eigen::MatrixXd> Hllt;
    Eigen::MatrixXd krig_S;             ///< H^{-1} A'
    Eigen::LLT<Eigen::MatrixXd> krig_K; ///< factor of A H^{-1} A'
    Eigen::VectorXd marginal_sd;        ///< constrained marginal sds
    double log_marginal = 0.0;  ///< Laplace log pi(y | psi), exact constants
    double loglik_at_mode = 0.0;
    int iterations = 0;
    bool converged = false;
    double gradient_norm = 0.0;
};

GaussianApprox latent_gaussian_approx(const AssembledModel& m, const NaturalHypers& h,
                                      const NewtonOptions& opts = {},
                                      const Eigen::VectorXd* warm_start = nullptr);

/// Exact draw from the constrained Gaussian approximation.
Eigen::VectorXd sample_constrained(const AssembledModel& m, const GaussianApprox& ga, Rng& rng);

struct ExploreOptions {
    int max_optimizer_iterations = 80;
    double fd_step = 1e-4;
    int grid_half_points = 2;    ///< axis offsets up to +/- this many steps
    double grid_step = 1.0;      ///< in units of mode-Hessian sd
    double prune_logdrop = 6.0;
    int threads = 1;
};

struct PsiGridPoint {
    Eigen::VectorXd u;
    NaturalHypers natural;
    double log_post = 0.0;  ///< unnormalized log posterior of psi
    double weight = 0.0;
    GaussianApprox approx;
    int axis = -1;  ///< -1 = center
    int offset = 0;
};

/// Mode search (BFGS with central finite differences from a deterministic,
/// data-derived start) followed by an axis-aligned star grid with
/// Hessian-scaled steps, pruned at a fixed log-weight drop.
struct PsiGrid {
    Eigen::VectorXd mode_u;
    Eigen::VectorXd step_sd;
    std::vector<PsiGridPoint> points;  ///< center first, then axis-major
    int optimizer_iterations = 0;
    bool optimizer_converged = true;
    bool fallback_grid = false;
    int pruned_points = 0;
    std::vector<std::string> flags;
};

PsiGrid hyper_posterior_explore(const AssembledModel& m, const ExploreOptions& opts = {},
                                const NewtonOptions& newton = {});

struct FitOptions {
    int criteria_draws = 4000;
    std::uint64_t seed = 1;
    bool bit_reproducible = false;
    ExploreOptions explore;
    NewtonOptions newton;
};

struct SummaryRow {
    std::string name;
    std::string outcome;  ///< "math" / "ital"
    double mean = 0, sd = 0, q05 = 0, q50 = 0, q95 = 0;
};

struct HyperSummaryRow {
    std::string name;  ///< natural scale; alpha reported as gamma1
    double mean = 0, sd = 0, lb = 0, median = 0, ub = 0;
};

struct ConvergenceReport {
    bool converged = true;
    std::vector<std::string> flags;
    double max_constraint_residual = 0.0;
    int grid_points = 0;
    int pruned_points = 0;
    int optimizer_iterations = 0;
    double rhat_max = 0.0;  ///< MCMC only
    double ess_min = 0.0;   ///< MCMC only
    double accept_theta = 0.0;
};

struct PosteriorFit {
    std::string label;
    std::string engine;  ///< "laplace" or "mcmc"
    std::uint64_t seed = 0;
    std::vector<SummaryRow> fixed_effects;
    std::vector<SummaryRow> area_effects;
    std::vector<HyperSummaryRow> hypers;
    Eigen::VectorXd yhat1, yhat2;  ///< predictive means, all rows
    CriteriaBundle criteria;
    ConvergenceReport convergence;
    std::vector<double> grid_weights;
    Eigen::VectorXd theta_mean, theta_sd;
    NaturalHypers hyper_point;  ///< plug-in point used for DIC
};

/// Posterior marginals as Gaussian mixtures over the grid, predictive means,
/// and criteria from seeded Monte-Carlo draws of the mixture.
PosteriorFit marginals_and_predictions(const AssembledModel& m, const PsiGrid& grid,
                                       const FitOptions& opts);

/// hyper_posterior_explore + marginals_and_predictions.
PosteriorFit fit_laplace(const AssembledModel& m, const FitOptions& opts = {});

/// WAIC-guided removal-pattern search: coordinate descent over
/// (covariate, component) removal counts within per-component caps, each
/// candidate scored by a full Spatial+ fit. Deterministic; ties broken by
/// (WAIC, K) lexicographically. `budget` caps the number of fits.
struct WaicSearchOptions {
    std::vector<int> caps;
    int budget = 200;
    bool exhaustive = false;
    FitOptions fit;
};

struct WaicSearchResult {
    RemovalPattern pattern;
    double waic = 0.0;
    int evaluations = 0;
    bool budget_exhausted = false;
};

WaicSearchResult search_waic_optimal(const ModelSpec& base_spec, const AreaGraph& g,
                                     const LevelMap& map, const Eigen::MatrixXd& X,
                                     const std::vector<std::string>& names,
                                     const Eigen::VectorXd& y1, const Eigen::VectorXd& y2,
                                     const WaicSearchOptions& opts);

}  // namespace bicar
