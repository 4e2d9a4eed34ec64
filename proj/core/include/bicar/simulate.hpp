#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>

#include "bicar/model.hpp"
#include "bicar/rng.hpp"

namespace bicar {

/// Generative scenario for synthetic datasets: graph, per-area observation
/// count, true effects and hyperparameters, optional eigenvector confounding
/// injected into one covariate. The seed is mandatory (datasets are
/// byte-reproducible).
struct Scenario {
    std::string graph_spec = "lattice:4x5";  ///< "lattice:RxC" | "path:N" | "file:PATH", '+'-joined
    int obs_per_area = 8;
    int n_covariates = 4;
    Eigen::VectorXd beta;    ///< length 2p, outcome-major
    Eigen::VectorXd beta_c;  ///< length 2G
    NaturalHypers truth;
    LatentFamily family = LatentFamily::icar;
    std::array<OutcomeLikelihood, 2> likelihoods{OutcomeLikelihood::gaussian,
                                                 OutcomeLikelihood::skew_normal};
    int confound_covariate = -1;  ///< -1 = none
    double confound_strength = 0.0;
    int confound_component = 0;
    double missing_fraction = 0.0;
    std::uint64_t seed = 0;
    bool seed_set = false;

    void validate(const AreaGraph& g) const;
};

struct SimulatedData {
    AreaGraph graph;
    LevelMap map;
    Eigen::MatrixXd X;
    std::vector<std::string> covariate_names;
    Eigen::VectorXd y1, y2;   ///< NaN on prediction rows
    Eigen::VectorXd z_true;   ///< length 2n (zero when family = none)
    Eigen::VectorXd eps1, eps2;
};

/// Draw from the intrinsic bivariate prior with precision
/// kron(Lambda, structure) via the spectral method: independent normals on
/// the nonzero-eigenvalue eigenvectors (variance 1/eigenvalue), mixed across
/// outcomes by the Cholesky factor of Lambda^{-1}. Component sums are zero
/// exactly by construction. Returns the stacked (z1, z2) vector.
Eigen::VectorXd sample_constrained_icar(const AreaGraph& g, const Eigen::Matrix2d& Lambda,
                                        Rng& rng, bool scaled = true);

AreaGraph graph_from_spec(const std::string& spec);

SimulatedData generate(const Scenario& scenario);

/// Key=value scenario file ('#' comments allowed).
Scenario read_scenario(std::istream& in);
Scenario read_scenario_file(const std::string& path);
void write_scenario(std::ostream& out, const Scenario& s);

}  // namespace bicar
