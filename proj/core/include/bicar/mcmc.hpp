#pragma once

#include "bicar/inference.hpp"

namespace bicar {

/// Metropolis-within-Gibbs validation sampler.
///  - theta block: independence proposal from the constrained Gaussian
///    approximation at the current hyperparameters (exact full conditional
///    when every outcome is Gaussian, Metropolis-Hastings corrected when a
///    skew-normal outcome makes it non-Gaussian);
///  - hyperparameters: per-coordinate random walks on the internal scale,
///    step sizes adapted toward `target_accept` during warmup and frozen
///    afterwards.
/// Reproducible for a fixed seed; reports split-Rhat and effective sample
/// sizes for the fixed effects and hyperparameters.
struct McmcOptions {
    int iterations = 4000;  ///< kept draws (after warmup, before thinning)
    int warmup = 1000;
    int thin = 1;
    std::uint64_t seed = 2;
    double target_accept = 0.44;
    double rhat_limit = 1.05;  ///< above this the fit is flagged unconverged
    NewtonOptions newton;
};

PosteriorFit mcmc_oracle(const AssembledModel& m, const McmcOptions& opts = {});

/// Split-Rhat (two halves) of a scalar chain.
double split_rhat(const std::vector<double>& chain);

/// Effective sample size via Geyer's initial positive sequence.
double effective_sample_size(const std::vector<double>& chain);

}  // namespace bicar
