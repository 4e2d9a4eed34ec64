#include <benchmark/benchmark.h>

#include "bicar/deconfound.hpp"
#include "bicar/inference.hpp"
#include "bicar/mcmc.hpp"
#include "bicar/simulate.hpp"

using namespace bicar;

namespace {

Scenario bench_scenario(const std::string& graph, int obs_per_area) {
    Scenario sc;
    sc.graph_spec = graph;
    sc.obs_per_area = obs_per_area;
    sc.n_covariates = 4;
    sc.beta = Eigen::VectorXd::Zero(8);
    sc.beta(0) = 2.0;
    sc.beta(5) = -1.0;
    const AreaGraph g = graph_from_spec(graph);
    sc.beta_c = Eigen::VectorXd::Constant(2 * g.G, 185.0);
    sc.truth.sigma2 = {20.0, 15.0};
    sc.truth.rho = 0.9;
    sc.truth.omega = {110.0, 132.0};
    sc.truth.alpha = {0.0, -4.0};
    sc.seed = 9;
    sc.seed_set = true;
    return sc;
}

void BM_eigendecompose(benchmark::State& state) {
    const AreaGraph g = make_lattice(static_cast<int>(state.range(0)), 10);
    for (auto _ : state) benchmark::DoNotOptimize(eigendecompose(g));
}
BENCHMARK(BM_eigendecompose)->Arg(5)->Arg(10)->Arg(20);

void BM_moran(benchmark::State& state) {
    const AreaGraph g = make_lattice(10, 10);
    Rng rng(3);
    Eigen::VectorXd x(g.n);
    for (int i = 0; i < g.n; ++i) x(i) = rng.normal();
    for (auto _ : state) benchmark::DoNotOptimize(moran_i(x, g));
}
BENCHMARK(BM_moran);

void BM_latent_approx(benchmark::State& state) {
    const Scenario sc = bench_scenario("lattice:5x" + std::to_string(state.range(0)), 6);
    const SimulatedData sim = generate(sc);
    ModelSpec spec;
    const AssembledModel m = assemble_model(spec, sim.graph, sim.map, sim.X,
                                            sim.covariate_names, sim.y1, sim.y2);
    const NaturalHypers h = m.hyper.to_natural(m.hyper.initial_point(m.init_hints()));
    for (auto _ : state) benchmark::DoNotOptimize(latent_gaussian_approx(m, h));
}
BENCHMARK(BM_latent_approx)->Arg(4)->Arg(10);

void BM_fit_laplace(benchmark::State& state) {
    const Scenario sc = bench_scenario("lattice:4x5", 6);
    const SimulatedData sim = generate(sc);
    ModelSpec spec;
    const AssembledModel m = assemble_model(spec, sim.graph, sim.map, sim.X,
                                            sim.covariate_names, sim.y1, sim.y2);
    FitOptions opts;
    opts.criteria_draws = 500;
    for (auto _ : state) benchmark::DoNotOptimize(fit_laplace(m, opts));
}
BENCHMARK(BM_fit_laplace)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
