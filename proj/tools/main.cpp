// bicar: Bayesian multilevel bivariate areal regression.
//
// Subcommands: simulate, validate, moran, deconfound, fit, compare.
// Exit codes: 0 ok, 2 validation problem, 3 numerical failure,
// 4 fit completed but flagged unconverged.

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "bicar/io.hpp"
#include "bicar/util.hpp"
#include "bicar/mcmc.hpp"

namespace fs = std::filesystem;
using namespace bicar;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitValidation = 2;
constexpr int kExitNumerical = 3;
constexpr int kExitUnconverged = 4;

void write_text_file(const fs::path& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) throw bicar::ValidationError("cannot write " + path.string());
    out << text;
}

struct DataArgs {
    std::string observations;
    std::string adjacency;

    void attach(CLI::App* cmd) {
        cmd->add_option("--data", observations, "observation CSV")->required();
        cmd->add_option("--adjacency", adjacency, "adjacency file")->required();
    }
};

struct LoadedData {
    Dataset dataset;
    AreaGraph graph;
    LevelMap map;
    std::string hash;
};

LoadedData load(const DataArgs& args, bool strict) {
    LoadedData d;
    d.dataset = read_observations_file(args.observations);
    d.graph = read_adjacency_file(args.adjacency);
    if (strict) {
        const ValidationReport rep = validate_dataset(d.dataset, d.graph);
        if (!rep.ok()) {
            for (const auto& f : rep.findings)
                if (f.severity == Finding::Severity::error)
                    std::cerr << "error: " << f.message
                              << (f.row > 0 ? " (row " + std::to_string(f.row) + ")" : "")
                              << "\n";
            throw bicar::ValidationError("dataset validation failed");
        }
    }
    d.map = levelmap_from_dataset(d.dataset, d.graph);
    d.hash = hash_dataset(d.dataset);
    return d;
}

struct ModelArgs {
    std::string family = "icar";
    std::string confound = "base";
    std::string likelihood1 = "gaussian";
    std::string likelihood2 = "skew-normal";
    std::string intercepts = "auto";
    std::string pattern_file;
    bool no_rescale = false;
    bool unscaled_structure = false;
    double fix_phi = -1.0;
    bool force_sum_to_zero = false;
    std::string label;

    void attach(CLI::App* cmd) {
        cmd->add_option("--model", family, "latent family: null|iid|indep-icar|icar|pcar");
        cmd->add_option("--confound", confound, "confounding treatment: base|rsr|spatial-plus");
        cmd->add_option("--likelihood1", likelihood1, "y_math error model");
        cmd->add_option("--likelihood2", likelihood2, "y_ital error model");
        cmd->add_option("--intercepts", intercepts, "auto|component|single");
        cmd->add_option("--pattern", pattern_file, "removal pattern file (spatial-plus)");
        cmd->add_flag("--no-rescale", no_rescale, "keep deconfounded covariate scale");
        cmd->add_flag("--unscaled-structure", unscaled_structure,
                      "skip the per-component precision scaling");
        cmd->add_option("--fix-phi", fix_phi, "pcar: pin the association parameter");
        cmd->add_flag("--force-sum-to-zero", force_sum_to_zero,
                      "pcar: impose the intrinsic sum-to-zero constraints");
        cmd->add_option("--label", label, "model label for reports");
    }

    ModelSpec build(const LoadedData& d) const {
        ModelSpec spec;
        spec.family = latent_family_from_string(family);
        spec.confounding = confounding_from_string(confound);
        spec.likelihoods = {likelihood_from_string(likelihood1),
                            likelihood_from_string(likelihood2)};
        if (intercepts == "component")
            spec.intercepts = InterceptStyle::per_component;
        else if (intercepts == "single")
            spec.intercepts = InterceptStyle::single;
        else if (intercepts != "auto")
            throw bicar::ValidationError("--intercepts must be auto|component|single");
        spec.rescale_deconfounded = !no_rescale;
        spec.scaled_structure = !unscaled_structure;
        if (fix_phi > 0.0) spec.fixed_phi = fix_phi;
        spec.force_sum_to_zero = force_sum_to_zero;
        if (spec.confounding == Confounding::spatial_plus) {
            if (pattern_file.empty())
                throw bicar::ValidationError("spatial-plus requires --pattern");
            spec.pattern = align_pattern(read_pattern_file(pattern_file, d.graph.G),
                                         d.dataset.covariate_names, d.graph.G);
        }
        spec.label = !label.empty()
                         ? label
                         : to_string(spec.family) + "/" + to_string(spec.confounding);
        spec.validate();
        return spec;
    }
};

std::vector<int> parse_caps(const std::string& s, const AreaGraph& g) {
    if (s.empty()) {
        std::vector<int> caps;
        for (int size : g.component_sizes()) caps.push_back(size - 1);
        return caps;
    }
    std::vector<int> caps;
    std::stringstream ss(s);
    std::string tok;
    while (std::getline(ss, tok, ',')) caps.push_back(std::stoi(tok));
    if (static_cast<int>(caps.size()) != g.G)
        throw bicar::ValidationError("--caps needs one value per component (" + std::to_string(g.G) +
                              ")");
    return caps;
}

// ---------------------------------------------------------------------------

int cmd_simulate(const std::string& scenario_path, const std::string& outdir) {
    const Scenario sc = read_scenario_file(scenario_path);
    const SimulatedData sim = generate(sc);
    const Dataset dataset = dataset_from_simulated(sim);

    fs::create_directories(outdir);
    write_observations_file((fs::path(outdir) / "observations.csv").string(), dataset);
    write_adjacency_file((fs::path(outdir) / "adjacency.txt").string(), sim.graph);
    {
        std::ofstream out(fs::path(outdir) / "scenario.txt");
        write_scenario(out, sc);
    }
    {
        // Truth record for scoring recovery studies.
        nlohmann::json truth;
        truth["seed"] = sc.seed;
        truth["beta"] = std::vector<double>(sc.beta.data(), sc.beta.data() + sc.beta.size());
        truth["beta_c"] =
            std::vector<double>(sc.beta_c.data(), sc.beta_c.data() + sc.beta_c.size());
        truth["sigma2"] = {sc.truth.sigma2[0], sc.truth.sigma2[1]};
        truth["rho"] = sc.truth.rho;
        truth["omega"] = {sc.truth.omega[0], sc.truth.omega[1]};
        truth["alpha"] = {sc.truth.alpha[0], sc.truth.alpha[1]};
        if (sc.family == LatentFamily::pcar) truth["phi"] = sc.truth.phi;
        truth["z"] =
            std::vector<double>(sim.z_true.data(), sim.z_true.data() + sim.z_true.size());
        truth["dataset_hash"] = hash_dataset(dataset);
        write_text_file(fs::path(outdir) / "truth.json", truth.dump(2) + "\n");
    }
    std::cout << "simulate: wrote " << dataset.N() << " observations over " << sim.graph.n
              << " areas (" << sim.graph.G << " components) to " << outdir << "\n";
    return kExitOk;
}

int cmd_validate(const DataArgs& data) {
    const Dataset dataset = read_observations_file(data.observations);
    const AreaGraph graph = read_adjacency_file(data.adjacency);
    const ValidationReport rep = validate_dataset(dataset, graph);

    std::cout << "observations: " << rep.n_obs << "\nareas: " << rep.n_areas
              << "\ncomponents: " << rep.G << " (sizes:";
    for (int s : rep.component_sizes) std::cout << " " << s;
    std::cout << ")\n";
    for (const auto& f : rep.findings) {
        std::cout << (f.severity == Finding::Severity::error ? "error: " : "warning: ")
                  << f.message;
        if (f.row > 0) std::cout << " (row " << f.row << ")";
        std::cout << "\n";
    }
    std::cout << "findings: " << rep.n_errors << " error(s), " << rep.n_warnings
              << " warning(s)\n";
    return rep.ok() ? kExitOk : kExitValidation;
}

int cmd_moran(const DataArgs& data, const std::string& outfile) {
    const LoadedData d = load(data, /*strict=*/false);
    const CovariateSet cov = aggregate(d.dataset.X, d.dataset.covariate_names, d.map);

    std::ostringstream table;
    table << "covariate,I,E0,V0,I_std\n";
    std::cout << "covariate            I        I_std\n";
    for (Eigen::Index j = 0; j < cov.Xbar.cols(); ++j) {
        const MoranResult r = moran_i(cov.Xbar.col(j), d.graph);
        table << cov.names[j] << "," << format_double(r.I) << "," << format_double(r.E0) << ","
              << format_double(r.V0) << "," << format_double(r.I_std) << "\n";
        std::cout << cov.names[j];
        for (std::size_t pad = cov.names[j].size(); pad < 18; ++pad) std::cout << ' ';
        std::cout << "  " << r.I << "  " << r.I_std << "\n";
    }
    if (!outfile.empty()) write_text_file(outfile, table.str());
    return kExitOk;
}

struct DeconfoundArgs {
    std::string search = "moran";  // moran | waic
    double threshold = 1.645;
    std::string caps;
    int budget = 200;
    bool no_rescale = false;
    std::string pattern_out;
    std::string design_out;
};

int cmd_deconfound(const DataArgs& data, const DeconfoundArgs& args, const ModelArgs& model,
                   std::uint64_t seed) {
    const LoadedData d = load(data, /*strict=*/true);
    const CovariateSet cov = aggregate(d.dataset.X, d.dataset.covariate_names, d.map);
    const ComponentEigen eig = eigendecompose(d.graph);
    const std::vector<int> caps = parse_caps(args.caps, d.graph);

    RemovalPattern pattern;
    if (args.search == "moran") {
        const MoranSearchResult res =
            search_moran_minimal(cov, d.graph, eig, d.map, caps, args.threshold);
        if (res.capped)
            std::cerr << "warning: threshold not reached within caps; pattern capped\n";
        pattern = res.pattern;
    } else if (args.search == "waic") {
        WaicSearchOptions opts;
        opts.caps = caps;
        opts.budget = args.budget;
        opts.fit.seed = seed;
        opts.fit.criteria_draws = 1000;
        ModelSpec spec = model.build(d);
        spec.confounding = Confounding::base;  // template; search applies spatial-plus
        const WaicSearchResult res = search_waic_optimal(
            spec, d.graph, d.map, d.dataset.X, d.dataset.covariate_names, d.dataset.y1,
            d.dataset.y2, opts);
        if (res.budget_exhausted)
            std::cerr << "warning: evaluation budget exhausted; best-so-far pattern returned\n";
        std::cout << "waic search: " << res.evaluations << " fits, best WAIC "
                  << format_double(res.waic) << "\n";
        pattern = res.pattern;
    } else {
        throw bicar::ValidationError("--search must be moran or waic");
    }

    std::ostringstream pat_text;
    write_pattern(pat_text, pattern);
    std::cout << pat_text.str();
    if (!args.pattern_out.empty()) write_text_file(args.pattern_out, pat_text.str());

    if (!args.design_out.empty()) {
        const DeconfoundedDesign design =
            deconfounded_design(cov, eig, pattern, d.map, !args.no_rescale);
        Dataset out = d.dataset;
        out.X = design.X;
        write_observations_file(args.design_out, out);
        for (int c : design.unscalable_columns)
            std::cerr << "warning: column " << d.dataset.covariate_names[c]
                      << " has zero deconfounded variance; left unscaled\n";
    }
    return kExitOk;
}

struct FitArgs {
    std::string outdir = "fit_out";
    int draws = 4000;
    std::uint64_t seed = 1;
    bool bit_reproducible = false;
    int threads = 1;
    bool oracle = false;
    int oracle_iters = 4000;
    int oracle_warmup = 1000;
};

int cmd_fit(const DataArgs& data, const ModelArgs& model, const FitArgs& args) {
    const auto t0 = std::chrono::steady_clock::now();
    const LoadedData d = load(data, /*strict=*/true);
    const ModelSpec spec = model.build(d);
    const AssembledModel m = assemble_model(spec, d.graph, d.map, d.dataset.X,
                                            d.dataset.covariate_names, d.dataset.y1, d.dataset.y2);

    FitOptions opts;
    opts.criteria_draws = args.draws;
    opts.seed = args.seed;
    opts.bit_reproducible = args.bit_reproducible;
    opts.explore.threads = args.bit_reproducible ? 1 : args.threads;

    const PosteriorFit fit = fit_laplace(m, opts);
    const double elapsed =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    fs::create_directories(args.outdir);
    const fs::path out(args.outdir);
    const double timing = args.bit_reproducible ? -1.0 : elapsed;
    write_text_file(out / "report.json", fit_report_json(fit, m, d.hash, timing));
    {
        std::ofstream f(out / "fixed_effects.csv");
        write_fixed_effects_csv(f, fit);
    }
    {
        std::ofstream f(out / "hyperparameters.csv");
        write_hyperparameters_csv(f, fit);
    }
    if (!fit.area_effects.empty()) {
        std::ofstream f(out / "area_effects.csv");
        write_area_effects_csv(f, fit);
    }
    {
        std::ofstream f(out / "yhat.csv");
        write_yhat_csv(f, d.dataset, fit);
    }
    {
        CriteriaRow row;
        row.label = fit.label;
        row.engine = fit.engine;
        row.dataset_hash = d.hash;
        row.neg_lpml = fit.criteria.neg_lpml;
        row.waic = fit.criteria.waic;
        row.dic = fit.criteria.dic;
        row.expected_deviance = fit.criteria.expected_deviance;
        row.p_d = fit.criteria.p_d;
        row.mse = fit.criteria.mse;
        row.timing_sec = timing;
        std::ofstream f(out / "criteria.csv");
        write_criteria_csv(f, {row});
    }
    {
        // Residual density of the skew-modelled outcome (Italian scores).
        std::vector<double> residuals;
        for (int i = 0; i < m.N; ++i)
            if (m.observed[1][i]) residuals.push_back(m.y[1](i) - fit.yhat2(i));
        if (residuals.size() >= 2) {
            std::ofstream f(out / "residual_density.csv");
            write_residual_density_csv(f, residual_kde(residuals));
        }
    }

    if (args.oracle) {
        McmcOptions mo;
        mo.iterations = args.oracle_iters;
        mo.warmup = args.oracle_warmup;
        mo.seed = args.seed + 1;
        const PosteriorFit oracle = mcmc_oracle(m, mo);
        write_text_file(out / "report_mcmc.json", fit_report_json(oracle, m, d.hash, -1.0));
        std::ofstream f(out / "engine_vs_oracle.csv");
        f << "term,outcome,engine_mean,oracle_mean,oracle_sd,delta_in_sd\n";
        for (std::size_t i = 0; i < fit.fixed_effects.size(); ++i) {
            const auto& e = fit.fixed_effects[i];
            const auto& o = oracle.fixed_effects[i];
            const double delta = o.sd > 0 ? (e.mean - o.mean) / o.sd : 0.0;
            f << e.name << "," << e.outcome << "," << format_double(e.mean) << ","
              << format_double(o.mean) << "," << format_double(o.sd) << ","
              << format_double(delta) << "\n";
        }
        if (!oracle.convergence.converged) {
            std::cerr << "oracle flagged unconverged (max split-Rhat "
                      << oracle.convergence.rhat_max << ")\n";
            return kExitUnconverged;
        }
    }

    std::cout << "fit: " << fit.label << " WAIC " << format_double(fit.criteria.waic) << " -LPML "
              << format_double(fit.criteria.neg_lpml) << " DIC "
              << format_double(fit.criteria.dic) << " MSE " << format_double(fit.criteria.mse)
              << "\n";
    if (!fit.convergence.converged) {
        std::cerr << "fit flagged unconverged; see report.json convergence flags\n";
        return kExitUnconverged;
    }
    return kExitOk;
}

int cmd_compare(const std::vector<std::string>& reports, const std::string& out_prefix) {
    if (reports.size() < 2) throw bicar::ValidationError("compare needs at least 2 reports");
    std::vector<CriteriaRow> rows;
    for (const auto& path : reports) {
        std::ifstream in(path);
        if (!in) throw bicar::ValidationError("cannot open report: " + path);
        std::stringstream ss;
        ss << in.rdbuf();
        rows.push_back(criteria_row_from_json(ss.str()));
    }
    for (const auto& r : rows)
        if (r.dataset_hash != rows.front().dataset_hash)
            throw bicar::ValidationError("refusing to compare fits of different datasets (hash " +
                                  r.dataset_hash + " vs " + rows.front().dataset_hash + ")");

    // Identical labels on identical criteria are ties; note them.
    const std::string table = render_criteria_table(rows);
    std::cout << table;
    for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t j = i + 1; j < rows.size(); ++j)
            if (rows[i].waic == rows[j].waic)
                std::cout << "note: tie on WAIC between " << rows[i].label << " and "
                          << rows[j].label << "\n";
    if (!out_prefix.empty()) {
        write_text_file(out_prefix + ".txt", table);
        std::ofstream f(out_prefix + ".csv");
        std::vector<CriteriaRow> sorted = rows;
        std::sort(sorted.begin(), sorted.end(),
                  [](const CriteriaRow& a, const CriteriaRow& b) { return a.waic < b.waic; });
        write_criteria_csv(f, sorted);
    }
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"bicar: Bayesian multilevel bivariate areal regression"};
    app.require_subcommand(1);
    app.set_config("--config", "", "read options from an INI file");

    // simulate
    auto* sim = app.add_subcommand("simulate", "generate a synthetic dataset from a scenario");
    std::string scenario_path, sim_out = "sim_out";
    sim->add_option("--scenario", scenario_path, "scenario file")->required();
    sim->add_option("--out", sim_out, "output directory");

    // validate
    auto* val = app.add_subcommand("validate", "check a dataset against its adjacency");
    DataArgs val_data;
    val_data.attach(val);

    // moran
    auto* mor = app.add_subcommand("moran", "Moran's I of area-level covariate means");
    DataArgs mor_data;
    mor_data.attach(mor);
    std::string moran_out;
    mor->add_option("--out", moran_out, "CSV output path");

    // deconfound
    auto* dec = app.add_subcommand("deconfound", "search an eigenvector removal pattern");
    DataArgs dec_data;
    dec_data.attach(dec);
    DeconfoundArgs dec_args;
    ModelArgs dec_model;
    dec_model.attach(dec);
    std::uint64_t dec_seed = 1;
    dec->add_option("--search", dec_args.search, "moran|waic");
    dec->add_option("--threshold", dec_args.threshold, "standardized-I threshold");
    dec->add_option("--caps", dec_args.caps, "per-component removal caps, comma separated");
    dec->add_option("--budget", dec_args.budget, "waic search: max fits");
    dec->add_flag("--no-rescale-design", dec_args.no_rescale, "skip design rescaling");
    dec->add_option("--pattern-out", dec_args.pattern_out, "pattern file to write");
    dec->add_option("--design-out", dec_args.design_out, "deconfounded observation CSV");
    dec->add_option("--seed", dec_seed, "waic search seed");

    // fit
    auto* fit = app.add_subcommand("fit", "fit a model and write reports");
    DataArgs fit_data;
    fit_data.attach(fit);
    ModelArgs fit_model;
    fit_model.attach(fit);
    FitArgs fit_args;
    fit->add_option("--out", fit_args.outdir, "output directory");
    fit->add_option("--draws", fit_args.draws, "posterior draws for criteria");
    fit->add_option("--seed", fit_args.seed, "criteria draw seed");
    fit->add_flag("--bit-reproducible", fit_args.bit_reproducible,
                  "single-threaded, no timing in reports, byte-identical output");
    fit->add_option("--threads", fit_args.threads, "grid evaluation threads");
    fit->add_flag("--oracle", fit_args.oracle, "also run the MCMC oracle and write deltas");
    fit->add_option("--oracle-iters", fit_args.oracle_iters, "MCMC kept iterations");
    fit->add_option("--oracle-warmup", fit_args.oracle_warmup, "MCMC warmup iterations");

    // compare
    auto* cmp = app.add_subcommand("compare", "merge criteria tables from fit reports");
    std::vector<std::string> cmp_reports;
    std::string cmp_out;
    cmp->add_option("reports", cmp_reports, "report.json paths")->expected(-2);
    cmp->add_option("--out", cmp_out, "output prefix (.txt/.csv)");

    CLI11_PARSE(app, argc, argv);

    try {
        if (sim->parsed()) return cmd_simulate(scenario_path, sim_out);
        if (val->parsed()) return cmd_validate(val_data);
        if (mor->parsed()) return cmd_moran(mor_data, moran_out);
        if (dec->parsed()) return cmd_deconfound(dec_data, dec_args, dec_model, dec_seed);
        if (fit->parsed()) return cmd_fit(fit_data, fit_model, fit_args);
        if (cmp->parsed()) return cmd_compare(cmp_reports, cmp_out);
    } catch (const bicar::ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitValidation;
    } catch (const bicar::NumericalError& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return kExitNumerical;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitValidation;
    }
    return kExitOk;
}
