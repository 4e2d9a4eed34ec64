#include "bicar/simulate.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "bicar/likelihood.hpp"
#include "bicar/util.hpp"

namespace bicar {

void Scenario::validate(const AreaGraph& g) const {
    if (!seed_set) throw ValidationError("scenario: seed is mandatory");
    if (obs_per_area < 1) throw ValidationError("scenario: obs_per_area must be >= 1");
    if (n_covariates < 0) throw ValidationError("scenario: negative covariate count");
    if (beta.size() != 2 * n_covariates)
        throw ValidationError("scenario: beta must have length 2 * covariates");
    if (beta_c.size() != 2 * g.G)
        throw ValidationError("scenario: beta_c must have length 2 * components (" +
                              std::to_string(2 * g.G) + ")");
    if (!(truth.sigma2[0] > 0.0 && truth.sigma2[1] > 0.0))
        throw ValidationError("scenario: sigma2 must be positive");
    if (!(truth.omega[0] > 0.0 && truth.omega[1] > 0.0))
        throw ValidationError("scenario: omega must be positive");
    if (!(std::abs(truth.rho) < 1.0)) throw ValidationError("scenario: |rho| must be < 1");
    if (family == LatentFamily::pcar && !(truth.phi > 0.0 && truth.phi < 1.0))
        throw ValidationError("scenario: phi must lie in (0, 1)");
    if (confound_covariate >= n_covariates)
        throw ValidationError("scenario: confound covariate out of range");
    if (missing_fraction < 0.0 || missing_fraction >= 1.0)
        throw ValidationError("scenario: missing_fraction outside [0, 1)");
}

Eigen::VectorXd sample_constrained_icar(const AreaGraph& g, const Eigen::Matrix2d& Lambda,
                                        Rng& rng, bool scaled) {
    const Eigen::Matrix2d Sigma = Lambda.inverse();
    Eigen::LLT<Eigen::Matrix2d> llt(Sigma);
    if (llt.info() != Eigen::Success)
        throw NumericalError("sample_constrained_icar: Lambda not positive definite");
    const Eigen::Matrix2d L = llt.matrixL();

    const ComponentEigen eig = eigendecompose(g);
    const ScaledStructure sc = scaled ? scale_structure(g) : ScaledStructure{};

    Eigen::VectorXd z = Eigen::VectorXd::Zero(2 * g.n);
    for (const auto& block : eig.blocks) {
        const auto msize = static_cast<int>(block.nodes.size());
        const double factor = scaled ? sc.factors[block.component] : 1.0;
        for (int j = 0; j < msize - 1; ++j) {  // skip the null column
            const double lam = block.values(j) * factor;
            if (lam <= 0.0) continue;
            Eigen::Vector2d eps(rng.normal(), rng.normal());
            const Eigen::Vector2d eta = (L * eps) / std::sqrt(lam);
            z.head(g.n) += eta(0) * block.vectors.col(j);
            z.tail(g.n) += eta(1) * block.vectors.col(j);
        }
    }
    return z;
}

AreaGraph graph_from_spec(const std::string& spec) {
    std::vector<AreaGraph> parts;
    std::stringstream ss(spec);
    std::string token;
    while (std::getline(ss, token, '+')) {
        if (token.empty()) continue;
        const auto colon = token.find(':');
        if (colon == std::string::npos)
            throw ValidationError("graph spec token \"" + token + "\": expected kind:args");
        const std::string kind = token.substr(0, colon);
        const std::string args = token.substr(colon + 1);
        if (kind == "lattice") {
            const auto x = args.find('x');
            if (x == std::string::npos)
                throw ValidationError("lattice spec needs RxC, got " + args);
            parts.push_back(make_lattice(std::stoi(args.substr(0, x)),
                                         std::stoi(args.substr(x + 1))));
        } else if (kind == "path") {
            parts.push_back(make_path(std::stoi(args)));
        } else if (kind == "file") {
            parts.push_back(read_adjacency_file(args));
        } else {
            throw ValidationError("unknown graph spec kind: " + kind);
        }
    }
    if (parts.empty()) throw ValidationError("empty graph spec");
    return parts.size() == 1 ? parts.front() : disjoint_union(parts);
}

namespace {

std::vector<std::string> default_covariate_names(int p) {
    if (p == 4) return {"x_central", "x_peripheral", "x_bb", "x_transport"};
    std::vector<std::string> names;
    for (int j = 0; j < p; ++j) names.push_back("x" + std::to_string(j));
    return names;
}

}  // namespace

SimulatedData generate(const Scenario& scenario) {
    SimulatedData data;
    data.graph = graph_from_spec(scenario.graph_spec);
    scenario.validate(data.graph);
    const int n = data.graph.n;
    const int p = scenario.n_covariates;
    const int N = n * scenario.obs_per_area;

    std::vector<int> area_of(N);
    for (int h = 0; h < N; ++h) area_of[h] = h / scenario.obs_per_area;
    data.map = build_levelmap(area_of, data.graph.components);

    Rng root(scenario.seed);
    Rng rng_x = root.spawn(1);
    Rng rng_z = root.spawn(2);
    Rng rng_eps = root.spawn(3);
    Rng rng_miss = root.spawn(4);

    // Covariates: area-level propensities plus municipal noise. The default
    // four columns mimic the production schema: two dummies (central /
    // peripheral, mutually exclusive) and two proportions in [0, 1].
    data.covariate_names = default_covariate_names(p);
    data.X.resize(N, p);
    const bool canonical = (p == 4);
    std::vector<Eigen::VectorXd> base(p, Eigen::VectorXd::Zero(n));
    for (int j = 0; j < p; ++j)
        for (int i = 0; i < n; ++i) base[j](i) = rng_x.uniform(0.2, 0.8);
    for (int h = 0; h < N; ++h) {
        const int area = area_of[h];
        if (canonical) {
            const double u = rng_x.uniform01();
            const double pc = 0.5 * base[0](area);
            const double pp = 0.5 * base[1](area);
            data.X(h, 0) = u < pc ? 1.0 : 0.0;
            data.X(h, 1) = u > 1.0 - pp ? 1.0 : 0.0;
            data.X(h, 2) = std::clamp(base[2](area) + 0.15 * rng_x.normal(), 0.0, 1.0);
            data.X(h, 3) = std::clamp(base[3](area) + 0.15 * rng_x.normal(), 0.0, 1.0);
        } else {
            for (int j = 0; j < p; ++j)
                data.X(h, j) = std::clamp(base[j](area) + 0.15 * rng_x.normal(), 0.0, 1.0);
        }
    }

    // Confounding injection: add c * (Fiedler vector of the chosen
    // component) to the covariate, constant within each area.
    if (scenario.confound_covariate >= 0 && scenario.confound_strength != 0.0) {
        const ComponentEigen eig = eigendecompose(data.graph);
        const auto& block = eig.blocks.at(scenario.confound_component);
        const auto msize = static_cast<int>(block.nodes.size());
        if (msize < 2)
            throw ValidationError("scenario: confound component is a singleton");
        const Eigen::VectorXd fiedler = block.vectors.col(msize - 2);
        for (int h = 0; h < N; ++h)
            data.X(h, scenario.confound_covariate) +=
                scenario.confound_strength * fiedler(area_of[h]);
    }

    // Latent field.
    data.z_true = Eigen::VectorXd::Zero(2 * n);
    const Eigen::Matrix2d Lambda =
        scenario.truth.lambda(scenario.family == LatentFamily::icar ||
                              scenario.family == LatentFamily::pcar);
    switch (scenario.family) {
        case LatentFamily::none: break;
        case LatentFamily::iid:
            for (int kk = 0; kk < 2; ++kk)
                for (int i = 0; i < n; ++i)
                    data.z_true(kk * n + i) =
                        std::sqrt(scenario.truth.sigma2[kk]) * rng_z.normal();
            break;
        case LatentFamily::indep_icar:
        case LatentFamily::icar:
            data.z_true = sample_constrained_icar(data.graph, Lambda, rng_z, true);
            break;
        case LatentFamily::pcar: {
            Eigen::MatrixXd S(data.graph.degrees.asDiagonal());
            S -= scenario.truth.phi * data.graph.W;
            const Eigen::MatrixXd Q = kronecker(Lambda, S);
            Eigen::LLT<Eigen::MatrixXd> llt(Q);
            if (llt.info() != Eigen::Success)
                throw NumericalError("scenario: pcar precision not positive definite");
            Eigen::VectorXd eps(2 * n);
            for (int i = 0; i < 2 * n; ++i) eps(i) = rng_z.normal();
            data.z_true = llt.matrixU().solve(eps);
            break;
        }
    }

    // Responses y_k = beta_C[component] + X beta_k + z_k[area] + eps_k.
    data.y1.resize(N);
    data.y2.resize(N);
    data.eps1.resize(N);
    data.eps2.resize(N);
    const SkewNormal sn1 = scenario.likelihoods[0] == OutcomeLikelihood::skew_normal
                               ? sn_standardize(scenario.truth.omega[0], scenario.truth.alpha[0])
                               : SkewNormal{};
    const SkewNormal sn2 = scenario.likelihoods[1] == OutcomeLikelihood::skew_normal
                               ? sn_standardize(scenario.truth.omega[1], scenario.truth.alpha[1])
                               : SkewNormal{};
    for (int h = 0; h < N; ++h) {
        const int area = area_of[h];
        const int comp = data.graph.components[area];
        for (int kk = 0; kk < 2; ++kk) {
            double mean = scenario.beta_c(kk * data.graph.G + comp);
            for (int j = 0; j < p; ++j) mean += data.X(h, j) * scenario.beta(kk * p + j);
            mean += data.z_true(kk * n + area);
            double eps;
            if (scenario.likelihoods[kk] == OutcomeLikelihood::skew_normal)
                eps = sn_sample(kk == 0 ? sn1 : sn2, rng_eps);
            else
                eps = std::sqrt(scenario.truth.omega[kk]) * rng_eps.normal();
            if (kk == 0) {
                data.eps1(h) = eps;
                data.y1(h) = mean + eps;
            } else {
                data.eps2(h) = eps;
                data.y2(h) = mean + eps;
            }
        }
    }

    if (scenario.missing_fraction > 0.0) {
        for (int h = 0; h < N; ++h) {
            if (rng_miss.uniform01() < scenario.missing_fraction) {
                data.y1(h) = std::numeric_limits<double>::quiet_NaN();
                data.y2(h) = std::numeric_limits<double>::quiet_NaN();
            }
        }
    }
    return data;
}

// ---------------------------------------------------------------------------
// Scenario files.

namespace {

std::vector<double> parse_list(const std::string& s) {
    std::vector<double> out;
    std::stringstream ss(s);
    std::string tok;
    while (std::getline(ss, tok, ',')) out.push_back(std::stod(tok));
    return out;
}

}  // namespace

Scenario read_scenario(std::istream& in) {
    Scenario s;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto first = line.find_first_not_of(" \t\r");
        if (first == std::string::npos || line[first] == '#') continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ValidationError("scenario line " + std::to_string(lineno) +
                                  ": expected key=value");
        const std::string key = line.substr(first, eq - first);
        std::string value = line.substr(eq + 1);
        if (const auto end = value.find_last_not_of(" \t\r"); end != std::string::npos)
            value = value.substr(0, end + 1);

        if (key == "seed") {
            s.seed = std::stoull(value);
            s.seed_set = true;
        } else if (key == "graph") {
            s.graph_spec = value;
        } else if (key == "obs_per_area") {
            s.obs_per_area = std::stoi(value);
        } else if (key == "covariates") {
            s.n_covariates = std::stoi(value);
        } else if (key == "beta") {
            const auto v = parse_list(value);
            s.beta = Eigen::Map<const Eigen::VectorXd>(v.data(), v.size());
        } else if (key == "beta_c") {
            const auto v = parse_list(value);
            s.beta_c = Eigen::Map<const Eigen::VectorXd>(v.data(), v.size());
        } else if (key == "sigma2") {
            const auto v = parse_list(value);
            if (v.size() != 2) throw ValidationError("scenario: sigma2 needs 2 values");
            s.truth.sigma2 = {v[0], v[1]};
        } else if (key == "rho") {
            s.truth.rho = std::stod(value);
        } else if (key == "omega") {
            const auto v = parse_list(value);
            if (v.size() != 2) throw ValidationError("scenario: omega needs 2 values");
            s.truth.omega = {v[0], v[1]};
        } else if (key == "alpha") {
            s.truth.alpha[1] = std::stod(value);
        } else if (key == "alpha1") {
            s.truth.alpha[0] = std::stod(value);
        } else if (key == "phi") {
            s.truth.phi = std::stod(value);
        } else if (key == "family") {
            s.family = latent_family_from_string(value);
        } else if (key == "likelihood1") {
            s.likelihoods[0] = likelihood_from_string(value);
        } else if (key == "likelihood2") {
            s.likelihoods[1] = likelihood_from_string(value);
        } else if (key == "confound_covariate") {
            s.confound_covariate = std::stoi(value);
        } else if (key == "confound_strength") {
            s.confound_strength = std::stod(value);
        } else if (key == "confound_component") {
            s.confound_component = std::stoi(value);
        } else if (key == "missing_fraction") {
            s.missing_fraction = std::stod(value);
        } else {
            throw ValidationError("scenario: unknown key \"" + key + "\"");
        }
    }
    return s;
}

Scenario read_scenario_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open scenario file: " + path);
    return read_scenario(in);
}

void write_scenario(std::ostream& out, const Scenario& s) {
    out << "seed=" << s.seed << "\n";
    out << "graph=" << s.graph_spec << "\n";
    out << "obs_per_area=" << s.obs_per_area << "\n";
    out << "covariates=" << s.n_covariates << "\n";
    auto list = [&](const Eigen::VectorXd& v) {
        std::string acc;
        for (Eigen::Index i = 0; i < v.size(); ++i)
            acc += (i ? "," : "") + format_double(v(i));
        return acc;
    };
    out << "beta=" << list(s.beta) << "\n";
    out << "beta_c=" << list(s.beta_c) << "\n";
    out << "sigma2=" << format_double(s.truth.sigma2[0]) << "," << format_double(s.truth.sigma2[1])
        << "\n";
    out << "rho=" << format_double(s.truth.rho) << "\n";
    out << "omega=" << format_double(s.truth.omega[0]) << "," << format_double(s.truth.omega[1])
        << "\n";
    out << "alpha=" << format_double(s.truth.alpha[1]) << "\n";
    if (s.family == LatentFamily::pcar) out << "phi=" << format_double(s.truth.phi) << "\n";
    out << "family=" << to_string(s.family) << "\n";
    out << "likelihood1=" << to_string(s.likelihoods[0]) << "\n";
    out << "likelihood2=" << to_string(s.likelihoods[1]) << "\n";
    if (s.confound_covariate >= 0) {
        out << "confound_covariate=" << s.confound_covariate << "\n";
        out << "confound_strength=" << format_double(s.confound_strength) << "\n";
        out << "confound_component=" << s.confound_component << "\n";
    }
    if (s.missing_fraction > 0.0)
        out << "missing_fraction=" << format_double(s.missing_fraction) << "\n";
}

}  // namespace bicar
