#include "bicar/io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <sstream>

#include <json.hpp>

#include "bicar/util.hpp"

namespace bicar {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string field;
    for (char ch : line) {
        if (ch == ',') {
            out.push_back(field);
            field.clear();
        } else if (ch != '\r') {
            field += ch;
        }
    }
    out.push_back(field);
    return out;
}

bool is_missing(const std::string& s) {
    return s.empty() || s == "NA" || s == "na" || s == "nan" || s == "NaN";
}

}  // namespace

Dataset read_observations(std::istream& in) {
    std::string line;
    if (!std::getline(in, line)) throw ValidationError("observations: empty file");
    const auto header = split_csv_line(line);

    auto column = [&](const std::string& name) {
        for (std::size_t i = 0; i < header.size(); ++i)
            if (header[i] == name) return static_cast<int>(i);
        return -1;
    };
    const int c_obs = column("obs_id");
    const int c_area = column("area_id");
    const int c_comp = column("component_id");
    const int c_y1 = column("y_math");
    const int c_y2 = column("y_ital");
    if (c_obs < 0 || c_area < 0 || c_y1 < 0 || c_y2 < 0)
        throw ValidationError("observations: header must contain obs_id, area_id, y_math, y_ital");

    Dataset d;
    std::vector<int> cov_cols;
    for (std::size_t i = 0; i < header.size(); ++i) {
        const int ii = static_cast<int>(i);
        if (ii == c_obs || ii == c_area || ii == c_comp || ii == c_y1 || ii == c_y2) continue;
        cov_cols.push_back(ii);
        d.covariate_names.push_back(header[i]);
    }

    std::vector<double> y1v, y2v;
    std::vector<std::vector<double>> xrows;
    int lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line == "\r") continue;
        const auto fields = split_csv_line(line);
        if (fields.size() != header.size())
            throw ValidationError("observations line " + std::to_string(lineno) + ": expected " +
                                  std::to_string(header.size()) + " fields, got " +
                                  std::to_string(fields.size()));
        d.obs_ids.push_back(fields[c_obs]);
        try {
            d.area_ids.push_back(std::stoi(fields[c_area]));
        } catch (const std::exception&) {
            throw ValidationError("observations line " + std::to_string(lineno) +
                                  ": bad area_id \"" + fields[c_area] + "\"");
        }
        d.component_ids.push_back(
            c_comp >= 0 && !is_missing(fields[c_comp]) ? std::stoi(fields[c_comp]) : -1);
        y1v.push_back(is_missing(fields[c_y1]) ? kNaN : std::stod(fields[c_y1]));
        y2v.push_back(is_missing(fields[c_y2]) ? kNaN : std::stod(fields[c_y2]));
        std::vector<double> xs;
        for (int cc : cov_cols) {
            if (is_missing(fields[cc]))
                throw ValidationError("observations line " + std::to_string(lineno) +
                                      ": missing covariate " + header[cc]);
            xs.push_back(std::stod(fields[cc]));
        }
        xrows.push_back(std::move(xs));
    }

    const auto N = static_cast<Eigen::Index>(d.obs_ids.size());
    d.y1 = Eigen::Map<Eigen::VectorXd>(y1v.data(), N);
    d.y2 = Eigen::Map<Eigen::VectorXd>(y2v.data(), N);
    d.X.resize(N, static_cast<Eigen::Index>(cov_cols.size()));
    for (Eigen::Index i = 0; i < N; ++i)
        for (std::size_t j = 0; j < cov_cols.size(); ++j) d.X(i, j) = xrows[i][j];
    return d;
}

Dataset read_observations_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open observations file: " + path);
    return read_observations(in);
}

void write_observations(std::ostream& out, const Dataset& d) {
    out << "obs_id,area_id,component_id,y_math,y_ital";
    for (const auto& nm : d.covariate_names) out << "," << nm;
    out << "\n";
    for (int i = 0; i < d.N(); ++i) {
        out << d.obs_ids[i] << "," << d.area_ids[i] << ",";
        if (d.component_ids[i] >= 0) out << d.component_ids[i];
        out << ",";
        if (std::isfinite(d.y1(i))) out << format_double(d.y1(i));
        out << ",";
        if (std::isfinite(d.y2(i))) out << format_double(d.y2(i));
        for (Eigen::Index j = 0; j < d.X.cols(); ++j) out << "," << format_double(d.X(i, j));
        out << "\n";
    }
}

void write_observations_file(const std::string& path, const Dataset& d) {
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot write observations file: " + path);
    write_observations(out, d);
}

Dataset dataset_from_simulated(const SimulatedData& sim) {
    Dataset d;
    const int N = sim.map.N;
    d.obs_ids.reserve(N);
    char buf[24];
    for (int i = 0; i < N; ++i) {
        std::snprintf(buf, sizeof(buf), "m%06d", i);
        d.obs_ids.emplace_back(buf);
    }
    d.area_ids = sim.map.area_of;
    d.component_ids.resize(N);
    for (int i = 0; i < N; ++i)
        d.component_ids[i] = sim.graph.components[sim.map.area_of[i]];
    d.y1 = sim.y1;
    d.y2 = sim.y2;
    d.X = sim.X;
    d.covariate_names = sim.covariate_names;
    return d;
}

// ---------------------------------------------------------------------------
// Validation.

ValidationReport validate_dataset(const Dataset& d, const AreaGraph& g) {
    ValidationReport rep;
    rep.n_obs = d.N();
    rep.n_areas = g.n;
    rep.G = g.G;
    rep.component_sizes = g.component_sizes();
    rep.area_counts.assign(g.n, 0);

    auto add = [&](Finding::Severity sev, std::string msg, int row = -1) {
        rep.findings.push_back({sev, std::move(msg), row});
        if (sev == Finding::Severity::error)
            ++rep.n_errors;
        else
            ++rep.n_warnings;
    };

    std::map<std::string, int> seen_ids;
    for (int i = 0; i < d.N(); ++i) {
        const int row = i + 1;
        const int a = d.area_ids[i];
        if (a < 0 || a >= g.n) {
            add(Finding::Severity::error,
                "observation references unknown area " + std::to_string(a), row);
            continue;
        }
        ++rep.area_counts[a];
        if (d.component_ids[i] >= 0 && d.component_ids[i] != g.components[a])
            add(Finding::Severity::error,
                "macro-area " + std::to_string(a) + " assigned to component " +
                    std::to_string(d.component_ids[i]) + " but the graph puts it in " +
                    std::to_string(g.components[a]),
                row);
        if (auto [it, inserted] = seen_ids.emplace(d.obs_ids[i], row); !inserted)
            add(Finding::Severity::warning,
                "duplicate obs_id \"" + d.obs_ids[i] + "\" (first at row " +
                    std::to_string(it->second) + ")",
                row);
    }

    for (Eigen::Index j = 0; j < d.X.cols(); ++j) {
        bool zero_one_only = true;
        for (int i = 0; i < d.N(); ++i) {
            const double v = d.X(i, j);
            if (v != 0.0 && v != 1.0) zero_one_only = false;
            if (v < 0.0 || v > 1.0) {
                add(Finding::Severity::warning,
                    "covariate " + d.covariate_names[j] + " value " + format_double(v) +
                        " outside [0, 1]",
                    i + 1);
            }
        }
        (void)zero_one_only;
    }

    int missing1 = 0, missing2 = 0;
    for (int i = 0; i < d.N(); ++i) {
        if (!std::isfinite(d.y1(i))) ++missing1;
        if (!std::isfinite(d.y2(i))) ++missing2;
    }
    if (missing1 + missing2 > 0)
        add(Finding::Severity::warning,
            "prediction rows: " + std::to_string(missing1) + " missing y_math, " +
                std::to_string(missing2) + " missing y_ital");

    std::string empty;
    for (int a = 0; a < g.n; ++a)
        if (rep.area_counts[a] == 0) empty += (empty.empty() ? "" : ", ") + std::to_string(a);
    if (!empty.empty())
        add(Finding::Severity::warning, "macro-area(s) without observations: " + empty);

    return rep;
}

LevelMap levelmap_from_dataset(const Dataset& d, const AreaGraph& g) {
    for (int i = 0; i < d.N(); ++i) {
        const int a = d.area_ids[i];
        if (a < 0 || a >= g.n)
            throw ValidationError("observation row " + std::to_string(i + 1) +
                                  " references unknown area " + std::to_string(a));
        if (d.component_ids[i] >= 0 && d.component_ids[i] != g.components[a])
            throw ValidationError("macro-area " + std::to_string(a) +
                                  " assigned to two components (file says " +
                                  std::to_string(d.component_ids[i]) + ", graph says " +
                                  std::to_string(g.components[a]) + ")");
    }
    return build_levelmap(d.area_ids, g.components);
}

// ---------------------------------------------------------------------------
// Pattern files.

namespace {

std::vector<int> parse_index_list(const std::string& s) {
    std::vector<int> out;
    std::stringstream ss(s);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        const auto dash = tok.find('-');
        if (dash == std::string::npos) {
            out.push_back(std::stoi(tok));
        } else {
            const int lo = std::stoi(tok.substr(0, dash));
            const int hi = std::stoi(tok.substr(dash + 1));
            for (int v = lo; v <= hi; ++v) out.push_back(v);
        }
    }
    return out;
}

}  // namespace

RemovalPattern read_pattern(std::istream& in, int G) {
    RemovalPattern p;
    std::map<std::string, std::size_t> row_of;
    std::string line;
    int lineno = 0;
    bool header_seen = false;
    while (std::getline(in, line)) {
        ++lineno;
        const auto first = line.find_first_not_of(" \t\r");
        if (first == std::string::npos || line[first] == '#') continue;
        std::istringstream ss(line);
        std::string covariate, comp_s, k_s, istd_s;
        if (!(ss >> covariate >> comp_s >> k_s))
            throw ValidationError("pattern line " + std::to_string(lineno) +
                                  ": expected \"covariate component K [i_std]\"");
        if (!header_seen && covariate == "covariate") {
            header_seen = true;
            continue;
        }
        const int comp = std::stoi(comp_s);
        if (comp < 0 || comp >= G)
            throw ValidationError("pattern line " + std::to_string(lineno) + ": component " +
                                  comp_s + " outside [0, " + std::to_string(G) + ")");
        auto it = row_of.find(covariate);
        if (it == row_of.end()) {
            it = row_of.emplace(covariate, p.covariates.size()).first;
            p.covariates.push_back(covariate);
            p.entries.emplace_back(G);
        }
        auto& entry = p.entries[it->second][comp];
        if (k_s.rfind("idx:", 0) == 0) {
            entry.explicit_indices = parse_index_list(k_s.substr(4));
            entry.K = static_cast<int>(entry.explicit_indices->size());
        } else {
            entry.K = std::stoi(k_s);
        }
        if (ss >> istd_s && istd_s != "-") entry.achieved_i_std = std::stod(istd_s);
    }
    if (p.covariates.empty()) throw ValidationError("pattern file: no rows");
    return p;
}

RemovalPattern read_pattern_file(const std::string& path, int G) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open pattern file: " + path);
    return read_pattern(in, G);
}

void write_pattern(std::ostream& out, const RemovalPattern& p) {
    out << "covariate component K i_std\n";
    for (std::size_t m = 0; m < p.covariates.size(); ++m) {
        for (std::size_t c = 0; c < p.entries[m].size(); ++c) {
            const auto& e = p.entries[m][c];
            out << p.covariates[m] << " " << c << " ";
            if (e.explicit_indices) {
                out << "idx:";
                for (std::size_t i = 0; i < e.explicit_indices->size(); ++i)
                    out << (i ? "," : "") << (*e.explicit_indices)[i];
            } else {
                out << e.K;
            }
            out << " ";
            if (std::isfinite(e.achieved_i_std))
                out << format_double(e.achieved_i_std);
            else
                out << "-";
            out << "\n";
        }
    }
}

void write_pattern_file(const std::string& path, const RemovalPattern& p) {
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot write pattern file: " + path);
    write_pattern(out, p);
}

RemovalPattern align_pattern(const RemovalPattern& p, const std::vector<std::string>& names,
                             int G) {
    for (const auto& cov : p.covariates)
        if (std::find(names.begin(), names.end(), cov) == names.end())
            throw ValidationError("pattern covariate \"" + cov + "\" not present in the dataset");
    RemovalPattern out = RemovalPattern::zeros(names, G);
    for (std::size_t m = 0; m < p.covariates.size(); ++m) {
        const auto it = std::find(names.begin(), names.end(), p.covariates[m]);
        out.entries[static_cast<std::size_t>(it - names.begin())] = p.entries[m];
    }
    return out;
}

// ---------------------------------------------------------------------------
// Hashing.

std::string hash_dataset(const Dataset& d) {
    std::ostringstream canon;
    write_observations(canon, d);
    const std::string bytes = canon.str();
    std::uint64_t h = 0xCBF29CE484222325ULL;
    for (unsigned char ch : bytes) {
        h ^= ch;
        h *= 0x100000001B3ULL;
    }
    std::ostringstream hex;
    hex << std::hex << std::setw(16) << std::setfill('0') << h;
    return hex.str();
}

// ---------------------------------------------------------------------------
// Reports.

std::string fit_report_json(const PosteriorFit& fit, const AssembledModel& m,
                            const std::string& dataset_hash, double timing_sec) {
    nlohmann::json j;
    j["kind"] = "bicar_fit_report";
    j["label"] = fit.label;
    j["engine"] = fit.engine;
    j["seed"] = fit.seed;
    j["dataset_hash"] = dataset_hash;

    nlohmann::json model;
    model["family"] = to_string(m.spec.family);
    model["confounding"] = to_string(m.spec.confounding);
    model["likelihood1"] = to_string(m.spec.likelihoods[0]);
    model["likelihood2"] = to_string(m.spec.likelihoods[1]);
    model["component_intercepts"] = m.spec.per_component_intercepts();
    model["scaled_structure"] = m.spec.scaled_structure;
    if (m.spec.fixed_phi) model["fixed_phi"] = *m.spec.fixed_phi;
    if (m.spec.force_sum_to_zero) model["force_sum_to_zero"] = true;
    if (m.spec.confounding == Confounding::spatial_plus) {
        model["rescale_deconfounded"] = m.spec.rescale_deconfounded;
        nlohmann::json pat = nlohmann::json::array();
        for (std::size_t mm = 0; mm < m.spec.pattern.covariates.size(); ++mm)
            for (std::size_t c = 0; c < m.spec.pattern.entries[mm].size(); ++c)
                pat.push_back({{"covariate", m.spec.pattern.covariates[mm]},
                               {"component", c},
                               {"K", m.spec.pattern.entries[mm][c].K}});
        model["pattern"] = pat;
    }
    j["model"] = model;

    j["data"] = {{"n_areas", m.n},
                 {"n_obs", m.N},
                 {"components", m.G},
                 {"covariates", m.covariate_names},
                 {"observed_entries", m.n_observed_total}};

    auto summary_rows = [](const std::vector<SummaryRow>& rows) {
        nlohmann::json arr = nlohmann::json::array();
        for (const auto& r : rows)
            arr.push_back({{"name", r.name},
                           {"outcome", r.outcome},
                           {"mean", r.mean},
                           {"sd", r.sd},
                           {"q05", r.q05},
                           {"q50", r.q50},
                           {"q95", r.q95}});
        return arr;
    };
    j["fixed_effects"] = summary_rows(fit.fixed_effects);
    j["area_effects"] = summary_rows(fit.area_effects);

    nlohmann::json hy = nlohmann::json::array();
    for (const auto& r : fit.hypers)
        hy.push_back({{"name", r.name},
                      {"mean", r.mean},
                      {"sd", r.sd},
                      {"lb", r.lb},
                      {"median", r.median},
                      {"ub", r.ub}});
    j["hyperparameters"] = hy;

    j["criteria"] = {{"neg_lpml", fit.criteria.neg_lpml},
                     {"waic", fit.criteria.waic},
                     {"lppd", fit.criteria.lppd},
                     {"p_waic", fit.criteria.p_waic},
                     {"dic", fit.criteria.dic},
                     {"expected_deviance", fit.criteria.expected_deviance},
                     {"p_d", fit.criteria.p_d},
                     {"mse", fit.criteria.mse},
                     {"cpo_flagged", fit.criteria.cpo_flagged_count}};

    j["convergence"] = {{"converged", fit.convergence.converged},
                        {"flags", fit.convergence.flags},
                        {"max_constraint_residual", fit.convergence.max_constraint_residual},
                        {"grid_points", fit.convergence.grid_points},
                        {"pruned_points", fit.convergence.pruned_points},
                        {"optimizer_iterations", fit.convergence.optimizer_iterations},
                        {"rhat_max", fit.convergence.rhat_max},
                        {"ess_min", fit.convergence.ess_min},
                        {"accept_theta", fit.convergence.accept_theta}};

    j["grid_weights"] = fit.grid_weights;
    if (timing_sec >= 0.0) j["timing_sec"] = timing_sec;
    return j.dump(2) + "\n";
}

CriteriaRow criteria_row_from_json(const std::string& json_text) {
    const nlohmann::json j = nlohmann::json::parse(json_text);
    if (!j.contains("kind") || j["kind"] != "bicar_fit_report")
        throw ValidationError("not a fit report");
    CriteriaRow row;
    row.label = j.value("label", "?");
    row.engine = j.value("engine", "?");
    row.dataset_hash = j.value("dataset_hash", "");
    const auto& c = j.at("criteria");
    row.neg_lpml = c.value("neg_lpml", 0.0);
    row.waic = c.value("waic", 0.0);
    row.dic = c.value("dic", 0.0);
    row.expected_deviance = c.value("expected_deviance", 0.0);
    row.p_d = c.value("p_d", 0.0);
    row.mse = c.value("mse", 0.0);
    row.timing_sec = j.value("timing_sec", -1.0);
    return row;
}

namespace {

std::string fixed(double v, int prec = 3) {
    std::ostringstream ss;
    ss << std::fixed << std::setprecision(prec) << v;
    return ss.str();
}

}  // namespace

std::string render_criteria_table(std::vector<CriteriaRow> rows) {
    std::sort(rows.begin(), rows.end(),
              [](const CriteriaRow& a, const CriteriaRow& b) { return a.waic < b.waic; });

    const std::vector<std::string> headers = {"model",    "-LPML", "WAIC", "DIC",
                                              "Exp.Dev.", "P_D",   "MSE",  "time"};
    auto value_of = [](const CriteriaRow& r, std::size_t col) {
        switch (col) {
            case 1: return r.neg_lpml;
            case 2: return r.waic;
            case 3: return r.dic;
            case 4: return r.expected_deviance;
            case 5: return r.p_d;
            case 6: return r.mse;
            default: return 0.0;
        }
    };
    // Best (minimum) per criterion column; ties all marked.
    std::vector<double> best(7, std::numeric_limits<double>::infinity());
    for (const auto& r : rows)
        for (std::size_t col = 1; col <= 6; ++col)
            best[col] = std::min(best[col], value_of(r, col));

    std::vector<std::vector<std::string>> cells;
    cells.push_back(headers);
    for (const auto& r : rows) {
        std::vector<std::string> line{r.label};
        for (std::size_t col = 1; col <= 6; ++col) {
            std::string s = fixed(value_of(r, col));
            if (value_of(r, col) == best[col]) s += "*";
            line.push_back(std::move(s));
        }
        line.push_back(r.timing_sec >= 0.0 ? fixed(r.timing_sec) : "-");
        cells.push_back(std::move(line));
    }

    std::vector<std::size_t> width(headers.size(), 0);
    for (const auto& line : cells)
        for (std::size_t c = 0; c < line.size(); ++c) width[c] = std::max(width[c], line[c].size());

    std::ostringstream out;
    for (const auto& line : cells) {
        for (std::size_t c = 0; c < line.size(); ++c) {
            out << std::setw(static_cast<int>(width[c]) + (c ? 2 : 0)) << line[c];
        }
        out << "\n";
    }
    return out.str();
}

void write_criteria_csv(std::ostream& out, const std::vector<CriteriaRow>& rows) {
    out << "model,engine,neg_lpml,waic,dic,expected_deviance,p_d,mse,timing_sec\n";
    for (const auto& r : rows) {
        out << r.label << "," << r.engine << "," << format_double(r.neg_lpml) << ","
            << format_double(r.waic) << "," << format_double(r.dic) << ","
            << format_double(r.expected_deviance) << "," << format_double(r.p_d) << ","
            << format_double(r.mse) << ",";
        if (r.timing_sec >= 0.0) out << format_double(r.timing_sec);
        out << "\n";
    }
}

void write_fixed_effects_csv(std::ostream& out, const PosteriorFit& fit) {
    out << "term,outcome,mean,sd,q05,q95\n";
    for (const auto& r : fit.fixed_effects)
        out << r.name << "," << r.outcome << "," << format_double(r.mean) << ","
            << format_double(r.sd) << "," << format_double(r.q05) << "," << format_double(r.q95)
            << "\n";
}

void write_hyperparameters_csv(std::ostream& out, const PosteriorFit& fit) {
    out << "parameter,lb,median,ub,sd\n";
    for (const auto& r : fit.hypers)
        out << r.name << "," << format_double(r.lb) << "," << format_double(r.median) << ","
            << format_double(r.ub) << "," << format_double(r.sd) << "\n";
}

void write_area_effects_csv(std::ostream& out, const PosteriorFit& fit) {
    out << "area,outcome,mean,sd,q05,q50,q95\n";
    for (const auto& r : fit.area_effects) {
        // name is "z_area<i>"
        out << r.name.substr(6) << "," << r.outcome << "," << format_double(r.mean) << ","
            << format_double(r.sd) << "," << format_double(r.q05) << "," << format_double(r.q50)
            << "," << format_double(r.q95) << "\n";
    }
}

void write_yhat_csv(std::ostream& out, const Dataset& d, const PosteriorFit& fit) {
    out << "obs_id,outcome,y,yhat\n";
    for (int i = 0; i < d.N(); ++i) {
        out << d.obs_ids[i] << ",math,";
        if (std::isfinite(d.y1(i))) out << format_double(d.y1(i));
        out << "," << format_double(fit.yhat1(i)) << "\n";
    }
    for (int i = 0; i < d.N(); ++i) {
        out << d.obs_ids[i] << ",ital,";
        if (std::isfinite(d.y2(i))) out << format_double(d.y2(i));
        out << "," << format_double(fit.yhat2(i)) << "\n";
    }
}

void write_residual_density_csv(std::ostream& out, const KdeCurve& curve) {
    out << "x,density\n";
    for (std::size_t i = 0; i < curve.x.size(); ++i)
        out << format_double(curve.x[i]) << "," << format_double(curve.density[i]) << "\n";
}

}  // namespace bicar
