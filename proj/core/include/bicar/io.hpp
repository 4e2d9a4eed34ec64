#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "bicar/deconfound.hpp"
#include "bicar/inference.hpp"
#include "bicar/simulate.hpp"

namespace bicar {

/// Observation table. CSV schema: obs_id, area_id, component_id (optional),
/// y_math, y_ital, then one column per covariate. Empty / NA response cells
/// mark prediction rows; covariate cells must be complete.
struct Dataset {
    std::vector<std::string> obs_ids;
    std::vector<int> area_ids;
    std::vector<int> component_ids;  ///< -1 when the column is absent
    Eigen::VectorXd y1, y2;
    Eigen::MatrixXd X;
    std::vector<std::string> covariate_names;

    int N() const { return static_cast<int>(obs_ids.size()); }
};

Dataset read_observations(std::istream& in);
Dataset read_observations_file(const std::string& path);
void write_observations(std::ostream& out, const Dataset& d);
void write_observations_file(const std::string& path, const Dataset& d);

Dataset dataset_from_simulated(const SimulatedData& sim);

/// Schema / consistency / range checks. Errors block a fit (unknown area,
/// component conflicts); warnings (covariate outside [0,1], empty areas,
/// missing responses) are informational.
struct Finding {
    enum class Severity { error, warning };
    Severity severity = Severity::error;
    std::string message;
    int row = -1;  ///< 1-based data row, -1 when not row-specific
};

struct ValidationReport {
    std::vector<Finding> findings;
    int n_errors = 0;
    int n_warnings = 0;
    int n_obs = 0;
    int n_areas = 0;
    int G = 0;
    std::vector<int> area_counts;
    std::vector<int> component_sizes;
    bool ok() const { return n_errors == 0; }
};

ValidationReport validate_dataset(const Dataset& d, const AreaGraph& g);

/// LevelMap from the dataset against the graph; throws ValidationError on
/// unknown areas or component conflicts.
LevelMap levelmap_from_dataset(const Dataset& d, const AreaGraph& g);

/// Removal-pattern file: '#' comments, header "covariate component K i_std",
/// rows with K either an integer or "idx:1,3-5" (1-based positions from the
/// low-frequency end). Missing (covariate, component) pairs default to 0.
RemovalPattern read_pattern(std::istream& in, int G);
RemovalPattern read_pattern_file(const std::string& path, int G);
void write_pattern(std::ostream& out, const RemovalPattern& p);
void write_pattern_file(const std::string& path, const RemovalPattern& p);

/// Reorder / verify a pattern against the dataset's covariate names.
/// Unknown names are rejected; absent covariates get all-zero rows.
RemovalPattern align_pattern(const RemovalPattern& p, const std::vector<std::string>& names,
                             int G);

/// FNV-1a 64-bit over a canonical serialization of the dataset.
std::string hash_dataset(const Dataset& d);

/// Fit report as a JSON-compatible tree (serialized text). Timing is
/// omitted when absent (bit-reproducible runs).
std::string fit_report_json(const PosteriorFit& fit, const AssembledModel& m,
                            const std::string& dataset_hash, double timing_sec);

/// One row of the criteria comparison table, parsed back from report JSON.
struct CriteriaRow {
    std::string label;
    std::string engine;
    std::string dataset_hash;
    double neg_lpml = 0, waic = 0, dic = 0, expected_deviance = 0, p_d = 0, mse = 0;
    double timing_sec = -1;  ///< < 0 = not recorded
};

CriteriaRow criteria_row_from_json(const std::string& json_text);

/// Aligned text table, one row per model, sorted by WAIC, best value per
/// criterion marked with '*' (ties all marked). Rows must share a dataset
/// hash: the caller enforces it.
std::string render_criteria_table(std::vector<CriteriaRow> rows);
void write_criteria_csv(std::ostream& out, const std::vector<CriteriaRow>& rows);

void write_fixed_effects_csv(std::ostream& out, const PosteriorFit& fit);
void write_hyperparameters_csv(std::ostream& out, const PosteriorFit& fit);
void write_area_effects_csv(std::ostream& out, const PosteriorFit& fit);
void write_yhat_csv(std::ostream& out, const Dataset& d, const PosteriorFit& fit);
void write_residual_density_csv(std::ostream& out, const KdeCurve& curve);

}  // namespace bicar
