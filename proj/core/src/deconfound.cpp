#include "bicar/deconfound.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "bicar/util.hpp"

namespace bicar {

MoranResult moran_i(const Eigen::VectorXd& x, const AreaGraph& g) {
    if (x.size() != g.n) throw ValidationError("moran_i: vector length != node count");
    const int n = g.n;
    if (n < 2) throw ValidationError("moran_i: need at least 2 nodes");

    const double mean = x.mean();
    const Eigen::VectorXd c = x.array() - mean;
    const double denom = c.squaredNorm();
    if (denom <= 0.0) throw ValidationError("moran_i: undefined statistic for constant input");

    double s0 = 0.0, cross = 0.0;
    for (const auto& [a, b] : g.edges) {
        s0 += 2.0;  // w_ab + w_ba
        cross += 2.0 * c(a) * c(b);
    }
    if (s0 <= 0.0) throw ValidationError("moran_i: graph has no edges");

    MoranResult r;
    r.I = (n / s0) * cross / denom;
    r.E0 = -1.0 / (n - 1.0);

    // Normality-assumption moments (binary symmetric W):
    // S1 = 2 S0, S2 = 4 sum_i d_i^2.
    const double s1 = 2.0 * s0;
    const double s2 = 4.0 * g.degrees.squaredNorm();
    const double nn = static_cast<double>(n);
    r.V0 = (nn * nn * s1 - nn * s2 + 3.0 * s0 * s0) / ((nn * nn - 1.0) * s0 * s0) - r.E0 * r.E0;
    r.I_std = moran_standardize(r.I, r.E0, r.V0);
    return r;
}

double moran_standardize(double I, double E0, double V0) {
    if (!(V0 > 0.0)) throw ValidationError("moran_standardize: V0 must be positive");
    return (I - E0) / std::sqrt(V0);
}

RemovalPattern RemovalPattern::zeros(const std::vector<std::string>& covariates, int G) {
    RemovalPattern p;
    p.covariates = covariates;
    p.entries.assign(covariates.size(), std::vector<Entry>(G));
    return p;
}

bool RemovalPattern::all_zero() const {
    for (const auto& row : entries)
        for (const auto& e : row)
            if (e.K != 0 || (e.explicit_indices && !e.explicit_indices->empty())) return false;
    return true;
}

void RemovalPattern::validate(const AreaGraph& g) const {
    if (entries.size() != covariates.size())
        throw ValidationError("removal pattern: entry rows != covariate count");
    const auto sizes = g.component_sizes();
    for (std::size_t m = 0; m < entries.size(); ++m) {
        if (static_cast<int>(entries[m].size()) != g.G)
            throw ValidationError("removal pattern: covariate " + covariates[m] +
                                  " has wrong component count");
        for (int c = 0; c < g.G; ++c) {
            const auto& e = entries[m][c];
            const int max_k = sizes[c] - 1;
            if (e.explicit_indices) {
                for (int idx : *e.explicit_indices)
                    if (idx < 1 || idx > max_k)
                        throw ValidationError("removal pattern: index " + std::to_string(idx) +
                                              " outside [1, " + std::to_string(max_k) +
                                              "] for component " + std::to_string(c));
            } else if (e.K < 0 || e.K > max_k) {
                throw ValidationError("removal pattern: K=" + std::to_string(e.K) +
                                      " exceeds component " + std::to_string(c) + " limit " +
                                      std::to_string(max_k));
            }
        }
    }
}

CovariateSplit decompose_covariate(const Eigen::VectorXd& xbar, const ComponentEigen& eig,
                                   const std::vector<RemovalPattern::Entry>& pattern_row) {
    if (xbar.size() != eig.n) throw ValidationError("decompose_covariate: length mismatch");
    if (pattern_row.size() != eig.blocks.size())
        throw ValidationError("decompose_covariate: pattern row has wrong component count");

    CovariateSplit split;
    split.x_ns = Eigen::VectorXd::Zero(eig.n);
    split.x_s = Eigen::VectorXd::Zero(eig.n);
    split.x_0 = Eigen::VectorXd::Zero(eig.n);

    for (std::size_t c = 0; c < eig.blocks.size(); ++c) {
        const auto& block = eig.blocks[c];
        const auto m = static_cast<int>(block.nodes.size());
        const Eigen::VectorXd coords = block.vectors.transpose() * xbar;  // b = V' xbar

        // Columns: 0 .. m-2 nonzero eigenvalues (decreasing), m-1 null.
        // Low-frequency index j in [1, m-1] maps to column m-1-j.
        std::set<int> spatial_cols;
        const auto& e = pattern_row[c];
        if (e.explicit_indices) {
            for (int idx : *e.explicit_indices) {
                if (idx < 1 || idx > m - 1)
                    throw ValidationError("decompose_covariate: explicit index " +
                                          std::to_string(idx) + " invalid for component of size " +
                                          std::to_string(m));
                spatial_cols.insert(m - 1 - idx);
            }
        } else {
            if (e.K < 0 || e.K > m - 1)
                throw ValidationError("decompose_covariate: K=" + std::to_string(e.K) +
                                      " exceeds component size - 1 = " + std::to_string(m - 1));
            for (int j = 1; j <= e.K; ++j) spatial_cols.insert(m - 1 - j);
        }

        split.x_0 += block.vectors.col(m - 1) * coords(m - 1);
        for (int col = 0; col < m - 1; ++col) {
            const Eigen::VectorXd contrib = block.vectors.col(col) * coords(col);
            if (spatial_cols.count(col))
                split.x_s += contrib;
            else
                split.x_ns += contrib;
        }
    }
    return split;
}

DeconfoundedDesign deconfounded_design(const CovariateSet& cov, const ComponentEigen& eig,
                                       const RemovalPattern& pattern, const LevelMap& map,
                                       bool rescale) {
    const auto p = cov.X.cols();
    if (static_cast<Eigen::Index>(pattern.entries.size()) != p)
        throw ValidationError("deconfounded_design: pattern covariate count mismatch");

    DeconfoundedDesign out;
    out.X.resize(map.N, p);
    for (Eigen::Index mcol = 0; mcol < p; ++mcol) {
        const CovariateSplit split =
            decompose_covariate(cov.Xbar.col(mcol), eig, pattern.entries[mcol]);
        out.X.col(mcol) = expand_to_observations(split.x_ns, map) + cov.DeltaX.col(mcol);
    }

    if (rescale) {
        for (Eigen::Index mcol = 0; mcol < p; ++mcol) {
            const auto sd = [](const Eigen::VectorXd& v) {
                const double mu = v.mean();
                return std::sqrt((v.array() - mu).square().sum() / (v.size() - 1.0));
            };
            const double sd_orig = sd(cov.X.col(mcol));
            const double sd_new = sd(out.X.col(mcol));
            if (sd_new <= 1e-12 * (1.0 + sd_orig)) {
                out.unscalable_columns.push_back(static_cast<int>(mcol));
                continue;
            }
            out.X.col(mcol) *= sd_orig / sd_new;
        }
    }
    return out;
}

MoranSearchResult search_moran_minimal(const CovariateSet& cov, const AreaGraph& g,
                                       const ComponentEigen& eig, const LevelMap& map,
                                       const std::vector<int>& caps, double threshold) {
    if (!(threshold > 0.0)) throw ValidationError("search_moran_minimal: threshold must be > 0");
    if (static_cast<int>(caps.size()) != g.G)
        throw ValidationError("search_moran_minimal: caps size != component count");

    const auto sizes = g.component_sizes();
    std::vector<int> limit(g.G);
    for (int c = 0; c < g.G; ++c) limit[c] = std::min(caps[c], sizes[c] - 1);

    // Increment order: components by decreasing size (ties by label).
    std::vector<int> order(g.G);
    for (int c = 0; c < g.G; ++c) order[c] = c;
    std::sort(order.begin(), order.end(), [&](int a, int b) {
        return sizes[a] != sizes[b] ? sizes[a] > sizes[b] : a < b;
    });

    std::vector<std::string> names = cov.names;
    if (names.empty())
        for (Eigen::Index m = 0; m < cov.X.cols(); ++m)
            names.push_back("x" + std::to_string(m));

    MoranSearchResult result;
    result.pattern = RemovalPattern::zeros(names, g.G);

    for (Eigen::Index m = 0; m < cov.X.cols(); ++m) {
        std::vector<RemovalPattern::Entry> row(g.G);
        auto i_std_of = [&](const std::vector<RemovalPattern::Entry>& r) {
            const CovariateSplit split = decompose_covariate(cov.Xbar.col(m), eig, r);
            return moran_i(split.x_ns, g).I_std;
        };

        double current = i_std_of(row);
        bool reached = current < threshold;
        while (!reached) {
            bool advanced = false;
            for (int c : order) {
                if (row[c].K >= limit[c]) continue;
                ++row[c].K;
                advanced = true;
                current = i_std_of(row);
                if (current < threshold) {
                    reached = true;
                    break;
                }
            }
            if (!advanced) break;  // all caps hit
        }
        if (!reached) result.capped = true;
        for (int c = 0; c < g.G; ++c) row[c].achieved_i_std = current;
        result.pattern.entries[m] = row;
    }
    return result;
}

}  // namespace bicar
