#pragma once

#include <Eigen/Dense>

#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

namespace bicar {

/// Neighbourhood graph of macro-areas. W is the symmetric binary proximity
/// matrix, R = D - W its Laplacian; `components` labels each node with its
/// connected component in [0, G).
struct AreaGraph {
    int n = 0;
    std::vector<std::pair<int, int>> edges;  ///< unique undirected edges, first < second
    Eigen::MatrixXd W;
    Eigen::VectorXd degrees;  ///< d_i = sum_j w_ij
    Eigen::MatrixXd R;
    std::vector<int> components;
    int G = 0;

    Eigen::MatrixXd D() const { return degrees.asDiagonal(); }

    /// Node ids of component c, ascending.
    std::vector<int> component_nodes(int c) const;
    std::vector<int> component_sizes() const;
};

/// Per-component symmetric eigendecomposition of the Laplacian.
/// Within each block the eigenvalues are sorted in decreasing order, so the
/// last one is 0 with a constant eigenvector; eigenvectors are embedded into
/// n-dimensional space with zeros outside their component. Sign convention:
/// the first coordinate of each eigenvector that is nonzero (above a small
/// tolerance) is positive, so decompositions are reproducible.
struct ComponentEigen {
    struct Block {
        int component = 0;
        std::vector<int> nodes;   ///< global node ids, ascending
        Eigen::VectorXd values;   ///< decreasing; values[size-1] == 0
        Eigen::MatrixXd vectors;  ///< n x size, column j pairs with values[j]
    };
    int n = 0;
    std::vector<Block> blocks;  ///< indexed by component label
};

/// Build the graph from an edge list. Rejects out-of-range indices,
/// self-loops; duplicate edges are collapsed.
AreaGraph build_graph(int n, const std::vector<std::pair<int, int>>& edges);

ComponentEigen eigendecompose(const AreaGraph& g);

/// Diagonal of the Moore-Penrose pseudoinverse of component c's Laplacian
/// block (the constrained marginal variances). Throws NumericalError
/// ("degenerate block") for singleton components, whose block is null.
Eigen::VectorXd component_pseudoinverse_diag(const AreaGraph& g, int component);

/// Convenience builders for synthetic graphs.
AreaGraph make_path(int n);
AreaGraph make_lattice(int rows, int cols);  // rook adjacency
AreaGraph disjoint_union(const std::vector<AreaGraph>& parts);

/// Adjacency file format: optional '#' comment lines, a header "n=<count>",
/// then one edge per line as "i j" with 0-based indices.
AreaGraph read_adjacency(std::istream& in);
AreaGraph read_adjacency_file(const std::string& path);
void write_adjacency(std::ostream& out, const AreaGraph& g);
void write_adjacency_file(const std::string& path, const AreaGraph& g);

}  // namespace bicar
