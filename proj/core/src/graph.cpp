#include "bicar/graph.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <set>
#include <sstream>

#include "bicar/util.hpp"

namespace bicar {

std::vector<int> AreaGraph::component_nodes(int c) const {
    std::vector<int> nodes;
    for (int i = 0; i < n; ++i)
        if (components[i] == c) nodes.push_back(i);
    return nodes;
}

std::vector<int> AreaGraph::component_sizes() const {
    std::vector<int> sizes(G, 0);
    for (int i = 0; i < n; ++i) ++sizes[components[i]];
    return sizes;
}

AreaGraph build_graph(int n, const std::vector<std::pair<int, int>>& edges) {
    if (n <= 0) throw ValidationError("build_graph: n must be positive");

    std::set<std::pair<int, int>> unique_edges;
    for (const auto& [a, b] : edges) {
        if (a < 0 || a >= n || b < 0 || b >= n)
            throw ValidationError("build_graph: edge (" + std::to_string(a) + ", " +
                                  std::to_string(b) + ") out of range for n=" + std::to_string(n));
        if (a == b)
            throw ValidationError("build_graph: self-loop at node " + std::to_string(a));
        unique_edges.emplace(std::min(a, b), std::max(a, b));
    }

    AreaGraph g;
    g.n = n;
    g.edges.assign(unique_edges.begin(), unique_edges.end());
    g.W = Eigen::MatrixXd::Zero(n, n);
    for (const auto& [a, b] : g.edges) {
        g.W(a, b) = 1.0;
        g.W(b, a) = 1.0;
    }
    g.degrees = g.W.rowwise().sum();
    g.R = Eigen::MatrixXd(g.degrees.asDiagonal());
    g.R -= g.W;

    // Connected components by iterative DFS.
    g.components.assign(n, -1);
    std::vector<std::vector<int>> adj(n);
    for (const auto& [a, b] : g.edges) {
        adj[a].push_back(b);
        adj[b].push_back(a);
    }
    int label = 0;
    std::vector<int> stack;
    for (int start = 0; start < n; ++start) {
        if (g.components[start] >= 0) continue;
        stack.push_back(start);
        g.components[start] = label;
        while (!stack.empty()) {
            const int v = stack.back();
            stack.pop_back();
            for (int w : adj[v]) {
                if (g.components[w] < 0) {
                    g.components[w] = label;
                    stack.push_back(w);
                }
            }
        }
        ++label;
    }
    g.G = label;
    return g;
}

namespace {

// Fix the sign of each eigenvector column: first coordinate with magnitude
// above tol becomes positive.
void fix_sign(Eigen::MatrixXd& vectors, double tol) {
    for (Eigen::Index j = 0; j < vectors.cols(); ++j) {
        for (Eigen::Index i = 0; i < vectors.rows(); ++i) {
            const double v = vectors(i, j);
            if (std::abs(v) > tol) {
                if (v < 0.0) vectors.col(j) = -vectors.col(j);
                break;
            }
        }
    }
}

}  // namespace

ComponentEigen eigendecompose(const AreaGraph& g) {
    ComponentEigen eig;
    eig.n = g.n;
    eig.blocks.resize(g.G);
    for (int c = 0; c < g.G; ++c) {
        auto& block = eig.blocks[c];
        block.component = c;
        block.nodes = g.component_nodes(c);
        const auto m = static_cast<Eigen::Index>(block.nodes.size());

        Eigen::MatrixXd Rc(m, m);
        for (Eigen::Index i = 0; i < m; ++i)
            for (Eigen::Index j = 0; j < m; ++j)
                Rc(i, j) = g.R(block.nodes[i], block.nodes[j]);

        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(Rc);
        if (solver.info() != Eigen::Success)
            throw NumericalError("eigendecompose: solver failed on component " + std::to_string(c));

        // Eigen returns increasing order; flip to decreasing.
        Eigen::VectorXd values = solver.eigenvalues().reverse();
        Eigen::MatrixXd local = solver.eigenvectors().rowwise().reverse();

        // The smallest eigenvalue of a Laplacian block is 0 up to roundoff;
        // snap it so downstream null-space logic is exact.
        values(m - 1) = 0.0;

        fix_sign(local, 1e-9);

        block.values = values;
        block.vectors = Eigen::MatrixXd::Zero(g.n, m);
        for (Eigen::Index i = 0; i < m; ++i) block.vectors.row(block.nodes[i]) = local.row(i);
    }
    return eig;
}

Eigen::VectorXd component_pseudoinverse_diag(const AreaGraph& g, int component) {
    if (component < 0 || component >= g.G)
        throw ValidationError("component_pseudoinverse_diag: no component " +
                              std::to_string(component));
    const auto nodes = g.component_nodes(component);
    const auto m = static_cast<Eigen::Index>(nodes.size());
    if (m < 2)
        throw NumericalError("degenerate block: component " + std::to_string(component) +
                             " is a singleton");

    Eigen::MatrixXd Rc(m, m);
    for (Eigen::Index i = 0; i < m; ++i)
        for (Eigen::Index j = 0; j < m; ++j) Rc(i, j) = g.R(nodes[i], nodes[j]);

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(Rc);
    if (solver.info() != Eigen::Success)
        throw NumericalError("component_pseudoinverse_diag: eigensolver failed");

    // One zero eigenvalue per connected block; invert the rest.
    const Eigen::VectorXd& values = solver.eigenvalues();
    const Eigen::MatrixXd& vectors = solver.eigenvectors();
    const double cutoff = 1e-9 * values(m - 1);

    Eigen::VectorXd diag = Eigen::VectorXd::Zero(m);
    for (Eigen::Index j = 0; j < m; ++j) {
        if (values(j) <= cutoff) continue;
        diag += vectors.col(j).cwiseAbs2() / values(j);
    }
    return diag;
}

AreaGraph make_path(int n) {
    std::vector<std::pair<int, int>> edges;
    for (int i = 0; i + 1 < n; ++i) edges.emplace_back(i, i + 1);
    return build_graph(n, edges);
}

AreaGraph make_lattice(int rows, int cols) {
    if (rows <= 0 || cols <= 0) throw ValidationError("make_lattice: nonpositive dimension");
    std::vector<std::pair<int, int>> edges;
    auto id = [cols](int r, int c) { return r * cols + c; };
    for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < cols; ++c) {
            if (c + 1 < cols) edges.emplace_back(id(r, c), id(r, c + 1));
            if (r + 1 < rows) edges.emplace_back(id(r, c), id(r + 1, c));
        }
    }
    return build_graph(rows * cols, edges);
}

AreaGraph disjoint_union(const std::vector<AreaGraph>& parts) {
    int n = 0;
    std::vector<std::pair<int, int>> edges;
    for (const auto& part : parts) {
        for (const auto& [a, b] : part.edges) edges.emplace_back(a + n, b + n);
        n += part.n;
    }
    return build_graph(n, edges);
}

AreaGraph read_adjacency(std::istream& in) {
    std::string line;
    int n = -1;
    std::vector<std::pair<int, int>> edges;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto first = line.find_first_not_of(" \t\r");
        if (first == std::string::npos) continue;
        if (line[first] == '#') continue;
        if (line.compare(first, 2, "n=") == 0) {
            n = std::stoi(line.substr(first + 2));
            continue;
        }
        std::istringstream ss(line);
        int a = 0, b = 0;
        if (!(ss >> a >> b))
            throw ValidationError("adjacency line " + std::to_string(lineno) +
                                  ": expected \"i j\", got \"" + line + "\"");
        edges.emplace_back(a, b);
    }
    if (n < 0) throw ValidationError("adjacency file: missing \"n=<count>\" header");
    return build_graph(n, edges);
}

AreaGraph read_adjacency_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open adjacency file: " + path);
    return read_adjacency(in);
}

void write_adjacency(std::ostream& out, const AreaGraph& g) {
    out << "n=" << g.n << "\n";
    for (const auto& [a, b] : g.edges) out << a << " " << b << "\n";
}

void write_adjacency_file(const std::string& path, const AreaGraph& g) {
    std::ofstream out(path);
    if (!out) throw ValidationError("cannot write adjacency file: " + path);
    write_adjacency(out, g);
}

}  // namespace bicar
