#pragma once

// Graph model of the transmission network and the DC power-flow operators
// built on it: incidence, Laplacian and the Laplacian pseudoinverse.

#include "gridstore/errors.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <iomanip>
#include <istream>
#include <limits>
#include <numeric>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

namespace gridstore {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

/// Transmission line between two buses. Stored with `from < to`; a positive
/// flow runs from `from` to `to`.
struct Edge {
    std::size_t from = 0;
    std::size_t to = 0;
    double susceptance = 1.0;
    double capacity = 0.0;
};

/// Connected weighted graph with line capacities and per-node storage.
class NetworkTopology {
public:
    NetworkTopology(std::size_t node_count, std::vector<Edge> edges, std::vector<double> storage)
        : node_count_(node_count), edges_(std::move(edges)), storage_(std::move(storage)) {
        validate();
    }

    std::size_t node_count() const noexcept { return node_count_; }
    std::size_t edge_count() const noexcept { return edges_.size(); }
    const std::vector<Edge>& edges() const noexcept { return edges_; }
    const std::vector<double>& storage() const noexcept { return storage_; }
    /// Always true: construction rejects disconnected graphs.
    bool connected() const noexcept { return true; }

    std::vector<std::size_t> degrees() const {
        std::vector<std::size_t> deg(node_count_, 0);
        for (const auto& e : edges_) {
            ++deg[e.from];
            ++deg[e.to];
        }
        return deg;
    }

    Vector capacities() const {
        Vector c(static_cast<Index>(edges_.size()));
        for (std::size_t e = 0; e < edges_.size(); ++e) c[static_cast<Index>(e)] = edges_[e].capacity;
        return c;
    }

    Vector storage_vector() const {
        return Eigen::Map<const Vector>(storage_.data(), static_cast<Index>(storage_.size()));
    }

private:
    void validate() {
        if (node_count_ == 0) throw TopologyError("network has no nodes");
        if (storage_.size() != node_count_) {
            throw TopologyError("storage list has " + std::to_string(storage_.size()) +
                                " entries for " + std::to_string(node_count_) + " nodes");
        }
        std::set<std::pair<std::size_t, std::size_t>> seen;
        for (auto& e : edges_) {
            if (e.from >= node_count_ || e.to >= node_count_) {
                throw TopologyError("edge (" + std::to_string(e.from) + "," + std::to_string(e.to) +
                                    ") references a missing node");
            }
            if (e.from == e.to) throw TopologyError("self-loop at node " + std::to_string(e.from));
            if (e.from > e.to) std::swap(e.from, e.to);
            if (!(e.susceptance > 0.0) || !std::isfinite(e.susceptance)) {
                throw TopologyError("edge susceptance must be positive and finite");
            }
            if (!(e.capacity >= 0.0)) throw TopologyError("edge capacity must be non-negative");
            if (!seen.emplace(e.from, e.to).second) {
                throw TopologyError("parallel edge between " + std::to_string(e.from) + " and " +
                                    std::to_string(e.to));
            }
        }
        for (double s : storage_) {
            if (!(s >= 0.0)) throw TopologyError("storage capacity must be non-negative");
        }
        if (!is_connected()) throw TopologyError("network is not connected");
    }

    bool is_connected() const {
        std::vector<std::size_t> parent(node_count_);
        std::iota(parent.begin(), parent.end(), std::size_t{0});
        auto find = [&](std::size_t x) {
            while (parent[x] != x) x = parent[x] = parent[parent[x]];
            return x;
        };
        std::size_t components = node_count_;
        for (const auto& e : edges_) {
            auto a = find(e.from);
            auto b = find(e.to);
            if (a != b) {
                parent[a] = b;
                --components;
            }
        }
        return components == 1;
    }

    std::size_t node_count_;
    std::vector<Edge> edges_;
    std::vector<double> storage_;
};

/// Incidence matrix, Laplacian and its pseudoinverse for one topology.
///
/// `incidence` has entries +b_e / -b_e at the two ends of each edge, the
/// Laplacian is `-incidenceᵀ diag(b)⁻¹ incidence`, and `pseudoinverse` inverts
/// the Laplacian on the complement of the constant vector while mapping the
/// constant vector to `-kernel_constant` times itself.
struct FlowOperators {
    Matrix incidence;
    Matrix laplacian;
    Matrix pseudoinverse;
    double kernel_constant = 0.0;
    /// Eigenvalues of -laplacian in ascending order (the first one is zero).
    Vector alpha_sq;
    /// Diagonal of b, one entry per edge.
    Vector susceptance;

    Index nodes() const noexcept { return laplacian.rows(); }
    Index edges() const noexcept { return incidence.rows(); }

    /// Map from nodal injections to line flows, `-∇Δ⁻¹`.
    Matrix flow_map() const { return -incidence * pseudoinverse; }

    /// Net flow leaving each node, `∇ᵀ b⁻¹ F`.
    Vector net_outflow(const Vector& flows) const {
        return incidence.transpose() * susceptance.cwiseInverse().asDiagonal() * flows;
    }
};

inline FlowOperators build_operators(const NetworkTopology& topology, double kernel_constant = 0.0) {
    if (!(kernel_constant >= 0.0) || !std::isfinite(kernel_constant)) {
        throw ParameterError("kernel constant must be finite and non-negative");
    }
    const auto n = static_cast<Index>(topology.node_count());
    const auto m = static_cast<Index>(topology.edge_count());

    FlowOperators ops;
    ops.kernel_constant = kernel_constant;
    ops.incidence = Matrix::Zero(m, n);
    ops.susceptance.resize(m);
    for (Index e = 0; e < m; ++e) {
        const auto& edge = topology.edges()[static_cast<std::size_t>(e)];
        ops.incidence(e, static_cast<Index>(edge.from)) = edge.susceptance;
        ops.incidence(e, static_cast<Index>(edge.to)) = -edge.susceptance;
        ops.susceptance[e] = edge.susceptance;
    }
    // Assembled edge by edge so every row sums to exactly zero.
    ops.laplacian = Matrix::Zero(n, n);
    for (const auto& edge : topology.edges()) {
        const auto i = static_cast<Index>(edge.from);
        const auto k = static_cast<Index>(edge.to);
        const double b = edge.susceptance;
        ops.laplacian(i, i) -= b;
        ops.laplacian(k, k) -= b;
        ops.laplacian(i, k) += b;
        ops.laplacian(k, i) += b;
    }

    Eigen::SelfAdjointEigenSolver<Matrix> eig(-ops.laplacian);
    if (eig.info() != Eigen::Success) throw NumericError("Laplacian eigendecomposition did not converge");
    ops.alpha_sq = eig.eigenvalues();
    ops.alpha_sq[0] = 0.0;

    // Zero mode is spanned exactly by the constant vector on a connected graph.
    const Matrix& basis = eig.eigenvectors();
    Matrix pinv = Matrix::Zero(n, n);
    for (Index j = 1; j < n; ++j) {
        pinv.noalias() += (1.0 / ops.alpha_sq[j]) * basis.col(j) * basis.col(j).transpose();
    }
    const Matrix centering = Matrix::Identity(n, n) - Matrix::Constant(n, n, 1.0 / static_cast<double>(n));
    pinv = centering * pinv * centering;
    pinv = 0.5 * (pinv + pinv.transpose()).eval();
    ops.pseudoinverse = -pinv - Matrix::Constant(n, n, kernel_constant / static_cast<double>(n));
    return ops;
}

/// Phase angles and line flows produced by a balanced injection vector.
struct FlowState {
    Vector phases;
    Vector flows;
};

/// Largest |Σ injections| accepted as balanced (relative to the injection scale).
inline constexpr double kBalanceTolerance = 1e-9;

inline FlowState compute_flow_state(const FlowOperators& ops, const Vector& injections) {
    if (injections.size() != ops.nodes()) {
        throw ShapeError("injection vector has " + std::to_string(injections.size()) + " entries, expected " +
                         std::to_string(ops.nodes()));
    }
    const double scale = std::max(1.0, injections.cwiseAbs().maxCoeff());
    if (std::abs(injections.sum()) > kBalanceTolerance * scale) {
        std::ostringstream msg;
        msg << "injections sum to " << injections.sum() << ", not zero";
        throw BalanceError(msg.str());
    }
    FlowState state;
    state.phases = -ops.pseudoinverse * injections;
    state.flows = ops.incidence * state.phases;
    return state;
}

/// Periodic proxy for the infinite line (dimension 1, a ring of `side` nodes)
/// or the infinite square lattice (dimension 2, a side×side torus).
inline NetworkTopology make_grid(int dimension, std::size_t side, double capacity, double storage) {
    if (dimension != 1 && dimension != 2) throw ParameterError("grid dimension must be 1 or 2");
    if (side < 3) throw ParameterError("grid side must be at least 3");
    if (!(capacity >= 0.0) || !(storage >= 0.0)) throw ParameterError("capacity and storage must be non-negative");

    std::vector<Edge> edges;
    std::size_t nodes = 0;
    if (dimension == 1) {
        nodes = side;
        for (std::size_t i = 0; i < side; ++i) edges.push_back({i, (i + 1) % side, 1.0, capacity});
    } else {
        nodes = side * side;
        auto id = [side](std::size_t r, std::size_t c) { return r * side + c; };
        for (std::size_t r = 0; r < side; ++r) {
            for (std::size_t c = 0; c < side; ++c) {
                edges.push_back({id(r, c), id(r, (c + 1) % side), 1.0, capacity});
                edges.push_back({id(r, c), id((r + 1) % side, c), 1.0, capacity});
            }
        }
    }
    return NetworkTopology(nodes, std::move(edges), std::vector<double>(nodes, storage));
}

// Plain-text edge list:
//   nodes N
//   edge i k b C
//   storage i S
// Lines starting with '#' and blank lines are ignored; storage defaults to 0.

inline void write_topology(std::ostream& out, const NetworkTopology& topology) {
    out << std::setprecision(17);
    out << "nodes " << topology.node_count() << '\n';
    for (const auto& e : topology.edges()) {
        out << "edge " << e.from << ' ' << e.to << ' ' << e.susceptance << ' ' << e.capacity << '\n';
    }
    for (std::size_t i = 0; i < topology.node_count(); ++i) {
        out << "storage " << i << ' ' << topology.storage()[i] << '\n';
    }
}

inline NetworkTopology read_topology(std::istream& in) {
    std::string line;
    std::size_t line_no = 0;
    std::size_t nodes = 0;
    bool have_nodes = false;
    std::vector<Edge> edges;
    std::vector<std::pair<std::size_t, double>> storage_entries;
    auto fail = [&](const std::string& what) {
        throw FormatError("topology line " + std::to_string(line_no) + ": " + what);
    };
    while (std::getline(in, line)) {
        ++line_no;
        std::istringstream fields(line);
        std::string keyword;
        if (!(fields >> keyword) || keyword[0] == '#') continue;
        if (keyword == "nodes") {
            if (have_nodes) fail("duplicate 'nodes' header");
            if (!(fields >> nodes)) fail("expected node count");
            have_nodes = true;
        } else if (keyword == "edge") {
            if (!have_nodes) fail("'edge' before 'nodes' header");
            Edge e;
            if (!(fields >> e.from >> e.to >> e.susceptance >> e.capacity)) fail("expected 'edge i k b C'");
            edges.push_back(e);
        } else if (keyword == "storage") {
            if (!have_nodes) fail("'storage' before 'nodes' header");
            std::size_t i = 0;
            double s = 0.0;
            if (!(fields >> i >> s)) fail("expected 'storage i S'");
            if (i >= nodes) fail("storage for missing node " + std::to_string(i));
            storage_entries.emplace_back(i, s);
        } else {
            fail("unknown keyword '" + keyword + "'");
        }
        std::string extra;
        if (fields >> extra) fail("trailing text '" + extra + "'");
    }
    if (!have_nodes) throw FormatError("topology has no 'nodes' header");
    std::vector<double> storage(nodes, 0.0);
    for (auto [i, s] : storage_entries) storage[i] = s;
    return NetworkTopology(nodes, std::move(edges), std::move(storage));
}

}  // namespace gridstore
