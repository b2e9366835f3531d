#pragma once

// Network graph construction and validation against the connectivity
// assumptions, plus the spectral constants that drive the convergence rates:
// Laplacian gap, Cheeger constant and the contraction constant s.

#include "difest/common.hpp"
#include "difest/rng.hpp"

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <queue>
#include <utility>
#include <vector>

namespace difest {

struct NetworkTopology {
    int n = 0;
    Matrix adjacency;  // a_ij = weight node i places on node j's value

    bool is_symmetric(double tol = 1e-12) const {
        return (adjacency - adjacency.transpose()).cwiseAbs().maxCoeff() <= tol;
    }

    std::vector<std::pair<int, int>> directed_edges() const {
        std::vector<std::pair<int, int>> edges;
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j)
                if (adjacency(i, j) > 0.0) edges.emplace_back(i, j);
        return edges;
    }
};

struct ValidationReport {
    bool doubly_stochastic = false;
    bool irreducible = false;
    bool aperiodic = false;
    bool ata_irreducible = false;
    bool a1 = false;        // all four above
    bool a1_prime = false;  // irreducible only
    int period = 0;
};

namespace detail {

inline void require_square_nonnegative(const Matrix& a) {
    if (a.rows() != a.cols() || a.rows() < 1)
        throw StructuralError("adjacency matrix must be square and non-empty");
    if ((a.array() < 0.0).any())
        throw StructuralError("adjacency matrix has negative entries");
}

inline std::vector<std::vector<int>> support_out_edges(const Matrix& a, bool transpose) {
    const int n = static_cast<int>(a.rows());
    std::vector<std::vector<int>> out(n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            const double w = transpose ? a(j, i) : a(i, j);
            if (w > 0.0) out[i].push_back(j);
        }
    return out;
}

inline std::vector<int> reachable(const std::vector<std::vector<int>>& out, int start) {
    std::vector<int> dist(out.size(), -1);
    std::queue<int> q;
    dist[start] = 0;
    q.push(start);
    while (!q.empty()) {
        int u = q.front();
        q.pop();
        for (int v : out[u])
            if (dist[v] < 0) {
                dist[v] = dist[u] + 1;
                q.push(v);
            }
    }
    return dist;
}

inline bool strongly_connected(const Matrix& a) {
    auto fwd = reachable(support_out_edges(a, false), 0);
    auto bwd = reachable(support_out_edges(a, true), 0);
    for (std::size_t i = 0; i < fwd.size(); ++i)
        if (fwd[i] < 0 || bwd[i] < 0) return false;
    return true;
}

// Period of a strongly connected digraph: gcd of (depth[u] + 1 - depth[v])
// over all edges (u, v), depths from a BFS tree.
inline int digraph_period(const Matrix& a) {
    auto out = support_out_edges(a, false);
    auto depth = reachable(out, 0);
    long long g = 0;
    for (std::size_t u = 0; u < out.size(); ++u)
        for (int v : out[u]) g = std::gcd(g, static_cast<long long>(depth[u] + 1 - depth[v]));
    return static_cast<int>(g < 0 ? -g : g);
}

} // namespace detail

/// Check Assumption A1 (irreducible, aperiodic, doubly stochastic, with
/// A^T A irreducible) and the weaker A1' (irreducible only).
inline ValidationReport check_assumption_a1(const NetworkTopology& topology,
                                            double tol = 1e-12) {
    const Matrix& a = topology.adjacency;
    detail::require_square_nonnegative(a);
    const int n = static_cast<int>(a.rows());

    ValidationReport report;
    bool ds = true;
    for (int i = 0; i < n && ds; ++i)
        ds = std::abs(a.row(i).sum() - 1.0) <= tol && std::abs(a.col(i).sum() - 1.0) <= tol;
    report.doubly_stochastic = ds;

    report.irreducible = detail::strongly_connected(a);
    if (report.irreducible) {
        report.period = detail::digraph_period(a);
        report.aperiodic = report.period == 1;
    }
    const Matrix ata = a.transpose() * a;
    report.ata_irreducible = detail::strongly_connected(ata);

    report.a1 = report.doubly_stochastic && report.irreducible && report.aperiodic &&
                report.ata_irreducible;
    report.a1_prime = report.irreducible;
    return report;
}

enum class TopologyKind { ring_self_loops, complete_uniform, metropolis };

struct TopologyParams {
    double self_weight = 0.5;                       // ring_self_loops
    std::vector<std::pair<int, int>> edges;         // metropolis (undirected)
};

inline NetworkTopology build_standard_topology(TopologyKind kind, int n,
                                               const TopologyParams& params = {}) {
    if (n < 1) throw ConstraintError("node count must be positive");
    NetworkTopology topo;
    topo.n = n;
    topo.adjacency = Matrix::Zero(n, n);
    switch (kind) {
        case TopologyKind::complete_uniform:
            topo.adjacency.setConstant(1.0 / n);
            break;
        case TopologyKind::ring_self_loops: {
            const double w = params.self_weight;
            if (w <= 0.0 || w >= 1.0)
                throw ConstraintError("ring self weight must lie in (0,1)");
            if (n == 1) {
                topo.adjacency(0, 0) = 1.0;
            } else if (n == 2) {
                topo.adjacency << w, 1.0 - w, 1.0 - w, w;
            } else {
                for (int i = 0; i < n; ++i) {
                    topo.adjacency(i, i) = w;
                    topo.adjacency(i, (i + 1) % n) = (1.0 - w) / 2.0;
                    topo.adjacency(i, (i + n - 1) % n) = (1.0 - w) / 2.0;
                }
            }
            break;
        }
        case TopologyKind::metropolis: {
            std::vector<std::vector<int>> nbrs(n);
            for (auto [i, j] : params.edges) {
                if (i < 0 || j < 0 || i >= n || j >= n || i == j)
                    throw ConstraintError("metropolis edge list has an invalid edge");
                nbrs[i].push_back(j);
                nbrs[j].push_back(i);
            }
            for (int i = 0; i < n; ++i) {
                double row = 0.0;
                for (int j : nbrs[i]) {
                    const double w =
                        1.0 / (1.0 + std::max(nbrs[i].size(), nbrs[static_cast<std::size_t>(j)].size()));
                    topo.adjacency(i, j) = w;
                    row += w;
                }
                topo.adjacency(i, i) = 1.0 - row;
            }
            if (n > 1 && !detail::strongly_connected(topo.adjacency))
                throw ConstraintError("metropolis edge list is not connected");
            break;
        }
    }
    return topo;
}

/// Smallest eigenvalue of I - A above 1e-10 (0 only for the single node graph).
inline double laplacian_gap(const NetworkTopology& topology) {
    const Matrix& a = topology.adjacency;
    detail::require_square_nonnegative(a);
    if (!topology.is_symmetric())
        throw PreconditionError("laplacian gap requires a symmetric adjacency matrix");
    const Matrix lap = Matrix::Identity(topology.n, topology.n) - a;
    Eigen::SelfAdjointEigenSolver<Matrix> es(lap);
    for (int i = 0; i < topology.n; ++i)
        if (es.eigenvalues()(i) > 1e-10) return es.eigenvalues()(i);
    return 0.0;
}

/// Cheeger constant by exhaustive cut enumeration; unit vertex volume, which
/// matches weighted degree 1 of a doubly stochastic adjacency.
inline double cheeger_constant(const NetworkTopology& topology) {
    const Matrix& a = topology.adjacency;
    detail::require_square_nonnegative(a);
    const int n = topology.n;
    if (n == 1) return std::numeric_limits<double>::infinity();
    if (n > 20) throw ResourceError("cheeger constant limited to n <= 20");
    if (!topology.is_symmetric())
        throw PreconditionError("cheeger constant requires a symmetric adjacency matrix");

    double best = std::numeric_limits<double>::infinity();
    const std::uint32_t full = (1u << n) - 1u;
    // enumerate subsets containing node 0; complements cover the rest
    for (std::uint32_t mask = 1; mask < full; mask += 2) {
        int size = 0;
        double cut = 0.0;
        for (int i = 0; i < n; ++i) {
            if (!(mask >> i & 1u)) continue;
            ++size;
            for (int j = 0; j < n; ++j)
                if (!(mask >> j & 1u)) cut += a(i, j);
        }
        best = std::min(best, cut / std::min(size, n - size));
    }
    return best;
}

struct SpectralReport {
    double laplacian_gap = 0.0;
    double cheeger = std::numeric_limits<double>::quiet_NaN();
    double s_symmetric = 0.0;
    double s_generic_bound = 0.0;
    int h = 1;
    bool single_node_sentinel = false;  // n = 1: s degenerates to 1
    bool has_cheeger = false;
};

namespace detail {

// Path b_1..b_q through the support of B = A^T A visiting 1,2,...,n in order,
// built from BFS shortest paths between consecutive nodes.
inline std::vector<int> contraction_path(const Matrix& ata) {
    const int n = static_cast<int>(ata.rows());
    auto out = support_out_edges(ata, false);
    std::vector<int> seq{0};
    for (int i = 0; i + 1 < n; ++i) {
        // BFS from i to i+1
        std::vector<int> prev(n, -2);
        std::queue<int> q;
        prev[i] = -1;
        q.push(i);
        while (!q.empty() && prev[i + 1] == -2) {
            int u = q.front();
            q.pop();
            for (int v : out[u])
                if (prev[v] == -2) {
                    prev[v] = u;
                    q.push(v);
                }
        }
        if (prev[i + 1] == -2)
            throw PreconditionError("A^T A is not irreducible; cannot build contraction path");
        std::vector<int> path;
        for (int v = i + 1; v != -1; v = prev[v]) path.push_back(v);
        std::reverse(path.begin(), path.end());
        seq.insert(seq.end(), path.begin() + 1, path.end());
    }
    return seq;
}

} // namespace detail

/// Contraction constant s: the explicit symmetric-case formula
/// s = (inf_i a_ii / (32 n (1+4h)^2)) * lambda(G), plus the generic bound
/// from the contraction lemma's path construction (half its supremum).
inline SpectralReport spectral_constant_s(const NetworkTopology& topology, int h) {
    if (h < 1) throw PreconditionError("block length h must be positive");
    const Matrix& a = topology.adjacency;
    detail::require_square_nonnegative(a);
    const int n = topology.n;

    SpectralReport report;
    report.h = h;
    if (n == 1) {
        report.single_node_sentinel = true;
        report.s_symmetric = 1.0;
        report.s_generic_bound = 1.0;
        report.laplacian_gap = 0.0;
        return report;
    }

    if (topology.is_symmetric()) {
        const double min_diag = a.diagonal().minCoeff();
        if (min_diag <= 0.0)
            throw PreconditionError("symmetric s formula needs positive self weights");
        report.laplacian_gap = laplacian_gap(topology);
        const double hh = 1.0 + 4.0 * h;
        report.s_symmetric = min_diag / (32.0 * n * hh * hh) * report.laplacian_gap;
        if (n <= 20) {
            report.cheeger = cheeger_constant(topology);
            report.has_cheeger = true;
        }
    }

    const auto a1 = check_assumption_a1(topology);
    if (a1.a1) {
        const Matrix ata = a.transpose() * a;
        const auto seq = detail::contraction_path(ata);
        const int q = static_cast<int>(seq.size());
        double min_edge = std::numeric_limits<double>::infinity();
        for (int j = 0; j + 1 < q; ++j) min_edge = std::min(min_edge, ata(seq[j], seq[j + 1]));
        const double denom = 512.0 * std::pow(static_cast<double>(h), 3) *
                             std::pow(static_cast<double>(n), 4) * q * (1.0 + double(n) * n);
        report.s_generic_bound = 0.5 * min_edge / denom;
    }
    return report;
}

/// Random symmetric doubly stochastic matrix via symmetrized Sinkhorn scaling.
/// Test-data generator; rejects draws whose residual exceeds 1e-10.
inline Matrix make_random_doubly_stochastic(int n, RandomStream& rng,
                                            int max_rounds = 200) {
    if (n == 1) return Matrix::Constant(1, 1, 1.0);
    for (int attempt = 0; attempt < 64; ++attempt) {
        Matrix m(n, n);
        for (int i = 0; i < n; ++i)
            for (int j = i; j < n; ++j) {
                const double v = 0.05 + rng.uniform01();
                m(i, j) = v;
                m(j, i) = v;
            }
        for (int round = 0; round < max_rounds; ++round) {
            for (int i = 0; i < n; ++i) m.row(i) /= m.row(i).sum();
            m = Matrix(0.5 * (m + m.transpose().eval()));
        }
        double residual = 0.0;
        for (int i = 0; i < n; ++i)
            residual = std::max(residual, std::abs(m.row(i).sum() - 1.0));
        if (residual <= 1e-10) return m;
    }
    throw SearchFailure("sinkhorn scaling failed to converge");
}

} // namespace difest
