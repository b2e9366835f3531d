#pragma once

// The adapt-then-combine (and combine-then-adapt) diffusion recursion with
// pluggable gains: diffusion RLS, diffusion Robbins-Monro, and the single
// node RLS baseline.

#include "difest/common.hpp"
#include "difest/model.hpp"
#include "difest/topology.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <optional>
#include <vector>

namespace difest {

struct NodeState {
    Vector theta_hat;
    Matrix p;               // P_{k,i}, RLS only
    double p_inv_logdet = 0.0;
};

enum class Strategy { atc, cta };
enum class GainKind { rls, robbins_monro };

struct GainPolicy {
    GainKind kind = GainKind::rls;
    double beta = 0.75;  // robbins_monro, must lie in (1/2, 1)
};

struct RlsGain {
    Vector gain;
    Matrix next_p;
    double denom = 1.0;  // 1 + phi^T P phi
};

/// RLS gain L = P phi / (1 + phi^T P phi) and the rank-one downdate of P,
/// re-symmetrized. Algebraically next_p = (P^{-1} + phi phi^T)^{-1}.
inline RlsGain rls_gain(const Matrix& p, const Vector& phi) {
    RlsGain out;
    const Vector p_phi = p * phi;
    out.denom = 1.0 + phi.dot(p_phi);
    if (out.denom < 1.0 - 1e-12)
        throw InternalError("RLS denominator below 1; P lost positive definiteness");
    out.gain = p_phi / out.denom;
    Matrix next = p - p_phi * p_phi.transpose() / out.denom;
    out.next_p = 0.5 * (next + next.transpose());
    return out;
}

/// Robbins-Monro gain L = phi / ((k+1)^beta (1 + |phi|^2)).
inline Vector rm_gain(long k, double beta, const Vector& phi) {
    if (k < 0) throw PreconditionError("step index must be nonnegative");
    if (beta <= 0.5 || beta >= 1.0)
        throw PreconditionError("Robbins-Monro beta must lie in (1/2, 1)");
    return phi / (std::pow(static_cast<double>(k + 1), beta) * (1.0 + phi.squaredNorm()));
}

struct NetworkState {
    std::vector<NodeState> nodes;
    long k = 0;
    GainPolicy policy;
    Strategy strategy = Strategy::atc;
    std::optional<long> overflow_step;

    bool overflowed() const { return overflow_step.has_value(); }
};

inline NetworkState make_network_state(int n, int m, GainPolicy policy,
                                       Strategy strategy,
                                       const std::vector<Vector>& theta0) {
    NetworkState state;
    state.policy = policy;
    state.strategy = strategy;
    state.nodes.resize(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        NodeState& node = state.nodes[static_cast<std::size_t>(i)];
        node.theta_hat = theta0.empty() ? Vector::Zero(m) : theta0[static_cast<std::size_t>(i)];
        if (policy.kind == GainKind::rls) node.p = Matrix::Identity(m, m);
    }
    return state;
}

namespace detail {

inline bool estimate_out_of_range(const Vector& v) {
    for (int i = 0; i < v.size(); ++i)
        if (!std::isfinite(v(i)) || std::abs(v(i)) > 1e200) return true;
    return false;
}

} // namespace detail

/// One diffusion step. ATC adapts then combines; CTA combines then adapts.
/// The RLS policy advances every P_{k,i} regardless of strategy. Divergent
/// estimates (|entry| > 1e200 or non-finite) raise the overflow flag and
/// freeze the state instead of crashing.
inline void step(NetworkState& net, const NetworkTopology& topology,
                 const std::vector<Vector>& phi, const Vector& y) {
    const int n = static_cast<int>(net.nodes.size());
    if (topology.n != n || static_cast<int>(phi.size()) != n || y.size() != n)
        throw StructuralError("step dimensions inconsistent with network state");
    if (net.overflowed()) {
        ++net.k;
        return;
    }

    const int m = static_cast<int>(net.nodes.front().theta_hat.size());
    std::vector<Vector> intermediate(static_cast<std::size_t>(n));

    auto adapt = [&](const Vector& base, int i) {
        const Vector& phi_i = phi[static_cast<std::size_t>(i)];
        Vector gain;
        if (net.policy.kind == GainKind::rls)
            gain = net.nodes[static_cast<std::size_t>(i)].p * phi_i /
                   (1.0 + phi_i.dot(net.nodes[static_cast<std::size_t>(i)].p * phi_i));
        else
            gain = rm_gain(net.k, net.policy.beta, phi_i);
        return Vector(base + gain * (y(i) - base.dot(phi_i)));
    };

    if (net.strategy == Strategy::atc) {
        for (int i = 0; i < n; ++i)
            intermediate[static_cast<std::size_t>(i)] =
                adapt(net.nodes[static_cast<std::size_t>(i)].theta_hat, i);
    } else {
        for (int i = 0; i < n; ++i) {
            Vector combined = Vector::Zero(m);
            for (int j = 0; j < n; ++j)
                combined += topology.adjacency(i, j) * net.nodes[static_cast<std::size_t>(j)].theta_hat;
            intermediate[static_cast<std::size_t>(i)] = adapt(combined, i);
        }
    }

    std::vector<Vector> next(static_cast<std::size_t>(n));
    if (net.strategy == Strategy::atc) {
        for (int i = 0; i < n; ++i) {
            next[static_cast<std::size_t>(i)] = Vector::Zero(m);
            for (int j = 0; j < n; ++j)
                next[static_cast<std::size_t>(i)] +=
                    topology.adjacency(i, j) * intermediate[static_cast<std::size_t>(j)];
        }
    } else {
        next = std::move(intermediate);
    }

    bool overflow = false;
    for (const Vector& v : next)
        if (detail::estimate_out_of_range(v)) overflow = true;

    if (overflow) {
        net.overflow_step = net.k;
    } else {
        for (int i = 0; i < n; ++i)
            net.nodes[static_cast<std::size_t>(i)].theta_hat = next[static_cast<std::size_t>(i)];
        if (net.policy.kind == GainKind::rls) {
            for (int i = 0; i < n; ++i) {
                NodeState& node = net.nodes[static_cast<std::size_t>(i)];
                RlsGain g = rls_gain(node.p, phi[static_cast<std::size_t>(i)]);
                node.p = g.next_p;
                node.p_inv_logdet += std::log(g.denom);
            }
        }
    }
    ++net.k;
}

/// Single node RLS without combination; identical to step() with A = I_1.
inline void individual_rls_step(NodeState& node, long k, const Vector& phi, double y) {
    (void)k;
    RlsGain g = rls_gain(node.p, phi);
    node.theta_hat += g.gain * (y - node.theta_hat.dot(phi));
    node.p = g.next_p;
    node.p_inv_logdet += std::log(g.denom);
}

/// Stacked error col{theta_hat_i - theta}.
inline Vector error_vector(const NetworkState& net, const Vector& theta) {
    const int n = static_cast<int>(net.nodes.size());
    const int m = static_cast<int>(theta.size());
    Vector err(n * m);
    for (int i = 0; i < n; ++i)
        err.segment(i * m, m) = net.nodes[static_cast<std::size_t>(i)].theta_hat - theta;
    return err;
}

} // namespace difest
