#pragma once

// Observation model y = theta^T phi + eps and the excitation checks on the
// regressor sequence (the cooperative information conditions).

#include "difest/common.hpp"
#include "difest/rng.hpp"

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>
#include <cmath>
#include <utility>
#include <vector>

namespace difest {

enum class RegressorKind {
    deterministic_schedule,
    iid_gaussian,
    one_hot_rotating,
    single_informative_node,
    adversarial,  // deterministic replay of a built schedule
};

struct RegressorSource {
    RegressorKind kind = RegressorKind::iid_gaussian;
    int m = 1;
    int n = 1;
    double variance = 1.0;   // iid_gaussian
    double magnitude = 1.0;  // one_hot_rotating / single_informative_node
    int active_node = 0;     // single_informative_node
    // deterministic_schedule / adversarial: phis[k][i]; steps beyond the
    // schedule replay as zero regressors
    std::vector<std::vector<Vector>> schedule;

    bool deterministic() const {
        return kind != RegressorKind::iid_gaussian;
    }

    Vector phi(std::uint64_t seed, long k, int node) const {
        switch (kind) {
            case RegressorKind::deterministic_schedule:
            case RegressorKind::adversarial: {
                if (k >= 0 && k < static_cast<long>(schedule.size()))
                    return schedule[static_cast<std::size_t>(k)][static_cast<std::size_t>(node)];
                return Vector::Zero(m);
            }
            case RegressorKind::iid_gaussian: {
                RandomStream stream(seed, StreamTag::regressor, static_cast<std::uint64_t>(k),
                                    static_cast<std::uint64_t>(node));
                Vector v(m);
                const double sd = std::sqrt(variance);
                for (int i = 0; i < m; ++i) v(i) = sd * stream.gaussian();
                return v;
            }
            case RegressorKind::one_hot_rotating: {
                Vector v = Vector::Zero(m);
                v(static_cast<int>(k % m)) = magnitude;
                return v;
            }
            case RegressorKind::single_informative_node: {
                Vector v = Vector::Zero(m);
                if (node == active_node) v(0) = magnitude;
                return v;
            }
        }
        return Vector::Zero(m);
    }
};

enum class NoiseKind { independent_bounded, gaussian_multivariate };

struct NoiseSource {
    NoiseKind kind = NoiseKind::gaussian_multivariate;
    int n = 1;
    Matrix sigma;          // gaussian kind, n x n PSD
    double variance = 1.0; // independent_bounded: uniform with this variance
    double bound_M = 1.0;

    // PSD square root of sigma, filled by finalize()
    Matrix sqrt_sigma;

    void finalize() {
        if (kind == NoiseKind::gaussian_multivariate) {
            if (sigma.rows() != n || sigma.cols() != n)
                throw StructuralError("noise covariance has wrong shape");
            if ((sigma - sigma.transpose()).cwiseAbs().maxCoeff() > 1e-10)
                throw StructuralError("noise covariance is not symmetric");
            Eigen::SelfAdjointEigenSolver<Matrix> es(sigma);
            if (es.eigenvalues().minCoeff() < -1e-10)
                throw StructuralError("noise covariance is not PSD");
            if (bound_M < es.eigenvalues().maxCoeff() * (1.0 - 1e-12) &&
                bound_M < sigma.diagonal().maxCoeff() * (1.0 - 1e-12))
                throw ConstraintError("noise bound M below the covariance diagonal");
            sqrt_sigma = es.eigenvectors() *
                         es.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal() *
                         es.eigenvectors().transpose();
        } else {
            if (variance > bound_M * (1.0 + 1e-12))
                throw ConstraintError("bounded noise variance exceeds bound M");
        }
    }

    Vector draw(std::uint64_t seed, long k) const {
        RandomStream stream(seed, StreamTag::noise, static_cast<std::uint64_t>(k));
        Vector z(n);
        if (kind == NoiseKind::gaussian_multivariate) {
            for (int i = 0; i < n; ++i) z(i) = stream.gaussian();
            return sqrt_sigma * z;
        }
        const double half = std::sqrt(3.0 * variance);
        for (int i = 0; i < n; ++i) z(i) = stream.uniform(-half, half);
        return z;
    }
};

struct RegressionProblem {
    int m = 1;
    int n = 1;
    Vector theta;
    RegressorSource regressors;
    NoiseSource noise;
};

struct Observation {
    std::vector<Vector> phi;  // per node
    Vector noise;
    Vector y;
};

/// One step of the regression model: y_{k,i} = theta^T phi_{k,i} + eps_{k,i}.
inline Observation observe(const RegressionProblem& problem, long k, std::uint64_t seed) {
    if (k < 0) throw PreconditionError("step index must be nonnegative");
    Observation obs;
    obs.phi.reserve(static_cast<std::size_t>(problem.n));
    for (int i = 0; i < problem.n; ++i) obs.phi.push_back(problem.regressors.phi(seed, k, i));
    obs.noise = problem.noise.draw(seed, k);
    obs.y.resize(problem.n);
    for (int i = 0; i < problem.n; ++i)
        obs.y(i) = problem.theta.dot(obs.phi[static_cast<std::size_t>(i)]) + obs.noise(i);
    return obs;
}

/// lambda_k(h): smallest eigenvalue of the node-and-window averaged
/// normalized outer products (1/(nh)) sum_i sum_j phi phi^T / (1+|phi|^2).
inline double excitation_lambda(const std::vector<std::vector<Vector>>& window) {
    if (window.empty()) throw StructuralError("empty excitation window");
    const int n = static_cast<int>(window.front().size());
    if (n == 0) throw StructuralError("excitation window has no nodes");
    const int m = static_cast<int>(window.front().front().size());
    Matrix acc = Matrix::Zero(m, m);
    for (const auto& step : window) {
        if (static_cast<int>(step.size()) != n)
            throw StructuralError("excitation window has inconsistent node counts");
        for (const Vector& phi : step) {
            if (phi.size() != m) throw StructuralError("regressor dimension mismatch");
            acc.noalias() += phi * phi.transpose() / (1.0 + phi.squaredNorm());
        }
    }
    acc /= static_cast<double>(n) * static_cast<double>(window.size());
    Eigen::SelfAdjointEigenSolver<Matrix> es(acc);
    return std::max(0.0, es.eigenvalues().minCoeff());
}

struct ExcitationReport {
    double alpha = 0.0;
    double c = 0.0;
    int h = 1;
    std::vector<std::pair<long, double>> lambda_series;  // (k, lambda_k(h))
    double min_statistic = 0.0;                          // inf over grid of k^alpha lambda_k(h)
    bool verdict = false;
    bool finite_horizon = true;  // always: the paper's infimum over all k is not computable
};

/// Finite-horizon certificate for the cooperative information condition:
/// evaluates k^alpha * lambda_k(h) on the grid k in {1, 1+h, ...} against c.
/// Deterministic sources are evaluated exactly; stochastic ones by Monte
/// Carlo over at least `mc_draws` regressor draws per window.
inline ExcitationReport check_a3(const RegressorSource& source, std::uint64_t seed,
                                 long horizon, int h, double alpha, double c,
                                 int mc_draws = 1000) {
    if (alpha < 0.0 || alpha >= 0.5)
        throw PreconditionError("alpha must lie in [0, 1/2)");
    if (horizon < h) throw PreconditionError("horizon shorter than window length");
    ExcitationReport report;
    report.alpha = alpha;
    report.c = c;
    report.h = h;
    report.min_statistic = std::numeric_limits<double>::infinity();
    for (long k = 1; k + h - 1 <= horizon; k += h) {
        double lambda = 0.0;
        if (source.deterministic()) {
            std::vector<std::vector<Vector>> window;
            for (long j = k; j < k + h; ++j) {
                std::vector<Vector> step;
                for (int i = 0; i < source.n; ++i) step.push_back(source.phi(seed, j, i));
                window.push_back(std::move(step));
            }
            lambda = excitation_lambda(window);
        } else {
            // conditional expectation estimated over independent redraws
            Matrix acc = Matrix::Zero(source.m, source.m);
            for (int d = 0; d < mc_draws; ++d) {
                const std::uint64_t s = detail::combine(seed, static_cast<std::uint64_t>(d) + 1);
                for (long j = k; j < k + h; ++j)
                    for (int i = 0; i < source.n; ++i) {
                        const Vector phi = source.phi(s, j, i);
                        acc.noalias() += phi * phi.transpose() / (1.0 + phi.squaredNorm());
                    }
            }
            acc /= static_cast<double>(mc_draws) * source.n * h;
            Eigen::SelfAdjointEigenSolver<Matrix> es(acc);
            lambda = std::max(0.0, es.eigenvalues().minCoeff());
        }
        report.lambda_series.emplace_back(k, lambda);
        report.min_statistic =
            std::min(report.min_statistic, std::pow(static_cast<double>(k), alpha) * lambda);
    }
    report.verdict = report.min_statistic > c;
    return report;
}

/// Smallest eigenvalue of a symmetric PSD information matrix.
inline double min_information_eigenvalue(const Matrix& p_inv) {
    if (p_inv.rows() != p_inv.cols()) throw StructuralError("information matrix must be square");
    if ((p_inv - p_inv.transpose()).cwiseAbs().maxCoeff() > 1e-9)
        throw StructuralError("information matrix is not symmetric");
    Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (p_inv + p_inv.transpose()));
    return es.eigenvalues().minCoeff();
}

} // namespace difest
