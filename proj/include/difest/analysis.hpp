#pragma once

// Monte Carlo harness and the convergence/divergence analyses: rate fits
// against the mean-square bound, the plateau of the scalar necessity case,
// the almost-sure rate window test, and the psi-contraction property.

#include "difest/common.hpp"
#include "difest/diffusion.hpp"
#include "difest/model.hpp"
#include "difest/rng.hpp"
#include "difest/topology.hpp"

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <future>
#include <limits>
#include <optional>
#include <thread>
#include <vector>

namespace difest {

struct SimulationSetup {
    RegressionProblem problem;
    NetworkTopology topology;
    GainPolicy policy;
    Strategy strategy = Strategy::atc;
    std::vector<Vector> theta0;  // empty = all zeros
};

struct TrajectoryRecord {
    std::vector<double> err_norm_sq;                   // index k = after k steps
    std::vector<std::vector<double>> lambda_min_pinv;  // [k][node], optional
    std::vector<std::vector<double>> p_ratio;          // [k][node] P_{k+1}/P_k, m=1 RLS
    std::optional<long> overflow_step;
    std::uint64_t seed = 0;
};

struct TrajectoryOptions {
    bool record_lambda = false;
    bool record_p_ratio = false;
};

inline TrajectoryRecord simulate_trajectory(const SimulationSetup& setup, long horizon,
                                            std::uint64_t seed,
                                            const TrajectoryOptions& opts = {}) {
    const int n = setup.problem.n;
    const int m = setup.problem.m;
    NetworkState net = make_network_state(n, m, setup.policy, setup.strategy, setup.theta0);

    TrajectoryRecord rec;
    rec.seed = seed;
    rec.err_norm_sq.reserve(static_cast<std::size_t>(horizon) + 1);
    rec.err_norm_sq.push_back(error_vector(net, setup.problem.theta).squaredNorm());

    std::vector<Matrix> gram;
    if (opts.record_lambda) {
        gram.assign(static_cast<std::size_t>(n), Matrix::Identity(m, m));
        std::vector<double> lam(static_cast<std::size_t>(n), 1.0);
        rec.lambda_min_pinv.push_back(lam);
    }

    for (long k = 0; k < horizon; ++k) {
        const Observation obs = observe(setup.problem, k, seed);
        std::vector<double> ratios;
        if (opts.record_p_ratio && setup.policy.kind == GainKind::rls && m == 1) {
            ratios.reserve(static_cast<std::size_t>(n));
            for (int i = 0; i < n; ++i) ratios.push_back(net.nodes[static_cast<std::size_t>(i)].p(0, 0));
        }
        step(net, setup.topology, obs.phi, obs.y);
        if (!ratios.empty() && !net.overflowed()) {
            for (int i = 0; i < n; ++i)
                ratios[static_cast<std::size_t>(i)] =
                    net.nodes[static_cast<std::size_t>(i)].p(0, 0) / ratios[static_cast<std::size_t>(i)];
            rec.p_ratio.push_back(ratios);
        }
        if (net.overflowed()) {
            rec.overflow_step = net.overflow_step;
            break;
        }
        rec.err_norm_sq.push_back(error_vector(net, setup.problem.theta).squaredNorm());
        if (opts.record_lambda) {
            std::vector<double> lam(static_cast<std::size_t>(n));
            for (int i = 0; i < n; ++i) {
                gram[static_cast<std::size_t>(i)].noalias() +=
                    obs.phi[static_cast<std::size_t>(i)] * obs.phi[static_cast<std::size_t>(i)].transpose();
                Eigen::SelfAdjointEigenSolver<Matrix> es(gram[static_cast<std::size_t>(i)]);
                lam[static_cast<std::size_t>(i)] = es.eigenvalues().minCoeff();
            }
            rec.lambda_min_pinv.push_back(lam);
        }
    }
    return rec;
}

struct MonteCarloEstimate {
    std::vector<double> mean_err_sq;  // per step; NaN where every trial had overflowed
    std::vector<double> std_err;
    std::vector<long> overflow_count;  // trials overflowed at or before step k
    long trials = 0;
    std::vector<double> final_per_node_mean;       // mean ||theta_i - theta||^2 at horizon
    std::vector<std::vector<double>> checkpoint_norms;  // [trial][checkpoint] ||err||
};

struct MonteCarloOptions {
    int workers = 0;  // 0 = hardware concurrency
    std::vector<long> checkpoints;
};

/// Independent trajectories with per-trial derived seeds. Aggregation is a
/// fixed-chunk ordered reduction, so results do not depend on worker count.
inline MonteCarloEstimate monte_carlo(const SimulationSetup& setup, long horizon,
                                      long trials, std::uint64_t master_seed,
                                      const MonteCarloOptions& opts = {}) {
    if (trials < 2) throw PreconditionError("monte carlo needs at least 2 trials");
    const int n = setup.problem.n;
    const std::size_t steps = static_cast<std::size_t>(horizon) + 1;

    struct ChunkResult {
        std::vector<double> sum, sum_sq;       // over non-overflowed trials
        std::vector<long> count, overflowed;   // live / overflowed at step
        std::vector<double> final_node_sum;
        std::vector<std::vector<double>> cp_norms;
    };

    constexpr long kChunk = 16;
    const long chunks = (trials + kChunk - 1) / kChunk;

    auto run_chunk = [&](long chunk_index) {
        ChunkResult res;
        res.sum.assign(steps, 0.0);
        res.sum_sq.assign(steps, 0.0);
        res.count.assign(steps, 0);
        res.overflowed.assign(steps, 0);
        res.final_node_sum.assign(static_cast<std::size_t>(n), 0.0);
        const long begin = chunk_index * kChunk;
        const long end = std::min(trials, begin + kChunk);
        for (long trial = begin; trial < end; ++trial) {
            const std::uint64_t seed = derive_trial_seed(master_seed, static_cast<std::uint64_t>(trial));
            NetworkState net = make_network_state(n, setup.problem.m, setup.policy,
                                                  setup.strategy, setup.theta0);
            std::vector<double> cp;
            std::size_t next_cp = 0;
            auto note = [&](long k) {
                const Vector err = error_vector(net, setup.problem.theta);
                const double e2 = err.squaredNorm();
                res.sum[static_cast<std::size_t>(k)] += e2;
                res.sum_sq[static_cast<std::size_t>(k)] += e2 * e2;
                res.count[static_cast<std::size_t>(k)] += 1;
                if (next_cp < opts.checkpoints.size() && opts.checkpoints[next_cp] == k) {
                    cp.push_back(std::sqrt(e2));
                    ++next_cp;
                }
                if (k == horizon)
                    for (int i = 0; i < n; ++i)
                        res.final_node_sum[static_cast<std::size_t>(i)] +=
                            (net.nodes[static_cast<std::size_t>(i)].theta_hat - setup.problem.theta)
                                .squaredNorm();
            };
            note(0);
            for (long k = 0; k < horizon; ++k) {
                const Observation obs = observe(setup.problem, k, seed);
                step(net, setup.topology, obs.phi, obs.y);
                if (net.overflowed()) {
                    for (long j = k + 1; j <= horizon; ++j)
                        res.overflowed[static_cast<std::size_t>(j)] += 1;
                    break;
                }
                note(k + 1);
            }
            if (!opts.checkpoints.empty()) res.cp_norms.push_back(std::move(cp));
        }
        return res;
    };

    const unsigned hw = std::max(1u, std::thread::hardware_concurrency());
    const unsigned workers =
        opts.workers > 0 ? static_cast<unsigned>(opts.workers) : std::min<unsigned>(hw, 16);

    std::vector<ChunkResult> results(static_cast<std::size_t>(chunks));
    std::atomic<long> next_chunk{0};
    auto worker_fn = [&]() {
        while (true) {
            const long c = next_chunk.fetch_add(1);
            if (c >= chunks) break;
            results[static_cast<std::size_t>(c)] = run_chunk(c);
        }
    };
    std::vector<std::thread> pool;
    for (unsigned w = 1; w < workers; ++w) pool.emplace_back(worker_fn);
    worker_fn();
    for (auto& t : pool) t.join();

    MonteCarloEstimate est;
    est.trials = trials;
    est.mean_err_sq.assign(steps, std::numeric_limits<double>::quiet_NaN());
    est.std_err.assign(steps, 0.0);
    est.overflow_count.assign(steps, 0);
    est.final_per_node_mean.assign(static_cast<std::size_t>(n), 0.0);

    std::vector<double> sum(steps, 0.0), sum_sq(steps, 0.0);
    std::vector<long> count(steps, 0);
    for (const auto& res : results) {  // chunk order fixed by index
        for (std::size_t k = 0; k < steps; ++k) {
            sum[k] += res.sum[k];
            sum_sq[k] += res.sum_sq[k];
            count[k] += res.count[k];
            est.overflow_count[k] += res.overflowed[k];
        }
        for (int i = 0; i < n; ++i)
            est.final_per_node_mean[static_cast<std::size_t>(i)] +=
                res.final_node_sum[static_cast<std::size_t>(i)];
        for (const auto& cp : res.cp_norms) est.checkpoint_norms.push_back(cp);
    }
    for (std::size_t k = 0; k < steps; ++k) {
        if (count[k] == 0) continue;
        const double mean = sum[k] / count[k];
        est.mean_err_sq[k] = mean;
        if (count[k] > 1) {
            const double var =
                std::max(0.0, (sum_sq[k] - count[k] * mean * mean) / (count[k] - 1));
            est.std_err[k] = std::sqrt(var / count[k]);
        }
    }
    const long final_count = count[steps - 1];
    for (int i = 0; i < n; ++i)
        est.final_per_node_mean[static_cast<std::size_t>(i)] /=
            std::max<long>(1, final_count);
    return est;
}

// ---------------------------------------------------------------------------
// Rate analyses
// ---------------------------------------------------------------------------

struct RateReport {
    double tail_max_stat = 0.0;  // max over tail of k^{beta-alpha} mean[k]
    long argmax_k = 0;
    double bound = 0.0;  // M / (s c)
    double ratio = 0.0;
    bool pass = false;
    bool trivially_satisfied = false;  // ratio << 1: bound uninformative, s likely loose
};

/// Mean-square rate check against limsup k^{beta-alpha} E||err||^2 <= M/(sc).
inline RateReport rate_fit_ms(const MonteCarloEstimate& estimate, double beta, double alpha,
                              double s, double c, double M, double tail_fraction = 0.25) {
    RateReport report;
    report.bound = M / (s * c);
    const long horizon = static_cast<long>(estimate.mean_err_sq.size()) - 1;
    const long start = std::max<long>(1, horizon - static_cast<long>(tail_fraction * horizon));
    bool pass = true;
    for (long k = start; k <= horizon; ++k) {
        const double mean = estimate.mean_err_sq[static_cast<std::size_t>(k)];
        if (!std::isfinite(mean)) {
            pass = false;
            continue;
        }
        const double w = std::pow(static_cast<double>(k), beta - alpha);
        const double stat = w * mean;
        if (stat > report.tail_max_stat) {
            report.tail_max_stat = stat;
            report.argmax_k = k;
        }
        if (w * (mean - 3.0 * estimate.std_err[static_cast<std::size_t>(k)]) > report.bound)
            pass = false;
    }
    report.ratio = report.tail_max_stat / report.bound;
    report.pass = pass;
    report.trivially_satisfied = report.ratio < 0.01;
    return report;
}

/// Exact scalar recursion of the common-noise configuration:
/// e_{k+1} = (1 - 2c/((1+2c)(k+1)^b))^2 e_k + 2cnM/((1+2c)^2 (k+1)^{2b}),
/// e_0 = n theta^2. Closed-form oracle for that configuration.
inline std::vector<double> exact_recursion_remark_lmsr(int n, double c_prime, double M,
                                                       double beta, long horizon,
                                                       double theta = 1.0) {
    if (n < 1 || c_prime <= 0.0 || M < 0.0) throw PreconditionError("bad recursion parameters");
    if (beta <= 0.5 || beta >= 1.0) throw PreconditionError("beta must lie in (1/2, 1)");
    std::vector<double> seq;
    seq.reserve(static_cast<std::size_t>(horizon) + 1);
    double e = n * theta * theta;
    seq.push_back(e);
    const double tc = 2.0 * c_prime;
    for (long k = 0; k < horizon; ++k) {
        const double kb = std::pow(static_cast<double>(k + 1), beta);
        const double a = tc / ((1.0 + tc) * kb);
        e = (1.0 - a) * (1.0 - a) * e + tc * n * M / ((1.0 + tc) * (1.0 + tc) * kb * kb);
        seq.push_back(e);
    }
    return seq;
}

struct AsRateReport {
    std::vector<double> window_maxima;  // per dyadic window of k^eps * err^2
    bool pass = false;
};

/// Almost-sure rate witness: dyadic-window maxima of k^eps ||err_k||^2 after a
/// 10% burn-in must be strictly decreasing across the last three windows.
inline AsRateReport as_rate_check(const TrajectoryRecord& record, double epsilon,
                                  double burn_in_fraction = 0.1) {
    const long horizon = static_cast<long>(record.err_norm_sq.size()) - 1;
    const long burn = std::max<long>(1, static_cast<long>(burn_in_fraction * horizon));
    AsRateReport report;
    for (long lo = burn; 2 * lo <= horizon; lo *= 2) {
        const long hi = 2 * lo;
        double mx = 0.0;
        for (long k = lo; k < hi; ++k)
            mx = std::max(mx, std::pow(static_cast<double>(k), epsilon) *
                                  record.err_norm_sq[static_cast<std::size_t>(k)]);
        report.window_maxima.push_back(mx);
    }
    if (report.window_maxima.size() < 3)
        throw ResourceError("horizon too short for three dyadic windows past burn-in");
    const std::size_t w = report.window_maxima.size();
    report.pass = report.window_maxima[w - 3] > report.window_maxima[w - 2] &&
                  report.window_maxima[w - 2] > report.window_maxima[w - 1];
    return report;
}

struct RateSumReport {
    std::vector<double> partial_sums;   // S_K over steps
    std::vector<double> weight_sums;    // sum of (1 - (P_{k+1}/P_k)^2)
    bool cauchy_pass = false;           // S_{2K} - S_K < tol * S_K at the final doubling
    bool weights_diverging = false;     // final doubling still adds weight mass
};

/// Scalar RLS rate sum: sum_k sum_i (1 - (P_{k+1,i} P_{k,i}^{-1})^2) ||err_k||^2.
inline RateSumReport scalar_rls_rate_sum(const TrajectoryRecord& record,
                                         double tolerance = 0.05) {
    if (record.p_ratio.empty())
        throw ConstraintError("rate sum needs an m=1 RLS trajectory with recorded P ratios");
    RateSumReport report;
    double s = 0.0, w = 0.0;
    for (std::size_t k = 0; k < record.p_ratio.size(); ++k) {
        double step_weight = 0.0;
        for (double ratio : record.p_ratio[k]) step_weight += 1.0 - ratio * ratio;
        w += step_weight;
        s += step_weight * record.err_norm_sq[k];
        report.partial_sums.push_back(s);
        report.weight_sums.push_back(w);
    }
    const std::size_t K = report.partial_sums.size() / 2;
    if (K > 0) {
        const double sK = report.partial_sums[K - 1];
        const double s2K = report.partial_sums.back();
        report.cauchy_pass = (s2K - sK) < tolerance * std::max(sK, 1e-300);
        report.weights_diverging =
            (report.weight_sums.back() - report.weight_sums[K - 1]) > 0.1;
    }
    return report;
}

struct PiLimit {
    Vector mu;       // limit row of Pi (unnormalized)
    double plateau;  // n (sum_j mu_j err0_j)^2
    Matrix pi;       // converged product
};

/// Theorem-1 necessity plateau: Pi_K = prod A(I - F_i) for a scalar (m=1)
/// schedule with summable excitation; mu is the common row of the rank-one
/// limit and the plateau is the mean-square floor n (sum mu_j err0_j)^2.
inline PiLimit limit_product_pi(const NetworkTopology& topology,
                                const std::vector<std::vector<double>>& phis,
                                const Vector& theta0_errors) {
    const int n = topology.n;
    if (theta0_errors.size() != n) throw StructuralError("theta0 error dimension mismatch");
    Matrix pi = Matrix::Identity(n, n);
    std::vector<double> p(static_cast<std::size_t>(n), 1.0);
    double tail_sum = 0.0;
    const std::size_t K = phis.size();
    const std::size_t tail_start = K - std::max<std::size_t>(1, K / 10);
    for (std::size_t k = 0; k < K; ++k) {
        Matrix factor = topology.adjacency;
        for (int i = 0; i < n; ++i) {
            const double phi = phis[k][static_cast<std::size_t>(i)];
            const double p_next = p[static_cast<std::size_t>(i)] /
                                  (1.0 + phi * phi * p[static_cast<std::size_t>(i)]);
            const double f = p_next * phi * phi;
            factor.col(i) *= 1.0 - f;
            p[static_cast<std::size_t>(i)] = p_next;
            if (k >= tail_start) tail_sum += p_next * phi * phi;
        }
        pi = factor * pi;
    }
    if (tail_sum > 1e-10)
        throw ConstraintError("excitation is not numerically summable; Pi does not converge");
    double row_spread = 0.0;
    for (int j = 0; j < n; ++j)
        row_spread = std::max(row_spread, pi.col(j).maxCoeff() - pi.col(j).minCoeff());
    if (row_spread > 1e-8)
        throw ConstraintError("rows of Pi fail to agree; product has not converged");

    PiLimit out;
    out.pi = pi;
    out.mu = pi.colwise().mean().transpose();
    const double dot = out.mu.dot(theta0_errors);
    out.plateau = n * dot * dot;
    return out;
}

struct PsiReport {
    double lhs = 0.0;  // lambda_min(I - psi_h^T psi_h)
    double rhs = 0.0;  // s * lambda_min(sum (I - A^2))
    double margin = 0.0;
    Matrix psi_h;
};

/// Contraction lemma harness with deterministic blocks: the conditional
/// expectations collapse and both sides are computed exactly.
inline PsiReport psi_contraction_check(const NetworkTopology& topology,
                                       const std::vector<std::vector<Matrix>>& blocks,
                                       double s) {
    const int n = topology.n;
    const int h = static_cast<int>(blocks.size());
    if (h < 1) throw PreconditionError("need at least one contraction block row");
    const int m = static_cast<int>(blocks.front().front().rows());

    Matrix sum_gap = Matrix::Zero(m, m);
    Matrix psi = Matrix::Identity(n * m, n * m);
    for (int k = 0; k < h; ++k) {
        if (static_cast<int>(blocks[static_cast<std::size_t>(k)].size()) != n)
            throw StructuralError("block row has wrong node count");
        Matrix stage = Matrix::Zero(n * m, n * m);
        for (int i = 0; i < n; ++i) {
            const Matrix& a_ki = blocks[static_cast<std::size_t>(k)][static_cast<std::size_t>(i)];
            if ((a_ki - a_ki.transpose()).cwiseAbs().maxCoeff() > 1e-10)
                throw ConstraintError("contraction block is not symmetric");
            Eigen::SelfAdjointEigenSolver<Matrix> es(a_ki);
            if (es.eigenvalues().minCoeff() < -1e-10 ||
                es.eigenvalues().maxCoeff() > 1.0 + 1e-10)
                throw ConstraintError("contraction block eigenvalues outside [0,1]");
            sum_gap += Matrix::Identity(m, m) - a_ki * a_ki;
            for (int j = 0; j < n; ++j)
                stage.block(i * m, j * m, m, m) =
                    topology.adjacency(i, j) * blocks[static_cast<std::size_t>(k)][static_cast<std::size_t>(j)];
        }
        psi = stage * psi;
    }
    PsiReport report;
    report.psi_h = psi;
    Matrix gap = Matrix::Identity(n * m, n * m) - psi.transpose() * psi;
    Eigen::SelfAdjointEigenSolver<Matrix> es_l(0.5 * (gap + gap.transpose()));
    report.lhs = es_l.eigenvalues().minCoeff();
    Eigen::SelfAdjointEigenSolver<Matrix> es_r(sum_gap);
    report.rhs = s * es_r.eigenvalues().minCoeff();
    report.margin = report.lhs - report.rhs;
    return report;
}

/// Corollary of the contraction lemma for m = 1, h = 1: the margin of
/// lambda_max(I(c) A^T A I(c)) <= 1 - s sum_i (1 - c_i^2).
inline double diag_contraction_margin(const NetworkTopology& topology, const Vector& c,
                                      double s) {
    const int n = topology.n;
    Matrix icM = c.asDiagonal();
    Matrix mat = icM * topology.adjacency.transpose() * topology.adjacency * icM;
    Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (mat + mat.transpose()));
    const double lhs = es.eigenvalues().maxCoeff();
    const double rhs = 1.0 - s * (Vector::Ones(n) - c.cwiseProduct(c)).sum();
    return rhs - lhs;  // nonnegative when the inequality holds
}

} // namespace difest
