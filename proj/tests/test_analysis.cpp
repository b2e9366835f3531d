#include <catch2/catch_amalgamated.hpp>

#include "difest/analysis.hpp"

using namespace difest;
using Catch::Approx;

namespace {

NetworkTopology topo_from(const Matrix& a) {
    NetworkTopology t;
    t.n = static_cast<int>(a.rows());
    t.adjacency = a;
    return t;
}

SimulationSetup single_node_ls(double theta, double noise_var) {
    SimulationSetup setup;
    setup.problem.m = 1;
    setup.problem.n = 1;
    setup.problem.theta = Vector::Constant(1, theta);
    setup.problem.regressors.kind = RegressorKind::single_informative_node;
    setup.problem.regressors.m = 1;
    setup.problem.regressors.n = 1;
    setup.problem.regressors.active_node = 0;
    setup.problem.regressors.magnitude = 1.0;
    setup.problem.noise.n = 1;
    setup.problem.noise.sigma = Matrix::Constant(1, 1, noise_var);
    setup.problem.noise.bound_M = std::max(noise_var, 1e-9);
    setup.problem.noise.finalize();
    setup.topology = topo_from(Matrix::Constant(1, 1, 1.0));
    setup.policy.kind = GainKind::rls;
    return setup;
}

} // namespace

TEST_CASE("monte carlo harness", "[analysis]") {
    SECTION("zero noise at the truth stays at zero") {
        auto setup = single_node_ls(2.0, 0.0);
        setup.theta0 = {Vector::Constant(1, 2.0)};
        auto est = monte_carlo(setup, 50, 4, 1);
        for (double v : est.mean_err_sq) CHECK(v == 0.0);
    }
    SECTION("classical LS variance decay") {
        auto setup = single_node_ls(1.0, 1.0);
        auto est = monte_carlo(setup, 1000, 400, 7);
        CHECK(est.mean_err_sq.back() < 0.01);
    }
    SECTION("bit identical across repeats and worker counts") {
        auto setup = single_node_ls(1.0, 1.0);
        MonteCarloOptions one, four;
        one.workers = 1;
        four.workers = 4;
        auto a = monte_carlo(setup, 200, 64, 3, one);
        auto b = monte_carlo(setup, 200, 64, 3, four);
        auto cpy = monte_carlo(setup, 200, 64, 3, one);
        REQUIRE(a.mean_err_sq == b.mean_err_sq);
        REQUIRE(a.std_err == b.std_err);
        REQUIRE(a.mean_err_sq == cpy.mean_err_sq);
    }
    SECTION("standard errors follow the 1/sqrt(trials) law") {
        auto setup = single_node_ls(1.0, 1.0);
        auto small = monte_carlo(setup, 100, 200, 5);
        auto large = monte_carlo(setup, 100, 800, 5);
        // quadrupling the trials halves the standard error, within 30%
        const double ratio = large.std_err.back() / small.std_err.back();
        CHECK(ratio > 0.5 * 0.7);
        CHECK(ratio < 0.5 * 1.3);
    }
    SECTION("needs two trials") {
        auto setup = single_node_ls(1.0, 1.0);
        CHECK_THROWS_AS(monte_carlo(setup, 10, 1, 0), PreconditionError);
    }
}

TEST_CASE("mean-square rate report", "[analysis]") {
    SECTION("all-zero estimate passes trivially") {
        MonteCarloEstimate est;
        est.mean_err_sq.assign(101, 0.0);
        est.std_err.assign(101, 0.0);
        auto rep = rate_fit_ms(est, 0.75, 0.0, 1e-3, 0.2, 1.0);
        CHECK(rep.pass);
        CHECK(rep.tail_max_stat == 0.0);
        CHECK(rep.trivially_satisfied);
    }
    SECTION("series at twice the bound fails") {
        const double beta = 0.75, s = 1e-3, c = 0.2, M = 1.0;
        const double bound = M / (s * c);
        MonteCarloEstimate est;
        est.mean_err_sq.resize(201);
        est.std_err.assign(201, 0.0);
        for (long k = 0; k <= 200; ++k)
            est.mean_err_sq[static_cast<std::size_t>(k)] =
                2.0 * bound * std::pow(static_cast<double>(std::max<long>(k, 1)), -beta);
        auto rep = rate_fit_ms(est, beta, 0.0, s, c, M);
        CHECK_FALSE(rep.pass);
        CHECK(rep.ratio == Approx(2.0).epsilon(0.01));
    }
}

TEST_CASE("exact common-noise recursion", "[analysis]") {
    SECTION("no noise decays monotonically to zero") {
        auto seq = exact_recursion_remark_lmsr(4, 0.5, 0.0, 0.75, 2000);
        for (std::size_t k = 1; k < seq.size(); ++k) CHECK(seq[k] <= seq[k - 1]);
        CHECK(seq.back() < 1e-3);
    }
    SECTION("tail of k^beta e_k stays above n M/(2+4c)") {
        const int n = 4;
        const double beta = 0.75, c = 0.5, M = 1.0;
        auto seq = exact_recursion_remark_lmsr(n, c, M, beta, 2000);
        const double floor = n * M / (2.0 + 4.0 * c) * (1.0 - 1e-3);
        for (long k = 1500; k <= 2000; ++k)
            CHECK(std::pow(static_cast<double>(k), beta) * seq[static_cast<std::size_t>(k)] >=
                  floor);
    }
    SECTION("monte carlo of the common-noise configuration matches") {
        const int n = 4;
        const double c_prime = 0.5, M = 1.0, beta = 0.75;
        SimulationSetup setup;
        setup.problem.m = 1;
        setup.problem.n = n;
        setup.problem.theta = Vector::Constant(1, 1.0);
        setup.problem.regressors.kind = RegressorKind::deterministic_schedule;
        setup.problem.regressors.m = 1;
        setup.problem.regressors.n = n;
        setup.problem.regressors.schedule.assign(
            1, std::vector<Vector>(static_cast<std::size_t>(n),
                                   Vector::Constant(1, std::sqrt(2.0 * c_prime))));
        // replay the single constant step forever
        setup.problem.regressors.schedule.resize(
            600, setup.problem.regressors.schedule.front());
        setup.problem.noise.n = n;
        setup.problem.noise.sigma = M * Matrix::Ones(n, n);  // identical noise at all nodes
        setup.problem.noise.bound_M = M;
        setup.problem.noise.finalize();
        setup.topology = topo_from(Matrix::Constant(n, n, 1.0 / n));
        setup.policy.kind = GainKind::robbins_monro;
        setup.policy.beta = beta;
        auto est = monte_carlo(setup, 500, 300, 77);
        auto oracle = exact_recursion_remark_lmsr(n, c_prime, M, beta, 500);
        for (long k : {100L, 500L}) {
            const double se = est.std_err[static_cast<std::size_t>(k)];
            CHECK(std::abs(est.mean_err_sq[static_cast<std::size_t>(k)] -
                           oracle[static_cast<std::size_t>(k)]) <= 3.0 * se);
        }
    }
}

TEST_CASE("almost-sure rate windows", "[analysis]") {
    SECTION("1/k decay passes at epsilon = 0.5") {
        TrajectoryRecord rec;
        rec.err_norm_sq.push_back(1.0);
        for (long k = 1; k <= 4000; ++k) rec.err_norm_sq.push_back(1.0 / static_cast<double>(k));
        auto rep = as_rate_check(rec, 0.5);
        CHECK(rep.pass);
    }
    SECTION("exact k^-eps boundary fails") {
        TrajectoryRecord rec;
        rec.err_norm_sq.push_back(1.0);
        for (long k = 1; k <= 4000; ++k)
            rec.err_norm_sq.push_back(std::pow(static_cast<double>(k), -0.5));
        auto rep = as_rate_check(rec, 0.5);
        CHECK_FALSE(rep.pass);
    }
    SECTION("horizon too short") {
        TrajectoryRecord rec;
        rec.err_norm_sq.assign(7, 1.0);
        CHECK_THROWS_AS(as_rate_check(rec, 0.5), ResourceError);
    }
}

TEST_CASE("scalar RLS rate sum", "[analysis]") {
    SECTION("zero regressors contribute nothing") {
        auto setup = single_node_ls(1.0, 1.0);
        setup.problem.regressors.kind = RegressorKind::deterministic_schedule;  // empty = zeros
        TrajectoryOptions opts;
        opts.record_p_ratio = true;
        auto rec = simulate_trajectory(setup, 64, 5, opts);
        auto rep = scalar_rls_rate_sum(rec);
        CHECK(rep.partial_sums.back() == 0.0);
        CHECK_FALSE(rep.weights_diverging);
    }
    SECTION("persistent scalar excitation: weighted sum Cauchy, weights diverging") {
        auto setup = single_node_ls(1.0, 1.0);
        TrajectoryOptions opts;
        opts.record_p_ratio = true;
        auto rec = simulate_trajectory(setup, 4000, 5, opts);
        // closed form: P_k = 1/(k+1) so the ratio is (k+1)/(k+2)
        CHECK(rec.p_ratio[10][0] == Approx(11.0 / 12.0).epsilon(1e-12));
        auto rep = scalar_rls_rate_sum(rec);
        CHECK(rep.cauchy_pass);
        CHECK(rep.weights_diverging);
        CHECK(rep.weight_sums.back() >
              rep.weight_sums[rep.weight_sums.size() / 2] + 0.5);  // ~ 2 log 2 per doubling
    }
    SECTION("needs recorded ratios") {
        TrajectoryRecord rec;
        rec.err_norm_sq.assign(10, 1.0);
        CHECK_THROWS_AS(scalar_rls_rate_sum(rec), ConstraintError);
    }
}

TEST_CASE("limit product and plateau", "[analysis]") {
    const int n = 4;
    auto topo = topo_from(Matrix::Constant(n, n, 0.25));
    SECTION("zero excitation averages the initial errors") {
        std::vector<std::vector<double>> phis(600, std::vector<double>(n, 0.0));
        Vector err0(n);
        err0 << 1.0, -1.0, 0.5, 0.5;
        auto lim = limit_product_pi(topo, phis, err0);
        for (int j = 0; j < n; ++j) CHECK(lim.mu(j) == Approx(0.25).margin(1e-9));
        CHECK(lim.mu.sum() == Approx(1.0).margin(1e-8));
        CHECK(lim.plateau == Approx(n * std::pow(lim.mu.dot(err0), 2)));
    }
    SECTION("zero initial error gives a zero plateau") {
        std::vector<std::vector<double>> phis(400, std::vector<double>(n, 0.0));
        auto lim = limit_product_pi(topo, phis, Vector::Zero(n));
        CHECK(lim.plateau == 0.0);
    }
    SECTION("geometric excitation: monte carlo matches the plateau") {
        const long K = 200;
        std::vector<std::vector<double>> phis;
        for (long k = 0; k < K; ++k)
            phis.push_back(std::vector<double>(n, std::pow(2.0, -static_cast<double>(k))));
        Vector err0 = Vector::Constant(n, -1.0);  // theta = 1, theta0 = 0
        auto lim = limit_product_pi(topo, phis, err0);
        CHECK(lim.plateau > 0.0);
        CHECK(lim.mu.minCoeff() > 0.0);

        SimulationSetup setup;
        setup.problem.m = 1;
        setup.problem.n = n;
        setup.problem.theta = Vector::Constant(1, 1.0);
        setup.problem.regressors.kind = RegressorKind::deterministic_schedule;
        setup.problem.regressors.m = 1;
        setup.problem.regressors.n = n;
        for (const auto& step : phis) {
            std::vector<Vector> s;
            for (double v : step) s.push_back(Vector::Constant(1, v));
            setup.problem.regressors.schedule.push_back(s);
        }
        setup.problem.noise.n = n;
        setup.problem.noise.sigma = 1e-4 * Matrix::Identity(n, n);
        setup.problem.noise.bound_M = 1e-4;
        setup.problem.noise.finalize();
        setup.topology = topo;
        setup.policy.kind = GainKind::rls;
        auto est = monte_carlo(setup, K, 200, 13);
        const double gap = std::abs(est.mean_err_sq.back() - lim.plateau);
        CHECK(gap <= 4.0 * std::max(est.std_err.back(), 1e-12));
    }
    SECTION("non-summable excitation rejected") {
        std::vector<std::vector<double>> phis(300, std::vector<double>(n, 1.0));
        CHECK_THROWS_AS(limit_product_pi(topo, phis, Vector::Ones(n)), ConstraintError);
    }
}

TEST_CASE("psi contraction harness", "[analysis]") {
    auto topo = topo_from(Matrix::Constant(2, 2, 0.5));
    const double s = spectral_constant_s(topo, 1).s_symmetric;
    SECTION("identity blocks: no contraction on either side") {
        std::vector<std::vector<Matrix>> blocks{{Matrix::Identity(2, 2), Matrix::Identity(2, 2)}};
        auto rep = psi_contraction_check(topo, blocks, s);
        CHECK(rep.lhs == Approx(0.0).margin(1e-12));
        CHECK(rep.rhs == Approx(0.0).margin(1e-12));
        CHECK(rep.margin >= -1e-10);
    }
    SECTION("zero blocks: psi vanishes") {
        std::vector<std::vector<Matrix>> blocks{{Matrix::Zero(2, 2), Matrix::Zero(2, 2)}};
        auto rep = psi_contraction_check(topo, blocks, s);
        CHECK(rep.lhs == Approx(1.0));
        CHECK(rep.rhs == Approx(s * 2.0));  // lambda_min of n h I_m = nh
        CHECK(rep.margin >= -1e-10);
    }
    SECTION("block validation") {
        Matrix big = 1.5 * Matrix::Identity(2, 2);
        std::vector<std::vector<Matrix>> blocks{{big, Matrix::Identity(2, 2)}};
        CHECK_THROWS_AS(psi_contraction_check(topo, blocks, s), ConstraintError);
    }
    SECTION("randomized sweep with the computed s, plus non-expansion") {
        RandomStream rng(19, StreamTag::generic);
        int violations = 0;
        for (int trial = 0; trial < 200; ++trial) {
            const int n = 2 + static_cast<int>(rng.next_u64() % 4);
            const int m = 1 + static_cast<int>(rng.next_u64() % 3);
            const int h = 1 + static_cast<int>(rng.next_u64() % 3);
            NetworkTopology t;
            t.n = n;
            t.adjacency = make_random_doubly_stochastic(n, rng);
            if (t.adjacency.diagonal().minCoeff() <= 0.0) continue;
            const double s_t = spectral_constant_s(t, h).s_symmetric;
            std::vector<std::vector<Matrix>> blocks;
            for (int k = 0; k < h; ++k) {
                std::vector<Matrix> row;
                for (int i = 0; i < n; ++i) {
                    // random symmetric contraction with spectrum in [0, 1]
                    Matrix g(m, m);
                    for (int r = 0; r < m; ++r)
                        for (int q = 0; q < m; ++q) g(r, q) = rng.gaussian();
                    Eigen::HouseholderQR<Matrix> qr(g);
                    Matrix qmat = qr.householderQ();
                    Vector eig(m);
                    for (int r = 0; r < m; ++r) eig(r) = rng.uniform01();
                    row.push_back(qmat * eig.asDiagonal() * qmat.transpose());
                }
                blocks.push_back(row);
            }
            auto rep = psi_contraction_check(t, blocks, s_t);
            if (rep.margin < -1e-10) ++violations;
            // psi never expands
            Vector x(n * m);
            for (int q = 0; q < n * m; ++q) x(q) = rng.gaussian();
            CHECK((rep.psi_h * x).norm() <= x.norm() * (1.0 + 1e-12));
        }
        CHECK(violations == 0);
    }
}

TEST_CASE("diagonal contraction corollary", "[analysis]") {
    RandomStream rng(23, StreamTag::generic);
    int violations = 0;
    for (int trial = 0; trial < 500; ++trial) {
        const int n = 2 + static_cast<int>(rng.next_u64() % 4);
        NetworkTopology t;
        t.n = n;
        t.adjacency = make_random_doubly_stochastic(n, rng);
        if (t.adjacency.diagonal().minCoeff() <= 0.0) continue;
        const double s = spectral_constant_s(t, 1).s_symmetric;
        Vector c(n);
        for (int i = 0; i < n; ++i) c(i) = rng.uniform01();
        if (diag_contraction_margin(t, c, s) < -1e-10) ++violations;
    }
    CHECK(violations == 0);
}
