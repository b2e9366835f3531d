#include <catch2/catch_amalgamated.hpp>

#include "difest/topology.hpp"

#include <numeric>

using namespace difest;
using Catch::Approx;

namespace {

Matrix cycle3() {
    Matrix a = Matrix::Zero(3, 3);
    a(0, 1) = 1.0;
    a(1, 2) = 1.0;
    a(2, 0) = 1.0;
    return a;
}

NetworkTopology wrap(const Matrix& a) {
    NetworkTopology t;
    t.n = static_cast<int>(a.rows());
    t.adjacency = a;
    return t;
}

// Oracle for the period: gcd of return times of the boolean support power.
int period_oracle(const Matrix& a) {
    const int n = static_cast<int>(a.rows());
    Matrix pow = Matrix::Identity(n, n);
    long g = 0;
    for (int t = 1; t <= 2 * n * n; ++t) {
        pow = pow * a;
        if (pow(0, 0) > 0.0) g = std::gcd(g, static_cast<long>(t));
        pow = (pow.array() > 0.0).cast<double>();  // keep support only
    }
    return static_cast<int>(g);
}

} // namespace

TEST_CASE("A1 verdicts on the canonical examples", "[topology]") {
    SECTION("identity has no cross edges") {
        auto rep = check_assumption_a1(wrap(Matrix::Identity(3, 3)));
        CHECK(rep.doubly_stochastic);
        CHECK_FALSE(rep.irreducible);
        CHECK_FALSE(rep.a1);
    }
    SECTION("complete uniform passes everything") {
        auto rep = check_assumption_a1(wrap(Matrix::Constant(4, 4, 0.25)));
        CHECK(rep.doubly_stochastic);
        CHECK(rep.irreducible);
        CHECK(rep.aperiodic);
        CHECK(rep.ata_irreducible);
        CHECK(rep.a1);
    }
    SECTION("3-cycle permutation is periodic") {
        auto rep = check_assumption_a1(wrap(cycle3()));
        CHECK(rep.doubly_stochastic);
        CHECK(rep.irreducible);
        CHECK_FALSE(rep.aperiodic);
        CHECK(rep.period == 3);
        CHECK_FALSE(rep.a1);
        CHECK(rep.a1_prime);
    }
    SECTION("structural errors") {
        NetworkTopology bad;
        bad.n = 2;
        bad.adjacency = Matrix::Zero(2, 3);
        CHECK_THROWS_AS(check_assumption_a1(bad), StructuralError);
        Matrix neg = Matrix::Identity(2, 2);
        neg(0, 1) = -0.1;
        CHECK_THROWS_AS(check_assumption_a1(wrap(neg)), StructuralError);
    }
}

TEST_CASE("period matches the boolean-power oracle", "[topology]") {
    RandomStream rng(7, StreamTag::generic);
    for (int trial = 0; trial < 200; ++trial) {
        const int n = 2 + static_cast<int>(rng.next_u64() % 5);
        Matrix a = Matrix::Zero(n, n);
        for (int i = 0; i < n; ++i) a(i, (i + 1) % n) = 1.0;  // base cycle keeps it irreducible
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j)
                if (rng.uniform01() < 0.25) a(i, j) = 1.0;
        auto rep = check_assumption_a1(wrap(a));
        REQUIRE(rep.irreducible);
        CHECK(rep.period == period_oracle(a));
    }
}

TEST_CASE("A1 verdicts invariant under node permutation", "[topology]") {
    RandomStream rng(13, StreamTag::generic);
    for (int trial = 0; trial < 50; ++trial) {
        Matrix a;
        if (trial % 3 == 0) {
            a = cycle3();
        } else {
            const int n = 3 + static_cast<int>(rng.next_u64() % 4);
            a = make_random_doubly_stochastic(n, rng);
        }
        const int nn = static_cast<int>(a.rows());
        std::vector<int> perm(static_cast<std::size_t>(nn));
        std::iota(perm.begin(), perm.end(), 0);
        for (int i = nn - 1; i > 0; --i)
            std::swap(perm[static_cast<std::size_t>(i)],
                      perm[static_cast<std::size_t>(rng.next_u64() % (i + 1))]);
        Matrix p = Matrix::Zero(nn, nn);
        for (int i = 0; i < nn; ++i) p(i, perm[static_cast<std::size_t>(i)]) = 1.0;
        auto rep1 = check_assumption_a1(wrap(a));
        auto rep2 = check_assumption_a1(wrap(p * a * p.transpose()));
        CHECK(rep1.a1 == rep2.a1);
        CHECK(rep1.irreducible == rep2.irreducible);
        CHECK(rep1.aperiodic == rep2.aperiodic);
        CHECK(rep1.doubly_stochastic == rep2.doubly_stochastic);
    }
}

TEST_CASE("standard topology builders", "[topology]") {
    SECTION("ring with one node") {
        auto t = build_standard_topology(TopologyKind::ring_self_loops, 1);
        REQUIRE(t.adjacency.rows() == 1);
        CHECK(t.adjacency(0, 0) == 1.0);
    }
    SECTION("complete uniform entries") {
        auto t = build_standard_topology(TopologyKind::complete_uniform, 4);
        CHECK((t.adjacency.array() == 0.25).all());
    }
    SECTION("ring n=3 circulant sums") {
        TopologyParams params;
        params.self_weight = 0.5;
        auto t = build_standard_topology(TopologyKind::ring_self_loops, 3, params);
        CHECK(t.adjacency(0, 0) == Approx(0.5));
        CHECK(t.adjacency(0, 1) == Approx(0.25));
        CHECK(t.adjacency(0, 2) == Approx(0.25));
        for (int i = 0; i < 3; ++i) {
            CHECK(t.adjacency.row(i).sum() == Approx(1.0).margin(1e-15));
            CHECK(t.adjacency.col(i).sum() == Approx(1.0).margin(1e-15));
        }
    }
    SECTION("disconnected metropolis rejected") {
        TopologyParams params;
        params.edges = {{0, 1}, {2, 3}};
        CHECK_THROWS_AS(build_standard_topology(TopologyKind::metropolis, 4, params),
                        ConstraintError);
    }
    SECTION("all kinds satisfy A1 at defaults") {
        CHECK(check_assumption_a1(build_standard_topology(TopologyKind::ring_self_loops, 5)).a1);
        CHECK(check_assumption_a1(build_standard_topology(TopologyKind::complete_uniform, 5)).a1);
        TopologyParams params;
        params.edges = {{0, 1}, {1, 2}, {2, 3}, {3, 0}, {0, 2}};
        CHECK(check_assumption_a1(build_standard_topology(TopologyKind::metropolis, 4, params)).a1);
    }
}

TEST_CASE("laplacian gap", "[topology]") {
    CHECK(laplacian_gap(wrap(Matrix::Constant(1, 1, 1.0))) == 0.0);
    CHECK(laplacian_gap(wrap(Matrix::Constant(2, 2, 0.5))) == Approx(1.0));
    CHECK(laplacian_gap(wrap(Matrix::Constant(4, 4, 0.25))) == Approx(1.0));
    Matrix asym = Matrix::Constant(2, 2, 0.5);
    asym(0, 1) = 0.6;
    asym(0, 0) = 0.4;
    CHECK_THROWS_AS(laplacian_gap(wrap(asym)), PreconditionError);
}

TEST_CASE("cheeger constant by exhaustive cuts", "[topology]") {
    CHECK(cheeger_constant(wrap(Matrix::Constant(2, 2, 0.5))) == Approx(0.5));
    CHECK(std::isinf(cheeger_constant(wrap(Matrix::Constant(1, 1, 1.0)))));

    // complete uniform n=4: a cut with k nodes crosses weight k(4-k)/4, so
    // the minimizing ratio over all seven cuts is 0.5 at the balanced cut
    double oracle = std::numeric_limits<double>::infinity();
    for (int k = 1; k <= 3; ++k)
        oracle = std::min(oracle, k * (4.0 - k) / 4.0 / std::min(k, 4 - k));
    CHECK(oracle == Approx(0.5));
    const double h = cheeger_constant(wrap(Matrix::Constant(4, 4, 0.25)));
    CHECK(h == Approx(oracle));
    CHECK(laplacian_gap(wrap(Matrix::Constant(4, 4, 0.25))) >= h * h / 2.0 - 1e-9);

    NetworkTopology big;
    big.n = 21;
    big.adjacency = Matrix::Identity(21, 21);
    CHECK_THROWS_AS(cheeger_constant(big), ResourceError);
}

TEST_CASE("spectral constant s", "[topology]") {
    SECTION("half matrix, h=1") {
        auto rep = spectral_constant_s(wrap(Matrix::Constant(2, 2, 0.5)), 1);
        CHECK(rep.s_symmetric == Approx(0.5 / (32.0 * 2.0 * 25.0)));
        CHECK(rep.s_symmetric == Approx(3.125e-4));
        CHECK(rep.s_generic_bound > 0.0);
        CHECK(rep.s_generic_bound < 1.0);
    }
    SECTION("complete uniform n=3, h=1") {
        auto rep = spectral_constant_s(wrap(Matrix::Constant(3, 3, 1.0 / 3.0)), 1);
        CHECK(rep.s_symmetric == Approx((1.0 / 3.0) / (32.0 * 3.0 * 25.0)));
    }
    SECTION("single node sentinel") {
        auto rep = spectral_constant_s(wrap(Matrix::Constant(1, 1, 1.0)), 1);
        CHECK(rep.single_node_sentinel);
        CHECK(rep.s_symmetric == 1.0);
    }
    SECTION("zero diagonal rejected in symmetric mode") {
        Matrix flip(2, 2);
        flip << 0.0, 1.0, 1.0, 0.0;
        CHECK_THROWS_AS(spectral_constant_s(wrap(flip), 1), PreconditionError);
    }
    SECTION("outputs live in (0,1)") {
        RandomStream rng(3, StreamTag::generic);
        for (int trial = 0; trial < 100; ++trial) {
            const int n = 2 + static_cast<int>(rng.next_u64() % 7);
            const int h = 1 + static_cast<int>(rng.next_u64() % 3);
            auto topo = wrap(make_random_doubly_stochastic(n, rng));
            if (topo.adjacency.diagonal().minCoeff() <= 0.0) continue;
            auto rep = spectral_constant_s(topo, h);
            CHECK(rep.s_symmetric > 0.0);
            CHECK(rep.s_symmetric < 1.0);
            if (rep.s_generic_bound != 0.0) {
                CHECK(rep.s_generic_bound > 0.0);
                CHECK(rep.s_generic_bound < 1.0);
            }
        }
    }
}

TEST_CASE("powers of A1 topologies reach the consensus projector", "[topology]") {
    for (int n : {2, 4, 7, 10}) {
        for (auto kind : {TopologyKind::ring_self_loops, TopologyKind::complete_uniform}) {
            auto t = build_standard_topology(kind, n);
            Matrix pow = Matrix::Identity(n, n);
            for (int k = 0; k < 512; ++k) pow = pow * t.adjacency;
            const Matrix target = Matrix::Constant(n, n, 1.0 / n);
            CHECK((pow - target).cwiseAbs().maxCoeff() < 1e-8);
        }
    }
}

TEST_CASE("cheeger inequality on random doubly stochastic graphs", "[topology]") {
    RandomStream rng(17, StreamTag::generic);
    int violations = 0;
    for (int trial = 0; trial < 200; ++trial) {
        const int n = 2 + static_cast<int>(rng.next_u64() % 7);
        auto topo = wrap(make_random_doubly_stochastic(n, rng));
        const double gap = laplacian_gap(topo);
        const double h = cheeger_constant(topo);
        if (gap < h * h / 2.0 - 1e-9) ++violations;
    }
    CHECK(violations == 0);
}
