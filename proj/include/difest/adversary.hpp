#pragma once

// Constructive realization of the divergent regressor schedules for m > 1:
// the hyperplane families P_l, the escape/excitation/amplification probe
// searches, and the block schedule whose mean trajectory outgrows
// 20 (t_k + 1)^4 at every checkpoint.
//
// All replays here run in long double on Cholesky factors of the per-node
// information matrices. The amplification probes make those matrices very
// ill-conditioned; factored updates keep both the builder and the verifier
// accurate enough for the 1e-9 cross-agreement oracle.

#include "difest/common.hpp"
#include "difest/rng.hpp"
#include "difest/topology.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace difest {

// ---------------------------------------------------------------------------
// Hyperplane family
// ---------------------------------------------------------------------------

// Level-l membership tests a linear form on the per-node first coordinates of
// a stacked vector: level 0 is e_{j*}, level l >= 1 is u A^{l-1} where u is
// row j* of A with the diagonal entry zeroed. The level-(l+1) form is the
// level-l form times A, which is what the escape step's constant-term
// argument requires; level 1 is the amplification precondition.
struct HyperplaneFamily {
    int j_star = 0;
    int d = 0;
    int target_node = 0;  // l with a_{l,j*} > 0, smallest on ties
    int m = 1;
    int n = 1;
    Matrix adjacency;
    std::vector<Vector> forms;  // forms[l], length n, l in [0, max_level]

    int max_level() const { return static_cast<int>(forms.size()) - 1; }
};

/// Smallest d with A^{d+1}[j*,j*] > 0, and the target node l (a_{l,j*} > 0).
inline std::pair<int, int> return_time_d(const NetworkTopology& topology, int j_star) {
    const Matrix& a = topology.adjacency;
    detail::require_square_nonnegative(a);
    const int n = topology.n;
    if (j_star < 0 || j_star >= n) throw PreconditionError("pivot node out of range");

    int d = -1;
    Matrix power = Matrix::Identity(n, n);
    for (int p = 1; p <= n + 1; ++p) {
        power = power * a;
        if (power(j_star, j_star) > 0.0) {
            d = p - 1;
            break;
        }
    }
    if (d < 0)
        throw InternalError("no return to the pivot node within n+1 steps; A not irreducible");

    int target = -1;
    for (int l = 0; l < n; ++l)
        if (a(l, j_star) > 0.0) {
            target = l;
            break;
        }
    if (target < 0) throw InternalError("pivot node has no in-neighbor");
    return {d, target};
}

inline HyperplaneFamily make_hyperplane_family(const NetworkTopology& topology, int j_star,
                                               int m) {
    auto [d, target] = return_time_d(topology, j_star);
    HyperplaneFamily fam;
    fam.j_star = j_star;
    fam.d = d;
    fam.target_node = target;
    fam.m = m;
    fam.n = topology.n;
    fam.adjacency = topology.adjacency;

    const int max_level = std::max(d, 2);
    fam.forms.resize(static_cast<std::size_t>(max_level) + 1);
    fam.forms[0] = Vector::Zero(topology.n);
    fam.forms[0](j_star) = 1.0;
    Vector u = topology.adjacency.row(j_star).transpose();
    u(j_star) = 0.0;
    for (int l = 1; l <= max_level; ++l) {
        fam.forms[static_cast<std::size_t>(l)] = u;
        u = topology.adjacency.transpose() * u;  // u <- u A as a row vector
    }
    return fam;
}

struct SearchParams {
    double nonmembership_tol = 1e-8;
    int max_attempts = 10000;
    double radius_growth = 2.0;
    std::uint64_t seed = 0;
};

namespace adv_detail {

inline LongScalar form_value(const HyperplaneFamily& fam, const LongVector& c, int level) {
    LongScalar acc = 0.0L;
    const Vector& w = fam.forms[static_cast<std::size_t>(level)];
    for (int k = 0; k < fam.n; ++k)
        acc += static_cast<LongScalar>(w(k)) * c(static_cast<Eigen::Index>(k) * fam.m);
    return acc;
}

inline bool is_member(const HyperplaneFamily& fam, const LongVector& c, int level,
                      double tol) {
    const LongScalar val = form_value(fam, c, level);
    const LongScalar coeff =
        fam.forms[static_cast<std::size_t>(level)].cwiseAbs().maxCoeff();
    const LongScalar scale = (1.0L + c.norm()) * std::max<LongScalar>(coeff, 1e-300L);
    return std::abs(static_cast<double>(val)) <= tol * static_cast<double>(scale);
}

} // namespace adv_detail

/// Relative-tolerance membership test for the stacked vector C in P_level.
inline bool membership(const Vector& c, int level, const HyperplaneFamily& fam,
                       double tol = 1e-8) {
    if (level < 0 || level > fam.max_level())
        throw PreconditionError("hyperplane level out of range");
    if (c.size() != static_cast<Eigen::Index>(fam.m) * fam.n)
        throw StructuralError("stacked vector has wrong dimension");
    return adv_detail::is_member(fam, c.cast<LongScalar>(), level, tol);
}

/// Level required at global step t by the block schedule: (d - t) mod (d + 1).
inline int required_level_at(long t, int d) {
    const long mod = d + 1;
    long r = (static_cast<long>(d) - t) % mod;
    if (r < 0) r += mod;
    return static_cast<int>(r);
}

// ---------------------------------------------------------------------------
// Factored per-node information state (two independent routes)
// ---------------------------------------------------------------------------

namespace adv_detail {

// The amplification probes drive the information matrices to conditioning
// far past what double (or long double) solves tolerate, so the per-node
// factors live in binary128. Only +,-,*,/ and sqrt are needed; sqrt comes
// from a Newton refinement of the long double seed, avoiding libquadmath.
using Quad = __float128;

inline Quad quad_sqrt(Quad x) {
    if (!(x > 0)) return 0;
    Quad s = static_cast<Quad>(std::sqrt(static_cast<LongScalar>(x)));
    s = Quad(0.5L) * (s + x / s);
    s = Quad(0.5L) * (s + x / s);
    return s;
}

// Column-major lower-triangular m x m factor with G = L L^T.
struct QuadFactor {
    int m = 0;
    std::vector<Quad> lo;  // lo[i + j*m], i >= j

    Quad& at(int i, int j) { return lo[static_cast<std::size_t>(i + j * m)]; }
    Quad at(int i, int j) const { return lo[static_cast<std::size_t>(i + j * m)]; }

    static QuadFactor identity(int m) {
        QuadFactor f;
        f.m = m;
        f.lo.assign(static_cast<std::size_t>(m) * m, Quad(0));
        for (int i = 0; i < m; ++i) f.at(i, i) = Quad(1);
        return f;
    }

    std::vector<Quad> solve_lower(const std::vector<Quad>& rhs) const {
        std::vector<Quad> w(rhs);
        for (int i = 0; i < m; ++i) {
            for (int j = 0; j < i; ++j) w[static_cast<std::size_t>(i)] -= at(i, j) * w[static_cast<std::size_t>(j)];
            w[static_cast<std::size_t>(i)] /= at(i, i);
        }
        return w;
    }

    std::vector<Quad> solve_upper_t(const std::vector<Quad>& rhs) const {
        std::vector<Quad> w(rhs);
        for (int i = m - 1; i >= 0; --i) {
            for (int j = i + 1; j < m; ++j) w[static_cast<std::size_t>(i)] -= at(j, i) * w[static_cast<std::size_t>(j)];
            w[static_cast<std::size_t>(i)] /= at(i, i);
        }
        return w;
    }

    LongMatrix to_long() const {
        LongMatrix out = LongMatrix::Zero(m, m);
        for (int j = 0; j < m; ++j)
            for (int i = j; i < m; ++i) out(i, j) = static_cast<LongScalar>(at(i, j));
        return out;
    }
};

inline std::vector<Quad> to_quad(const LongVector& v) {
    std::vector<Quad> out(static_cast<std::size_t>(v.size()));
    for (Eigen::Index i = 0; i < v.size(); ++i) out[static_cast<std::size_t>(i)] = static_cast<Quad>(v(i));
    return out;
}

inline LongMatrix spd_inverse_long(const Matrix& b_spd) {
    LongMatrix b = b_spd.cast<LongScalar>();
    Eigen::LLT<LongMatrix> llt(b);
    if (llt.info() != Eigen::Success)
        throw PreconditionError("B block is not positive definite");
    LongMatrix g = llt.solve(LongMatrix::Identity(b.rows(), b.cols()));
    return 0.5L * (g + g.transpose());
}

// Shared interface of the two routes: quad(v) = v^T G^{-1} v and the RLS
// gain G^{-1} v / (1 + quad). Values come back rounded to long double.
template <class Derived>
struct InfoBase {
    LongScalar quad(const LongVector& v) const {
        const auto w = static_cast<const Derived*>(this)->factor().solve_lower(to_quad(v));
        Quad q(0);
        for (Quad x : w) q += x * x;
        return static_cast<LongScalar>(q);
    }

    LongVector gain(const LongVector& v) const {
        const QuadFactor& f = static_cast<const Derived*>(this)->factor();
        auto w = f.solve_lower(to_quad(v));
        Quad q(0);
        for (Quad x : w) q += x * x;
        auto pv = f.solve_upper_t(w);
        LongVector out(v.size());
        for (Eigen::Index i = 0; i < v.size(); ++i)
            out(i) = static_cast<LongScalar>(pv[static_cast<std::size_t>(i)] / (Quad(1) + q));
        return out;
    }

    LongVector p_times(const LongVector& v) const {
        const QuadFactor& f = static_cast<const Derived*>(this)->factor();
        auto pv = f.solve_upper_t(f.solve_lower(to_quad(v)));
        LongVector out(v.size());
        for (Eigen::Index i = 0; i < v.size(); ++i)
            out(i) = static_cast<LongScalar>(pv[static_cast<std::size_t>(i)]);
        return out;
    }

    LongScalar lambda_min_info() const {
        Eigen::JacobiSVD<LongMatrix> svd(static_cast<const Derived*>(this)->factor().to_long());
        const LongScalar s = svd.singularValues().minCoeff();
        return s * s;
    }
};

// Builder route: accumulates G = B^{-1} + sum v v^T explicitly and takes a
// fresh Cholesky factorization after every probe.
class BuilderInfo : public InfoBase<BuilderInfo> {
public:
    explicit BuilderInfo(int m) : m_(m) {
        gram_.assign(static_cast<std::size_t>(m) * m, Quad(0));
        for (int i = 0; i < m; ++i) gram_[static_cast<std::size_t>(i + i * m)] = Quad(1);
        factor_ = QuadFactor::identity(m);
    }
    explicit BuilderInfo(const Matrix& b_spd) : m_(static_cast<int>(b_spd.rows())) {
        const LongMatrix g = spd_inverse_long(b_spd);
        gram_.assign(static_cast<std::size_t>(m_) * m_, Quad(0));
        for (int j = 0; j < m_; ++j)
            for (int i = 0; i < m_; ++i)
                gram_[static_cast<std::size_t>(i + j * m_)] = static_cast<Quad>(g(i, j));
        refactor();
    }

    void add(const LongVector& v) {
        const auto q = to_quad(v);
        for (int j = 0; j < m_; ++j)
            for (int i = 0; i < m_; ++i)
                gram_[static_cast<std::size_t>(i + j * m_)] +=
                    q[static_cast<std::size_t>(i)] * q[static_cast<std::size_t>(j)];
        refactor();
    }

    const QuadFactor& factor() const { return factor_; }

private:
    void refactor() {
        factor_.m = m_;
        factor_.lo.assign(static_cast<std::size_t>(m_) * m_, Quad(0));
        for (int j = 0; j < m_; ++j) {
            Quad diag = gram_[static_cast<std::size_t>(j + j * m_)];
            for (int k = 0; k < j; ++k) diag -= factor_.at(j, k) * factor_.at(j, k);
            const Quad l_jj = quad_sqrt(diag);
            if (!(l_jj > 0)) throw InternalError("information matrix lost definiteness");
            factor_.at(j, j) = l_jj;
            for (int i = j + 1; i < m_; ++i) {
                Quad acc = gram_[static_cast<std::size_t>(i + j * m_)];
                for (int k = 0; k < j; ++k) acc -= factor_.at(i, k) * factor_.at(j, k);
                factor_.at(i, j) = acc / l_jj;
            }
        }
    }

    int m_ = 0;
    std::vector<Quad> gram_;
    QuadFactor factor_;
};

// Verifier route: never forms G; applies LINPACK-style rank-one rotation
// updates directly to the factor. Shares no update code with the builder.
class VerifierInfo : public InfoBase<VerifierInfo> {
public:
    explicit VerifierInfo(int m) : factor_(QuadFactor::identity(m)) {}
    explicit VerifierInfo(const Matrix& b_spd) {
        const LongMatrix g = spd_inverse_long(b_spd);
        Eigen::LLT<LongMatrix> llt(g);
        if (llt.info() != Eigen::Success)
            throw PreconditionError("B block inverse is not positive definite");
        const LongMatrix lo = llt.matrixL();
        const int m = static_cast<int>(lo.rows());
        factor_ = QuadFactor::identity(m);
        for (int j = 0; j < m; ++j)
            for (int i = j; i < m; ++i) factor_.at(i, j) = static_cast<Quad>(lo(i, j));
    }

    void add(const LongVector& v) {
        const int m = factor_.m;
        auto work = to_quad(v);
        for (int i = 0; i < m; ++i) {
            const Quad lii = factor_.at(i, i);
            const Quad wi = work[static_cast<std::size_t>(i)];
            const Quad r = quad_sqrt(lii * lii + wi * wi);
            const Quad c = r / lii;
            const Quad s = wi / lii;
            factor_.at(i, i) = r;
            for (int j = i + 1; j < m; ++j) {
                factor_.at(j, i) = (factor_.at(j, i) + s * work[static_cast<std::size_t>(j)]) / c;
                work[static_cast<std::size_t>(j)] =
                    c * work[static_cast<std::size_t>(j)] - s * factor_.at(j, i);
            }
        }
    }

    const QuadFactor& factor() const { return factor_; }

private:
    QuadFactor factor_;
};

// Image of one schedule step: (A (x) I_m)(I - F) C with F from the per-node
// RLS gains. Pure; does not advance the info states.
template <class Info>
LongVector apply_probe(const HyperplaneFamily& fam, const std::vector<Info>& infos,
                       const LongVector& c, const std::vector<LongVector>& vs) {
    const int n = fam.n;
    const int m = fam.m;
    std::vector<LongVector> blocks(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        const LongVector& v = vs[static_cast<std::size_t>(i)];
        const LongVector c_i = c.segment(static_cast<Eigen::Index>(i) * m, m);
        if (v.squaredNorm() == 0.0L) {
            blocks[static_cast<std::size_t>(i)] = c_i;
        } else {
            const LongVector gain = infos[static_cast<std::size_t>(i)].gain(v);
            blocks[static_cast<std::size_t>(i)] = c_i - gain * v.dot(c_i);
        }
    }
    LongVector out = LongVector::Zero(static_cast<Eigen::Index>(n) * m);
    for (int i = 0; i < n; ++i) {
        LongVector acc = LongVector::Zero(m);
        for (int k = 0; k < n; ++k)
            acc += static_cast<LongScalar>(fam.adjacency(i, k)) * blocks[static_cast<std::size_t>(k)];
        out.segment(static_cast<Eigen::Index>(i) * m, m) = acc;
    }
    return out;
}

template <class Info>
void advance(std::vector<Info>& infos, const std::vector<LongVector>& vs) {
    for (std::size_t i = 0; i < infos.size(); ++i)
        if (vs[i].squaredNorm() > 0.0L) infos[i].add(vs[i]);
}

inline std::vector<LongVector> zero_probe(int n, int m) {
    return std::vector<LongVector>(static_cast<std::size_t>(n), LongVector::Zero(m));
}

inline std::vector<LongVector> single_node_probe(int n, int m, int node,
                                                 const LongVector& v) {
    auto vs = zero_probe(n, m);
    vs[static_cast<std::size_t>(node)] = v;
    return vs;
}

inline bool outside_all(const HyperplaneFamily& fam, const LongVector& c,
                        const std::vector<int>& levels, double tol) {
    for (int lv : levels)
        if (is_member(fam, c, lv, tol)) return false;
    return true;
}

inline LongScalar level_margin(const HyperplaneFamily& fam, const LongVector& c,
                               const std::vector<int>& levels) {
    LongScalar margin = std::numeric_limits<LongScalar>::infinity();
    for (int lv : levels) margin = std::min(margin, std::abs(form_value(fam, c, lv)));
    return margin;
}

// Rejection search for an escape probe: z from the unit Gaussian ball such
// that the image leaves every level in `levels`. Among early acceptances the
// candidate with the largest worst-case form margin wins, which keeps the
// mean trajectory well away from the hyperplanes.
template <class Info>
std::vector<LongVector> search_escape(const HyperplaneFamily& fam,
                                      const std::vector<Info>& infos, const LongVector& c,
                                      std::vector<int> levels, const SearchParams& params,
                                      RandomStream& rng, const char* stage) {
    const int n = fam.n;
    const int m = fam.m;
    std::optional<std::pair<LongScalar, std::vector<LongVector>>> best;
    for (int attempt = 0; attempt < params.max_attempts; ++attempt) {
        std::vector<LongVector> vs;
        if (attempt == 0) {
            vs = zero_probe(n, m);
        } else {
            LongVector g(static_cast<Eigen::Index>(n) * m);
            for (Eigen::Index i = 0; i < g.size(); ++i) g(i) = rng.gaussian();
            const LongScalar norm = g.norm();
            if (norm > 1.0L) g /= norm;
            vs.reserve(static_cast<std::size_t>(n));
            for (int i = 0; i < n; ++i)
                vs.push_back(g.segment(static_cast<Eigen::Index>(i) * m, m));
        }
        const LongVector img = apply_probe(fam, infos, c, vs);
        if (outside_all(fam, img, levels, params.nonmembership_tol)) {
            const LongScalar margin = level_margin(fam, img, levels);
            if (!best || margin > best->first) best = {margin, std::move(vs)};
            if (attempt >= 32) break;
        }
    }
    if (best) return best->second;
    if (levels.size() > 1) {
        // guard levels are best-effort; the chain level itself is mandatory
        levels.resize(1);
        return search_escape(fam, infos, c, levels, params, rng, stage);
    }
    throw SearchFailure(std::string("escape search exhausted: ") + stage);
}

} // namespace adv_detail

// ---------------------------------------------------------------------------
// Public probe searches (explicit B blocks, as in the lemma statements)
// ---------------------------------------------------------------------------

/// Lemma 4.2 realization: find z with (A (x) I_m) Q0(z) C outside P_to_level,
/// given C outside P_from_level. Deterministic under params.seed.
inline std::vector<Vector> find_escape(const Vector& c, int from_level, int to_level,
                                       const std::vector<Matrix>& b_blocks,
                                       const HyperplaneFamily& fam,
                                       const SearchParams& params) {
    if (static_cast<int>(b_blocks.size()) != fam.n)
        throw StructuralError("find_escape: need one B block per node");
    if (membership(c, from_level, fam, params.nonmembership_tol))
        throw ConstraintError("find_escape: C lies inside the from-level hyperplane");
    std::vector<adv_detail::BuilderInfo> infos;
    for (const Matrix& b : b_blocks) infos.emplace_back(b);
    RandomStream rng(params.seed, StreamTag::search);
    auto z = adv_detail::search_escape(fam, infos, c.cast<LongScalar>(), {to_level}, params,
                                       rng, "find_escape");
    std::vector<Vector> out;
    for (const auto& v : z) out.push_back(v.cast<double>());
    return out;
}

struct AmplifyResult {
    Vector v1;
    Vector v2;
    Vector q3;              // the amplified mean vector (A x I) Q2 (A x I) Q1 C
    double value = 0.0;     // |q3[m(l-1)+1]|
    double r1 = 0.0, r2 = 0.0;
};

namespace adv_detail {

// Top generalized eigenpair of (Sym(delta (B1 e1)^T), B1) where
// B1 = (B^{-1} + v1 v1^T)^{-1}, in closed form:
//   lambda+ = (delta_1 + sqrt(Dq * B1[0,0])) / 2,   Dq = delta^T B^{-1} delta + (v1.delta)^2
//   z+     ~ (sqrt(Dq * B1[0,0]) / Dq) (B^{-1} + v1 v1^T) delta + e1.
// Only well-conditioned pieces appear; B1 itself is never factorized.
struct PencilTop {
    LongScalar lambda = 0.0L;
    LongVector direction;
};

inline PencilTop pencil_top(const LongMatrix& b, const LongVector& v1, LongScalar b1_00,
                            const LongVector& delta) {
    const int m = static_cast<int>(b.rows());
    const LongVector binv_delta = b.llt().solve(delta) + v1 * v1.dot(delta);
    const LongScalar dq = std::max<LongScalar>(delta.dot(binv_delta), 0.0L);
    const LongScalar s = std::sqrt(dq * std::max<LongScalar>(b1_00, 0.0L));
    PencilTop out;
    out.lambda = 0.5L * (delta(0) + s);
    LongVector z = LongVector::Zero(m);
    if (dq > 0.0L) z = (s / dq) * binv_delta;
    z(0) += 1.0L;
    const LongScalar norm = z.norm();
    out.direction = norm > 0.0L ? LongVector(z / norm) : LongVector(LongVector::Unit(m, 0));
    return out;
}

template <class Info>
AmplifyResult amplify_impl(const HyperplaneFamily& fam, const std::vector<Info>& infos,
                           const LongMatrix& b_jstar, const LongVector& c, double target_L,
                           const std::vector<int>& guard_levels, const SearchParams& params,
                           RandomStream& rng) {
    const int m = fam.m;
    const int n = fam.n;
    const int j = fam.j_star;
    const int l = fam.target_node;
    if (m < 2) throw PreconditionError("amplification needs parameter dimension m > 1");
    if (is_member(fam, c, 1, params.nonmembership_tol))
        throw ConstraintError("amplify: C lies inside P_1");
    const LongScalar a_lj = fam.adjacency(l, j);
    if (!(a_lj > 0.0)) throw PreconditionError("amplify: a_{l,j*} must be positive");

    // Direction z1 = (x, 1, 0, ...) maximizing the pencil growth rate
    // |z1 . delta_inf| * sqrt(B1_inf[0,0]); delta_inf keeps only the off-pivot
    // contributions because the pivot block's own component dies along z1.
    LongVector delta_inf = LongVector::Zero(m);
    for (int k = 0; k < n; ++k) {
        if (k == j) continue;
        delta_inf += static_cast<LongScalar>(fam.adjacency(j, k)) *
                     c.segment(static_cast<Eigen::Index>(k) * m, m);
    }
    LongVector z1 = LongVector::Unit(m, 1);
    LongScalar best_score = -1.0L;
    for (int a = 0; a < 256; ++a) {
        const double x = rng.gaussian() * (1.0 + 0.05 * a);
        LongVector cand = LongVector::Zero(m);
        cand(0) = x;
        cand(1) = 1.0L;
        cand /= cand.norm();
        const LongVector bz = b_jstar * cand;
        const LongScalar b1inf_00 =
            std::max<LongScalar>(b_jstar(0, 0) - bz(0) * bz(0) / cand.dot(bz), 0.0L);
        const LongScalar score = std::abs(cand.dot(delta_inf)) * std::sqrt(b1inf_00);
        if (score > best_score) {
            best_score = score;
            z1 = cand;
        }
    }
    if (!(best_score > 0.0L))
        throw SearchFailure("amplify: no usable probe direction (H1 x + H2 vanishes)");

    auto b1_00_of = [&](const LongVector& v) {
        const LongVector bv = b_jstar * v;
        return b_jstar(0, 0) - bv(0) * bv(0) / (1.0L + v.dot(bv));
    };

    const int stage_attempts = std::max(64, params.max_attempts / 16);
    LongScalar r1 = 1.0L;
    std::optional<LongVector> v1;
    LongVector d_vec;
    LongScalar cc = 0.0L;
    for (int a = 0; a < stage_attempts && !v1; ++a) {
        LongVector dir = z1;
        if (a % 4 != 0) {
            for (int i = 0; i < m; ++i) dir(i) += 0.02L * rng.gaussian();
            dir /= dir.norm();
        }
        const LongVector v = r1 * dir;
        const LongVector d = apply_probe(fam, infos, c,
                                         single_node_probe(n, m, j, v));
        const LongVector delta = d.segment(static_cast<Eigen::Index>(j) * m, m);
        LongScalar offset = 0.0L;
        for (int i = 0; i < n; ++i)
            offset += static_cast<LongScalar>(fam.adjacency(l, i)) *
                      d(static_cast<Eigen::Index>(i) * m);
        cc = (static_cast<LongScalar>(target_L) + std::abs(offset) + 1.0L) / a_lj;
        const PencilTop pen = pencil_top(b_jstar, v, b1_00_of(v), delta);
        std::vector<int> d_levels{0};
        for (int g : guard_levels)
            if (g != 0) d_levels.push_back(g);
        const bool guards_waived = a > stage_attempts / 2;
        const bool placement =
            outside_all(fam, d, d_levels, params.nonmembership_tol) ||
            (guards_waived && outside_all(fam, d, {0}, params.nonmembership_tol));
        if (pen.lambda >= 1.35L * cc && placement) {
            v1 = v;
            d_vec = d;
        } else if (pen.lambda < 1.35L * cc) {
            r1 *= static_cast<LongScalar>(params.radius_growth);
        }
    }
    if (!v1) throw SearchFailure("amplify: radius search for v1 exhausted");

    const LongVector delta = d_vec.segment(static_cast<Eigen::Index>(j) * m, m);
    const PencilTop pen = pencil_top(b_jstar, *v1, b1_00_of(*v1), delta);
    if (!(pen.lambda > cc)) throw InternalError("amplify: pencil eigenvalue regressed");

    // Post-v1 info state at the pivot node only.
    std::vector<Info> infos2 = infos;
    infos2[static_cast<std::size_t>(j)].add(*v1);

    LongScalar r2 = std::sqrt(std::max<LongScalar>(1.0L, cc) /
                              std::max<LongScalar>(pen.lambda - cc, 1e-30L));
    std::vector<int> q3_levels{fam.d};
    for (int g : guard_levels)
        if (g != fam.d) q3_levels.push_back(g);
    std::optional<LongVector> v2;
    LongVector q3_vec;
    for (int a = 0; a < stage_attempts && !v2; ++a) {
        LongVector dir = pen.direction;
        if (a % 4 != 0) {
            for (int i = 0; i < m; ++i) dir(i) += 0.02L * rng.gaussian();
            dir /= dir.norm();
        }
        const LongVector v = r2 * dir;
        const LongVector q3 = apply_probe(fam, infos2, d_vec, single_node_probe(n, m, j, v));
        const bool big = std::abs(static_cast<double>(q3(static_cast<Eigen::Index>(l) * m))) >
                         target_L;
        if (big && outside_all(fam, q3, q3_levels, params.nonmembership_tol)) {
            v2 = v;
            q3_vec = q3;
        } else {
            r2 *= static_cast<LongScalar>(1.0 + (params.radius_growth - 1.0) * 0.5);
        }
    }
    if (!v2) throw SearchFailure("amplify: radius search for v2 exhausted");

    AmplifyResult out;
    out.v1 = v1->cast<double>();
    out.v2 = v2->cast<double>();
    out.q3 = q3_vec.cast<double>();
    out.value = std::abs(static_cast<double>(q3_vec(static_cast<Eigen::Index>(l) * m)));
    out.r1 = static_cast<double>(v1->norm());
    out.r2 = static_cast<double>(v2->norm());
    return out;
}

} // namespace adv_detail

/// Lemma 4.4 realization: two probes at the pivot node making the mean
/// vector leave P_0 then P_d while pushing |Q3[m(l-1)+1]| beyond target_L.
inline AmplifyResult amplify(const Vector& c, const Matrix& b, double target_L,
                             const HyperplaneFamily& fam, const SearchParams& params) {
    std::vector<adv_detail::BuilderInfo> infos;
    for (int i = 0; i < fam.n; ++i) {
        if (i == fam.j_star)
            infos.emplace_back(b);
        else
            infos.emplace_back(fam.m);
    }
    RandomStream rng(params.seed, StreamTag::search, 1);
    return adv_detail::amplify_impl(fam, infos, b.cast<LongScalar>(), c.cast<LongScalar>(),
                                    target_L, {}, params, rng);
}

struct ExciteResult {
    std::vector<std::vector<Vector>> probes;  // probes[j][i], j in [0, m)
    double lambda_min = 0.0;                  // min_i lambda_min(B_i^{-1} + sum v v^T)
    std::vector<Vector> chain;                // chained mean vectors after each probe
};

namespace adv_detail {

template <class Info>
ExciteResult excite_impl(const HyperplaneFamily& fam, std::vector<Info>& infos,
                         LongVector& c, double target_K, long t_offset,
                         const std::vector<int>& guard_levels, const SearchParams& params,
                         RandomStream& rng, LongScalar lambda_prior) {
    const int m = fam.m;
    const int n = fam.n;
    ExciteResult out;
    // Per-step base magnitude covers only the information the Gram still
    // needs; oversized probes would crush the mean vector for no benefit.
    const LongScalar need =
        std::max<LongScalar>(static_cast<LongScalar>(target_K) - lambda_prior, 1.0L);
    const LongScalar base = std::sqrt(1.5L * need);

    for (int jdx = 0; jdx < m; ++jdx) {
        std::vector<int> levels{required_level_at(t_offset + jdx, fam.d)};
        for (int g : guard_levels)
            if (g != levels[0]) levels.push_back(g);
        LongScalar delta = 0.05L * base;
        std::optional<std::pair<LongScalar, std::vector<LongVector>>> best;
        for (int attempt = 0; attempt < params.max_attempts; ++attempt) {
            std::vector<LongVector> vs;
            vs.reserve(static_cast<std::size_t>(n));
            for (int i = 0; i < n; ++i) {
                LongVector v = LongVector::Zero(m);
                v(jdx) = base;
                if (attempt > 0)
                    for (int q = 0; q < m; ++q) v(q) += delta * rng.gaussian();
                vs.push_back(std::move(v));
            }
            const LongVector img = apply_probe(fam, infos, c, vs);
            if (outside_all(fam, img, levels, params.nonmembership_tol)) {
                const LongScalar margin = level_margin(fam, img, levels);
                if (!best || margin > best->first) best = {margin, std::move(vs)};
                if (attempt >= 24) break;
            }
            if (attempt % 64 == 63) delta *= 0.5L;
        }
        if (!best) {
            if (levels.size() > 1 && !guard_levels.empty()) {
                // retry without guards before giving up
                std::vector<int> bare{levels[0]};
                for (int attempt = 0; attempt < params.max_attempts && !best; ++attempt) {
                    std::vector<LongVector> vs;
                    for (int i = 0; i < n; ++i) {
                        LongVector v = LongVector::Zero(m);
                        v(jdx) = base;
                        for (int q = 0; q < m; ++q) v(q) += delta * rng.gaussian();
                        vs.push_back(std::move(v));
                    }
                    const LongVector img = apply_probe(fam, infos, c, vs);
                    if (outside_all(fam, img, bare, params.nonmembership_tol))
                        best = {level_margin(fam, img, bare), std::move(vs)};
                }
            }
            if (!best)
                throw SearchFailure("excitation search exhausted at probe " +
                                    std::to_string(jdx));
        }
        const auto& vs = best->second;
        c = apply_probe(fam, infos, c, vs);
        advance(infos, vs);
        std::vector<Vector> step;
        for (const auto& v : vs) step.push_back(v.cast<double>());
        out.probes.push_back(std::move(step));
        out.chain.push_back(c.cast<double>());
    }

    LongScalar lam = std::numeric_limits<LongScalar>::infinity();
    for (const auto& info : infos) lam = std::min(lam, info.lambda_min_info());
    out.lambda_min = static_cast<double>(lam);
    return out;
}

} // namespace adv_detail

/// Lemma 4.5 realization: m probe stacks raising every node's information
/// floor above target_K while walking the mean vector down the level chain.
inline ExciteResult excite(const Vector& c, const std::vector<Matrix>& b_blocks,
                           double target_K, const HyperplaneFamily& fam,
                           const SearchParams& params) {
    if (static_cast<int>(b_blocks.size()) != fam.n)
        throw StructuralError("excite: need one B block per node");
    if (membership(c, fam.d, fam, params.nonmembership_tol))
        throw ConstraintError("excite: C lies inside P_d");
    std::vector<adv_detail::BuilderInfo> infos;
    for (const Matrix& b : b_blocks) infos.emplace_back(b);
    LongScalar lambda_prior = std::numeric_limits<LongScalar>::infinity();
    for (const auto& info : infos) lambda_prior = std::min(lambda_prior, info.lambda_min_info());
    RandomStream rng(params.seed, StreamTag::search, 2);
    LongVector cl = c.cast<LongScalar>();
    auto out = adv_detail::excite_impl(fam, infos, cl, target_K, 1, {}, params, rng,
                                       lambda_prior);
    if (!(out.lambda_min > target_K))
        throw SearchFailure("excitation did not reach the target information floor");
    return out;
}

// ---------------------------------------------------------------------------
// Schedule, builder and verifier
// ---------------------------------------------------------------------------

struct BlockRecord {
    long t_k = 0;
    double lambda_min_gram = 0.0;  // min over nodes of lambda_min at t_{k-1}+m
    double lambda_target = 0.0;    // t_{k-1}+m
    double amp_value = 0.0;        // |R_{t_k}[m(l-1)+1]|
    double amp_target = 0.0;       // 20 (t_k+1)^4
    double amp_bound16 = 0.0;      // 16 (t_k+1)^4
    double margin_ratio = 0.0;     // amp_value / amp_bound16
    double checkpoint_norm = 0.0;  // ||R_{t_k}||
    double max_probe_radius = 0.0;
};

struct AdversarialSchedule {
    int schema_version = 1;
    int n = 0;
    int m = 0;
    int j_star = 0;
    int d = 0;
    int target_node = 0;
    std::uint64_t seed = 0;
    std::vector<std::vector<Vector>> phis;  // phis[t][node]
    std::vector<long> checkpoints;          // t_k for k = 1..blocks
    std::vector<double> r_checkpoint_coordinate;  // signed R_{t_k}[m(l-1)+1], builder route
    std::vector<BlockRecord> builder_blocks;
};

struct VerificationRecord {
    bool verdict = false;
    std::vector<BlockRecord> blocks;
    std::vector<bool> step_nonmembership;  // per step t
    bool all_steps_outside = false;
    double max_rel_disagreement = 0.0;  // builder vs verifier checkpoint coordinates
    std::string failure;
};

struct MeanTrajectory {
    std::vector<Vector> r;  // r[t] = R_t
    bool saturated = false; // some magnitude exceeded 1e290
};

/// Independent deterministic replay of R_t = prod (A x I)(I - F_i) E Theta_0
/// along a schedule prefix. The P recursion is replayed through the verifier
/// route factorization, separate from the builder's code path.
inline MeanTrajectory mean_trajectory(const std::vector<std::vector<Vector>>& phis,
                                      const NetworkTopology& topology,
                                      const Vector& e_theta0_error, int m) {
    const int n = topology.n;
    HyperplaneFamily mix;  // only carries A for apply_probe
    mix.n = n;
    mix.m = m;
    mix.adjacency = topology.adjacency;
    std::vector<adv_detail::VerifierInfo> infos(static_cast<std::size_t>(n),
                                                adv_detail::VerifierInfo(m));
    LongVector c = e_theta0_error.cast<LongScalar>();
    MeanTrajectory out;
    out.r.reserve(phis.size());
    for (const auto& step : phis) {
        std::vector<LongVector> vs;
        vs.reserve(step.size());
        for (const auto& v : step) vs.push_back(v.cast<LongScalar>());
        c = adv_detail::apply_probe(mix, infos, c, vs);
        adv_detail::advance(infos, vs);
        if (c.cwiseAbs().maxCoeff() > 1e290L) out.saturated = true;
        out.r.push_back(c.cast<double>());
    }
    return out;
}

/// Build the divergent block schedule: initial escape, then per block m
/// excitation probes, escape steps holding the level chain, and the closing
/// two-probe amplification targeting 20 (t_{k+1}+1)^4.
inline AdversarialSchedule build_divergent_schedule(const NetworkTopology& topology, int m,
                                                    const Vector& e_theta0_error, int blocks,
                                                    const SearchParams& params) {
    const int n = topology.n;
    if (m < 2) throw PreconditionError("divergent schedules need m > 1");
    if (e_theta0_error.size() != static_cast<Eigen::Index>(n) * m)
        throw StructuralError("initial mean error has wrong dimension");
    const auto a1 = check_assumption_a1(topology);
    if (!a1.a1_prime) throw PreconditionError("divergent schedule needs an irreducible A");

    int j_star = -1;
    for (int i = 0; i < n; ++i)
        if (e_theta0_error(static_cast<Eigen::Index>(i) * m) != 0.0) {
            j_star = i;
            break;
        }
    if (j_star < 0)
        throw ConstraintError(
            "initial mean error has no node with nonzero first coordinate");

    HyperplaneFamily fam = make_hyperplane_family(topology, j_star, m);
    const int d = fam.d;
    const long T = static_cast<long>(m + 3) * (d + 1);
    // For d = 0 the level chain never visits P_1, but the amplification
    // precondition needs it; keep it as a best-effort guard on every step.
    const std::vector<int> guards = d == 0 ? std::vector<int>{1} : std::vector<int>{};

    AdversarialSchedule sched;
    sched.n = n;
    sched.m = m;
    sched.j_star = j_star;
    sched.d = d;
    sched.target_node = fam.target_node;
    sched.seed = params.seed;

    RandomStream rng(params.seed, StreamTag::search, 3);
    std::vector<adv_detail::BuilderInfo> infos(static_cast<std::size_t>(n),
                                               adv_detail::BuilderInfo(m));
    LongVector c = e_theta0_error.cast<LongScalar>();

    auto commit = [&](const std::vector<LongVector>& vs) {
        c = adv_detail::apply_probe(fam, infos, c, vs);
        adv_detail::advance(infos, vs);
        std::vector<Vector> step;
        for (const auto& v : vs) step.push_back(v.cast<double>());
        sched.phis.push_back(std::move(step));
    };

    // Phi_0: R_0 must leave P_d (wrap case of the escape lemma).
    {
        std::vector<int> levels{d};
        for (int g : guards)
            if (g != d) levels.push_back(g);
        commit(adv_detail::search_escape(fam, infos, c, levels, params, rng, "initial"));
    }

    auto gram_floor = [&]() {
        LongScalar lam = std::numeric_limits<LongScalar>::infinity();
        for (const auto& info : infos) lam = std::min(lam, info.lambda_min_info());
        return lam;  // lambda_min of I + Gram
    };

    for (int k = 0; k < blocks; ++k) {
        const long t_k = static_cast<long>(k) * T;
        const long t_k1 = static_cast<long>(k + 1) * T;
        const double target_K = static_cast<double>(t_k + m) + 1.0;

        {
            const LongScalar prior = gram_floor();
            auto ex = adv_detail::excite_impl(fam, infos, c, target_K, t_k + 1, guards,
                                              params, rng, prior);
            for (auto& step : ex.probes) {
                std::vector<Vector> copy = step;
                sched.phis.push_back(std::move(copy));
            }
            // excite_impl already advanced infos and c
        }

        BlockRecord rec;
        rec.t_k = t_k1;
        rec.lambda_target = static_cast<double>(t_k + m);
        rec.lambda_min_gram = static_cast<double>(gram_floor() - 1.0L);
        if (!(rec.lambda_min_gram > rec.lambda_target))
            throw SearchFailure("block " + std::to_string(k + 1) +
                                ": information floor not reached");

        for (long jdx = m + 1; jdx <= T - 2; ++jdx) {
            std::vector<int> levels{required_level_at(t_k + jdx, d)};
            for (int g : guards)
                if (g != levels[0]) levels.push_back(g);
            commit(adv_detail::search_escape(fam, infos, c, levels, params, rng, "chain"));
        }

        const double target_L = 20.0 * std::pow(static_cast<double>(t_k1 + 1), 4.0);
        // Reconstruct the pivot node's covariance for the pencil formulas.
        LongMatrix b_jstar;
        {
            LongMatrix identity = LongMatrix::Identity(m, m);
            LongMatrix p(m, m);
            for (int col = 0; col < m; ++col)
                p.col(col) =
                    infos[static_cast<std::size_t>(j_star)].p_times(identity.col(col));
            b_jstar = 0.5L * (p + p.transpose());
        }
        auto amp = adv_detail::amplify_impl(fam, infos, b_jstar, c, target_L, guards, params,
                                            rng);
        commit(adv_detail::single_node_probe(n, m, j_star, amp.v1.cast<LongScalar>()));
        if (adv_detail::is_member(fam, c, 0, params.nonmembership_tol))
            throw InternalError("block " + std::to_string(k + 1) +
                                ": pre-amplification vector fell into P_0");
        commit(adv_detail::single_node_probe(n, m, j_star, amp.v2.cast<LongScalar>()));

        const double coord =
            static_cast<double>(c(static_cast<Eigen::Index>(fam.target_node) * m));
        rec.amp_value = std::abs(coord);
        rec.amp_target = target_L;
        rec.amp_bound16 = 16.0 * std::pow(static_cast<double>(t_k1 + 1), 4.0);
        rec.margin_ratio = rec.amp_value / rec.amp_bound16;
        rec.checkpoint_norm = static_cast<double>(c.norm());
        rec.max_probe_radius = std::max(amp.r1, amp.r2);
        if (!(rec.amp_value > target_L))
            throw SearchFailure("block " + std::to_string(k + 1) +
                                ": amplification target missed");
        sched.checkpoints.push_back(t_k1);
        sched.r_checkpoint_coordinate.push_back(coord);
        sched.builder_blocks.push_back(rec);
    }
    return sched;
}

/// Independent verifier: replays the mean trajectory from the raw schedule
/// via mean_trajectory and re-checks every Eq.-style condition from scratch.
inline VerificationRecord verify_dd(const AdversarialSchedule& sched,
                                    const NetworkTopology& topology,
                                    const Vector& e_theta0_error, double tol = 1e-8) {
    VerificationRecord rec;
    HyperplaneFamily fam = make_hyperplane_family(topology, sched.j_star, sched.m);
    if (fam.d != sched.d || fam.target_node != sched.target_node)
        throw ConstraintError("schedule metadata inconsistent with the topology");
    const int m = sched.m;
    const int n = sched.n;
    const int d = fam.d;

    const MeanTrajectory traj = mean_trajectory(sched.phis, topology, e_theta0_error, m);

    rec.all_steps_outside = true;
    rec.step_nonmembership.reserve(traj.r.size());
    for (std::size_t t = 0; t < traj.r.size(); ++t) {
        const int level = required_level_at(static_cast<long>(t), d);
        const bool outside = !membership(traj.r[t], level, fam, tol);
        rec.step_nonmembership.push_back(outside);
        if (!outside) {
            rec.all_steps_outside = false;
            if (rec.failure.empty())
                rec.failure = "mean vector inside P_" + std::to_string(level) + " at step " +
                              std::to_string(t);
        }
    }

    // Gram floors, replayed independently per node.
    std::vector<adv_detail::VerifierInfo> infos(static_cast<std::size_t>(n),
                                                adv_detail::VerifierInfo(m));
    std::vector<double> gram_floor_at(sched.phis.size(), 0.0);
    for (std::size_t t = 0; t < sched.phis.size(); ++t) {
        for (int i = 0; i < n; ++i) {
            const Vector& v = sched.phis[t][static_cast<std::size_t>(i)];
            if (v.squaredNorm() > 0.0)
                infos[static_cast<std::size_t>(i)].add(v.cast<LongScalar>());
        }
        LongScalar lam = std::numeric_limits<LongScalar>::infinity();
        for (const auto& info : infos) lam = std::min(lam, info.lambda_min_info());
        gram_floor_at[t] = static_cast<double>(lam - 1.0L);
    }

    bool ok = rec.all_steps_outside;
    const long T = static_cast<long>(m + 3) * (d + 1);
    for (std::size_t k = 0; k < sched.checkpoints.size(); ++k) {
        const long t_k1 = sched.checkpoints[k];
        const long t_k = t_k1 - T;
        BlockRecord blk;
        blk.t_k = t_k1;
        blk.lambda_target = static_cast<double>(t_k + m);
        blk.lambda_min_gram = gram_floor_at[static_cast<std::size_t>(t_k + m)];
        const Vector& r = traj.r[static_cast<std::size_t>(t_k1)];
        const double coord = r(static_cast<Eigen::Index>(sched.target_node) * m);
        blk.amp_value = std::abs(coord);
        blk.amp_target = 20.0 * std::pow(static_cast<double>(t_k1 + 1), 4.0);
        blk.amp_bound16 = 16.0 * std::pow(static_cast<double>(t_k1 + 1), 4.0);
        blk.margin_ratio = blk.amp_value / blk.amp_bound16;
        blk.checkpoint_norm = r.norm();

        if (!(blk.lambda_min_gram > blk.lambda_target)) {
            ok = false;
            if (rec.failure.empty())
                rec.failure = "information floor failed at block " + std::to_string(k + 1);
        }
        if (!(blk.amp_value > blk.amp_target)) {
            ok = false;
            if (rec.failure.empty())
                rec.failure = "amplification inequality failed at block " + std::to_string(k + 1);
        }
        if (k < sched.r_checkpoint_coordinate.size()) {
            const double builder = sched.r_checkpoint_coordinate[k];
            const double rel = std::abs(builder - coord) /
                               std::max(std::abs(builder), std::abs(coord));
            rec.max_rel_disagreement = std::max(rec.max_rel_disagreement, rel);
        }
        rec.blocks.push_back(blk);
    }
    if (rec.max_rel_disagreement > 1e-9) {
        ok = false;
        if (rec.failure.empty()) rec.failure = "builder/verifier mean trajectories disagree";
    }
    rec.verdict = ok;
    return rec;
}

} // namespace difest
