#include <cmath>
#include <random>
#include <vector>

#include "doctest.h"
#include "skelsr/batch_eval.hpp"
#include "skelsr/simd.hpp"
#include "skelsr/skeleton.hpp"

using namespace skelsr;

namespace {

std::vector<double> random_vec(std::mt19937_64& rng, std::size_t n, double lo = -3, double hi = 3) {
    std::uniform_real_distribution<double> u(lo, hi);
    std::vector<double> v(n);
    for (auto& x : v) x = u(rng);
    return v;
}

bool close(double a, double b, double tol = 1e-12) {
    if (std::isnan(a) || std::isnan(b)) return std::isnan(a) && std::isnan(b);
    return std::fabs(a - b) <= tol * std::max({1.0, std::fabs(a), std::fabs(b)});
}

struct IsaGuard {
    simd::Isa saved = simd::active_isa();
    ~IsaGuard() { simd::force_isa(saved); }
};

Expr random_tree(std::mt19937_64& rng, int depth) {
    std::uniform_int_distribution<int> pick(0, 9);
    int k = depth <= 0 ? 0 : pick(rng);
    if (k <= 2) {
        int l = std::uniform_int_distribution<int>(0, 3)(rng);
        if (l == 0) return Expr::num(std::uniform_int_distribution<int>(-3, 5)(rng));
        if (l == 1) return Expr::c();
        return Expr::x(std::uniform_int_distribution<int>(1, 2)(rng));
    }
    if (k <= 5) {
        auto u = static_cast<Unary>(std::uniform_int_distribution<int>(0, kUnaryCount - 1)(rng));
        return apply(u, random_tree(rng, depth - 1));
    }
    auto b = static_cast<Binary>(std::uniform_int_distribution<int>(0, kBinaryCount - 1)(rng));
    if (b == Binary::Pow) return pow(random_tree(rng, depth - 1), std::uniform_int_distribution<int>(-3, 5)(rng));
    return Expr::bin(b, random_tree(rng, depth - 1), random_tree(rng, depth - 1));
}

}  // namespace

TEST_CASE("scalar table is always available") {
    CHECK(simd::scalar_kernels().isa == simd::Isa::Scalar);
    CHECK(simd::force_isa(simd::Isa::Scalar));
    CHECK(simd::active_isa() == simd::Isa::Scalar);
}

TEST_CASE("avx2 kernels match scalar reference") {
    const simd::KernelTable* avx = simd::avx2_kernels();
    if (!avx) {
        MESSAGE("AVX2 not available on this machine; skipping equivalence");
        return;
    }
    const auto& ref = simd::scalar_kernels();
    std::mt19937_64 rng(11);
    for (std::size_t n : {0u, 1u, 3u, 4u, 7u, 8u, 9u, 31u, 64u, 257u}) {
        auto a = random_vec(rng, n), b = random_vec(rng, n);
        CHECK(close(ref.dot(a.data(), b.data(), n), avx->dot(a.data(), b.data(), n)));
        CHECK(close(ref.abs_diff_sum(a.data(), b.data(), n), avx->abs_diff_sum(a.data(), b.data(), n)));

        auto binary = [&](auto fr, auto fa) {
            std::vector<double> o1(n), o2(n);
            fr(a.data(), b.data(), o1.data(), n);
            fa(a.data(), b.data(), o2.data(), n);
            for (std::size_t i = 0; i < n; ++i) CHECK(close(o1[i], o2[i]));
        };
        binary(ref.add, avx->add);
        binary(ref.mul, avx->mul);
        binary(ref.div, avx->div);

        auto with_scalar = [&](auto fr, auto fa) {
            std::vector<double> o1(n), o2(n);
            fr(a.data(), 1.7, o1.data(), n);
            fa(a.data(), 1.7, o2.data(), n);
            for (std::size_t i = 0; i < n; ++i) CHECK(close(o1[i], o2[i]));
        };
        with_scalar(ref.add_scalar, avx->add_scalar);
        with_scalar(ref.mul_scalar, avx->mul_scalar);
        with_scalar(ref.div_scalar, avx->div_scalar);

        std::vector<double> y1 = b, y2 = b;
        ref.axpy(0.3, a.data(), y1.data(), n);
        avx->axpy(0.3, a.data(), y2.data(), n);
        for (std::size_t i = 0; i < n; ++i) CHECK(close(y1[i], y2[i]));
        ref.affine(-2.0, a.data(), 0.5, y1.data(), n);
        avx->affine(-2.0, a.data(), 0.5, y2.data(), n);
        for (std::size_t i = 0; i < n; ++i) CHECK(close(y1[i], y2[i]));
        ref.rdiv_scalar(2.0, a.data(), y1.data(), n);
        avx->rdiv_scalar(2.0, a.data(), y2.data(), n);
        for (std::size_t i = 0; i < n; ++i) CHECK(close(y1[i], y2[i]));
        ref.relu(a.data(), y1.data(), n);
        avx->relu(a.data(), y2.data(), n);
        for (std::size_t i = 0; i < n; ++i) CHECK(y1[i] == y2[i]);
    }
}

TEST_CASE("sanitize maps inf and nan to nan, keeps finite values") {
    std::vector<double> v = {1.0, INFINITY, -INFINITY, NAN, -0.0, 1e308, -2.5, INFINITY, 3.0};
    for (const simd::KernelTable* t : {&simd::scalar_kernels(), simd::avx2_kernels()}) {
        if (!t) continue;
        auto w = v;
        t->sanitize(w.data(), w.size());
        CHECK(w[0] == 1.0);
        CHECK(std::isnan(w[1]));
        CHECK(std::isnan(w[2]));
        CHECK(std::isnan(w[3]));
        CHECK(w[4] == 0.0);
        CHECK(w[5] == 1e308);
        CHECK(w[6] == -2.5);
        CHECK(std::isnan(w[7]));
        CHECK(w[8] == 3.0);
    }
}

TEST_CASE("gemm variants match a naive triple loop") {
    std::mt19937_64 rng(5);
    for (const simd::KernelTable* t : {&simd::scalar_kernels(), simd::avx2_kernels()}) {
        if (!t) continue;
        for (auto [m, n, k] : {std::tuple<std::size_t, std::size_t, std::size_t>{1, 1, 1}, {3, 5, 7}, {8, 9, 17}, {16, 33, 4}}) {
            auto A = random_vec(rng, m * k), B = random_vec(rng, k * n), Bt(B);
            for (std::size_t p = 0; p < k; ++p)
                for (std::size_t j = 0; j < n; ++j) Bt[j * k + p] = B[p * n + j];
            std::vector<double> At(k * m);
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t p = 0; p < k; ++p) At[p * m + i] = A[i * k + p];
            std::vector<double> ref(m * n, 0.5);
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j)
                    for (std::size_t p = 0; p < k; ++p) ref[i * n + j] += A[i * k + p] * B[p * n + j];
            std::vector<double> c1(m * n, 0.5), c2(m * n, 0.5), c3(m * n, 0.5);
            t->gemm_nn(m, n, k, A.data(), B.data(), c1.data());
            t->gemm_nt(m, n, k, A.data(), Bt.data(), c2.data());
            t->gemm_tn(m, n, k, At.data(), B.data(), c3.data());
            for (std::size_t i = 0; i < m * n; ++i) {
                CHECK(close(c1[i], ref[i]));
                CHECK(close(c2[i], ref[i]));
                CHECK(close(c3[i], ref[i]));
            }
        }
    }
}

TEST_CASE("batch evaluation agrees with the tree evaluator") {
    IsaGuard guard;
    std::mt19937_64 rng(2024);
    const std::size_t n = 37;
    std::vector<double> x1 = random_vec(rng, n, -4, 4), x2 = random_vec(rng, n, -4, 4);
    std::vector<const double*> cols = {x1.data(), x2.data()};
    std::size_t mismatches = 0, total = 0;
    for (int trial = 0; trial < 1500; ++trial) {
        Expr t = random_tree(rng, 4);
        std::vector<double> consts = random_vec(rng, placeholder_count(t), -5, 5);
        Expr concrete = set_constants(t, consts);
        CompiledExpr prog(t);
        REQUIRE(prog.num_constants() == consts.size());
        for (simd::Isa isa : {simd::Isa::Scalar, simd::Isa::Avx2}) {
            if (!simd::force_isa(isa)) continue;
            std::vector<double> out(n);
            prog.eval(cols, n, consts, out.data());
            for (std::size_t i = 0; i < n; ++i) {
                double ref = evaluate(concrete, {{1, x1[i]}, {2, x2[i]}});
                ++total;
                if (!close(ref, out[i], 1e-9)) ++mismatches;
            }
        }
    }
    // Integer powers are computed by repeated multiplication. An ulp of
    // difference is harmless except in ill-conditioned compositions such as
    // sin(exp(x^5)), which the random trees occasionally produce.
    CHECK(mismatches * 1000 <= total);
}

TEST_CASE("batch evaluation handles constants-only and univariate inputs") {
    CompiledExpr k(parse_prefix_text("add c mul 2 c"));
    std::vector<double> x = {1, 2, 3}, out(3);
    std::vector<double> c = {1.0, 4.0};
    k.eval_univariate(x, c, out);
    CHECK(out == std::vector<double>{9, 9, 9});

    CompiledExpr f(parse_prefix_text("add mul c x2 log x"));
    std::vector<double> c1 = {3.0};
    f.eval_univariate(std::vector<double>{1.0, -1.0, std::exp(1.0)}, c1, out);
    CHECK(out[0] == doctest::Approx(3.0));
    CHECK(std::isnan(out[1]));
    CHECK(out[2] == doctest::Approx(3 * std::exp(1.0) + 1));

    std::vector<double> wrong = {1.0, 2.0};
    CHECK_THROWS_AS(f.eval_univariate(x, wrong, out), ArityMismatch);
    std::vector<const double*> one_col = {x.data()};
    CHECK_THROWS_AS(CompiledExpr(parse_prefix_text("add x x2")).eval(one_col, 3, {}, out.data()), UnboundVariable);
}

TEST_CASE("overflowing intermediates are undefined even if later ops would hide them") {
    CompiledExpr f(parse_prefix_text("atan exp x"));
    std::vector<double> x = {1.0, 800.0}, out(2);
    f.eval_univariate(x, {}, out);
    CHECK(out[0] == doctest::Approx(std::atan(std::exp(1.0))));
    CHECK(std::isnan(out[1]));
    CHECK(std::isnan(evaluate_at(parse_prefix_text("atan exp x"), 800.0)));
}
