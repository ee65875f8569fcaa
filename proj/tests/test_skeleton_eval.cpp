#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "skelsr/skeleton_eval.hpp"

using namespace skelsr;

namespace {

Skeleton sk(std::string_view text) { return skeleton_from_text(text); }

EvalConfig quick(std::uint64_t seed) {
    EvalConfig c;
    c.n_test = 500;
    c.repeats = 4;
    c.threads = 1;
    c.seed = seed;
    return c;
}

}  // namespace

TEST_CASE("fitting the right skeleton drives r to zero") {
    EvalConfig cfg = quick(1);
    Rng rng(1);
    // c1 x + c2 against 2x - 3
    FitResult line = fit_constants(sk("add mul c x c"), parse_prefix_text("add mul 2 x -3"), -5, 5, cfg, rng);
    CHECK(line.r_normalized < 1e-3);
    REQUIRE(line.constants.size() == 2);
    CHECK(line.constants[0] == doctest::Approx(2).epsilon(1e-2));
    CHECK(line.constants[1] == doctest::Approx(-3).epsilon(1e-2));

    // c1' + c2' log(c3' x^2) against 2.5 log(x^4): exact with c2' = 5.
    FitResult lg = fit_constants(sk("add c mul c log mul c pow x 2"), parse_prefix_text("mul 2.5 log pow x 4"), -5, 5,
                                 cfg, rng);
    CHECK(lg.r_normalized < 1e-2);
    CHECK(lg.constants[1] == doctest::Approx(5).epsilon(2e-2));
}

TEST_CASE("a wrong skeleton keeps a large error") {
    EvalConfig cfg = quick(2);
    Rng rng(2);
    FitResult f = fit_constants(sk("add mul c x c"), parse_prefix_text("sin mul 5 x"), -5, 5, cfg, rng);
    // Best line through sin(5x) on [-10, 10] is close to y = 0: mean |error| ~ 2/pi.
    CHECK(f.r / cfg.n_test > 0.5);
    CHECK(f.r_normalized > 0.2);

    EvalConfig ec = quick(3);
    EvalResult good = evaluate_skeleton(sk("add c mul c sin mul c x"), sk("add c mul c sin mul c x"), -5, 5, ec);
    EvalResult constant = evaluate_skeleton(sk("c"), sk("add c mul c sin mul c x"), -5, 5, ec);
    CHECK(constant.mean > 10 * good.mean);
}

TEST_CASE("estimate equal to target is realizable") {
    EvalConfig cfg = quick(4);
    cfg.repeats = 6;
    EvalResult r = evaluate_skeleton(sk("sin mul c x"), sk("sin mul c x"), -2, 2, cfg);
    CHECK(r.mean_normalized <= 1e-2);
    r = evaluate_skeleton(sk("add c mul c pow x 2"), sk("add c mul c pow x 2"), -5, 5, cfg);
    CHECK(r.mean_normalized <= 1e-2);
}

TEST_CASE("summary statistics use the population standard deviation") {
    EvalResult r = evaluate_skeleton(sk("add c mul c x"), sk("add c mul c sin mul c x"), -5, 5, quick(5));
    REQUIRE(r.r.size() == 4);
    double m = 0;
    for (double v : r.r) m += v;
    m /= 4;
    double ss = 0;
    for (double v : r.r) ss += (v - m) * (v - m);
    CHECK(r.mean == doctest::Approx(m).epsilon(1e-12));
    CHECK(r.std == doctest::Approx(std::sqrt(ss / 4)).epsilon(1e-12));
    CHECK(r.target_constants.size() == 4);
    for (const auto& c : r.target_constants) CHECK(c.size() == 3);
}

TEST_CASE("error is invariant to placeholder numbering") {
    Rng rng(6);
    std::vector<double> x, y;
    for (int i = 0; i < 200; ++i) {
        x.push_back(rng.uniform(-3, 3));
        y.push_back(std::cos(x.back()));
    }
    // Same function, constants listed in a different preorder.
    const Skeleton a = sk("add mul c x mul c sin add x c");
    const Skeleton b = sk("add mul c sin add x c mul c x");
    for (int t = 0; t < 20; ++t) {
        const double c1 = rng.uniform(-5, 5), c2 = rng.uniform(-5, 5), c3 = rng.uniform(-5, 5);
        CHECK(skeleton_error(a, {c1, c2, c3}, x, y) == doctest::Approx(skeleton_error(b, {c2, c3, c1}, x, y)).epsilon(1e-12));
    }
}

TEST_CASE("undefined estimate values are penalized") {
    std::vector<double> x = {-2, -1, 1, 2}, y = {0, 0, 0, 0};
    // log(c x) with c = 1 is undefined at the two negative points.
    const double r = skeleton_error(sk("log mul c x"), {1.0}, x, y, 1e6);
    CHECK(r == doctest::Approx(2e6 + std::log(2.0)).epsilon(1e-12));
    CHECK(skeleton_error(sk("c"), {0.5}, x, y) == doctest::Approx(2.0));
}

TEST_CASE("test sets cover the expanded domain where the target is defined") {
    EvalConfig cfg;
    cfg.n_test = 2000;
    Rng rng(7);
    auto [x, y] = sample_test_set(parse_prefix_text("sqrt x"), -1, 1, cfg, rng);
    REQUIRE(x.size() == 2000);
    CHECK(*std::min_element(x.begin(), x.end()) >= 0.0);
    CHECK(*std::max_element(x.begin(), x.end()) <= 2.0);
    CHECK(*std::max_element(x.begin(), x.end()) > 1.9);
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(y[i] == std::sqrt(x[i]));

    // Nowhere defined: no test points and an infinite error.
    EvalConfig small = quick(8);
    small.n_test = 20;
    FitResult f = fit_constants(sk("mul c x"), parse_prefix_text("sqrt add -1 mul -1 pow x 2"), -1, 1, small, rng);
    CHECK(std::isinf(f.r));
}

TEST_CASE("evaluation is deterministic and independent of thread count") {
    EvalConfig cfg = quick(9);
    const Skeleton est = sk("add c mul c cos mul c x");
    const Skeleton target = sk("add c mul c sin mul c x");
    EvalResult a = evaluate_skeleton(est, target, -5, 5, cfg);
    EvalResult b = evaluate_skeleton(est, target, -5, 5, cfg);
    cfg.threads = 3;
    EvalResult c = evaluate_skeleton(est, target, -5, 5, cfg);
    CHECK(a.r == b.r);
    CHECK(a.r == c.r);
    CHECK(a.constants == c.constants);
    cfg.seed = 10;
    CHECK(evaluate_skeleton(est, target, -5, 5, cfg).r != a.r);
}

TEST_CASE("configuration and input errors") {
    EvalConfig cfg;
    cfg.repeats = 0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = EvalConfig{};
    cfg.expansion = 0.5;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = EvalConfig{};
    cfg.init_low = 1;
    cfg.init_high = 1;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    Rng rng(1);
    CHECK_THROWS_AS(fit_constants(sk("mul c x2"), parse_prefix_text("x"), -1, 1, quick(1), rng), std::invalid_argument);
}
