#include <cmath>
#include <numbers>
#include <sstream>

#include "doctest.h"
#include "skelsr/expr_gen.hpp"
#include "skelsr/mssp_data.hpp"

using namespace skelsr;

namespace {

Skeleton sk(std::string_view text) { return skeleton_from_text(text); }

ConcreteFunction concrete(std::string_view text) {
    ConcreteFunction f;
    f.tree = parse_prefix_text(text);
    f.source = skeletonize(f.tree);
    return f;
}

SupportSet uniform_support(double lo, double hi, std::size_t n, std::uint64_t seed) {
    Rng rng(seed);
    SupportSet s{{}, lo, hi};
    for (std::size_t i = 0; i < n; ++i) s.values.push_back(rng.uniform(lo, hi));
    return s;
}

bool all_valid(const std::vector<double>& v) {
    for (double y : v)
        if (!is_valid_value(y)) return false;
    return true;
}

bool is_special_unary(const Token& t) {
    if (t.kind != Token::Kind::Unary) return false;
    switch (t.unary_op()) {
        case Unary::Log:
        case Unary::Sqrt:
        case Unary::Exp:
        case Unary::Sinh:
        case Unary::Cosh:
        case Unary::Tanh:
        case Unary::Asin:
        case Unary::Acos: return true;
        default: return false;
    }
}

// True when b differs from a only inside arguments of special functions.
bool same_outside_special_args(const Expr& a, const Expr& b) {
    if (!(a.node == b.node) || a.children.size() != b.children.size()) return false;
    const bool growth_pow = a.node.is(Binary::Pow) && a.children[1].node.kind == Token::Kind::Number;
    for (std::size_t i = 0; i < a.children.size(); ++i) {
        if (i == 0 && (is_special_unary(a.node) || growth_pow)) continue;
        if (!same_outside_special_args(a.children[i], b.children[i])) return false;
    }
    return true;
}

}  // namespace

TEST_CASE("sample_constants") {
    Rng expected(42);
    const double v = expected.uniform(-10, 10);
    Rng rng(42);
    ConcreteFunction f = sample_constants(sk("mul c x"), rng);
    CHECK(f.tree == mul(Expr::num(v), Expr::x()));
    CHECK(f.constants == std::vector<double>{v});

    Rng many(3);
    Skeleton s = sk("add mul c x c");
    double sum = 0, lo = 1e9, hi = -1e9;
    int count = 0;
    for (int i = 0; i < 5000; ++i) {
        for (double c : sample_constants(s, many).constants) {
            sum += c;
            lo = std::min(lo, c);
            hi = std::max(hi, c);
            CHECK(std::fabs(c) >= 0.01);
            ++count;
        }
    }
    CHECK(count == 10000);
    CHECK(std::fabs(sum / count) <= 0.35);
    CHECK(lo > -10);
    CHECK(hi < 10);
}

TEST_CASE("skeletonize inverts sample_constants") {
    GenConfig cfg;
    cfg.seed = 17;
    Corpus corpus = generate_corpus(1000, cfg);
    Rng rng(1);
    for (const auto& e : corpus.entries) CHECK(canonical_equal(skeletonize(sample_constants(e, rng).tree), e));
}

TEST_CASE("select_constants") {
    Rng rng(4);
    Skeleton lin = sk("add mul c x c");
    CHECK(canonical_equal(select_constants(lin, 2, rng), lin));
    Skeleton s = sk("add mul c sin add mul c x c c");  // c1*sin(c2*x + c3) + c4
    CHECK(canonical_equal(select_constants_keep(s, {2, 4}), sk("add sin mul c x c")));
    CHECK(select_constants_keep(s, {2, 4}).num_constants() == 2);
    CHECK_THROWS_AS(select_constants(lin, 3, rng), ArityMismatch);
    CHECK(select_constants(sk("mul c x"), 1, rng).prefix() == "mul c x");
    for (int i = 0; i < 50; ++i) {
        int n_f = static_cast<int>(rng.randint(2, 4));
        CHECK(select_constants(s, n_f, rng).num_constants() == n_f);
    }
}

TEST_CASE("sample_support") {
    Rng rng(9);
    SupportSet s = sample_support(3000, rng);
    CHECK(s.high >= 1.0);
    CHECK(s.high <= 10.0);
    CHECK(s.low == -s.high);
    for (double v : s.values) {
        CHECK(std::fabs(v) <= 10.0);
        CHECK(std::fabs(v) < s.high);
    }
    SupportSet one = sample_support(1, rng);
    REQUIRE(one.values.size() == 1);
    CHECK(std::fabs(one.values[0]) < one.high);
    Rng a(5), b(5);
    CHECK(sample_support(64, a).values == sample_support(64, b).values);
}

TEST_CASE("avoid_nans: log argument is offset to a positive minimum") {
    Rng rng(1);
    SupportSet x = uniform_support(-5, 5, 200, 2);
    RepairResult r = avoid_nans(x, concrete("log x"), rng);
    CHECK(r.x.values == x.values);  // no resampling needed
    CHECK(all_valid(eval_points(r.f.tree, r.x.values)));
    auto inner = eval_points(r.f.tree.children[0], r.x.values);
    CHECK(*std::min_element(inner.begin(), inner.end()) == doctest::Approx(0.05));
    // an existing additive constant absorbs the offset
    RepairResult r2 = avoid_nans(x, concrete("log add mul 2 x 1"), rng);
    CHECK(operator_count(r2.f.tree) == 3);
}

TEST_CASE("avoid_nans: exp-family arguments capped at 7") {
    Rng rng(1);
    SupportSet x = uniform_support(-10, 10, 300, 3);
    RepairResult r = avoid_nans(x, concrete("exp mul 3 x"), rng);
    auto inner = eval_points(r.f.tree.children[0], r.x.values);
    CHECK(*std::max_element(inner.begin(), inner.end()) <= 7.0 + 1e-12);
    CHECK(*std::max_element(inner.begin(), inner.end()) == doctest::Approx(7.0));
    CHECK(operator_count(r.f.tree) == 2);  // coefficient rescaled in place
    RepairResult c = avoid_nans(x, concrete("cosh mul -2 x"), rng);
    auto ci = eval_points(c.f.tree.children[0], c.x.values);
    for (double v : ci) CHECK(std::fabs(v) <= 7.0 + 1e-12);
}

TEST_CASE("avoid_nans: asin/acos rescaled into [-1, 1]; sqrt shifted to >= 0") {
    Rng rng(1);
    SupportSet x = uniform_support(-4, 4, 300, 4);
    for (auto text : {"asin add mul 3 x 1", "acos mul 2 x"}) {
        RepairResult r = avoid_nans(x, concrete(text), rng);
        CHECK(all_valid(eval_points(r.f.tree, r.x.values)));
        for (double v : eval_points(r.f.tree.children[0], r.x.values)) CHECK(std::fabs(v) <= 1.0);
    }
    RepairResult s = avoid_nans(x, concrete("sqrt mul -1.5 x"), rng);
    CHECK(all_valid(eval_points(s.f.tree, s.x.values)));
}

TEST_CASE("avoid_nans: singularities of the worked quotient are excluded") {
    // -3.12 x / sin(1.45 x) - 2.2
    ConcreteFunction f = concrete("add div mul -3.12 x sin mul 1.45 x -2.2");
    Rng rng(8);
    const std::size_t n = 256;
    SupportSet x = uniform_support(-10, 10, n, 5);
    x.values[0] = 0.0;  // 0/0 at the origin
    x.values[1] = std::numbers::pi / 1.45;
    RepairResult r = avoid_nans(x, f, rng);
    CHECK(r.f.tree == f.tree);  // only the support changes
    CHECK(all_valid(eval_points(r.f.tree, r.x.values)));
    const double hw = 0.05 * 20.0 / n;
    // every k*pi/1.45 inside the domain is detected
    for (int k = -4; k <= 4; ++k) {
        const double s = k * std::numbers::pi / 1.45;
        bool found = false;
        for (double v : r.singularities) found = found || std::fabs(v - s) < 1e-9;
        CHECK(found);
        for (double v : r.x.values) CHECK(std::fabs(v - s) >= hw * (1 - 1e-9));
    }
    for (double v : r.x.values) {
        CHECK(v >= -10);
        CHECK(v <= 10);
    }
}

TEST_CASE("avoid_nans: tan and negative powers") {
    Rng rng(2);
    SupportSet x = uniform_support(-6, 6, 128, 6);
    x.values[0] = std::numbers::pi / 2;
    RepairResult t = avoid_nans(x, concrete("tan x"), rng);
    CHECK(all_valid(eval_points(t.f.tree, t.x.values)));
    for (double v : t.x.values)
        for (int k = -2; k <= 1; ++k) CHECK(std::fabs(v - (k + 0.5) * std::numbers::pi) >= 0.05 * 12 / 128 * (1 - 1e-9));
    x.values[0] = 0.0;
    RepairResult p = avoid_nans(x, concrete("pow x -2"), rng);
    CHECK(all_valid(eval_points(p.f.tree, p.x.values)));
}

TEST_CASE("avoid_nans only edits special-function arguments") {
    GenConfig cfg;
    cfg.seed = 23;
    Corpus corpus = generate_corpus(300, cfg);
    Rng rng(3);
    int edited = 0;
    for (const auto& e : corpus.entries) {
        ConcreteFunction f = sample_constants(e, rng);
        SupportSet x = sample_support(128, rng);
        RepairResult r;
        try {
            r = avoid_nans(x, f, rng);
        } catch (const RepairFailed&) {
            continue;
        }
        CHECK(r.x.values.size() == 128);
        CHECK(same_outside_special_args(f.tree, r.f.tree));
        CHECK(all_valid(eval_points(r.f.tree, r.x.values)));
        edited += !(r.f.tree == f.tree);
    }
    CHECK(edited > 0);
}

TEST_CASE("generate_sets on a linear skeleton") {
    Rng rng(10);
    SetCollection c = generate_sets(sk("add mul c x c"), 2, 4, rng);
    REQUIRE(c.sets.size() == 2);
    REQUIRE(c.target.has_value());
    CHECK(canonical_equal(*c.target, sk("add mul c x c")));
    for (const auto& s : c.sets) {
        REQUIRE(s.x.size() == 4);
        const double a = (s.y[1] - s.y[0]) / (s.x[1] - s.x[0]);
        const double b = s.y[0] - a * s.x[0];
        for (std::size_t i = 0; i < 4; ++i) CHECK(s.y[i] == doctest::Approx(a * s.x[i] + b).epsilon(1e-9));
    }
    for (const auto& f : c.functions) CHECK(canonical_equal(skeletonize(f), *c.target));
}

TEST_CASE("generate_sets over corpus skeletons is finite and consistent") {
    GenConfig cfg;
    cfg.seed = 31;
    Corpus corpus = generate_corpus(100, cfg);
    Rng rng(12);
    for (const auto& e : corpus.entries) {
        SetCollection c = generate_sets(e, 10, 128, rng);
        REQUIRE(c.sets.size() == 10);
        for (std::size_t s = 0; s < c.sets.size(); ++s) {
            CHECK(c.sets[s].x.size() == 128);
            CHECK(all_valid(c.sets[s].y));
            CHECK(canonical_equal(skeletonize(c.functions[s]), *c.target));
            // responses are the function's values
            auto y = eval_points(c.functions[s], c.sets[s].x);
            CHECK(y == c.sets[s].y);
        }
    }
    Rng r2(13);
    SetCollection hazards = generate_sets(sk("add mul c log add mul c x c mul c sin add mul c x c"), 3, 128, r2);
    for (const auto& s : hazards.sets) CHECK(all_valid(s.y));
}

TEST_CASE("generate_sets is deterministic and records round-trip") {
    Skeleton s = sk("add mul c sqrt add mul c x c mul c tan mul c x");
    Rng a(77), b(77);
    std::vector<SetCollection> recs = {generate_sets(s, 3, 16, a)};
    std::vector<SetCollection> again = {generate_sets(s, 3, 16, b)};
    std::ostringstream o1, o2;
    write_records(o1, recs);
    write_records(o2, again);
    CHECK(o1.str() == o2.str());

    std::istringstream in(o1.str());
    auto back = read_records(in);
    REQUIRE(back.size() == 1);
    CHECK(back[0].target->prefix() == recs[0].target->prefix());
    REQUIRE(back[0].sets.size() == 3);
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(back[0].sets[i].x == recs[0].sets[i].x);
        CHECK(back[0].sets[i].y == recs[0].sets[i].y);
    }
    std::ostringstream o3;
    write_records(o3, back);
    CHECK(o3.str() == o1.str());

    CHECK_THROWS(read_record("3 add x"));
    CHECK_THROWS(read_record("1 x 1 2 0.5"));
    SetCollection no_target = read_record("0 1 2 0.5 1 1.5 2");
    CHECK_FALSE(no_target.target.has_value());
    CHECK(no_target.sets[0].y == std::vector<double>{1, 2});
}
