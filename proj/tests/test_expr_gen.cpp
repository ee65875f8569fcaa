#include <cmath>
#include <set>
#include <sstream>

#include "doctest.h"
#include "skelsr/expr_gen.hpp"

using namespace skelsr;

namespace {

bool contains_pair(const Expr& e, const std::string& outer, const std::string& inner, bool under = false) {
    auto name = generator_op_name(e);
    if (under && name == inner) return true;
    const bool now_under = under || name == outer;
    for (const auto& c : e.children)
        if (contains_pair(c, outer, inner, now_under)) return true;
    return false;
}

int unary_count(const Expr& e) {
    int n = generator_op_name(e) ? 1 : 0;
    for (const auto& c : e.children) n += unary_count(c);
    return n;
}

int unary_depth(const Expr& e) {
    int d = 0;
    for (const auto& c : e.children) d = std::max(d, unary_depth(c));
    return d + (generator_op_name(e) ? 1 : 0);
}

// Drop placeholder scale/shift factors: c*A -> A, A + c -> A.
Expr erase_placeholders(const Expr& e) {
    if (e.node.is(Binary::Add) || e.node.is(Binary::Mul)) {
        const Expr& l = e.children[0];
        const Expr& r = e.children[1];
        if (l.node.kind == Token::Kind::Placeholder) return erase_placeholders(r);
        if (r.node.kind == Token::Kind::Placeholder) return erase_placeholders(l);
    }
    Expr out(e.node);
    for (const auto& c : e.children) out.children.push_back(erase_placeholders(c));
    return out;
}

}  // namespace

TEST_CASE("forbidden table transcription") {
    // Independent transcription of the published table ("ln" is log here).
    const std::vector<std::pair<std::vector<std::string>, std::set<std::string>>> expected = {
        {{"abs"}, {"sqrt", "pow2", "pow4"}},
        {{"exp", "tan", "log"}, {"exp", "sinh", "cosh", "tanh", "tan", "log", "pow3", "pow4", "pow5"}},
        {{"sinh", "cosh", "tanh"}, {"exp", "sinh", "cosh", "tanh", "tan", "log", "pow2", "pow3", "pow4", "pow5"}},
        {{"pow2", "pow3", "pow4", "pow5"}, {"pow2", "pow3", "pow4", "pow5", "exp", "sinh", "cosh", "tanh"}},
        {{"sin", "cos", "tan"}, {"sin", "cos", "tan"}},
        {{"asin", "acos", "atan"}, {"asin", "acos", "atan"}},
    };
    const auto& table = forbidden_table();
    REQUIRE(table.size() == expected.size());
    for (std::size_t i = 0; i < table.size(); ++i) {
        CHECK(table[i].parents == expected[i].first);
        CHECK(std::set<std::string>(table[i].children.begin(), table[i].children.end()) == expected[i].second);
    }
    auto m = default_forbidden();
    CHECK(m.at("tan") == std::set<std::string>{"exp", "sinh", "cosh", "tanh", "tan", "log", "pow3", "pow4", "pow5",
                                               "sin", "cos"});
    CHECK(m.count("sqrt") == 0);
}

TEST_CASE("generator op names") {
    CHECK(generator_op_name(parse_prefix_text("pow x 3")) == "pow3");
    CHECK(generator_op_name(parse_prefix_text("pow x -1")) == std::nullopt);
    CHECK(generator_op_name(parse_prefix_text("exp x")) == "exp");
    CHECK(generator_op_name(parse_prefix_text("add x x")) == std::nullopt);
    CHECK(generator_unary_ops().size() == 17);
}

TEST_CASE("max_operators = 0 gives a bare leaf") {
    GenConfig cfg;
    cfg.max_operators = 0;
    Rng rng(1);
    for (int i = 0; i < 20; ++i) CHECK(generate_tree(cfg, rng) == Expr::x());
}

TEST_CASE("validator flags each kind of violation") {
    GenConfig cfg;
    auto kinds = [&](std::string_view text) {
        std::set<Violation::Kind> ks;
        for (const auto& v : validate_tree(parse_prefix_text(text), cfg)) ks.insert(v.kind);
        return ks;
    };
    CHECK(kinds("exp exp x") == std::set{Violation::Kind::Forbidden});
    CHECK(kinds("log add x exp x").count(Violation::Kind::Forbidden) == 1);
    CHECK(kinds("sin cos x").count(Violation::Kind::Forbidden) == 1);
    CHECK(kinds("sqrt abs x").empty());
    CHECK(kinds("abs sqrt x") == std::set{Violation::Kind::Forbidden});
    CHECK(kinds("abs sin sqrt x") == std::set{Violation::Kind::UnaryNesting, Violation::Kind::Forbidden});
    CHECK(kinds("sin sqrt atan x") == std::set{Violation::Kind::UnaryNesting});
    CHECK(kinds("add add add add add add add add x x x x x x x x x") == std::set{Violation::Kind::OperatorBudget});
    CHECK(kinds("add add add add add sin x cos x atan x abs x sqrt x asin x") ==
          std::set{Violation::Kind::OperatorBudget, Violation::Kind::UnaryBudget});
    CHECK(kinds("sin 2") == std::set{Violation::Kind::NoVariable});
}

TEST_CASE("generated trees respect every constraint") {
    GenConfig cfg;
    Rng rng(99);
    int with_unary = 0;
    for (int i = 0; i < 10000; ++i) {
        Expr t = generate_tree(cfg, rng);
        REQUIRE(validate_tree(t, cfg).empty());
        CHECK(operator_count(t) <= 7);
        CHECK(unary_count(t) <= 5);
        CHECK(unary_depth(t) <= 2);
        CHECK_FALSE(contains_pair(t, "exp", "exp"));
        CHECK_FALSE(contains_pair(t, "exp", "log"));
        CHECK_FALSE(contains_pair(t, "log", "exp"));
        CHECK(contains_variable(t));
        with_unary += unary_count(t) > 0;
    }
    CHECK(with_unary > 5000);
}

TEST_CASE("insert_placeholders") {
    CHECK(to_prefix_text(insert_placeholders(Expr::x())) == "add mul c x c");
    CHECK(to_prefix_text(insert_placeholders(parse_prefix_text("exp x"))) == "add mul c exp mul c x c");
    CHECK(to_prefix_text(insert_placeholders(parse_prefix_text("sinh x"))) == "add mul c sinh mul c x c");
    // Worked figure: sin(x)*x
    CHECK(to_prefix_text(insert_placeholders(parse_prefix_text("mul sin x x"))) ==
          "mul add mul c sin add mul c x c c add mul c x c");
    // the exception list is configurable
    CHECK(to_prefix_text(insert_placeholders(parse_prefix_text("exp x"), {})) == "add mul c exp add mul c x c c");
    // quotients get an additive placeholder, sums and products do not
    CHECK(to_prefix_text(insert_placeholders(parse_prefix_text("div x sin x"))) ==
          "add div add mul c x c add mul c sin add mul c x c c c");
    Expr p = insert_placeholders(parse_prefix_text("add x sin x"));
    CHECK(placeholder_count(p) == 5);  // one shared additive constant for the outer chain
}

TEST_CASE("placeholder insertion keeps the variable structure") {
    GenConfig cfg;
    Rng rng(5);
    for (int i = 0; i < 500; ++i) {
        Expr t = simplify(generate_tree(cfg, rng));
        Expr back = erase_placeholders(insert_placeholders(t, cfg.multiplicative_only));
        CHECK(placeholder_count(back) == 0);
        for (double x : {-2.3, -0.7, 0.4, 1.9, 3.3}) {
            double a = evaluate_at(t, x), b = evaluate_at(back, x);
            if (is_undefined(a) || is_undefined(b)) CHECK(is_undefined(a) == is_undefined(b));
            else CHECK(b == doctest::Approx(a).epsilon(1e-9));
        }
    }
}

TEST_CASE("corpus determinism and validity") {
    GenConfig cfg;
    cfg.seed = 7;
    std::ostringstream a, b;
    write_corpus(a, generate_corpus(100, cfg));
    write_corpus(b, generate_corpus(100, cfg));
    CHECK(a.str() == b.str());
    cfg.seed = 8;
    std::ostringstream c;
    write_corpus(c, generate_corpus(100, cfg));
    CHECK(a.str() != c.str());

    cfg.seed = 1234;
    Corpus corpus = generate_corpus(1000, cfg);
    REQUIRE(corpus.entries.size() == 1000);
    std::set<std::string> canon;
    int any_unary = 0;
    for (const auto& s : corpus.entries) {
        Expr parsed = parse_prefix_text(s.prefix());
        CHECK(validate_tree(parsed, cfg, false).empty());
        canon.insert(s.canonical);
        any_unary += unary_count(parsed) > 0;
        for (const auto& t : to_prefix(parsed))
            if (t.kind == Token::Kind::Number) CHECK((t.value >= -3 && t.value <= 5 && t.value == std::nearbyint(t.value)));
    }
    CHECK(canon.size() == 1000);
    CHECK(any_unary >= 1);
}

TEST_CASE("corpus file round trip") {
    GenConfig cfg;
    cfg.seed = 21;
    Corpus corpus = generate_corpus(50, cfg);
    std::ostringstream out;
    write_corpus(out, corpus);
    std::istringstream in(out.str());
    Corpus back = read_corpus(in);
    CHECK(back.seed == 21);
    CHECK(back.config_hash == cfg.hash());
    REQUIRE(back.entries.size() == 50);
    for (std::size_t i = 0; i < 50; ++i) CHECK(back.entries[i].canonical == corpus.entries[i].canonical);
    std::ostringstream again;
    write_corpus(again, back);
    CHECK(again.str() == out.str());

    std::istringstream bad("add x x\n");
    CHECK_THROWS(read_corpus(bad));
    std::istringstream short_file("# skelsr-corpus v1 seed=1 config=0 count=3\nadd mul c x c\n");
    CHECK_THROWS(read_corpus(short_file));
}

TEST_CASE("over-constrained corpus reports RetryExhausted") {
    GenConfig cfg;
    cfg.max_operators = 0;  // only one distinct skeleton exists
    CHECK(generate_corpus(1, cfg).entries.size() == 1);
    CHECK_THROWS_AS(generate_corpus(2, cfg), RetryExhausted);
}
