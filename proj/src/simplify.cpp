#include <algorithm>
#include <cmath>
#include <numbers>

#include "skelsr/skeleton.hpp"

namespace skelsr {

namespace {

double numeric_value(const Expr& e) { return e.node.kind == Token::Kind::Euler ? std::numbers::e : e.node.value; }

bool is_number(const Expr& e, double v) { return e.node.kind == Token::Kind::Number && e.node.value == v; }

bool is_integer_number(const Expr& e) {
    return e.node.kind == Token::Kind::Number && std::isfinite(e.node.value) && e.node.value == std::nearbyint(e.node.value);
}

int sort_rank(const Token& t) {
    switch (t.kind) {
        case Token::Kind::Number: return 0;
        case Token::Kind::Euler: return 1;
        case Token::Kind::Placeholder: return 2;
        case Token::Kind::Variable: return 3;
        case Token::Kind::Unary: return 4;
        default: return 5;
    }
}

void flatten(const Expr& e, Binary op, std::vector<Expr>& out) {
    if (e.node.is(op)) {
        for (const auto& c : e.children) flatten(c, op, out);
    } else {
        out.push_back(e);
    }
}

Expr rebuild_chain(Binary op, std::vector<Expr> operands) {
    Expr acc = std::move(operands.front());
    for (std::size_t i = 1; i < operands.size(); ++i) acc = Expr::bin(op, std::move(acc), std::move(operands[i]));
    return acc;
}

void sort_operands(std::vector<Expr>& ops) {
    std::vector<std::pair<std::pair<int, std::string>, std::size_t>> keys;
    keys.reserve(ops.size());
    for (std::size_t i = 0; i < ops.size(); ++i) keys.push_back({{sort_rank(ops[i].node), to_prefix_text(ops[i])}, i});
    std::stable_sort(keys.begin(), keys.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
    std::vector<Expr> sorted;
    sorted.reserve(ops.size());
    for (auto& k : keys) sorted.push_back(std::move(ops[k.second]));
    ops = std::move(sorted);
}

Expr simplify_chain(Binary op, const Expr& node);

bool provably_positive(const Expr& e) {
    const Token& t = e.node;
    if (t.kind == Token::Kind::Number) return t.value > 0;
    if (t.kind == Token::Kind::Euler) return true;
    if (t.is(Unary::Exp) || t.is(Unary::Cosh)) return true;
    if (t.is(Binary::Add) || t.is(Binary::Mul)) return provably_positive(e.children[0]) && provably_positive(e.children[1]);
    return false;
}

Expr simplify_node(Expr e) {
    const Token t = e.node;
    if (t.kind == Token::Kind::Unary) {
        Expr& a = e.children[0];
        if (a.node.is_numeric()) {
            double v = apply_unary(t.unary_op(), numeric_value(a));
            if (!is_undefined(v)) return Expr::num(v);
        }
        if (t.is(Unary::Log) && a.node.is(Unary::Exp) && is_total(a.children[0])) return std::move(a.children[0]);
        // exp(log(A)) = A only where log(A) is defined.
        if (t.is(Unary::Exp) && a.node.is(Unary::Log) && provably_positive(a.children[0])) return std::move(a.children[0]);
        return e;
    }
    if (t.kind != Token::Kind::Binary) return e;

    Expr& l = e.children[0];
    Expr& r = e.children[1];
    switch (t.binary_op()) {
        case Binary::Add:
        case Binary::Mul: return simplify_chain(t.binary_op(), e);
        case Binary::Div: {
            if (l.node.is_numeric() && r.node.is_numeric()) {
                double v = numeric_value(l) / numeric_value(r);
                if (!is_undefined(v)) return Expr::num(v);
            }
            if (is_number(r, 1.0)) return std::move(l);
            if (r.node.is_numeric() && numeric_value(r) != 0.0) {
                double inv = 1.0 / numeric_value(r);
                if (!is_undefined(inv)) return simplify_chain(Binary::Mul, mul(Expr::num(inv), std::move(l)));
            }
            return e;
        }
        case Binary::Pow: {
            if (l.node.is_numeric() && r.node.is_numeric()) {
                double v = std::pow(numeric_value(l), numeric_value(r));
                if (!is_undefined(v)) return Expr::num(v);
            }
            if (is_number(r, 1.0)) return std::move(l);
            if (is_number(r, 0.0) && is_total(l)) return Expr::num(1.0);
            if (is_integer_number(r) && l.node.is(Binary::Pow) && is_integer_number(l.children[1])) {
                double k = l.children[1].node.value * r.node.value;
                if (k < -3 || k > 5) return e;  // keep exponents inside the integer vocabulary
                Expr base = std::move(l.children[0]);
                if (k == 1.0) return base;
                return simplify_node(Expr::bin(Binary::Pow, std::move(base), Expr::num(k)));
            }
            return e;
        }
    }
    return e;
}

// Split k*A (add chains) or A^k (mul chains) into (A, k).
std::pair<Expr, double> split_term(Binary op, const Expr& e) {
    if (op == Binary::Add) {
        std::vector<Expr> factors;
        flatten(e, Binary::Mul, factors);
        double k = 1.0;
        std::vector<Expr> rest;
        for (auto& f : factors) {
            if (f.node.is_numeric()) k *= numeric_value(f);
            else rest.push_back(std::move(f));
        }
        if (rest.empty() || rest.size() == factors.size()) return {e, 1.0};
        return {rebuild_chain(Binary::Mul, std::move(rest)), k};
    }
    if (e.node.is(Binary::Pow) && is_integer_number(e.children[1])) return {e.children[0], e.children[1].node.value};
    return {e, 1.0};
}

// Merge like terms: k1*A + k2*A -> (k1+k2)*A and A^a * A^b -> A^(a+b).
std::vector<Expr> merge_like(Binary op, std::vector<Expr> rest) {
    std::vector<std::pair<Expr, double>> parts;
    std::vector<std::string> keys;
    for (const auto& r : rest) {
        parts.push_back(split_term(op, r));
        keys.push_back(to_prefix_text(parts.back().first));
    }
    std::vector<Expr> out;
    std::vector<bool> used(rest.size(), false);
    for (std::size_t i = 0; i < rest.size(); ++i) {
        if (used[i]) continue;
        std::vector<std::size_t> group = {i};
        for (std::size_t j = i + 1; j < rest.size(); ++j)
            if (!used[j] && keys[j] == keys[i]) group.push_back(j);
        if (group.size() == 1) {
            out.push_back(std::move(rest[i]));
            continue;
        }
        double total = 0.0;
        bool same_sign = true;
        for (auto g : group) {
            total += parts[g].second;
            same_sign = same_sign && (parts[g].second > 0) == (parts[i].second > 0);
        }
        const Expr& base = parts[i].first;
        bool merged = true;
        if (op == Binary::Add) {
            if (total == 0.0 && is_total(base)) {
                // terms cancel
            } else if (total == 1.0) {
                out.push_back(base);
            } else if (!is_undefined(total) && total != 0.0) {
                out.push_back(simplify_chain(Binary::Mul, mul(Expr::num(total), base)));
            } else {
                merged = false;
            }
        } else {
            // Only merge when the domain cannot change (no x^2 * x^-2 -> 1)
            // and the exponent stays inside the integer vocabulary.
            if (same_sign && total >= -3 && total <= 5) {
                out.push_back(total == 1.0 ? base : Expr::bin(Binary::Pow, base, Expr::num(total)));
            } else {
                merged = false;
            }
        }
        if (!merged) {
            for (auto g : group) out.push_back(rest[g]);
        }
        for (auto g : group) used[g] = true;
    }
    return out;
}

Expr simplify_chain(Binary op, const Expr& node) {
    std::vector<Expr> operands;
    flatten(node, op, operands);
    const double identity = op == Binary::Add ? 0.0 : 1.0;
    double folded = identity;
    int numeric_count = 0;
    std::vector<Expr> rest;
    for (auto& o : operands) {
        if (o.node.is_numeric()) {
            folded = op == Binary::Add ? folded + numeric_value(o) : folded * numeric_value(o);
            ++numeric_count;
        } else {
            rest.push_back(std::move(o));
        }
    }
    if (is_undefined(folded)) {
        // Folding overflowed; leave the numeric operands alone.
        std::vector<Expr> all;
        flatten(node, op, all);
        sort_operands(all);
        return rebuild_chain(op, std::move(all));
    }
    if (op == Binary::Mul && folded == 0.0 && numeric_count > 0) {
        bool total = std::all_of(rest.begin(), rest.end(), [](const Expr& x) { return is_total(x); });
        if (total) return Expr::num(0.0);
    }
    if (rest.size() > 1) rest = merge_like(op, std::move(rest));
    std::vector<Expr> out;
    if (numeric_count > 0 && (folded != identity || rest.empty())) out.push_back(Expr::num(folded));
    for (auto& r : rest) out.push_back(std::move(r));
    if (out.empty()) return Expr::num(identity);
    sort_operands(out);
    return rebuild_chain(op, std::move(out));
}

Expr simplify_rec(const Expr& tree) {
    Expr e(tree.node);
    e.children.reserve(tree.children.size());
    for (const auto& c : tree.children) e.children.push_back(simplify_rec(c));
    return simplify_node(std::move(e));
}

}  // namespace

bool is_total(const Expr& tree) {
    const Token& t = tree.node;
    if (t.kind == Token::Kind::Unary) {
        switch (t.unary_op()) {
            case Unary::Log:
            case Unary::Sqrt:
            case Unary::Acos:
            case Unary::Asin:
            case Unary::Tan:
            case Unary::Exp:
            case Unary::Sinh:
            case Unary::Cosh: return false;
            default: break;
        }
    }
    if (t.is(Binary::Div)) return false;
    if (t.is(Binary::Pow)) {
        const Expr& k = tree.children[1];
        if (!(is_integer_number(k) && k.node.value >= 0)) return false;
    }
    for (const auto& c : tree.children)
        if (!is_total(c)) return false;
    return true;
}

Expr simplify(const Expr& tree) {
    // A second pass catches rewrites enabled by the first (e.g. div -> mul
    // exposing a foldable chain one level up).
    Expr once = simplify_rec(tree);
    Expr twice = simplify_rec(once);
    return operator_count(twice) <= operator_count(once) ? twice : once;
}

}  // namespace skelsr
