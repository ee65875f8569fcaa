#include <algorithm>
#include <cmath>
#include <map>
#include <memory>

#include "skelsr/skeleton.hpp"

namespace skelsr {

// ---- placeholder-algebra normal form ----------------------------------------
//
// A skeleton is read as a sum of terms; each term is an optional placeholder
// coefficient times a product of factors raised to integer exponents. Factors
// are variables, unary applications, or opaque nodes (sums under negative
// powers, pow with non-integer exponents, over-sized products).

namespace {

constexpr std::size_t kMaxTerms = 256;

struct Poly;

struct Factor {
    std::string key;
    Expr base;
    int exponent = 1;
    std::shared_ptr<const Poly> sum;  // set when base is a multi-term sum
};

struct Term {
    bool coef = false;
    std::vector<Factor> factors;  // sorted by key, exponents non-zero

    bool is_constant() const { return factors.empty(); }
    std::string key() const {
        std::string k;
        for (const auto& f : factors) {
            k += f.key;
            k += '^';
            k += std::to_string(f.exponent);
            k += ';';
        }
        return k;
    }
};

struct Poly {
    std::vector<Term> terms;  // unique keys, sorted

    static Poly zero() { return {}; }
    static Poly unit() { return Poly{{Term{}}}; }
    static Poly constant() { return Poly{{Term{true, {}}}}; }
    static Poly factor(Expr base, int exponent = 1, std::shared_ptr<const Poly> sum = nullptr) {
        std::string key = to_prefix_text(base);
        Term t;
        t.factors.push_back(Factor{std::move(key), std::move(base), exponent, std::move(sum)});
        return Poly{{std::move(t)}};
    }

    bool is_constant_only() const { return terms.empty() || (terms.size() == 1 && terms[0].is_constant()); }
};

Term multiply_terms(const Term& a, const Term& b) {
    Term out;
    out.coef = a.coef || b.coef;
    std::size_t i = 0, j = 0;
    while (i < a.factors.size() || j < b.factors.size()) {
        if (j == b.factors.size() || (i < a.factors.size() && a.factors[i].key < b.factors[j].key)) {
            out.factors.push_back(a.factors[i++]);
        } else if (i == a.factors.size() || b.factors[j].key < a.factors[i].key) {
            out.factors.push_back(b.factors[j++]);
        } else {
            Factor f = a.factors[i];
            f.exponent += b.factors[j].exponent;
            if (f.exponent != 0) out.factors.push_back(std::move(f));
            ++i;
            ++j;
        }
    }
    return out;
}

Poly mul_polys(const Poly& a, const Poly& b);
Poly pow_poly(const Poly& p, int k);

// A sum factor whose exponent became positive (e.g. (x+c)^-1 * (x+c)^2) is
// expanded back into terms.
std::vector<Term> expand_term(Term t) {
    for (std::size_t i = 0; i < t.factors.size(); ++i) {
        const Factor& f = t.factors[i];
        if (f.sum && f.exponent > 0 && f.exponent <= 5) {
            auto sum = f.sum;
            int k = f.exponent;
            t.factors.erase(t.factors.begin() + static_cast<std::ptrdiff_t>(i));
            Poly rest{{std::move(t)}};
            return mul_polys(rest, pow_poly(*sum, k)).terms;
        }
    }
    return {std::move(t)};
}

Poly collect(std::vector<Term> terms) {
    std::map<std::string, Term> merged;
    for (auto& t : terms) {
        std::string k = t.key();
        auto it = merged.find(k);
        if (it == merged.end()) {
            merged.emplace(std::move(k), std::move(t));
        } else {
            // Two like terms always carry a free coefficient once merged.
            it->second.coef = true;
        }
    }
    Poly p;
    for (auto& [k, t] : merged) p.terms.push_back(std::move(t));
    return p;
}

Expr to_tree(const Poly& p);

Poly add_polys(const Poly& a, const Poly& b) {
    std::vector<Term> all = a.terms;
    all.insert(all.end(), b.terms.begin(), b.terms.end());
    return collect(std::move(all));
}

Poly mul_polys(const Poly& a, const Poly& b) {
    if (a.terms.empty() || b.terms.empty()) return Poly::zero();
    if (a.terms.size() * b.terms.size() > kMaxTerms) {
        return Poly::factor(mul(to_tree(a), to_tree(b)));
    }
    std::vector<Term> out;
    out.reserve(a.terms.size() * b.terms.size());
    for (const auto& ta : a.terms)
        for (const auto& tb : b.terms)
            for (auto& t : expand_term(multiply_terms(ta, tb))) out.push_back(std::move(t));
    return collect(std::move(out));
}

Poly pow_poly(const Poly& p, int k) {
    if (k == 0) return Poly::unit();
    if (k == 1) return p;
    if (p.terms.empty()) return k > 0 ? Poly::zero() : Poly::constant();
    if (p.terms.size() == 1) {
        Term t = p.terms[0];
        for (auto& f : t.factors) f.exponent *= k;
        return collect(expand_term(std::move(t)));
    }
    if (k >= 2 && k <= 5) {
        Poly acc = p;
        for (int i = 1; i < k; ++i) acc = mul_polys(acc, p);
        return acc;
    }
    return Poly::factor(to_tree(p), k, std::make_shared<const Poly>(p));
}

bool integral_exponent(const Expr& e, int& k) {
    if (e.node.kind != Token::Kind::Number) return false;
    double v = e.node.value;
    if (!std::isfinite(v) || v != std::nearbyint(v) || std::fabs(v) > 64) return false;
    k = static_cast<int>(v);
    return true;
}

Poly to_poly(const Expr& e) {
    const Token& t = e.node;
    switch (t.kind) {
        case Token::Kind::Placeholder:
        case Token::Kind::Euler: return Poly::constant();
        case Token::Kind::Number:
            if (t.value == 0.0) return Poly::zero();
            if (t.value == 1.0) return Poly::unit();
            return Poly::constant();
        case Token::Kind::Variable: return Poly::factor(Expr::x(t.index));
        case Token::Kind::Unary: {
            Poly a = to_poly(e.children[0]);
            if (a.is_constant_only()) return Poly::constant();
            return Poly::factor(Expr::un(t.unary_op(), to_tree(a)));
        }
        case Token::Kind::Binary: {
            Poly l = to_poly(e.children[0]);
            switch (t.binary_op()) {
                case Binary::Add: return add_polys(l, to_poly(e.children[1]));
                case Binary::Mul: return mul_polys(l, to_poly(e.children[1]));
                case Binary::Div: {
                    Poly r = to_poly(e.children[1]);
                    if (r.terms.empty()) return Poly::factor(div(to_tree(l), Expr::num(0)));
                    return mul_polys(l, pow_poly(r, -1));
                }
                case Binary::Pow: {
                    int k = 0;
                    if (integral_exponent(e.children[1], k)) return pow_poly(l, k);
                    Poly r = to_poly(e.children[1]);
                    if (l.is_constant_only() && r.is_constant_only()) return Poly::constant();
                    return Poly::factor(Expr::bin(Binary::Pow, to_tree(l), to_tree(r)));
                }
            }
            break;
        }
        default: break;
    }
    return Poly::constant();
}

Expr term_tree(const Term& t) {
    std::vector<Expr> parts;
    if (t.coef) parts.push_back(Expr::c());
    for (const auto& f : t.factors) {
        if (f.exponent == 1) parts.push_back(f.base);
        else parts.push_back(pow(f.base, f.exponent));
    }
    if (parts.empty()) return Expr::c();  // a bare unit is still a constant
    Expr acc = std::move(parts[0]);
    for (std::size_t i = 1; i < parts.size(); ++i) acc = mul(std::move(acc), std::move(parts[i]));
    return acc;
}

Expr to_tree(const Poly& p) {
    if (p.terms.empty()) return Expr::num(0.0);
    Expr acc = term_tree(p.terms[0]);
    for (std::size_t i = 1; i < p.terms.size(); ++i) acc = add(std::move(acc), term_tree(p.terms[i]));
    return acc;
}

// ---- placeholder merging -----------------------------------------------------

void flatten_chain(const Expr& e, Binary op, std::vector<Expr>& out) {
    if (e.node.is(op)) {
        for (const auto& c : e.children) flatten_chain(c, op, out);
    } else {
        out.push_back(e);
    }
}

bool is_placeholder(const Expr& e) { return e.node.kind == Token::Kind::Placeholder; }

Expr merge_rec(const Expr& tree) {
    Expr e(tree.node);
    for (const auto& c : tree.children) e.children.push_back(merge_rec(c));
    const Token& t = e.node;
    if (t.kind == Token::Kind::Unary) {
        if (is_placeholder(e.children[0])) return Expr::c();
        return e;
    }
    if (t.kind != Token::Kind::Binary) return e;
    const Expr& l = e.children[0];
    const Expr& r = e.children[1];
    if (t.is(Binary::Pow)) {
        if (is_placeholder(l) && (is_placeholder(r) || r.node.is_numeric())) return Expr::c();
        return e;
    }
    if (t.is(Binary::Div)) {
        if ((is_placeholder(l) || l.node.is_numeric()) && (is_placeholder(r) || r.node.is_numeric()) &&
            (is_placeholder(l) || is_placeholder(r)))
            return Expr::c();
        return e;
    }
    // add / mul chains: one placeholder absorbs every other constant operand.
    std::vector<Expr> ops;
    flatten_chain(e, t.binary_op(), ops);
    bool has_placeholder = std::any_of(ops.begin(), ops.end(), is_placeholder);
    if (!has_placeholder) return e;
    std::vector<Expr> kept;
    bool placed = false;
    for (auto& o : ops) {
        if (is_placeholder(o) || o.node.is_numeric()) {
            if (!placed) {
                kept.push_back(Expr::c());
                placed = true;
            }
        } else {
            kept.push_back(std::move(o));
        }
    }
    if (kept.size() == ops.size()) return e;
    Expr acc = std::move(kept[0]);
    for (std::size_t i = 1; i < kept.size(); ++i) acc = Expr::bin(t.binary_op(), std::move(acc), std::move(kept[i]));
    return acc;
}

// ---- kappa helpers --------------------------------------------------------------

Expr replace_numbers(const Expr& e) {
    if (e.node.is_numeric()) return Expr::c();
    Expr out(e.node);
    for (std::size_t i = 0; i < e.children.size(); ++i) {
        const Expr& c = e.children[i];
        // Integer exponents of pow are structure, not coefficients.
        if (i == 1 && e.node.is(Binary::Pow) && c.node.kind == Token::Kind::Number &&
            c.node.value == std::nearbyint(c.node.value)) {
            out.children.push_back(c);
        } else {
            out.children.push_back(replace_numbers(c));
        }
    }
    return out;
}

Expr collapse_free(const Expr& e, int v) {
    if (!contains_variable(e, v)) return Expr::c();
    Expr out(e.node);
    for (std::size_t i = 0; i < e.children.size(); ++i) {
        const Expr& c = e.children[i];
        if (i == 1 && e.node.is(Binary::Pow) && c.node.kind == Token::Kind::Number &&
            c.node.value == std::nearbyint(c.node.value)) {
            out.children.push_back(c);
        } else {
            out.children.push_back(collapse_free(c, v));
        }
    }
    return out;
}

void fill_constants(Expr& e, std::span<const double> values, std::size_t& next) {
    if (e.node.kind == Token::Kind::Placeholder) {
        e = Expr::num(values[next++]);
        return;
    }
    for (auto& c : e.children) fill_constants(c, values, next);
}

}  // namespace

Expr normal_form(const Expr& tree) {
    Expr out = to_tree(to_poly(tree));
    reindex_placeholders(out);
    return out;
}

Expr merge_placeholders(const Expr& tree) {
    // Merging can expose new merges one level up; iterate to a fixed point.
    Expr cur = merge_rec(tree);
    for (;;) {
        Expr next = merge_rec(cur);
        if (next == cur) return cur;
        cur = std::move(next);
    }
}

Skeleton make_skeleton(Expr tree) {
    Skeleton s;
    s.tree = merge_placeholders(tree);
    reindex_placeholders(s.tree);
    s.canonical = to_prefix_text(normal_form(s.tree));
    return s;
}

Skeleton skeleton_from_text(std::string_view prefix_text) { return make_skeleton(parse_prefix_text(prefix_text)); }

Skeleton skeletonize(const Expr& tree) { return make_skeleton(replace_numbers(tree)); }

Skeleton skeletonize_wrt(const Expr& tree, int v) {
    Expr collapsed = merge_placeholders(collapse_free(tree, v));
    Skeleton s;
    s.tree = normal_form(collapsed);
    s.canonical = to_prefix_text(s.tree);
    return s;
}

Expr set_constants(const Expr& placeholder_tree, std::span<const double> values) {
    const std::size_t n = placeholder_count(placeholder_tree);
    if (values.size() != n) {
        throw ArityMismatch("expected " + std::to_string(n) + " constants, got " + std::to_string(values.size()));
    }
    Expr out = placeholder_tree;
    std::size_t next = 0;
    fill_constants(out, values, next);
    return out;
}

Expr set_constants(const Skeleton& skeleton, std::span<const double> values) {
    return set_constants(skeleton.tree, values);
}

bool canonical_equal(const Skeleton& a, const Skeleton& b) { return a.canonical == b.canonical; }

Expr rename_variables(const Expr& tree, int to) {
    Expr out = tree;
    if (out.node.kind == Token::Kind::Variable) out.node.index = to;
    for (auto& c : out.children) c = rename_variables(c, to);
    return out;
}

}  // namespace skelsr
