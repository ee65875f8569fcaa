#include "skelsr/mssp_data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <istream>
#include <limits>
#include <numeric>
#include <ostream>
#include <set>
#include <sstream>

#include "skelsr/batch_eval.hpp"

namespace skelsr {

bool is_valid_value(double v, double max_abs) { return std::isfinite(v) && std::fabs(v) <= max_abs; }

std::vector<double> eval_points(const Expr& tree, const std::vector<double>& x) {
    CompiledExpr prog(tree);
    std::vector<double> out(x.size());
    prog.eval_univariate(x, {}, out);
    return out;
}

// ---- constants and supports ------------------------------------------------

ConcreteFunction sample_constants(const Skeleton& skeleton, Rng& rng, const DataConfig& cfg) {
    ConcreteFunction f;
    f.source = skeleton;
    f.constants.resize(static_cast<std::size_t>(skeleton.num_constants()));
    for (auto& c : f.constants) {
        do c = rng.uniform(-cfg.constant_bound, cfg.constant_bound);
        while (std::fabs(c) < cfg.min_abs_constant);
    }
    f.tree = set_constants(skeleton, f.constants);
    return f;
}

namespace {

Expr neutralize(const Expr& e, const std::set<int>& keep, int& counter, const Token* parent) {
    if (e.node.kind == Token::Kind::Placeholder) {
        const int idx = ++counter;
        if (keep.count(idx) || !parent) return Expr::c();
        if (parent->is(Binary::Add)) return Expr::num(0.0);
        if (parent->is(Binary::Mul) || parent->is(Binary::Div)) return Expr::num(1.0);
        return Expr::c();  // no neutral value in this position
    }
    Expr out(e.node);
    for (const auto& c : e.children) out.children.push_back(neutralize(c, keep, counter, &e.node));
    return out;
}

}  // namespace

Skeleton select_constants_keep(const Skeleton& skeleton, const std::vector<int>& keep) {
    int counter = 0;
    Expr t = neutralize(skeleton.tree, std::set<int>(keep.begin(), keep.end()), counter, nullptr);
    return make_skeleton(simplify(t));
}

Skeleton select_constants(const Skeleton& skeleton, int n_f, Rng& rng) {
    const int n_c = skeleton.num_constants();
    if (n_f > n_c) {
        throw ArityMismatch("select_constants: n_f = " + std::to_string(n_f) + " exceeds " + std::to_string(n_c) +
                            " placeholders");
    }
    if (n_c < 2 || n_f == n_c) return skeleton;
    std::vector<int> idx(static_cast<std::size_t>(n_c));
    std::iota(idx.begin(), idx.end(), 1);
    rng.shuffle(idx.begin(), idx.end());
    idx.resize(static_cast<std::size_t>(std::max(n_f, 0)));
    return select_constants_keep(skeleton, idx);
}

SupportSet sample_support(std::size_t n, Rng& rng, const DataConfig& cfg) {
    SupportSet s;
    const double limit = rng.uniform(cfg.support_limit_low, cfg.support_limit_high);
    s.low = -limit;
    s.high = limit;
    s.values.resize(n);
    for (auto& v : s.values) v = rng.uniform(-limit, limit);
    return s;
}

// ---- domain repair -----------------------------------------------------------

namespace {

enum class Special { None, Log, Sqrt, ExpLike, SymExpLike, DoubleBounded, Singular, Growth };

Special special_kind(const Expr& e) {
    const Token& t = e.node;
    if (t.kind == Token::Kind::Unary) {
        switch (t.unary_op()) {
            case Unary::Log: return Special::Log;
            case Unary::Sqrt: return Special::Sqrt;
            case Unary::Exp:
            case Unary::Tanh: return Special::ExpLike;
            case Unary::Sinh:
            case Unary::Cosh: return Special::SymExpLike;
            case Unary::Asin:
            case Unary::Acos: return Special::DoubleBounded;
            case Unary::Tan: return Special::Singular;
            default: return Special::None;
        }
    }
    if (t.is(Binary::Div)) return Special::Singular;
    if (t.is(Binary::Pow)) {
        const Token& k = e.children[1].node;
        if (k.kind == Token::Kind::Number && k.value < 0) return Special::Singular;
        if (k.kind == Token::Kind::Number && k.value >= 2) return Special::Growth;
    }
    return Special::None;
}

bool contains_special(const Expr& e) {
    if (special_kind(e) != Special::None) return true;
    for (const auto& c : e.children)
        if (contains_special(c)) return true;
    return false;
}

bool add_to_number(Expr& e, double off) {
    if (e.node.kind == Token::Kind::Number) {
        e.node.value += off;
        return true;
    }
    if (e.node.is(Binary::Add)) return add_to_number(e.children[0], off) || add_to_number(e.children[1], off);
    return false;
}

/// e -> e + off, reusing an existing additive constant when there is one.
void shift(Expr& e, double off) {
    if (!add_to_number(e, off)) e = add(std::move(e), Expr::num(off));
}

bool mul_number(Expr& e, double k) {
    if (e.node.kind == Token::Kind::Number) {
        e.node.value *= k;
        return true;
    }
    if (e.node.is(Binary::Mul)) return mul_number(e.children[0], k) || mul_number(e.children[1], k);
    return false;
}

/// e -> k * e, scaling existing coefficients term by term when possible.
void scale(Expr& e, double k) {
    if (e.node.is(Binary::Add)) {
        scale(e.children[0], k);
        scale(e.children[1], k);
        return;
    }
    if (e.node.is(Binary::Div)) {
        scale(e.children[0], k);
        return;
    }
    if (!mul_number(e, k)) e = mul(Expr::num(k), std::move(e));
}

struct Range {
    double lo = std::numeric_limits<double>::infinity();
    double hi = -std::numeric_limits<double>::infinity();
    double absmax = 0.0;
    bool any = false;
};

Range finite_range(const std::vector<double>& v) {
    Range r;
    for (double x : v) {
        if (!std::isfinite(x)) continue;
        r.any = true;
        r.lo = std::min(r.lo, x);
        r.hi = std::max(r.hi, x);
        r.absmax = std::max(r.absmax, std::fabs(x));
    }
    return r;
}

struct Repairer {
    const DataConfig& cfg;
    Rng& rng;
    SupportSet x;
    std::vector<double> singular;

    bool all_valid(const std::vector<double>& v) const {
        return std::all_of(v.begin(), v.end(), [&](double a) { return is_valid_value(a, cfg.max_abs_value); });
    }

    void process(Expr& node) {
        for (auto& c : node.children)
            if (contains_special(c)) process(c);
        const Special kind = special_kind(node);
        if (kind != Special::None) fix(node, kind);
    }

    void fix(Expr& node, Special kind) {
        if (kind == Special::Singular) {
            const std::vector<double> vals = eval_points(node, x.values);
            if (!all_valid(vals)) avoid_singularities(node, vals);
            return;
        }
        Expr& inn = node.children[0];
        const Range r = finite_range(eval_points(inn, x.values));
        if (!r.any) return;
        if (kind == Special::Growth) {
            // Only when the power itself overflows: pull its base back so the
            // power peaks at sqrt(max_abs), leaving room for a product of two.
            if (all_valid(eval_points(node, x.values)) || r.absmax == 0.0) return;
            const double k = node.children[1].node.value;
            scale(inn, std::pow(std::sqrt(cfg.max_abs_value), 1.0 / k) / r.absmax);
            return;
        }
        switch (kind) {
            case Special::Log:
                if (r.lo <= 0.0) shift(inn, cfg.log_margin - r.lo);
                break;
            case Special::Sqrt:
                if (r.lo < 0.0) shift(inn, -r.lo * (1.0 + 1e-12));
                break;
            case Special::ExpLike:
                if (r.hi > cfg.exp_cap) scale(inn, cfg.exp_cap / r.hi);
                break;
            case Special::SymExpLike:
                if (r.absmax > cfg.exp_cap) scale(inn, cfg.exp_cap / r.absmax);
                break;
            case Special::DoubleBounded:
                if (r.absmax > 1.0) scale(inn, (1.0 - 1e-12) / r.absmax);
                break;
            default: break;
        }
    }

    /// Function whose zeros are the singular points of `node`.
    static Expr singular_core(const Expr& node) {
        if (node.node.is(Unary::Tan)) return apply(Unary::Cos, node.children[0]);
        if (node.node.is(Binary::Div)) return node.children[1];
        return node.children[0];  // negative power
    }

    void avoid_singularities(const Expr& node, const std::vector<double>& vals) {
        const Expr core = singular_core(node);
        const std::size_t n = x.values.size();
        const std::size_t g = std::max<std::size_t>(2, static_cast<std::size_t>(cfg.grid_factor) * n);
        const double lo = x.low, hi = x.high;
        std::vector<double> grid(g);
        for (std::size_t i = 0; i < g; ++i) grid[i] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(g - 1);
        const std::vector<double> gv = eval_points(core, grid);
        for (std::size_t i = 0; i < g; ++i) {
            if (gv[i] == 0.0) {
                singular.push_back(grid[i]);
                continue;
            }
            if (i + 1 < g && std::isfinite(gv[i]) && std::isfinite(gv[i + 1]) && gv[i + 1] != 0.0 &&
                (gv[i] < 0) != (gv[i + 1] < 0)) {
                // bisection on the bracket
                double a = grid[i], b = grid[i + 1], fa = gv[i];
                for (int it = 0; it < 60; ++it) {
                    const double m = 0.5 * (a + b);
                    const double fm = evaluate_at(core, m);
                    if (!std::isfinite(fm)) break;
                    if ((fm < 0) == (fa < 0)) {
                        a = m;
                        fa = fm;
                    } else {
                        b = m;
                    }
                }
                singular.push_back(0.5 * (a + b));
            }
        }
        for (std::size_t i = 0; i < n; ++i)
            if (!is_valid_value(vals[i], cfg.max_abs_value)) singular.push_back(x.values[i]);
        resample();
    }

    /// Redraw every support point uniformly over the domain minus the
    /// neighbourhoods of all singular points found so far.
    void resample() {
        const std::size_t n = x.values.size();
        const double lo = x.low, hi = x.high;
        const double hw = cfg.singular_halfwidth * (hi - lo) / static_cast<double>(std::max<std::size_t>(n, 1));
        std::vector<std::pair<double, double>> cut;
        for (double s : singular) cut.push_back({std::max(lo, s - hw), std::min(hi, s + hw)});
        std::sort(cut.begin(), cut.end());
        std::vector<std::pair<double, double>> keep;
        double cur = lo;
        for (const auto& [a, b] : cut) {
            if (a > cur) keep.push_back({cur, a});
            cur = std::max(cur, b);
        }
        if (cur < hi) keep.push_back({cur, hi});
        double total = 0.0;
        for (const auto& [a, b] : keep) total += b - a;
        if (total <= 0.0) throw RepairFailed("avoid_nans: singular neighbourhoods cover the whole domain");
        for (auto& v : x.values) {
            double u = rng.uniform(0.0, total);
            for (const auto& [a, b] : keep) {
                if (u < b - a) {
                    v = a + u;
                    break;
                }
                u -= b - a;
                v = b;
            }
        }
    }
};

}  // namespace

RepairResult avoid_nans(const SupportSet& x, const ConcreteFunction& f, Rng& rng, const DataConfig& cfg) {
    Repairer rep{cfg, rng, x, {}};
    ConcreteFunction g = f;
    for (int pass = 0; pass < cfg.repair_passes; ++pass) {
        if (contains_special(g.tree)) rep.process(g.tree);
        const std::vector<double> y = eval_points(g.tree, rep.x.values);
        if (rep.all_valid(y)) {
            std::sort(rep.singular.begin(), rep.singular.end());
            return {std::move(rep.x), std::move(g), std::move(rep.singular)};
        }
        // Blow-ups outside any special node (e.g. a power of a near-singular
        // tan): treat the offending points as singular and resample.
        for (std::size_t i = 0; i < y.size(); ++i)
            if (!is_valid_value(y[i], cfg.max_abs_value)) rep.singular.push_back(rep.x.values[i]);
        rep.resample();
    }
    throw RepairFailed("avoid_nans: function still invalid on the support after " + std::to_string(cfg.repair_passes) +
                       " repair passes: " + to_prefix_text(g.tree));
}

// ---- collections -------------------------------------------------------------

SetCollection generate_sets(const Skeleton& source, int n_sets, std::size_t n, Rng& rng, const DataConfig& cfg) {
    if (!contains_variable(source.tree)) throw std::invalid_argument("generate_sets: skeleton has no variable");
    int attempts = 0;
    while (attempts < cfg.per_collection_retries) {
        const int n_c = source.num_constants();
        const int n_f = n_c < 2 ? n_c : static_cast<int>(rng.randint(2, n_c));
        const Skeleton ex = select_constants(source, n_f, rng);

        SetCollection out;
        int set_failures = 0;
        while (static_cast<int>(out.sets.size()) < n_sets && set_failures <= cfg.per_set_retries &&
               attempts < cfg.per_collection_retries) {
            ++attempts;
            SupportSet support = sample_support(n, rng, cfg);
            ConcreteFunction f = sample_constants(ex, rng, cfg);
            RepairResult rep;
            try {
                rep = avoid_nans(support, f, rng, cfg);
            } catch (const RepairFailed&) {
                ++set_failures;
                continue;
            }
            Skeleton k = skeletonize(rep.f.tree);
            if (out.target && !canonical_equal(k, *out.target)) {
                ++set_failures;
                continue;
            }
            if (!out.target) out.target = std::move(k);
            DataSet ds;
            ds.y = eval_points(rep.f.tree, rep.x.values);
            ds.x = std::move(rep.x.values);
            out.sets.push_back(std::move(ds));
            out.functions.push_back(std::move(rep.f.tree));
            set_failures = 0;
        }
        if (static_cast<int>(out.sets.size()) == n_sets) return out;
    }
    throw RepairFailed("generate_sets: retry budget exhausted for " + source.prefix());
}

// ---- record files --------------------------------------------------------------

std::string format_double(double v) {
    char buf[32];
    auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

void write_record(std::ostream& out, const SetCollection& c) {
    std::vector<Token> toks;
    if (c.target) toks = to_prefix(c.target->tree);
    out << toks.size();
    for (const auto& t : toks) out << ' ' << to_string(t);
    out << ' ' << c.sets.size();
    for (const auto& s : c.sets) {
        out << ' ' << s.x.size();
        for (std::size_t i = 0; i < s.x.size(); ++i) out << ' ' << format_double(s.x[i]) << ' ' << format_double(s.y[i]);
    }
    out << '\n';
}

namespace {

struct Cursor {
    std::string_view text;
    std::size_t pos = 0;

    std::string_view next() {
        while (pos < text.size() && text[pos] == ' ') ++pos;
        const std::size_t start = pos;
        while (pos < text.size() && text[pos] != ' ') ++pos;
        if (start == pos) throw std::runtime_error("record: unexpected end of line");
        return text.substr(start, pos - start);
    }
    std::size_t count() {
        auto s = next();
        std::size_t v = 0;
        auto res = std::from_chars(s.data(), s.data() + s.size(), v);
        if (res.ec != std::errc() || res.ptr != s.data() + s.size()) throw std::runtime_error("record: bad count");
        return v;
    }
    double number() {
        auto s = next();
        double v = 0;
        auto res = std::from_chars(s.data(), s.data() + s.size(), v);
        if (res.ec != std::errc() || res.ptr != s.data() + s.size()) throw std::runtime_error("record: bad number");
        return v;
    }
};

}  // namespace

SetCollection read_record(std::string_view line) {
    Cursor cur{line};
    SetCollection c;
    const std::size_t t = cur.count();
    if (t > 0) {
        std::vector<Token> toks;
        for (std::size_t i = 0; i < t; ++i) toks.push_back(token_from_string(cur.next()));
        c.target = make_skeleton(parse_prefix(toks));
    }
    const std::size_t s = cur.count();
    for (std::size_t k = 0; k < s; ++k) {
        DataSet ds;
        const std::size_t n = cur.count();
        ds.x.resize(n);
        ds.y.resize(n);
        for (std::size_t i = 0; i < n; ++i) {
            ds.x[i] = cur.number();
            ds.y[i] = cur.number();
        }
        c.sets.push_back(std::move(ds));
    }
    while (cur.pos < line.size() && line[cur.pos] == ' ') ++cur.pos;
    if (cur.pos != line.size()) throw std::runtime_error("record: trailing data");
    return c;
}

void write_records(std::ostream& out, const std::vector<SetCollection>& records) {
    out << "# skelsr-records v1 count=" << records.size() << '\n';
    for (const auto& r : records) write_record(out, r);
}

std::vector<SetCollection> read_records(std::istream& in) {
    std::string line;
    if (!std::getline(in, line) || !line.starts_with("# skelsr-records v1")) {
        throw std::runtime_error("records file: missing header line");
    }
    std::size_t expected = 0;
    if (auto p = line.find("count="); p != std::string::npos) expected = std::stoull(line.substr(p + 6));
    std::vector<SetCollection> out;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        out.push_back(read_record(line));
    }
    if (out.size() != expected) {
        throw std::runtime_error("records file: header count " + std::to_string(expected) + " but " +
                                 std::to_string(out.size()) + " records");
    }
    return out;
}

}  // namespace skelsr
