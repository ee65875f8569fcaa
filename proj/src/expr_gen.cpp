#include "skelsr/expr_gen.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <ostream>
#include <sstream>
#include <unordered_set>

namespace skelsr {

namespace {

const std::vector<std::string> kUnaryOps = {"abs",  "acos", "asin", "atan", "cos",  "cosh", "exp",  "log",  "sin",
                                            "sinh", "sqrt", "tan",  "tanh", "pow2", "pow3", "pow4", "pow5"};

Expr make_unary_like(const std::string& name, Expr arg) {
    if (name.size() == 4 && name.starts_with("pow")) return pow(std::move(arg), name[3] - '0');
    return apply(token_from_string(name).unary_op(), std::move(arg));
}

struct GenState {
    int ops_left;
    int unary_left;
};

Expr grow(const GenConfig& cfg, Rng& rng, GenState& st, std::vector<std::string>& path) {
    std::vector<const std::string*> unary_choices;
    if (st.ops_left > 0 && st.unary_left > 0 && static_cast<int>(path.size()) <= cfg.max_unary_nesting) {
        for (const auto& op : kUnaryOps) {
            bool ok = true;
            for (const auto& anc : path) {
                auto it = cfg.forbidden.find(anc);
                if (it != cfg.forbidden.end() && it->second.count(op)) {
                    ok = false;
                    break;
                }
            }
            if (ok) unary_choices.push_back(&op);
        }
    }
    const double wu = unary_choices.empty() ? 0.0 : cfg.weight_unary;
    const double wb = st.ops_left > 0 ? cfg.weight_binary : 0.0;
    const double r = rng.uniform() * (wu + wb + cfg.weight_leaf);

    if (r < wu) {
        const std::string& op = *unary_choices[rng.index(unary_choices.size())];
        --st.ops_left;
        --st.unary_left;
        path.push_back(op);
        Expr child = grow(cfg, rng, st, path);
        path.pop_back();
        return make_unary_like(op, std::move(child));
    }
    if (r < wu + wb) {
        static constexpr Binary kBinary[] = {Binary::Add, Binary::Mul, Binary::Div};
        const Binary op = kBinary[rng.index(3)];
        --st.ops_left;
        Expr l = grow(cfg, rng, st, path);
        Expr rr = grow(cfg, rng, st, path);
        return Expr::bin(op, std::move(l), std::move(rr));
    }
    return Expr::x();
}

void validate_rec(const Expr& e, const GenConfig& cfg, std::vector<std::string>& path, int& unary_count,
                  std::vector<Violation>& out) {
    auto name = generator_op_name(e);
    if (name) {
        ++unary_count;
        if (static_cast<int>(path.size()) > cfg.max_unary_nesting) {
            out.push_back({Violation::Kind::UnaryNesting, *name + " nested under " + std::to_string(path.size()) +
                                                              " unary operators"});
        }
        for (const auto& anc : path) {
            auto it = cfg.forbidden.find(anc);
            if (it != cfg.forbidden.end() && it->second.count(*name)) {
                out.push_back({Violation::Kind::Forbidden, *name + " inside " + anc});
            }
        }
        path.push_back(*name);
        validate_rec(e.children[0], cfg, path, unary_count, out);
        path.pop_back();
        return;
    }
    for (const auto& c : e.children) validate_rec(c, cfg, path, unary_count, out);
}

Expr wrap(const Expr& e, bool mult_only_ctx, const std::set<std::string>& mult_only) {
    const Token& t = e.node;
    if (t.kind == Token::Kind::Number || t.kind == Token::Kind::Euler || t.kind == Token::Kind::Placeholder) return e;
    auto scale_shift = [&](Expr inner) {
        Expr scaled = mul(Expr::c(), std::move(inner));
        return mult_only_ctx ? scaled : add(std::move(scaled), Expr::c());
    };
    if (t.kind == Token::Kind::Variable) return scale_shift(e);
    if (t.kind == Token::Kind::Unary) {
        const bool inner_ctx = mult_only.count(std::string(name_of(t.unary_op()))) > 0;
        return scale_shift(Expr::un(t.unary_op(), wrap(e.children[0], inner_ctx, mult_only)));
    }
    // Binary.
    if (t.is(Binary::Pow)) {
        // pow(., k) behaves like a unary operator; the exponent stays as is.
        if (e.children[1].node.kind == Token::Kind::Number)
            return scale_shift(Expr::bin(Binary::Pow, wrap(e.children[0], false, mult_only), e.children[1]));
        return scale_shift(Expr::bin(Binary::Pow, wrap(e.children[0], false, mult_only), wrap(e.children[1], false, mult_only)));
    }
    Expr node = Expr::bin(t.binary_op(), wrap(e.children[0], false, mult_only), wrap(e.children[1], false, mult_only));
    // A scale on a sum or product is absorbed by its operands' placeholders;
    // a quotient has no constant term of its own, so it gets an additive one.
    if (t.is(Binary::Div) && !mult_only_ctx) return add(std::move(node), Expr::c());
    return node;
}

// Numeric coefficients and offsets are redundant once placeholders go in.
Expr strip_numbers(const Expr& e) {
    if (e.node.is(Binary::Add) || e.node.is(Binary::Mul)) {
        const Expr& l = e.children[0];
        const Expr& r = e.children[1];
        if (l.node.is_numeric() && !r.node.is_numeric()) return strip_numbers(r);
        if (r.node.is_numeric() && !l.node.is_numeric()) return strip_numbers(l);
    }
    Expr out(e.node);
    for (const auto& c : e.children) out.children.push_back(strip_numbers(c));
    return out;
}

bool numbers_in_vocabulary(const Expr& e) {
    if (e.node.kind == Token::Kind::Number) {
        const double v = e.node.value;
        if (!(v >= -3 && v <= 5 && v == std::nearbyint(v))) return false;
    }
    for (const auto& c : e.children)
        if (!numbers_in_vocabulary(c)) return false;
    return true;
}

std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char ch : s) {
        h ^= ch;
        h *= 0x100000001b3ull;
    }
    return h;
}

}  // namespace

std::optional<std::string> generator_op_name(const Expr& node) {
    const Token& t = node.node;
    if (t.kind == Token::Kind::Unary) return std::string(name_of(t.unary_op()));
    if (t.is(Binary::Pow)) {
        const Token& k = node.children[1].node;
        if (k.kind == Token::Kind::Number && k.value >= 2 && k.value <= 5 && k.value == std::nearbyint(k.value))
            return "pow" + std::to_string(static_cast<int>(k.value));
    }
    return std::nullopt;
}

const std::vector<std::string>& generator_unary_ops() { return kUnaryOps; }

const std::vector<ForbiddenRow>& forbidden_table() {
    static const std::vector<ForbiddenRow> table = {
        {{"abs"}, {"sqrt", "pow2", "pow4"}},
        {{"exp", "tan", "log"}, {"exp", "sinh", "cosh", "tanh", "tan", "log", "pow3", "pow4", "pow5"}},
        {{"sinh", "cosh", "tanh"}, {"exp", "sinh", "cosh", "tanh", "tan", "log", "pow2", "pow3", "pow4", "pow5"}},
        {{"pow2", "pow3", "pow4", "pow5"}, {"pow2", "pow3", "pow4", "pow5", "exp", "sinh", "cosh", "tanh"}},
        {{"sin", "cos", "tan"}, {"sin", "cos", "tan"}},
        {{"asin", "acos", "atan"}, {"asin", "acos", "atan"}},
    };
    return table;
}

ForbiddenMap default_forbidden() {
    ForbiddenMap m;
    for (const auto& row : forbidden_table())
        for (const auto& p : row.parents) m[p].insert(row.children.begin(), row.children.end());
    return m;
}

std::string GenConfig::describe() const {
    std::ostringstream os;
    os << "max_operators=" << max_operators << ";max_unary_nesting=" << max_unary_nesting
       << ";max_unary_ops=" << max_unary_ops << ";weights=" << weight_unary << ',' << weight_binary << ','
       << weight_leaf << ";forbidden=";
    for (const auto& [p, cs] : forbidden) {
        os << p << ':';
        for (const auto& c : cs) os << c << ',';
        os << '|';
    }
    os << ";multiplicative_only=";
    for (const auto& m : multiplicative_only) os << m << ',';
    os << ";max_retries=" << max_retries;
    return os.str();
}

std::uint64_t GenConfig::hash() const { return fnv1a(describe()); }

std::vector<Violation> validate_tree(const Expr& tree, const GenConfig& config, bool check_budget) {
    std::vector<Violation> out;
    std::vector<std::string> path;
    int unary_count = 0;
    validate_rec(tree, config, path, unary_count, out);
    if (check_budget) {
        const auto ops = operator_count(tree);
        if (static_cast<int>(ops) > config.max_operators) {
            out.push_back({Violation::Kind::OperatorBudget, std::to_string(ops) + " operators"});
        }
        if (unary_count > config.max_unary_ops) {
            out.push_back({Violation::Kind::UnaryBudget, std::to_string(unary_count) + " unary operators"});
        }
    }
    if (!contains_variable(tree)) out.push_back({Violation::Kind::NoVariable, "no variable"});
    return out;
}

Expr generate_tree(const GenConfig& config, Rng& rng) {
    for (int attempt = 0; attempt < config.max_retries; ++attempt) {
        GenState st{config.max_operators, config.max_unary_ops};
        std::vector<std::string> path;
        Expr tree = grow(config, rng, st, path);
        if (!validate_tree(tree, config).empty()) continue;
        if (!contains_variable(simplify(tree))) continue;
        return tree;
    }
    throw RetryExhausted("generate_tree: no valid tree after " + std::to_string(config.max_retries) + " attempts");
}

Expr insert_placeholders(const Expr& tree, const std::set<std::string>& multiplicative_only) {
    Expr out = merge_placeholders(wrap(tree, false, multiplicative_only));
    reindex_placeholders(out);
    return out;
}

Skeleton generate_skeleton(const GenConfig& config, Rng& rng) {
    for (int attempt = 0; attempt < config.max_retries; ++attempt) {
        Expr raw = strip_numbers(simplify(generate_tree(config, rng)));
        Skeleton s = skeletonize(insert_placeholders(raw, config.multiplicative_only));
        // Prefer the normal form when it is the shorter spelling of the same skeleton.
        Expr nf = normal_form(s.tree);
        if (node_count(nf) < node_count(s.tree)) s.tree = std::move(nf);
        if (!validate_tree(s.tree, config, false).empty() || !numbers_in_vocabulary(s.tree)) continue;
        return s;
    }
    throw RetryExhausted("generate_skeleton: no valid skeleton after " + std::to_string(config.max_retries) +
                         " attempts");
}

Corpus generate_corpus(std::size_t size, const GenConfig& config) {
    constexpr int kDedupAttempts = 1000;
    Corpus corpus;
    corpus.seed = config.seed;
    corpus.config_hash = config.hash();
    corpus.entries.reserve(size);
    std::unordered_set<std::string> seen;
    for (std::size_t i = 0; i < size; ++i) {
        bool placed = false;
        for (int a = 0; a < kDedupAttempts && !placed; ++a) {
            Rng rng(stream_seed(config.seed, i, static_cast<std::uint64_t>(a)));
            Skeleton s = generate_skeleton(config, rng);
            if (seen.insert(s.canonical).second) {
                corpus.entries.push_back(std::move(s));
                placed = true;
            }
        }
        if (!placed) {
            throw RetryExhausted("generate_corpus: could not find a new distinct skeleton for entry " +
                                 std::to_string(i));
        }
    }
    return corpus;
}

void write_corpus(std::ostream& out, const Corpus& corpus) {
    char hash[17];
    std::snprintf(hash, sizeof hash, "%016llx", static_cast<unsigned long long>(corpus.config_hash));
    out << "# skelsr-corpus v1 seed=" << corpus.seed << " config=" << hash << " count=" << corpus.entries.size()
        << '\n';
    for (const auto& s : corpus.entries) out << s.prefix() << '\n';
}

Corpus read_corpus(std::istream& in) {
    Corpus corpus;
    std::string line;
    if (!std::getline(in, line) || !line.starts_with("# skelsr-corpus")) {
        throw std::runtime_error("corpus file: missing header line");
    }
    std::istringstream hs(line.substr(15));
    std::string field;
    std::size_t count = 0;
    bool have_count = false;
    while (hs >> field) {
        if (field.starts_with("seed=")) corpus.seed = std::stoull(field.substr(5));
        else if (field.starts_with("config=")) corpus.config_hash = std::stoull(field.substr(7), nullptr, 16);
        else if (field.starts_with("count=")) {
            count = std::stoull(field.substr(6));
            have_count = true;
        }
    }
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        Skeleton s;
        s.tree = parse_prefix_text(line);
        reindex_placeholders(s.tree);
        s.canonical = to_prefix_text(normal_form(s.tree));
        corpus.entries.push_back(std::move(s));
    }
    if (have_count && count != corpus.entries.size()) {
        throw std::runtime_error("corpus file: header count " + std::to_string(count) + " but " +
                                 std::to_string(corpus.entries.size()) + " entries");
    }
    return corpus;
}

}  // namespace skelsr
