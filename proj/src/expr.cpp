#include "skelsr/expr.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <limits>
#include <numbers>
#include <charconv>
#include <cmath>
#include <sstream>

namespace skelsr {

namespace {

constexpr std::array<std::string_view, kUnaryCount> kUnaryNames = {
    "abs", "acos", "asin", "atan", "cos", "cosh", "exp", "log", "sin", "sinh", "sqrt", "tan", "tanh"};
constexpr std::array<std::string_view, kBinaryCount> kBinaryNames = {"add", "div", "mul", "pow"};

std::string format_number(double v) {
    if (std::isfinite(v) && v == std::nearbyint(v) && std::fabs(v) < 1e15) {
        return std::to_string(static_cast<long long>(v));
    }
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

bool parse_index(std::string_view s, int& out) {
    if (s.empty()) return false;
    auto res = std::from_chars(s.data(), s.data() + s.size(), out);
    return res.ec == std::errc() && res.ptr == s.data() + s.size() && out >= 1;
}

}  // namespace

std::string_view name_of(Unary op) { return kUnaryNames[static_cast<int>(op)]; }
std::string_view name_of(Binary op) { return kBinaryNames[static_cast<int>(op)]; }

int Token::arity() const {
    switch (kind) {
        case Kind::Unary: return 1;
        case Kind::Binary: return 2;
        default: return 0;
    }
}

bool operator==(const Token& a, const Token& b) {
    if (a.kind != b.kind) return false;
    switch (a.kind) {
        case Token::Kind::Unary:
        case Token::Kind::Binary: return a.op == b.op;
        case Token::Kind::Variable: return a.index == b.index;
        case Token::Kind::Number: return a.value == b.value || (std::isnan(a.value) && std::isnan(b.value));
        default: return true;
    }
}

bool operator==(const Expr& a, const Expr& b) { return a.node == b.node && a.children == b.children; }

std::string to_string(const Token& t) {
    switch (t.kind) {
        case Token::Kind::Sos: return "SOS";
        case Token::Kind::Eos: return "EOS";
        case Token::Kind::Placeholder: return "c";
        case Token::Kind::Variable: return t.index == 1 ? "x" : "x" + std::to_string(t.index);
        case Token::Kind::Unary: return std::string(name_of(t.unary_op()));
        case Token::Kind::Binary: return std::string(name_of(t.binary_op()));
        case Token::Kind::Number: return format_number(t.value);
        case Token::Kind::Euler: return "E";
    }
    return "?";
}

Token token_from_string(std::string_view s) {
    for (int i = 0; i < kUnaryCount; ++i)
        if (s == kUnaryNames[i]) return Token::unary(static_cast<Unary>(i));
    for (int i = 0; i < kBinaryCount; ++i)
        if (s == kBinaryNames[i]) return Token::binary(static_cast<Binary>(i));
    if (s == "SOS") return Token::sos();
    if (s == "EOS") return Token::eos();
    if (s == "E") return Token::euler();
    if (s == "c") return Token::placeholder();
    if (s == "x") return Token::variable(1);
    int idx = 0;
    if (s.size() > 1 && s[0] == 'c' && parse_index(s.substr(1), idx)) return Token::placeholder(idx);
    if (s.size() > 1 && s[0] == 'x' && parse_index(s.substr(1), idx)) return Token::variable(idx);
    double v = 0.0;
    auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec == std::errc() && res.ptr == s.data() + s.size()) return Token::number(v);
    throw std::invalid_argument("unknown token '" + std::string(s) + "'");
}

// ---- prefix ----------------------------------------------------------------

namespace {

Expr parse_at(std::span<const Token> toks, std::size_t& pos) {
    if (pos >= toks.size()) {
        throw MalformedSequence("prefix sequence ends before all operands are supplied", toks.size());
    }
    const Token& t = toks[pos];
    if (t.kind == Token::Kind::Sos || t.kind == Token::Kind::Eos) {
        throw MalformedSequence("SOS/EOS cannot appear inside an expression", pos + 1);
    }
    ++pos;
    Expr node(t);
    const int n = t.arity();
    node.children.reserve(n);
    for (int i = 0; i < n; ++i) node.children.push_back(parse_at(toks, pos));
    return node;
}

void prefix_into(const Expr& e, std::vector<Token>& out) {
    out.push_back(e.node);
    for (const auto& c : e.children) prefix_into(c, out);
}

}  // namespace

Expr parse_prefix(std::span<const Token> tokens) {
    if (tokens.empty()) throw MalformedSequence("empty prefix sequence", 0);
    std::size_t pos = 0;
    Expr tree = parse_at(tokens, pos);
    if (pos != tokens.size()) {
        throw MalformedSequence("trailing tokens after a complete expression", pos + 1);
    }
    return tree;
}

std::vector<Token> to_prefix(const Expr& tree) {
    std::vector<Token> out;
    prefix_into(tree, out);
    return out;
}

std::vector<Token> tokenize(std::string_view text) {
    std::vector<Token> toks;
    std::size_t i = 0;
    while (i < text.size()) {
        while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
        std::size_t j = i;
        while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j]))) ++j;
        if (j > i) toks.push_back(token_from_string(text.substr(i, j - i)));
        i = j;
    }
    return toks;
}

Expr parse_prefix_text(std::string_view text) { return parse_prefix(tokenize(text)); }

std::string to_prefix_text(const Expr& tree) {
    std::string out;
    for (const auto& t : to_prefix(tree)) {
        if (!out.empty()) out.push_back(' ');
        out += to_string(t);
    }
    return out;
}

namespace {

void infix_into(const Expr& e, std::ostringstream& os) {
    const Token& t = e.node;
    switch (t.kind) {
        case Token::Kind::Placeholder:
            os << 'c';
            if (t.index > 0) os << t.index;
            return;
        case Token::Kind::Variable: os << 'x' << t.index; return;
        case Token::Kind::Number:
            if (t.value < 0) os << '(' << format_number(t.value) << ')';
            else os << format_number(t.value);
            return;
        case Token::Kind::Euler: os << 'E'; return;
        case Token::Kind::Unary:
            os << name_of(t.unary_op()) << '(';
            infix_into(e.arg(0), os);
            os << ')';
            return;
        case Token::Kind::Binary: {
            static constexpr std::array<const char*, kBinaryCount> sym = {" + ", "/", "*", "^"};
            os << '(';
            infix_into(e.arg(0), os);
            os << sym[t.op];
            infix_into(e.arg(1), os);
            os << ')';
            return;
        }
        default: os << to_string(t); return;
    }
}

}  // namespace

std::string to_infix(const Expr& tree) {
    std::ostringstream os;
    infix_into(tree, os);
    return os.str();
}

// ---- structure -------------------------------------------------------------

std::size_t operator_count(const Expr& tree) {
    std::size_t n = tree.node.arity() > 0 ? 1 : 0;
    for (const auto& c : tree.children) n += operator_count(c);
    return n;
}

std::size_t node_count(const Expr& tree) {
    std::size_t n = 1;
    for (const auto& c : tree.children) n += node_count(c);
    return n;
}

std::size_t placeholder_count(const Expr& tree) {
    std::size_t n = tree.node.kind == Token::Kind::Placeholder ? 1 : 0;
    for (const auto& c : tree.children) n += placeholder_count(c);
    return n;
}

bool contains_variable(const Expr& tree) {
    if (tree.node.kind == Token::Kind::Variable) return true;
    for (const auto& c : tree.children)
        if (contains_variable(c)) return true;
    return false;
}

bool contains_variable(const Expr& tree, int index) {
    if (tree.node.kind == Token::Kind::Variable) return tree.node.index == index;
    for (const auto& c : tree.children)
        if (contains_variable(c, index)) return true;
    return false;
}

int max_variable_index(const Expr& tree) {
    int m = tree.node.kind == Token::Kind::Variable ? tree.node.index : 0;
    for (const auto& c : tree.children) m = std::max(m, max_variable_index(c));
    return m;
}

namespace {
void reindex_into(Expr& e, int& next) {
    if (e.node.kind == Token::Kind::Placeholder) e.node.index = ++next;
    for (auto& c : e.children) reindex_into(c, next);
}
}  // namespace

int reindex_placeholders(Expr& tree) {
    int next = 0;
    reindex_into(tree, next);
    return next;
}

// ---- evaluation ------------------------------------------------------------

double apply_unary(Unary op, double a) {
    switch (op) {
        case Unary::Abs: return std::fabs(a);
        case Unary::Acos: return std::acos(a);
        case Unary::Asin: return std::asin(a);
        case Unary::Atan: return std::atan(a);
        case Unary::Cos: return std::cos(a);
        case Unary::Cosh: return std::cosh(a);
        case Unary::Exp: return std::exp(a);
        case Unary::Log: return std::log(a);
        case Unary::Sin: return std::sin(a);
        case Unary::Sinh: return std::sinh(a);
        case Unary::Sqrt: return std::sqrt(a);
        case Unary::Tan: return std::tan(a);
        case Unary::Tanh: return std::tanh(a);
    }
    return std::nan("");
}

double apply_binary(Binary op, double a, double b) {
    switch (op) {
        case Binary::Add: return a + b;
        case Binary::Mul: return a * b;
        case Binary::Div: return a / b;
        case Binary::Pow: return std::pow(a, b);
    }
    return std::nan("");
}

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

template <class Lookup>
double eval_with(const Expr& e, const Lookup& lookup) {
    const Token& t = e.node;
    double v = 0.0;
    switch (t.kind) {
        case Token::Kind::Number: return t.value;
        case Token::Kind::Euler: return std::numbers::e;
        case Token::Kind::Variable: return lookup(t.index);
        case Token::Kind::Placeholder: return kNaN;  // unbound constant
        case Token::Kind::Unary: {
            double a = eval_with(e.children[0], lookup);
            if (is_undefined(a)) return kNaN;
            v = apply_unary(t.unary_op(), a);
            break;
        }
        case Token::Kind::Binary: {
            double a = eval_with(e.children[0], lookup);
            double b = eval_with(e.children[1], lookup);
            if (is_undefined(a) || is_undefined(b)) return kNaN;
            v = apply_binary(t.binary_op(), a, b);
            break;
        }
        default: return kNaN;
    }
    return is_undefined(v) ? kNaN : v;
}

}  // namespace

double evaluate(const Expr& tree, const VarBinding& binding) {
    return eval_with(tree, [&](int idx) {
        auto it = binding.find(idx);
        if (it == binding.end()) throw UnboundVariable(idx);
        return it->second;
    });
}

double evaluate_at(const Expr& tree, double x) {
    return eval_with(tree, [x](int) { return x; });
}

}  // namespace skelsr
