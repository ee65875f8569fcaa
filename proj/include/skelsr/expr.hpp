#pragma once
// Expression trees over the skeleton vocabulary, prefix serialization and
// scalar evaluation.

#include <cstdint>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace skelsr {

enum class Unary : std::uint8_t { Abs, Acos, Asin, Atan, Cos, Cosh, Exp, Log, Sin, Sinh, Sqrt, Tan, Tanh };
enum class Binary : std::uint8_t { Add, Div, Mul, Pow };

inline constexpr int kUnaryCount = 13;
inline constexpr int kBinaryCount = 4;

std::string_view name_of(Unary op);
std::string_view name_of(Binary op);

/// One vocabulary item. `Number` covers the structural integers -3..5 as well
/// as decimal literals of concretized functions.
struct Token {
    enum class Kind : std::uint8_t { Sos, Eos, Placeholder, Variable, Unary, Binary, Number, Euler };

    Kind kind = Kind::Number;
    std::uint8_t op = 0;  // Unary or Binary enumerator
    int index = 0;        // variable index (>= 1) or placeholder index (>= 1, 0 = unassigned)
    double value = 0.0;   // Number payload

    static Token sos() { return {Kind::Sos}; }
    static Token eos() { return {Kind::Eos}; }
    static Token placeholder(int idx = 0) { return {Kind::Placeholder, 0, idx, 0.0}; }
    static Token variable(int idx = 1) { return {Kind::Variable, 0, idx, 0.0}; }
    static Token unary(Unary u) { return {Kind::Unary, static_cast<std::uint8_t>(u), 0, 0.0}; }
    static Token binary(Binary b) { return {Kind::Binary, static_cast<std::uint8_t>(b), 0, 0.0}; }
    static Token number(double v) { return {Kind::Number, 0, 0, v}; }
    static Token euler() { return {Kind::Euler}; }

    int arity() const;
    Unary unary_op() const { return static_cast<Unary>(op); }
    Binary binary_op() const { return static_cast<Binary>(op); }
    bool is_numeric() const { return kind == Kind::Number || kind == Kind::Euler; }
    bool is(Unary u) const { return kind == Kind::Unary && op == static_cast<std::uint8_t>(u); }
    bool is(Binary b) const { return kind == Kind::Binary && op == static_cast<std::uint8_t>(b); }

    /// Placeholder indices are ignored; they are positional.
    friend bool operator==(const Token& a, const Token& b);
};

std::string to_string(const Token& t);
Token token_from_string(std::string_view text);

class MalformedSequence : public std::runtime_error {
public:
    MalformedSequence(const std::string& what, std::size_t position)
        : std::runtime_error(what), position_(position) {}
    /// 1-based token position at which the problem was detected.
    std::size_t position() const { return position_; }

private:
    std::size_t position_;
};

class UnboundVariable : public std::runtime_error {
public:
    explicit UnboundVariable(int index)
        : std::runtime_error("unbound variable x" + std::to_string(index)), index_(index) {}
    int index() const { return index_; }

private:
    int index_;
};

class ArityMismatch : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Value-semantic expression tree. Arity of `children` always matches the node token.
struct Expr {
    Token node;
    std::vector<Expr> children;

    Expr() = default;
    explicit Expr(Token t) : node(t) {}
    Expr(Token t, std::vector<Expr> kids) : node(t), children(std::move(kids)) {}

    static Expr x(int idx = 1) { return Expr(Token::variable(idx)); }
    static Expr c(int idx = 0) { return Expr(Token::placeholder(idx)); }
    static Expr num(double v) { return Expr(Token::number(v)); }
    static Expr e() { return Expr(Token::euler()); }
    static Expr un(Unary u, Expr a) { return Expr(Token::unary(u), {std::move(a)}); }
    static Expr bin(Binary b, Expr l, Expr r) { return Expr(Token::binary(b), {std::move(l), std::move(r)}); }

    bool is_leaf() const { return children.empty(); }
    const Expr& arg(std::size_t i = 0) const { return children.at(i); }
    Expr& arg(std::size_t i = 0) { return children.at(i); }

    friend bool operator==(const Expr& a, const Expr& b);
};

// Short builders used throughout tests and the registry.
inline Expr add(Expr a, Expr b) { return Expr::bin(Binary::Add, std::move(a), std::move(b)); }
inline Expr mul(Expr a, Expr b) { return Expr::bin(Binary::Mul, std::move(a), std::move(b)); }
inline Expr div(Expr a, Expr b) { return Expr::bin(Binary::Div, std::move(a), std::move(b)); }
inline Expr pow(Expr a, int k) { return Expr::bin(Binary::Pow, std::move(a), Expr::num(k)); }
inline Expr sub(Expr a, Expr b) { return add(std::move(a), mul(Expr::num(-1), std::move(b))); }
inline Expr apply(Unary u, Expr a) { return Expr::un(u, std::move(a)); }

// ---- prefix notation -------------------------------------------------------

Expr parse_prefix(std::span<const Token> tokens);
std::vector<Token> to_prefix(const Expr& tree);

/// Whitespace-separated token text, e.g. "add mul c x sin mul c x".
Expr parse_prefix_text(std::string_view text);
std::string to_prefix_text(const Expr& tree);
std::vector<Token> tokenize(std::string_view text);

/// Human-readable infix rendering (placeholders as c1, c2, ...).
std::string to_infix(const Expr& tree);

// ---- structure queries -----------------------------------------------------

std::size_t operator_count(const Expr& tree);
std::size_t node_count(const Expr& tree);
std::size_t placeholder_count(const Expr& tree);
bool contains_variable(const Expr& tree);
bool contains_variable(const Expr& tree, int index);
int max_variable_index(const Expr& tree);
/// Assign placeholder indices 1..n in preorder. Returns n.
int reindex_placeholders(Expr& tree);

// ---- evaluation ------------------------------------------------------------

/// Variable index -> value.
using VarBinding = std::map<int, double>;

/// NaN marks an undefined result; never throws for domain problems.
double evaluate(const Expr& tree, const VarBinding& binding);
/// Univariate shortcut: every variable reads `x`.
double evaluate_at(const Expr& tree, double x);

inline bool is_undefined(double v) { return !(v - v == 0.0); }

double apply_unary(Unary op, double a);
double apply_binary(Binary op, double a, double b);

}  // namespace skelsr
