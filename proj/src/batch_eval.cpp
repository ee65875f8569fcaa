#include "skelsr/batch_eval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "skelsr/simd.hpp"

namespace skelsr {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

inline double clean(double v) { return is_undefined(v) ? kNaN : v; }

bool can_overflow(Unary op) {
    switch (op) {
        case Unary::Exp:
        case Unary::Sinh:
        case Unary::Cosh:
        case Unary::Log:
        case Unary::Tan: return true;
        default: return false;
    }
}

void unary_loop(Unary op, const double* a, double* out, std::size_t n) {
    switch (op) {
        case Unary::Abs: for (std::size_t i = 0; i < n; ++i) out[i] = std::fabs(a[i]); break;
        case Unary::Acos: for (std::size_t i = 0; i < n; ++i) out[i] = std::acos(a[i]); break;
        case Unary::Asin: for (std::size_t i = 0; i < n; ++i) out[i] = std::asin(a[i]); break;
        case Unary::Atan: for (std::size_t i = 0; i < n; ++i) out[i] = std::atan(a[i]); break;
        case Unary::Cos: for (std::size_t i = 0; i < n; ++i) out[i] = std::cos(a[i]); break;
        case Unary::Cosh: for (std::size_t i = 0; i < n; ++i) out[i] = std::cosh(a[i]); break;
        case Unary::Exp: for (std::size_t i = 0; i < n; ++i) out[i] = std::exp(a[i]); break;
        case Unary::Log: for (std::size_t i = 0; i < n; ++i) out[i] = std::log(a[i]); break;
        case Unary::Sin: for (std::size_t i = 0; i < n; ++i) out[i] = std::sin(a[i]); break;
        case Unary::Sinh: for (std::size_t i = 0; i < n; ++i) out[i] = std::sinh(a[i]); break;
        case Unary::Sqrt: for (std::size_t i = 0; i < n; ++i) out[i] = std::sqrt(a[i]); break;
        case Unary::Tan: for (std::size_t i = 0; i < n; ++i) out[i] = std::tan(a[i]); break;
        case Unary::Tanh: for (std::size_t i = 0; i < n; ++i) out[i] = std::tanh(a[i]); break;
    }
}

void pow_loop(const double* a, const double* b, double* out, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i)
        out[i] = (std::isnan(a[i]) || std::isnan(b[i])) ? kNaN : std::pow(a[i], b[i]);
}

struct Slot {
    bool scalar = true;
    double s = 0.0;
    const double* p = nullptr;
};

}  // namespace

CompiledExpr::CompiledExpr(const Expr& tree) {
    // Postorder emission; placeholder slots counted in preorder, matching set_constants.
    std::size_t next_const = 0;
    int depth = 0;
    auto emit = [&](auto&& self, const Expr& e) -> void {
        const Token& t = e.node;
        switch (t.kind) {
            case Token::Kind::Placeholder: {
                code_.push_back({Op::Const, 0, static_cast<int>(next_const++), 0.0});
                max_depth_ = std::max(max_depth_, ++depth);
                return;
            }
            case Token::Kind::Variable:
                code_.push_back({Op::Var, 0, t.index, 0.0});
                num_variables_ = std::max(num_variables_, t.index);
                max_depth_ = std::max(max_depth_, ++depth);
                return;
            case Token::Kind::Number:
            case Token::Kind::Euler:
                code_.push_back({Op::Num, 0, 0, t.kind == Token::Kind::Euler ? std::numbers::e : t.value});
                max_depth_ = std::max(max_depth_, ++depth);
                return;
            case Token::Kind::Unary:
                self(self, e.children[0]);
                code_.push_back({Op::Unary, t.op, 0, 0.0});
                return;
            case Token::Kind::Binary: {
                const Expr& r = e.children[1];
                if (t.is(Binary::Pow) && r.node.kind == Token::Kind::Number && r.node.value == std::nearbyint(r.node.value) &&
                    std::fabs(r.node.value) <= 8 && r.node.value != 0) {
                    self(self, e.children[0]);
                    code_.push_back({Op::PowInt, t.op, static_cast<int>(r.node.value), 0.0});
                    return;
                }
                self(self, e.children[0]);
                self(self, r);
                code_.push_back({Op::Binary, t.op, 0, 0.0});
                --depth;
                return;
            }
            default: throw std::invalid_argument("cannot compile SOS/EOS token");
        }
    };
    emit(emit, tree);
    num_constants_ = next_const;
}

void CompiledExpr::eval(std::span<const double* const> columns, std::size_t n, std::span<const double> constants,
                        double* out) const {
    if (static_cast<int>(columns.size()) < num_variables_) throw UnboundVariable(static_cast<int>(columns.size()) + 1);
    run(columns.data(), false, n, constants, out);
}

void CompiledExpr::eval_univariate(std::span<const double> x, std::span<const double> constants,
                                   std::span<double> out) const {
    const double* col = x.data();
    run(&col, true, std::min(x.size(), out.size()), constants, out.data());
}

void CompiledExpr::run(const double* const* columns, bool univariate, std::size_t n,
                       std::span<const double> constants, double* out) const {
    if (constants.size() != num_constants_) {
        throw ArityMismatch("expected " + std::to_string(num_constants_) + " constants, got " +
                            std::to_string(constants.size()));
    }
    const auto& k = simd::kernels();
    thread_local std::vector<double> pool;
    const std::size_t need = static_cast<std::size_t>(max_depth_ + 1) * n;  // +1 scratch
    if (pool.size() < need) pool.resize(need);
    auto buf = [&](int d) { return pool.data() + static_cast<std::size_t>(d) * n; };

    Slot stack[64];
    std::vector<Slot> big;
    Slot* st = stack;
    if (max_depth_ > 64) {
        big.resize(max_depth_);
        st = big.data();
    }
    int sp = 0;
    for (const Instr& in : code_) {
        switch (in.op) {
            case Op::Var: st[sp++] = {false, 0.0, columns[univariate ? 0 : in.arg - 1]}; break;
            case Op::Const: st[sp++] = {true, constants[in.arg], nullptr}; break;
            case Op::Num: st[sp++] = {true, in.value, nullptr}; break;
            case Op::Unary: {
                Slot& a = st[sp - 1];
                const Unary op = static_cast<Unary>(in.code);
                if (a.scalar) {
                    a.s = is_undefined(a.s) ? kNaN : clean(apply_unary(op, a.s));
                } else {
                    double* o = buf(sp - 1);
                    unary_loop(op, a.p, o, n);
                    if (can_overflow(op)) k.sanitize(o, n);
                    a.p = o;
                }
                break;
            }
            case Op::PowInt: {
                Slot& a = st[sp - 1];
                if (a.scalar) {
                    a.s = is_undefined(a.s) ? kNaN : clean(std::pow(a.s, static_cast<double>(in.arg)));
                } else {
                    double* o = buf(sp - 1);
                    const int e = std::abs(in.arg);
                    const double* base = a.p;
                    if (e > 2 && base == o) {
                        double* scratch = buf(max_depth_);
                        std::copy(base, base + n, scratch);
                        base = scratch;
                    }
                    if (e == 1) {
                        if (o != base) std::copy(base, base + n, o);
                    } else {
                        k.mul(base, base, o, n);
                        for (int i = 2; i < e; ++i) k.mul(o, base, o, n);
                    }
                    if (in.arg < 0) k.rdiv_scalar(1.0, o, o, n);
                    k.sanitize(o, n);
                    a.p = o;
                }
                break;
            }
            case Op::Binary: {
                Slot& a = st[sp - 2];
                const Slot b = st[sp - 1];
                --sp;
                const Binary op = static_cast<Binary>(in.code);
                if (a.scalar && b.scalar) {
                    a.s = (is_undefined(a.s) || is_undefined(b.s)) ? kNaN : clean(apply_binary(op, a.s, b.s));
                    break;
                }
                double* o = buf(sp - 1);
                if (!a.scalar && !b.scalar) {
                    switch (op) {
                        case Binary::Add: k.add(a.p, b.p, o, n); break;
                        case Binary::Mul: k.mul(a.p, b.p, o, n); break;
                        case Binary::Div: k.div(a.p, b.p, o, n); break;
                        case Binary::Pow: pow_loop(a.p, b.p, o, n); break;
                    }
                } else if (b.scalar) {
                    switch (op) {
                        case Binary::Add: k.add_scalar(a.p, b.s, o, n); break;
                        case Binary::Mul: k.mul_scalar(a.p, b.s, o, n); break;
                        case Binary::Div: k.div_scalar(a.p, b.s, o, n); break;
                        case Binary::Pow: {
                            const double e = b.s;
                            for (std::size_t i = 0; i < n; ++i) o[i] = (std::isnan(a.p[i]) || std::isnan(e)) ? kNaN : std::pow(a.p[i], e);
                            break;
                        }
                    }
                } else {
                    switch (op) {
                        case Binary::Add: k.add_scalar(b.p, a.s, o, n); break;
                        case Binary::Mul: k.mul_scalar(b.p, a.s, o, n); break;
                        case Binary::Div: k.rdiv_scalar(a.s, b.p, o, n); break;
                        case Binary::Pow: {
                            const double base = a.s;
                            for (std::size_t i = 0; i < n; ++i)
                                o[i] = (std::isnan(base) || std::isnan(b.p[i])) ? kNaN : std::pow(base, b.p[i]);
                            break;
                        }
                    }
                }
                k.sanitize(o, n);
                a = {false, 0.0, o};
                break;
            }
        }
    }
    const Slot& r = st[0];
    if (r.scalar) {
        std::fill(out, out + n, clean(r.s));
    } else {
        std::copy(r.p, r.p + n, out);
    }
}

}  // namespace skelsr
