#pragma once
// Postfix compilation of an expression for evaluation over many points at
// once. Semantics match evaluate(): any non-finite intermediate makes the
// point undefined (NaN). Placeholders read constant slots in preorder.

#include <cstddef>
#include <span>
#include <vector>

#include "skelsr/expr.hpp"

namespace skelsr {

class CompiledExpr {
public:
    CompiledExpr() = default;
    explicit CompiledExpr(const Expr& tree);

    std::size_t num_constants() const { return num_constants_; }
    /// Highest variable index referenced (0 if none).
    int num_variables() const { return num_variables_; }

    /// columns[v-1] holds n values of variable v.
    void eval(std::span<const double* const> columns, std::size_t n, std::span<const double> constants,
              double* out) const;
    /// Every variable reads `x`.
    void eval_univariate(std::span<const double> x, std::span<const double> constants, std::span<double> out) const;

private:
    enum class Op : unsigned char { Var, Const, Num, Unary, Binary, PowInt };
    struct Instr {
        Op op;
        unsigned char code = 0;  // Unary/Binary enumerator
        int arg = 0;             // variable index, constant slot, or integer exponent
        double value = 0.0;
    };

    void run(const double* const* columns, bool univariate, std::size_t n, std::span<const double> constants,
             double* out) const;

    std::vector<Instr> code_;
    std::size_t num_constants_ = 0;
    int num_variables_ = 0;
    int max_depth_ = 0;
};

}  // namespace skelsr
