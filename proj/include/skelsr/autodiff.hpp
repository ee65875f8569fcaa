#pragma once
// Reverse-mode automatic differentiation over row-major matrices. A Tape
// records operations as they are executed; backward() walks them in reverse.
// Parameters live outside the tape and receive accumulated gradients.

#include <functional>
#include <string>
#include <vector>

#include "skelsr/matrix.hpp"

namespace skelsr::ad {

struct Param {
    std::string name;
    Matrix value;
    Matrix grad;

    Param() = default;
    Param(std::string n, std::size_t rows, std::size_t cols)
        : name(std::move(n)), value(rows, cols), grad(rows, cols) {}
    void zero_grad() { std::fill(grad.data.begin(), grad.data.end(), 0.0); }
};

struct Var {
    int id = -1;
};

class Tape {
public:
    /// With record=false no backward closures are stored (inference).
    explicit Tape(bool record = true) : record_(record) {}

    Var param(Param& p);
    Var input(Matrix m);

    const Matrix& value(Var v) const;
    std::size_t rows(Var v) const { return value(v).rows; }
    std::size_t cols(Var v) const { return value(v).cols; }
    bool recording() const { return record_; }

    /// Seeds d(loss)/d(loss) = 1 for a 1x1 loss and propagates to every
    /// parameter reached.
    void backward(Var loss);

    // Used by op implementations.
    using Backward = std::function<void(Tape&, Var self)>;
    Var push(Matrix value, Backward back = {});
    Matrix& grad(Var v);
    bool has_grad(Var v) const;

private:
    struct Node {
        Matrix own;
        Param* param = nullptr;
        Matrix grad;
        Backward back;
    };
    bool record_;
    std::vector<Node> nodes_;
};

/// A[n x k] * W[k x m]
Var matmul(Tape& t, Var a, Var w);
/// A + b, b a 1 x m row broadcast over rows
Var add_row(Tape& t, Var a, Var b);
Var add(Tape& t, Var a, Var b);
Var scale(Tape& t, Var a, double s);
Var relu(Tape& t, Var a);
/// Row-wise layer normalization with gain/bias rows.
Var layer_norm(Tape& t, Var a, Var gain, Var bias, double eps = 1e-5);
/// Multi-head scaled dot-product attention on already projected inputs.
/// q: nq x d, k and v: nk x d; heads split the d columns evenly. With
/// causal=true query i only sees keys 0..i.
Var attention(Tape& t, Var q, Var k, Var v, int heads, bool causal);
/// Rows table[ids[i]].
Var gather_rows(Tape& t, Var table, const std::vector<int>& ids);
/// Vertical concatenation.
Var concat_rows(Tape& t, const std::vector<Var>& parts);
/// -sum_i w_i log softmax(logits_i)[target_i], as a 1 x 1 value.
Var cross_entropy(Tape& t, Var logits, const std::vector<int>& targets, const std::vector<double>& weights);

/// Row-wise softmax (no tape).
void softmax_rows(Matrix& m);

}  // namespace skelsr::ad
