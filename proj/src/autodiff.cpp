#include "skelsr/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <stdexcept>

#include "skelsr/simd.hpp"

namespace skelsr::ad {

namespace {

void require(bool ok, const char* what) {
    if (!ok) throw std::invalid_argument(what);
}

const simd::KernelTable& K() { return simd::kernels(); }

void add_into(Matrix& dst, const Matrix& src) { K().axpy(1.0, src.data.data(), dst.data.data(), dst.size()); }

// Copy columns [c0, c0 + w) of m into a contiguous rows x w block.
void take_cols(const Matrix& m, std::size_t c0, std::size_t w, std::vector<double>& out) {
    out.resize(m.rows * w);
    for (std::size_t r = 0; r < m.rows; ++r) std::copy_n(m.data.data() + r * m.cols + c0, w, out.data() + r * w);
}

void add_cols(Matrix& m, std::size_t c0, std::size_t w, const std::vector<double>& block) {
    for (std::size_t r = 0; r < m.rows; ++r) K().axpy(1.0, block.data() + r * w, m.data.data() + r * m.cols + c0, w);
}

}  // namespace

Var Tape::param(Param& p) {
    Node n;
    n.param = &p;
    nodes_.push_back(std::move(n));
    return {static_cast<int>(nodes_.size()) - 1};
}

Var Tape::input(Matrix m) { return push(std::move(m)); }

Var Tape::push(Matrix value, Backward back) {
    Node n;
    n.own = std::move(value);
    if (record_) n.back = std::move(back);
    nodes_.push_back(std::move(n));
    return {static_cast<int>(nodes_.size()) - 1};
}

const Matrix& Tape::value(Var v) const {
    const Node& n = nodes_[v.id];
    return n.param ? n.param->value : n.own;
}

Matrix& Tape::grad(Var v) {
    Node& n = nodes_[v.id];
    if (n.param) return n.param->grad;
    if (n.grad.rows != n.own.rows || n.grad.cols != n.own.cols) n.grad = Matrix(n.own.rows, n.own.cols);
    return n.grad;
}

bool Tape::has_grad(Var v) const {
    const Node& n = nodes_[v.id];
    return !n.param && n.grad.rows == n.own.rows && n.grad.cols == n.own.cols && n.own.size() > 0;
}

void Tape::backward(Var loss) {
    require(record_, "backward on a non-recording tape");
    require(value(loss).size() == 1, "backward needs a scalar loss");
    grad(loss).data[0] += 1.0;
    for (int i = loss.id; i >= 0; --i) {
        Node& n = nodes_[i];
        if (n.param || !n.back || !has_grad({i})) continue;
        n.back(*this, {i});
    }
}

Var matmul(Tape& t, Var a, Var w) {
    const Matrix& A = t.value(a);
    const Matrix& W = t.value(w);
    require(A.cols == W.rows, "matmul shape mismatch");
    Matrix C(A.rows, W.cols);
    K().gemm_nn(A.rows, W.cols, A.cols, A.data.data(), W.data.data(), C.data.data());
    return t.push(std::move(C), [a, w](Tape& t, Var self) {
        const Matrix& G = t.grad(self);
        const Matrix& A = t.value(a);
        const Matrix& W = t.value(w);
        K().gemm_nt(A.rows, A.cols, W.cols, G.data.data(), W.data.data(), t.grad(a).data.data());
        K().gemm_tn(W.rows, W.cols, A.rows, A.data.data(), G.data.data(), t.grad(w).data.data());
    });
}

Var add_row(Tape& t, Var a, Var b) {
    const Matrix& A = t.value(a);
    const Matrix& B = t.value(b);
    require(B.rows == 1 && B.cols == A.cols, "add_row shape mismatch");
    Matrix C = A;
    for (std::size_t r = 0; r < C.rows; ++r) K().axpy(1.0, B.data.data(), C.data.data() + r * C.cols, C.cols);
    return t.push(std::move(C), [a, b](Tape& t, Var self) {
        const Matrix& G = t.grad(self);
        add_into(t.grad(a), G);
        Matrix& gb = t.grad(b);
        for (std::size_t r = 0; r < G.rows; ++r) K().axpy(1.0, G.data.data() + r * G.cols, gb.data.data(), G.cols);
    });
}

Var add(Tape& t, Var a, Var b) {
    const Matrix& A = t.value(a);
    const Matrix& B = t.value(b);
    require(A.rows == B.rows && A.cols == B.cols, "add shape mismatch");
    Matrix C(A.rows, A.cols);
    K().add(A.data.data(), B.data.data(), C.data.data(), C.size());
    return t.push(std::move(C), [a, b](Tape& t, Var self) {
        const Matrix& G = t.grad(self);
        add_into(t.grad(a), G);
        add_into(t.grad(b), G);
    });
}

Var scale(Tape& t, Var a, double s) {
    Matrix C = t.value(a);
    K().mul_scalar(C.data.data(), s, C.data.data(), C.size());
    return t.push(std::move(C), [a, s](Tape& t, Var self) {
        const Matrix& G = t.grad(self);
        K().axpy(s, G.data.data(), t.grad(a).data.data(), G.size());
    });
}

Var relu(Tape& t, Var a) {
    const Matrix& A = t.value(a);
    Matrix C(A.rows, A.cols);
    K().relu(A.data.data(), C.data.data(), C.size());
    return t.push(std::move(C), [a](Tape& t, Var self) {
        const Matrix& G = t.grad(self);
        const Matrix& A = t.value(a);
        Matrix& ga = t.grad(a);
        for (std::size_t i = 0; i < G.size(); ++i)
            if (A.data[i] > 0.0) ga.data[i] += G.data[i];
    });
}

Var layer_norm(Tape& t, Var a, Var gain, Var bias, double eps) {
    const Matrix& A = t.value(a);
    const Matrix& g = t.value(gain);
    const Matrix& b = t.value(bias);
    require(g.cols == A.cols && b.cols == A.cols, "layer_norm shape mismatch");
    const std::size_t n = A.rows, d = A.cols;
    auto xhat = std::make_shared<Matrix>(n, d);
    auto inv = std::make_shared<std::vector<double>>(n);
    Matrix C(n, d);
    for (std::size_t r = 0; r < n; ++r) {
        const double* x = A.data.data() + r * d;
        double mu = 0.0;
        for (std::size_t j = 0; j < d; ++j) mu += x[j];
        mu /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t j = 0; j < d; ++j) var += (x[j] - mu) * (x[j] - mu);
        var /= static_cast<double>(d);
        const double is = 1.0 / std::sqrt(var + eps);
        (*inv)[r] = is;
        for (std::size_t j = 0; j < d; ++j) {
            const double h = (x[j] - mu) * is;
            (*xhat)(r, j) = h;
            C(r, j) = h * g.data[j] + b.data[j];
        }
    }
    return t.push(std::move(C), [a, gain, bias, xhat, inv](Tape& t, Var self) {
        const Matrix& G = t.grad(self);
        const Matrix& g = t.value(gain);
        Matrix& ga = t.grad(a);
        Matrix& gg = t.grad(gain);
        Matrix& gb = t.grad(bias);
        const std::size_t n = G.rows, d = G.cols;
        std::vector<double> dh(d);
        for (std::size_t r = 0; r < n; ++r) {
            double s1 = 0.0, s2 = 0.0;
            for (std::size_t j = 0; j < d; ++j) {
                const double gy = G(r, j);
                const double h = (*xhat)(r, j);
                gg.data[j] += gy * h;
                gb.data[j] += gy;
                dh[j] = gy * g.data[j];
                s1 += dh[j];
                s2 += dh[j] * h;
            }
            s1 /= static_cast<double>(d);
            s2 /= static_cast<double>(d);
            for (std::size_t j = 0; j < d; ++j) ga(r, j) += (*inv)[r] * (dh[j] - s1 - (*xhat)(r, j) * s2);
        }
    });
}

void softmax_rows(Matrix& m) {
    for (std::size_t r = 0; r < m.rows; ++r) {
        double* p = m.data.data() + r * m.cols;
        const double mx = *std::max_element(p, p + m.cols);
        double sum = 0.0;
        for (std::size_t j = 0; j < m.cols; ++j) {
            p[j] = std::exp(p[j] - mx);
            sum += p[j];
        }
        for (std::size_t j = 0; j < m.cols; ++j) p[j] /= sum;
    }
}

Var attention(Tape& t, Var q, Var k, Var v, int heads, bool causal) {
    const Matrix& Q = t.value(q);
    const Matrix& Kt = t.value(k);
    const Matrix& V = t.value(v);
    require(Q.cols == Kt.cols && Kt.cols == V.cols && Kt.rows == V.rows, "attention shape mismatch");
    require(heads >= 1 && Q.cols % heads == 0, "model width not divisible by heads");
    require(!causal || Q.rows <= Kt.rows, "causal attention needs nq <= nk");
    const std::size_t nq = Q.rows, nk = Kt.rows, dh = Q.cols / heads;
    const double sc = 1.0 / std::sqrt(static_cast<double>(dh));
    auto probs = std::make_shared<std::vector<Matrix>>(heads);
    Matrix O(nq, Q.cols);
    std::vector<double> qh, kh, vh, oh;
    for (int h = 0; h < heads; ++h) {
        take_cols(Q, h * dh, dh, qh);
        take_cols(Kt, h * dh, dh, kh);
        take_cols(V, h * dh, dh, vh);
        Matrix& P = (*probs)[h];
        P = Matrix(nq, nk);
        K().gemm_nt(nq, nk, dh, qh.data(), kh.data(), P.data.data());
        K().mul_scalar(P.data.data(), sc, P.data.data(), P.size());
        if (causal) {
            for (std::size_t i = 0; i < nq; ++i)
                for (std::size_t j = i + 1; j < nk; ++j) P(i, j) = -std::numeric_limits<double>::infinity();
        }
        softmax_rows(P);
        oh.assign(nq * dh, 0.0);
        K().gemm_nn(nq, dh, nk, P.data.data(), vh.data(), oh.data());
        add_cols(O, h * dh, dh, oh);
    }
    return t.push(std::move(O), [q, k, v, heads, probs, sc](Tape& t, Var self) {
        const Matrix& G = t.grad(self);
        const Matrix& Q = t.value(q);
        const Matrix& Kt = t.value(k);
        const Matrix& V = t.value(v);
        const std::size_t nq = Q.rows, nk = Kt.rows, dh = Q.cols / heads;
        std::vector<double> qh, kh, vh, gh, dq, dk, dv;
        Matrix dP(nq, nk);
        for (int h = 0; h < heads; ++h) {
            const Matrix& P = (*probs)[h];
            take_cols(Q, h * dh, dh, qh);
            take_cols(Kt, h * dh, dh, kh);
            take_cols(V, h * dh, dh, vh);
            take_cols(G, h * dh, dh, gh);
            // dV = P^T dO, dP = dO V^T
            dv.assign(nk * dh, 0.0);
            K().gemm_tn(nk, dh, nq, P.data.data(), gh.data(), dv.data());
            std::fill(dP.data.begin(), dP.data.end(), 0.0);
            K().gemm_nt(nq, nk, dh, gh.data(), vh.data(), dP.data.data());
            // softmax backward, folded with the 1/sqrt(dh) scale
            for (std::size_t i = 0; i < nq; ++i) {
                double s = 0.0;
                for (std::size_t j = 0; j < nk; ++j) s += dP(i, j) * P(i, j);
                for (std::size_t j = 0; j < nk; ++j) dP(i, j) = P(i, j) * (dP(i, j) - s) * sc;
            }
            dq.assign(nq * dh, 0.0);
            K().gemm_nn(nq, dh, nk, dP.data.data(), kh.data(), dq.data());
            dk.assign(nk * dh, 0.0);
            K().gemm_tn(nk, dh, nq, dP.data.data(), qh.data(), dk.data());
            add_cols(t.grad(q), h * dh, dh, dq);
            add_cols(t.grad(k), h * dh, dh, dk);
            add_cols(t.grad(v), h * dh, dh, dv);
        }
    });
}

Var gather_rows(Tape& t, Var table, const std::vector<int>& ids) {
    const Matrix& T = t.value(table);
    Matrix C(ids.size(), T.cols);
    for (std::size_t i = 0; i < ids.size(); ++i) {
        require(ids[i] >= 0 && static_cast<std::size_t>(ids[i]) < T.rows, "gather index out of range");
        std::copy_n(T.data.data() + ids[i] * T.cols, T.cols, C.data.data() + i * T.cols);
    }
    return t.push(std::move(C), [table, ids](Tape& t, Var self) {
        const Matrix& G = t.grad(self);
        Matrix& gt = t.grad(table);
        for (std::size_t i = 0; i < ids.size(); ++i)
            K().axpy(1.0, G.data.data() + i * G.cols, gt.data.data() + ids[i] * G.cols, G.cols);
    });
}

Var concat_rows(Tape& t, const std::vector<Var>& parts) {
    require(!parts.empty(), "concat of nothing");
    const std::size_t cols = t.cols(parts[0]);
    std::size_t rows = 0;
    for (Var p : parts) {
        require(t.cols(p) == cols, "concat column mismatch");
        rows += t.rows(p);
    }
    Matrix C(rows, cols);
    std::size_t off = 0;
    for (Var p : parts) {
        const Matrix& P = t.value(p);
        std::copy(P.data.begin(), P.data.end(), C.data.begin() + off);
        off += P.size();
    }
    return t.push(std::move(C), [parts](Tape& t, Var self) {
        const Matrix& G = t.grad(self);
        std::size_t off = 0;
        for (Var p : parts) {
            Matrix& gp = t.grad(p);
            K().axpy(1.0, G.data.data() + off, gp.data.data(), gp.size());
            off += gp.size();
        }
    });
}

Var cross_entropy(Tape& t, Var logits, const std::vector<int>& targets, const std::vector<double>& weights) {
    const Matrix& L = t.value(logits);
    require(targets.size() == L.rows && weights.size() == L.rows, "cross_entropy shape mismatch");
    auto P = std::make_shared<Matrix>(L);
    softmax_rows(*P);
    double loss = 0.0;
    for (std::size_t i = 0; i < L.rows; ++i) {
        require(targets[i] >= 0 && static_cast<std::size_t>(targets[i]) < L.cols, "target out of range");
        if (weights[i] == 0.0) continue;
        // log-softmax computed directly for accuracy
        const double* row = L.data.data() + i * L.cols;
        const double mx = *std::max_element(row, row + L.cols);
        double s = 0.0;
        for (std::size_t j = 0; j < L.cols; ++j) s += std::exp(row[j] - mx);
        loss -= weights[i] * (row[targets[i]] - mx - std::log(s));
    }
    Matrix out(1, 1, loss);
    return t.push(std::move(out), [logits, targets, weights, P](Tape& t, Var self) {
        const double g = t.grad(self).data[0];
        Matrix& gl = t.grad(logits);
        for (std::size_t i = 0; i < P->rows; ++i) {
            if (weights[i] == 0.0) continue;
            for (std::size_t j = 0; j < P->cols; ++j) gl(i, j) += g * weights[i] * (*P)(i, j);
            gl(i, targets[i]) -= g * weights[i];
        }
    });
}

}  // namespace skelsr::ad
