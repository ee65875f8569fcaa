#include "skelsr/regressor.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "skelsr/checkpoint.hpp"
#include "skelsr/rng.hpp"
#include "skelsr/simd.hpp"

namespace skelsr {

namespace {

constexpr int kCheckpointVersion = 1;

bool all_finite(const std::vector<double>& v) {
    return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

// Activations of one forward pass over a batch (normalized space).
struct Pass {
    std::vector<std::vector<double>> a;  // a[0] = input, a[l+1] = output of layer l (post-ReLU for hidden)
};

void forward(const MLPModel& m, const double* xn, std::size_t rows, Pass& p) {
    const auto& k = simd::kernels();
    p.a.resize(m.layers.size() + 1);
    p.a[0].assign(xn, xn + rows * m.input_dim);
    for (std::size_t l = 0; l < m.layers.size(); ++l) {
        const DenseLayer& L = m.layers[l];
        auto& z = p.a[l + 1];
        z.resize(rows * L.out);
        for (std::size_t r = 0; r < rows; ++r) std::copy(L.b.begin(), L.b.end(), z.begin() + r * L.out);
        k.gemm_nt(rows, L.out, L.in, p.a[l].data(), L.w.data(), z.data());
        if (l + 1 < m.layers.size()) k.relu(z.data(), z.data(), z.size());
    }
}

// Accumulates d(mean squared error)/d(theta) into grads (same layout as
// flat_parameters). Returns the batch loss.
double backward(const MLPModel& m, const Pass& p, const double* yn, std::size_t rows,
                std::vector<DenseLayer>& grads) {
    const auto& k = simd::kernels();
    const std::size_t nl = m.layers.size();
    std::vector<double> delta(rows);
    double loss = 0.0;
    const auto& out = p.a[nl];
    for (std::size_t r = 0; r < rows; ++r) {
        const double e = out[r] - yn[r];
        loss += e * e;
        delta[r] = 2.0 * e / static_cast<double>(rows);
    }
    std::vector<double> prev;
    for (std::size_t l = nl; l-- > 0;) {
        const DenseLayer& L = m.layers[l];
        DenseLayer& G = grads[l];
        k.gemm_tn(L.out, L.in, rows, delta.data(), p.a[l].data(), G.w.data());
        for (std::size_t r = 0; r < rows; ++r)
            for (int j = 0; j < L.out; ++j) G.b[j] += delta[r * L.out + j];
        if (l == 0) break;
        prev.assign(rows * L.in, 0.0);
        k.gemm_nn(rows, L.in, L.out, delta.data(), L.w.data(), prev.data());
        const auto& act = p.a[l];
        for (std::size_t i = 0; i < prev.size(); ++i)
            if (act[i] <= 0.0) prev[i] = 0.0;
        delta.swap(prev);
    }
    return loss / static_cast<double>(rows);
}

std::vector<DenseLayer> zero_like(const MLPModel& m) {
    std::vector<DenseLayer> g;
    for (const auto& L : m.layers) g.push_back({L.in, L.out, std::vector<double>(L.w.size()), std::vector<double>(L.b.size())});
    return g;
}

void check_shape(const MLPModel& m, const Matrix& X) {
    if (static_cast<int>(X.cols) != m.input_dim)
        throw ShapeMismatch("expected " + std::to_string(m.input_dim) + " input columns, got " + std::to_string(X.cols));
}

std::vector<double> normalize_inputs(const MLPModel& m, const Matrix& X) {
    std::vector<double> xn(X.data.size());
    for (std::size_t r = 0; r < X.rows; ++r)
        for (std::size_t c = 0; c < X.cols; ++c) xn[r * X.cols + c] = (X(r, c) - m.x_mean[c]) / m.x_std[c];
    return xn;
}

std::vector<double> normalize_targets(const MLPModel& m, const std::vector<double>& y) {
    std::vector<double> yn(y.size());
    for (std::size_t i = 0; i < y.size(); ++i) yn[i] = (y[i] - m.y_mean) / m.y_std;
    return yn;
}

// Normalized-space MSE over selected rows.
double subset_loss(const MLPModel& m, const std::vector<double>& xn, const std::vector<double>& yn,
                   const std::vector<std::size_t>& rows) {
    if (rows.empty()) return 0.0;
    constexpr std::size_t chunk = 1024;
    std::vector<double> xb, yb;
    Pass p;
    double sum = 0.0;
    for (std::size_t s = 0; s < rows.size(); s += chunk) {
        const std::size_t e = std::min(rows.size(), s + chunk);
        xb.clear();
        for (std::size_t i = s; i < e; ++i)
            xb.insert(xb.end(), xn.begin() + rows[i] * m.input_dim, xn.begin() + (rows[i] + 1) * m.input_dim);
        forward(m, xb.data(), e - s, p);
        for (std::size_t i = s; i < e; ++i) {
            const double d = p.a.back()[i - s] - yn[rows[i]];
            sum += d * d;
        }
    }
    return sum / static_cast<double>(rows.size());
}

double mean_of(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size()); }

}  // namespace

void MLPConfig::validate() const {
    for (int w : hidden)
        if (w < 1) throw std::invalid_argument("hidden widths must be >= 1");
    if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw std::invalid_argument("train fraction must be in (0, 1)");
    if (batch_size < 1 || epochs < 1 || patience < 1) throw std::invalid_argument("batch size, epochs and patience must be positive");
    if (!(learning_rate > 0.0)) throw std::invalid_argument("learning rate must be positive");
}

std::size_t MLPModel::num_parameters() const {
    std::size_t n = 0;
    for (const auto& L : layers) n += L.w.size() + L.b.size();
    return n;
}

std::vector<double> MLPModel::flat_parameters() const {
    std::vector<double> t;
    t.reserve(num_parameters());
    for (const auto& L : layers) {
        t.insert(t.end(), L.w.begin(), L.w.end());
        t.insert(t.end(), L.b.begin(), L.b.end());
    }
    return t;
}

void MLPModel::set_flat_parameters(const std::vector<double>& theta) {
    if (theta.size() != num_parameters()) throw ShapeMismatch("parameter vector has wrong length");
    auto it = theta.begin();
    for (auto& L : layers) {
        std::copy(it, it + L.w.size(), L.w.begin());
        it += L.w.size();
        std::copy(it, it + L.b.size(), L.b.begin());
        it += L.b.size();
    }
}

MLPModel init_mlp(int input_dim, const std::vector<int>& hidden, std::uint64_t seed) {
    if (input_dim < 1) throw std::invalid_argument("input dimension must be >= 1");
    MLPModel m;
    m.input_dim = input_dim;
    m.x_mean.assign(input_dim, 0.0);
    m.x_std.assign(input_dim, 1.0);
    Rng rng(seed);
    int in = input_dim;
    std::vector<int> widths = hidden;
    widths.push_back(1);
    for (int out : widths) {
        DenseLayer L{in, out, std::vector<double>(static_cast<std::size_t>(in) * out), std::vector<double>(out, 0.0)};
        const double sd = std::sqrt(2.0 / in);
        for (auto& w : L.w) w = rng.normal(0.0, sd);
        m.layers.push_back(std::move(L));
        in = out;
    }
    return m;
}

TrainResult train_mlp(const Matrix& X, const std::vector<double>& y, const MLPConfig& cfg) {
    cfg.validate();
    if (X.rows != y.size()) throw ShapeMismatch("X and y have different row counts");
    if (X.rows < 10) throw std::invalid_argument("need at least 10 samples");
    if (X.cols < 1) throw ShapeMismatch("X has no columns");
    if (!all_finite(X.data) || !all_finite(y)) throw NonFiniteData("training data contains non-finite values");

    Rng rng(cfg.seed);
    MLPModel m = init_mlp(static_cast<int>(X.cols), cfg.hidden, rng.next());
    // Zero output layer: training starts from the target mean.
    std::fill(m.layers.back().w.begin(), m.layers.back().w.end(), 0.0);

    const std::size_t n = X.rows, t = X.cols;
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(order.begin(), order.end());
    const std::size_t n_train = std::clamp<std::size_t>(static_cast<std::size_t>(cfg.train_fraction * n), 1, n - 1);
    std::vector<std::size_t> train(order.begin(), order.begin() + n_train);
    std::vector<std::size_t> val(order.begin() + n_train, order.end());
    std::sort(train.begin(), train.end());
    std::sort(val.begin(), val.end());

    // Normalization statistics from the training rows only.
    for (std::size_t c = 0; c < t; ++c) {
        double mu = 0.0, var = 0.0;
        for (auto r : train) mu += X(r, c);
        mu /= static_cast<double>(n_train);
        for (auto r : train) var += (X(r, c) - mu) * (X(r, c) - mu);
        const double sd = std::sqrt(var / static_cast<double>(n_train));
        m.x_mean[c] = mu;
        m.x_std[c] = sd > 1e-12 * std::max(1.0, std::fabs(mu)) ? sd : 1.0;
    }
    {
        double mu = 0.0, var = 0.0;
        for (auto r : train) mu += y[r];
        mu /= static_cast<double>(n_train);
        for (auto r : train) var += (y[r] - mu) * (y[r] - mu);
        const double sd = std::sqrt(var / static_cast<double>(n_train));
        m.y_mean = mu;
        m.y_std = sd > 1e-12 * std::max(1.0, std::fabs(mu)) ? sd : 1.0;
    }
    const std::vector<double> xn = normalize_inputs(m, X);
    const std::vector<double> yn = normalize_targets(m, y);

    TrainReport rep;
    rep.n_train = n_train;
    rep.n_val = val.size();
    std::vector<DenseLayer> vel = zero_like(m);
    MLPModel best = m;
    double best_val = subset_loss(m, xn, yn, val);
    int since_best = 0;
    double lr = cfg.learning_rate;
    const std::size_t bs = static_cast<std::size_t>(cfg.batch_size);
    std::vector<std::size_t> perm = train;
    std::vector<double> xb, yb;
    Pass p;
    const auto& k = simd::kernels();
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        rng.shuffle(perm.begin(), perm.end());
        for (std::size_t s = 0; s < perm.size(); s += bs) {
            const std::size_t e = std::min(perm.size(), s + bs);
            xb.clear();
            yb.clear();
            for (std::size_t i = s; i < e; ++i) {
                xb.insert(xb.end(), xn.begin() + perm[i] * t, xn.begin() + (perm[i] + 1) * t);
                yb.push_back(yn[perm[i]]);
            }
            forward(m, xb.data(), e - s, p);
            std::vector<DenseLayer> g = zero_like(m);
            backward(m, p, yb.data(), e - s, g);
            for (std::size_t l = 0; l < m.layers.size(); ++l) {
                // v = momentum * v - lr * g; theta += v
                k.affine(cfg.momentum, vel[l].w.data(), 0.0, vel[l].w.data(), vel[l].w.size());
                k.axpy(-lr, g[l].w.data(), vel[l].w.data(), vel[l].w.size());
                k.axpy(1.0, vel[l].w.data(), m.layers[l].w.data(), vel[l].w.size());
                k.affine(cfg.momentum, vel[l].b.data(), 0.0, vel[l].b.data(), vel[l].b.size());
                k.axpy(-lr, g[l].b.data(), vel[l].b.data(), vel[l].b.size());
                k.axpy(1.0, vel[l].b.data(), m.layers[l].b.data(), vel[l].b.size());
            }
        }
        lr *= cfg.lr_decay;
        const double tr = subset_loss(m, xn, yn, train);
        const double vl = subset_loss(m, xn, yn, val);
        if (!std::isfinite(tr)) throw NonFiniteData("training diverged (non-finite loss)");
        rep.train_history.push_back(tr);
        rep.val_history.push_back(vl);
        rep.epochs_run = epoch;
        if (vl < best_val) {
            best_val = vl;
            best = m;
            rep.best_epoch = epoch;
            since_best = 0;
        } else if (++since_best >= cfg.patience) {
            break;
        }
    }

    // Report metrics in original units from the kept parameters.
    auto mse_r2 = [&](const std::vector<std::size_t>& rows, double& mse, double* r2) {
        Matrix sub(rows.size(), t);
        std::vector<double> ys;
        for (std::size_t i = 0; i < rows.size(); ++i) {
            std::copy(X.row(rows[i]).begin(), X.row(rows[i]).end(), sub.row(i).begin());
            ys.push_back(y[rows[i]]);
        }
        auto pred = predict(best, sub);
        double se = 0.0, ss = 0.0;
        const double mu = mean_of(ys);
        for (std::size_t i = 0; i < ys.size(); ++i) {
            se += (pred[i] - ys[i]) * (pred[i] - ys[i]);
            ss += (ys[i] - mu) * (ys[i] - mu);
        }
        mse = se / static_cast<double>(ys.size());
        if (r2) *r2 = ss > 0.0 ? 1.0 - se / ss : (se == 0.0 ? 1.0 : 0.0);
    };
    mse_r2(train, rep.train_mse, nullptr);
    mse_r2(val, rep.val_mse, &rep.val_r2);
    rep.train_rows = std::move(train);
    rep.val_rows = std::move(val);
    return {std::move(best), std::move(rep)};
}

std::vector<double> predict(const MLPModel& model, const Matrix& X) {
    check_shape(model, X);
    if (!all_finite(X.data)) throw NonFiniteData("prediction inputs contain non-finite values");
    const std::vector<double> xn = normalize_inputs(model, X);
    std::vector<double> out(X.rows);
    constexpr std::size_t chunk = 1024;
    Pass p;
    for (std::size_t s = 0; s < X.rows; s += chunk) {
        const std::size_t e = std::min(X.rows, s + chunk);
        forward(model, xn.data() + s * X.cols, e - s, p);
        for (std::size_t i = s; i < e; ++i) out[i] = p.a.back()[i - s] * model.y_std + model.y_mean;
    }
    return out;
}

double mlp_loss(const MLPModel& model, const Matrix& X, const std::vector<double>& y) {
    check_shape(model, X);
    if (X.rows != y.size()) throw ShapeMismatch("X and y have different row counts");
    std::vector<std::size_t> rows(X.rows);
    std::iota(rows.begin(), rows.end(), 0);
    return subset_loss(model, normalize_inputs(model, X), normalize_targets(model, y), rows);
}

std::vector<double> mlp_gradient(const MLPModel& model, const Matrix& X, const std::vector<double>& y) {
    check_shape(model, X);
    if (X.rows != y.size()) throw ShapeMismatch("X and y have different row counts");
    const auto xn = normalize_inputs(model, X);
    const auto yn = normalize_targets(model, y);
    Pass p;
    forward(model, xn.data(), X.rows, p);
    auto g = zero_like(model);
    backward(model, p, yn.data(), X.rows, g);
    std::vector<double> flat;
    for (const auto& L : g) {
        flat.insert(flat.end(), L.w.begin(), L.w.end());
        flat.insert(flat.end(), L.b.begin(), L.b.end());
    }
    return flat;
}

double grad_check_mlp(const MLPModel& model, const Matrix& X, const std::vector<double>& y, double h) {
    const auto analytic = mlp_gradient(model, X, y);
    MLPModel probe = model;
    auto theta = model.flat_parameters();
    double worst = 0.0;
    for (std::size_t i = 0; i < theta.size(); ++i) {
        const double saved = theta[i];
        theta[i] = saved + h;
        probe.set_flat_parameters(theta);
        const double up = mlp_loss(probe, X, y);
        theta[i] = saved - h;
        probe.set_flat_parameters(theta);
        const double down = mlp_loss(probe, X, y);
        theta[i] = saved;
        const double numeric = (up - down) / (2.0 * h);
        const double scale = std::max({std::fabs(numeric), std::fabs(analytic[i]), 1e-8});
        worst = std::max(worst, std::fabs(numeric - analytic[i]) / scale);
    }
    return worst;
}

void save_mlp(std::ostream& out, const MLPModel& m) {
    out << "skelsr-mlp " << kCheckpointVersion << '\n';
    out << "input " << m.input_dim << " layers " << m.layers.size() << '\n';
    out << "x_mean ";
    ckpt::write_reals(out, m.x_mean);
    out << "x_std ";
    ckpt::write_reals(out, m.x_std);
    out << "y " << ckpt::format(m.y_mean) << ' ' << ckpt::format(m.y_std) << '\n';
    for (const auto& L : m.layers) {
        out << "layer " << L.in << ' ' << L.out << '\n';
        ckpt::write_reals(out, L.w);
        ckpt::write_reals(out, L.b);
    }
    out << "end\n";
}

MLPModel load_mlp(std::istream& in) {
    ckpt::Reader r(in);
    r.expect("skelsr-mlp");
    const int version = static_cast<int>(r.integer());
    if (version != kCheckpointVersion) throw VersionError("MLP checkpoint", version, kCheckpointVersion);
    MLPModel m;
    r.expect("input");
    m.input_dim = static_cast<int>(r.integer());
    r.expect("layers");
    const long long nl = r.integer();
    if (m.input_dim < 1 || nl < 1 || nl > 1000) throw CorruptCheckpoint("bad MLP dimensions");
    r.expect("x_mean");
    r.reals(m.x_mean, m.input_dim);
    r.expect("x_std");
    r.reals(m.x_std, m.input_dim);
    r.expect("y");
    m.y_mean = r.real();
    m.y_std = r.real();
    int prev = m.input_dim;
    for (long long l = 0; l < nl; ++l) {
        r.expect("layer");
        DenseLayer L;
        L.in = static_cast<int>(r.integer());
        L.out = static_cast<int>(r.integer());
        if (L.in != prev || L.out < 1 || L.out > 1'000'000) throw CorruptCheckpoint("layer shapes do not chain");
        r.reals(L.w, static_cast<std::size_t>(L.in) * L.out);
        r.reals(L.b, L.out);
        prev = L.out;
        m.layers.push_back(std::move(L));
    }
    if (prev != 1) throw CorruptCheckpoint("output layer must have width 1");
    r.expect("end");
    for (double s : m.x_std)
        if (!(s > 0)) throw CorruptCheckpoint("normalization std must be positive");
    if (!(m.y_std > 0)) throw CorruptCheckpoint("normalization std must be positive");
    return m;
}

void save_mlp(const std::string& path, const MLPModel& model) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    save_mlp(out, model);
}

MLPModel load_mlp(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read " + path);
    return load_mlp(in);
}

}  // namespace skelsr
