#include <cmath>
#include <sstream>

#include "doctest.h"
#include "skelsr/checkpoint.hpp"
#include "skelsr/regressor.hpp"
#include "skelsr/rng.hpp"

using namespace skelsr;

namespace {

Matrix random_inputs(std::size_t n, std::size_t t, double lo, double hi, std::uint64_t seed) {
    Rng rng(seed);
    Matrix X(n, t);
    for (auto& v : X.data) v = rng.uniform(lo, hi);
    return X;
}

double r2(const std::vector<double>& pred, const std::vector<double>& y) {
    double mu = 0;
    for (double v : y) mu += v;
    mu /= y.size();
    double se = 0, ss = 0;
    for (std::size_t i = 0; i < y.size(); ++i) {
        se += (pred[i] - y[i]) * (pred[i] - y[i]);
        ss += (y[i] - mu) * (y[i] - mu);
    }
    return 1 - se / ss;
}

Matrix rows_of(const Matrix& X, const std::vector<std::size_t>& rows) {
    Matrix out(rows.size(), X.cols);
    for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t c = 0; c < X.cols; ++c) out(i, c) = X(rows[i], c);
    return out;
}

}  // namespace

TEST_CASE("linear target is fit almost exactly") {
    Matrix X = random_inputs(1000, 1, -5, 5, 1);
    std::vector<double> y;
    for (std::size_t i = 0; i < X.rows; ++i) y.push_back(2 * X(i, 0) + 1);
    MLPConfig cfg;
    cfg.seed = 3;
    TrainResult res = train_mlp(X, y, cfg);
    CHECK(res.report.val_r2 >= 0.999);
    CHECK(res.report.n_train == 900);
    CHECK(res.report.n_val == 100);

    // independent R^2 over the validation rows
    std::vector<double> yv;
    for (auto r : res.report.val_rows) yv.push_back(y[r]);
    CHECK(r2(predict(res.model, rows_of(X, res.report.val_rows)), yv) == doctest::Approx(res.report.val_r2));

    // per-epoch training loss never jumps by more than 5%
    const auto& h = res.report.train_history;
    for (std::size_t i = 1; i < h.size(); ++i) CHECK(h[i] <= 1.05 * h[i - 1] + 1e-12);
}

TEST_CASE("E2 response surface") {
    // 5.5 + (1 - x1/4)^2 + sqrt(x2 + 10) sin(x3/5) on [-10, 10]^3
    Matrix X = random_inputs(10000, 3, -10, 10, 2);
    std::vector<double> y;
    for (std::size_t i = 0; i < X.rows; ++i)
        y.push_back(5.5 + std::pow(1 - X(i, 0) / 4, 2) + std::sqrt(X(i, 1) + 10) * std::sin(X(i, 2) / 5));
    MLPConfig cfg;
    cfg.seed = 5;
    TrainResult res = train_mlp(X, y, cfg);
    MESSAGE("E2 validation R^2 = " << res.report.val_r2 << " after " << res.report.epochs_run << " epochs");
    CHECK(res.report.val_r2 >= 0.95);
}

TEST_CASE("constant target") {
    Matrix X = random_inputs(200, 2, -1, 1, 3);
    std::vector<double> y(200, 4.25);
    TrainResult res = train_mlp(X, y, MLPConfig{});
    for (double p : predict(res.model, random_inputs(50, 2, -1, 1, 4))) CHECK(std::fabs(p - 4.25) <= 1e-3);
}

TEST_CASE("predict") {
    MLPModel zero = init_mlp(2, {8, 8}, 1);
    zero.set_flat_parameters(std::vector<double>(zero.num_parameters(), 0.0));
    zero.y_mean = 3.5;
    zero.y_std = 2.0;
    for (double p : predict(zero, random_inputs(10, 2, -3, 3, 5))) CHECK(p == 3.5);

    MLPModel m = init_mlp(3, {16, 16}, 7);
    m.x_mean = {1, -2, 0.5};
    m.x_std = {2, 0.5, 1};
    m.y_mean = -1;
    m.y_std = 3;
    Matrix X = random_inputs(37, 3, -4, 4, 6);
    auto batch = predict(m, X);
    for (std::size_t i = 0; i < X.rows; ++i) {
        Matrix one(1, 3);
        for (int c = 0; c < 3; ++c) one(0, c) = X(i, c);
        CHECK(predict(m, one)[0] == batch[i]);
    }
    CHECK_THROWS_AS(predict(m, Matrix(2, 2)), ShapeMismatch);
    Matrix bad(1, 3);
    bad(0, 1) = std::nan("");
    CHECK_THROWS_AS(predict(m, bad), NonFiniteData);
}

TEST_CASE("training report residuals match predictions") {
    Matrix X = random_inputs(300, 2, -2, 2, 8);
    std::vector<double> y;
    for (std::size_t i = 0; i < X.rows; ++i) y.push_back(std::sin(X(i, 0)) * X(i, 1));
    MLPConfig cfg;
    cfg.epochs = 30;
    TrainResult res = train_mlp(X, y, cfg);
    auto pred = predict(res.model, X);
    double se = 0;
    for (auto r : res.report.train_rows) se += (pred[r] - y[r]) * (pred[r] - y[r]);
    CHECK(se / res.report.train_rows.size() == doctest::Approx(res.report.train_mse).epsilon(1e-12));
    se = 0;
    for (auto r : res.report.val_rows) se += (pred[r] - y[r]) * (pred[r] - y[r]);
    CHECK(se / res.report.val_rows.size() == doctest::Approx(res.report.val_mse).epsilon(1e-12));
}

TEST_CASE("gradient checks") {
    MLPModel m = init_mlp(3, {4, 4}, 11);
    for (auto& L : m.layers)
        for (auto& b : L.b) b = 0.1;
    Matrix X = random_inputs(8, 3, -1, 1, 9);
    std::vector<double> y = {0.5, -1, 2, 0.1, 0.3, -0.7, 1.2, 0};
    CHECK(grad_check_mlp(m, X, y) <= 1e-4);

    // no hidden layer: gradient of mean((Wx + b - y)^2) in closed form
    MLPModel lin = init_mlp(3, {}, 12);
    lin.layers[0].b[0] = 0.3;
    auto g = mlp_gradient(lin, X, y);
    REQUIRE(g.size() == 4);
    std::vector<double> expect(4, 0.0);
    for (std::size_t i = 0; i < X.rows; ++i) {
        double f = lin.layers[0].b[0];
        for (int c = 0; c < 3; ++c) f += lin.layers[0].w[c] * X(i, c);
        const double d = 2 * (f - y[i]) / X.rows;
        for (int c = 0; c < 3; ++c) expect[c] += d * X(i, c);
        expect[3] += d;
    }
    for (int i = 0; i < 4; ++i) CHECK(std::fabs(g[i] - expect[i]) <= 1e-8);

    // zero inputs: output bias gradient is the mean residual derivative
    Matrix Z(8, 3);
    auto gz = mlp_gradient(m, Z, y);
    auto out = predict(m, Z);
    double mean_d = 0;
    for (std::size_t i = 0; i < 8; ++i) mean_d += 2 * (out[i] - y[i]) / 8;
    CHECK(gz.back() == doctest::Approx(mean_d).epsilon(1e-12));
}

TEST_CASE("normalization makes training invariant to affine feature rescaling") {
    Matrix X = random_inputs(200, 2, -1, 1, 10);
    std::vector<double> y;
    for (std::size_t i = 0; i < X.rows; ++i) y.push_back(X(i, 0) * X(i, 0) - X(i, 1));
    Matrix X2 = X;
    for (std::size_t i = 0; i < X.rows; ++i) {
        X2(i, 0) = 1000 * X(i, 0) + 7;
        X2(i, 1) = 0.01 * X(i, 1) - 3;
    }
    MLPConfig cfg;
    cfg.epochs = 20;
    auto a = train_mlp(X, y, cfg);
    auto b = train_mlp(X2, y, cfg);
    auto pa = a.model.flat_parameters();
    auto pb = b.model.flat_parameters();
    REQUIRE(pa.size() == pb.size());
    double worst = 0;
    for (std::size_t i = 0; i < pa.size(); ++i) worst = std::max(worst, std::fabs(pa[i] - pb[i]));
    CHECK(worst <= 1e-8);
    auto qa = predict(a.model, X);
    auto qb = predict(b.model, X2);
    for (std::size_t i = 0; i < qa.size(); ++i) CHECK(qa[i] == doctest::Approx(qb[i]).epsilon(1e-8));
}

TEST_CASE("training errors and determinism") {
    Matrix X = random_inputs(50, 1, 0, 1, 11);
    std::vector<double> y(50, 1.0);
    y[3] = INFINITY;
    CHECK_THROWS_AS(train_mlp(X, y, MLPConfig{}), NonFiniteData);
    CHECK_THROWS(train_mlp(random_inputs(5, 1, 0, 1, 1), std::vector<double>(5), MLPConfig{}));
    CHECK_THROWS_AS(train_mlp(X, std::vector<double>(49), MLPConfig{}), ShapeMismatch);
    MLPConfig bad;
    bad.train_fraction = 1.0;
    CHECK_THROWS(train_mlp(X, std::vector<double>(50), bad));

    for (std::size_t i = 0; i < 50; ++i) y[i] = std::exp(X(i, 0));
    MLPConfig cfg;
    cfg.epochs = 10;
    auto a = train_mlp(X, y, cfg);
    auto b = train_mlp(X, y, cfg);
    CHECK(a.model.flat_parameters() == b.model.flat_parameters());
    CHECK(a.report.train_history == b.report.train_history);
}

TEST_CASE("checkpoint round trip") {
    MLPModel m = init_mlp(2, {5, 3}, 13);
    m.x_mean = {0.1, -0.2};
    m.x_std = {1.5, 0.25};
    m.y_mean = 0.7;
    m.y_std = 1.0 / 3.0;
    std::stringstream ss;
    save_mlp(ss, m);
    MLPModel back = load_mlp(ss);
    Matrix X = random_inputs(20, 2, -1, 1, 14);
    CHECK(predict(back, X) == predict(m, X));
    CHECK(back.flat_parameters() == m.flat_parameters());

    std::string text;
    {
        std::ostringstream o;
        save_mlp(o, m);
        text = o.str();
    }
    std::string wrong = text;
    wrong.replace(wrong.find(" 1\n"), 3, " 9\n");
    std::istringstream w(wrong);
    CHECK_THROWS_AS(load_mlp(w), VersionError);
    std::istringstream cut(text.substr(0, text.size() / 2));
    CHECK_THROWS_AS(load_mlp(cut), CorruptCheckpoint);
}
