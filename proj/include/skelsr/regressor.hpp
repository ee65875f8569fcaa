#pragma once
// Feed-forward ReLU regressor trained by mini-batch momentum SGD on MSE.

#include <cstdint>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

#include "skelsr/matrix.hpp"

namespace skelsr {

class NonFiniteData : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

class ShapeMismatch : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

struct MLPConfig {
    std::vector<int> hidden = {64, 64, 64};
    double learning_rate = 0.01;
    double momentum = 0.9;
    double lr_decay = 0.99;  // per epoch
    int epochs = 400;
    int batch_size = 32;
    double train_fraction = 0.9;
    int patience = 20;
    std::uint64_t seed = 0;

    void validate() const;
};

struct DenseLayer {
    int in = 0;
    int out = 0;
    std::vector<double> w;  // out x in, row-major
    std::vector<double> b;  // out
};

struct MLPModel {
    int input_dim = 0;
    std::vector<DenseLayer> layers;  // ReLU between layers, linear output
    std::vector<double> x_mean, x_std;
    double y_mean = 0.0, y_std = 1.0;

    std::size_t num_parameters() const;
    /// Parameters in layer order, weights then biases.
    std::vector<double> flat_parameters() const;
    void set_flat_parameters(const std::vector<double>& theta);
};

/// Randomly initialized model (He-normal weights, zero biases) with identity
/// normalization.
MLPModel init_mlp(int input_dim, const std::vector<int>& hidden, std::uint64_t seed);

struct TrainReport {
    int epochs_run = 0;
    int best_epoch = 0;
    double train_mse = 0.0;  // original units, best parameters
    double val_mse = 0.0;
    double val_r2 = 0.0;
    std::size_t n_train = 0, n_val = 0;
    std::vector<double> train_history;  // normalized-space MSE after each epoch
    std::vector<double> val_history;
    std::vector<std::size_t> train_rows, val_rows;
};

struct TrainResult {
    MLPModel model;
    TrainReport report;
};

TrainResult train_mlp(const Matrix& X, const std::vector<double>& y, const MLPConfig& cfg);

std::vector<double> predict(const MLPModel& model, const Matrix& X);

/// Loss and gradient in normalized space: L = mean((f(x~) - y~)^2).
double mlp_loss(const MLPModel& model, const Matrix& X, const std::vector<double>& y);
std::vector<double> mlp_gradient(const MLPModel& model, const Matrix& X, const std::vector<double>& y);

/// Max relative error between analytic and central-difference gradients.
double grad_check_mlp(const MLPModel& model, const Matrix& X, const std::vector<double>& y, double h = 1e-5);

void save_mlp(std::ostream& out, const MLPModel& model);
MLPModel load_mlp(std::istream& in);
void save_mlp(const std::string& path, const MLPModel& model);
MLPModel load_mlp(const std::string& path);

}  // namespace skelsr
