#pragma once
// Skeleton similarity: fit the constants of an estimated skeleton to a
// concretized target with a genetic algorithm and report the summed absolute
// error over an expanded test domain.

#include <cstdint>
#include <vector>

#include "skelsr/mssp_data.hpp"
#include "skelsr/rng.hpp"
#include "skelsr/skeleton.hpp"

namespace skelsr {

struct EvalConfig {
    int n_test = 3000;
    int repeats = 30;
    double expansion = 2.0;  // test points ~ U(f*low, f*high)
    int population = 500;
    int tournament = 3;
    double crossover_rate = 0.5;
    double mutation_rate = 0.1;  // per gene
    double mutation_sd = 0.5;
    double init_low = -10.0, init_high = 10.0;
    double penalty = 1e6;  // per undefined estimate value
    int stall_generations = 20;
    double stall_tolerance = 1e-5;
    int max_generations = 400;
    int fit_points = 256;  // test points used for GA fitness; 0 = all
    int rerank = 20;       // final candidates re-scored on the full test set
    int threads = 0;       // 0 = hardware concurrency
    std::uint64_t seed = 0;

    void validate() const;
};

struct FitResult {
    std::vector<double> constants;  // c*, preorder
    double r = 0.0;                 // sum of |f_target - f_est| over the test set
    double r_normalized = 0.0;      // r / (n_test * target range)
    int generations = 0;
};

struct EvalResult {
    std::vector<double> r, r_normalized;
    std::vector<std::vector<double>> constants;
    std::vector<std::vector<double>> target_constants;
    std::vector<int> generations;
    double mean = 0.0, std = 0.0;
    double mean_normalized = 0.0, std_normalized = 0.0;
};

/// Test inputs ~ U(expansion*low, expansion*high) where `target` is defined
/// (undefined draws are redrawn). Returns the inputs and target values.
std::pair<std::vector<double>, std::vector<double>> sample_test_set(const Expr& target, double low, double high,
                                                                     const EvalConfig& cfg, Rng& rng);

/// r for fixed constants (penalty for undefined estimate values).
double skeleton_error(const Skeleton& est, const std::vector<double>& constants, const std::vector<double>& x,
                      const std::vector<double>& y, double penalty = 1e6);

FitResult fit_constants(const Skeleton& est, const Expr& target, double low, double high, const EvalConfig& cfg,
                        Rng& rng);

/// `repeats` rounds of sample_constants(target) -> fit_constants, each on
/// its own seeded stream; repeats run in parallel.
EvalResult evaluate_skeleton(const Skeleton& est, const Skeleton& target, double low, double high,
                             const EvalConfig& cfg);

}  // namespace skelsr
