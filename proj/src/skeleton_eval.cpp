#include "skelsr/skeleton_eval.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <mutex>
#include <thread>

#include "skelsr/batch_eval.hpp"

namespace skelsr {

namespace {

// Objective over a fixed set of points, scaled to n_test points.
struct Objective {
    CompiledExpr est;
    std::vector<double> x, y;
    double penalty;
    double scale;
    mutable std::vector<double> out;

    double operator()(const std::vector<double>& c) const {
        out.resize(x.size());
        est.eval_univariate(x, c, out);
        double s = 0.0;
        for (std::size_t i = 0; i < x.size(); ++i) s += std::isnan(out[i]) ? penalty : std::fabs(out[i] - y[i]);
        return s * scale;
    }
};

std::size_t tournament(const std::vector<double>& fit, int k, Rng& rng) {
    std::size_t best = rng.index(fit.size());
    for (int i = 1; i < k; ++i) {
        const std::size_t j = rng.index(fit.size());
        if (fit[j] < fit[best]) best = j;
    }
    return best;
}

void mean_std(const std::vector<double>& v, double& mean, double& sd) {
    mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    double ss = 0.0;
    for (double x : v) ss += (x - mean) * (x - mean);
    sd = v.size() > 1 ? std::sqrt(ss / static_cast<double>(v.size())) : 0.0;
}

double defined_fraction(const Expr& f, double low, double high, const EvalConfig& cfg, Rng& rng) {
    constexpr int probes = 200;
    int ok = 0;
    for (int i = 0; i < probes; ++i) ok += !is_undefined(evaluate_at(f, rng.uniform(cfg.expansion * low, cfg.expansion * high)));
    return static_cast<double>(ok) / probes;
}

}  // namespace

void EvalConfig::validate() const {
    if (n_test < 1 || repeats < 1 || population < 2 || tournament < 1 || max_generations < 1 || stall_generations < 1)
        throw std::invalid_argument("evaluation counts must be positive");
    if (!(expansion >= 1.0)) throw std::invalid_argument("expansion factor must be >= 1");
    if (!(init_low < init_high)) throw std::invalid_argument("empty constant search range");
    if (fit_points < 0) throw std::invalid_argument("fit_points must be >= 0");
}

std::pair<std::vector<double>, std::vector<double>> sample_test_set(const Expr& target, double low, double high,
                                                                     const EvalConfig& cfg, Rng& rng) {
    const double lo = cfg.expansion * low, hi = cfg.expansion * high;
    std::vector<double> x, y;
    x.reserve(cfg.n_test);
    y.reserve(cfg.n_test);
    const long long max_draws = 1000LL * cfg.n_test;
    long long draws = 0;
    while (static_cast<int>(x.size()) < cfg.n_test && draws < max_draws) {
        ++draws;
        const double v = rng.uniform(lo, hi);
        const double f = evaluate_at(target, v);
        if (is_undefined(f)) continue;
        x.push_back(v);
        y.push_back(f);
    }
    return {std::move(x), std::move(y)};
}

double skeleton_error(const Skeleton& est, const std::vector<double>& constants, const std::vector<double>& x,
                      const std::vector<double>& y, double penalty) {
    Objective obj{CompiledExpr(est.tree), x, y, penalty, 1.0, {}};
    return obj(constants);
}

FitResult fit_constants(const Skeleton& est, const Expr& target, double low, double high, const EvalConfig& cfg,
                        Rng& rng) {
    cfg.validate();
    if (max_variable_index(est.tree) > 1 || max_variable_index(target) > 1)
        throw std::invalid_argument("skeleton evaluation is univariate");
    auto [x, y] = sample_test_set(target, low, high, cfg, rng);
    FitResult res;
    const std::size_t nc = static_cast<std::size_t>(est.num_constants());
    Objective full{CompiledExpr(est.tree), x, y, cfg.penalty, 1.0, {}};
    double range = 0.0;
    if (!y.empty()) range = *std::max_element(y.begin(), y.end()) - *std::min_element(y.begin(), y.end());
    auto finish = [&](std::vector<double> c) {
        res.r = full(c);
        const double denom = static_cast<double>(std::max<std::size_t>(x.size(), 1)) * (range > 0.0 ? range : 1.0);
        res.r_normalized = res.r / denom;
        res.constants = std::move(c);
        return res;
    };
    if (x.empty()) {
        res.r = res.r_normalized = INFINITY;
        res.constants.assign(nc, 0.0);
        return res;
    }
    if (nc == 0) return finish({});

    // GA fitness on evenly spaced order statistics of the test inputs. The
    // extremes are always included so a fit that leaves part of the defined
    // region undefined is penalized during the search.
    Objective fit = full;
    if (cfg.fit_points > 1 && static_cast<std::size_t>(cfg.fit_points) < x.size()) {
        std::vector<std::size_t> idx(x.size());
        std::iota(idx.begin(), idx.end(), 0);
        std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
        fit.x.clear();
        fit.y.clear();
        const std::size_t m = static_cast<std::size_t>(cfg.fit_points);
        for (std::size_t i = 0; i < m; ++i) {
            const std::size_t j = idx[i * (x.size() - 1) / (m - 1)];
            fit.x.push_back(x[j]);
            fit.y.push_back(y[j]);
        }
        fit.scale = static_cast<double>(x.size()) / cfg.fit_points;
    }

    const std::size_t P = static_cast<std::size_t>(cfg.population);
    std::vector<std::vector<double>> pop(P, std::vector<double>(nc));
    std::vector<double> fitness(P);
    for (std::size_t i = 0; i < P; ++i) {
        for (auto& g : pop[i]) g = rng.uniform(cfg.init_low, cfg.init_high);
        fitness[i] = fit(pop[i]);
    }
    std::vector<double> history;
    std::vector<std::vector<double>> next(P, std::vector<double>(nc));
    std::vector<double> next_fit(P);
    int gen = 0;
    for (;;) {
        const std::size_t elite = std::min_element(fitness.begin(), fitness.end()) - fitness.begin();
        history.push_back(fitness[elite]);
        const std::size_t h = history.size();
        if (h > static_cast<std::size_t>(cfg.stall_generations) &&
            history[h - 1 - cfg.stall_generations] - history[h - 1] < cfg.stall_tolerance)
            break;
        if (gen >= cfg.max_generations) break;
        ++gen;
        // Generational replacement; the best individual survives unchanged.
        next[0] = pop[elite];
        next_fit[0] = fitness[elite];
        for (std::size_t i = 1; i < P; ++i) {
            const auto& a = pop[tournament(fitness, cfg.tournament, rng)];
            const auto& b = pop[tournament(fitness, cfg.tournament, rng)];
            auto& child = next[i];
            // Binomial crossover: each gene from b with the crossover rate,
            // at least one gene from b.
            const std::size_t forced = rng.index(nc);
            for (std::size_t g = 0; g < nc; ++g) {
                child[g] = (g == forced || rng.bernoulli(cfg.crossover_rate)) ? b[g] : a[g];
                if (rng.bernoulli(cfg.mutation_rate)) child[g] += rng.normal(0.0, cfg.mutation_sd);
            }
            next_fit[i] = fit(child);
        }
        pop.swap(next);
        fitness.swap(next_fit);
    }
    res.generations = gen;
    if (fit.x.size() == x.size()) {
        const std::size_t best = std::min_element(fitness.begin(), fitness.end()) - fitness.begin();
        return finish(pop[best]);
    }
    // Fitness saw only a subset: pick among the best few on the full set.
    std::vector<std::size_t> order(P);
    std::iota(order.begin(), order.end(), 0);
    const std::size_t k = std::min<std::size_t>(P, static_cast<std::size_t>(std::max(1, cfg.rerank)));
    std::partial_sort(order.begin(), order.begin() + k, order.end(),
                      [&](std::size_t a, std::size_t b) { return fitness[a] < fitness[b]; });
    std::size_t best = order[0];
    double best_r = full(pop[best]);
    for (std::size_t i = 1; i < k; ++i) {
        const double r = full(pop[order[i]]);
        if (r < best_r) {
            best_r = r;
            best = order[i];
        }
    }
    return finish(pop[best]);
}

EvalResult evaluate_skeleton(const Skeleton& est, const Skeleton& target, double low, double high,
                             const EvalConfig& cfg) {
    cfg.validate();
    const std::size_t R = static_cast<std::size_t>(cfg.repeats);
    std::vector<FitResult> fits(R);
    std::vector<std::vector<double>> target_constants(R);
    auto run = [&](std::size_t i) {
        Rng rng(stream_seed(cfg.seed, i, 0x5EC));
        ConcreteFunction f = sample_constants(target, rng);
        // Redraw constants that leave the target mostly undefined on the
        // test domain.
        for (int attempt = 0; attempt < 100 && defined_fraction(f.tree, low, high, cfg, rng) < 0.05; ++attempt)
            f = sample_constants(target, rng);
        target_constants[i] = f.constants;
        fits[i] = fit_constants(est, f.tree, low, high, cfg, rng);
    };
    unsigned threads = cfg.threads > 0 ? static_cast<unsigned>(cfg.threads) : std::thread::hardware_concurrency();
    threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(R)));
    if (threads == 1) {
        for (std::size_t i = 0; i < R; ++i) run(i);
    } else {
        std::atomic<std::size_t> next{0};
        std::vector<std::thread> pool;
        std::exception_ptr error;
        std::mutex error_mutex;
        for (unsigned t = 0; t < threads; ++t) {
            pool.emplace_back([&] {
                for (std::size_t i; (i = next.fetch_add(1)) < R;) {
                    try {
                        run(i);
                    } catch (...) {
                        std::lock_guard lock(error_mutex);
                        if (!error) error = std::current_exception();
                    }
                }
            });
        }
        for (auto& th : pool) th.join();
        if (error) std::rethrow_exception(error);
    }
    EvalResult out;
    for (std::size_t i = 0; i < R; ++i) {
        out.r.push_back(fits[i].r);
        out.r_normalized.push_back(fits[i].r_normalized);
        out.constants.push_back(fits[i].constants);
        out.generations.push_back(fits[i].generations);
    }
    out.target_constants = std::move(target_constants);
    mean_std(out.r, out.mean, out.std);
    mean_std(out.r_normalized, out.mean_normalized, out.std_normalized);
    return out;
}

}  // namespace skelsr
