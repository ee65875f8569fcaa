#pragma once
// Benchmark registry (E1-E13), artificial multi-set construction through a
// trained regressor, per-variable skeleton prediction, evaluation and
// reporting.

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "skelsr/expr_gen.hpp"
#include "skelsr/matrix.hpp"
#include "skelsr/mst.hpp"
#include "skelsr/regressor.hpp"
#include "skelsr/skeleton_eval.hpp"

namespace skelsr {

class MissingArtifact : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct BenchmarkProblem {
    std::string id;
    std::string formula;  // prefix text over x1..xt
    Expr tree;
    std::vector<std::pair<double, double>> domains;
    std::vector<Skeleton> targets;            // kappa(f, x_v), in x_v
    std::vector<std::string> published;       // target column as printed
    std::vector<std::string> notes;           // per variable, empty if none
    std::string domain_note;

    int num_variables() const { return static_cast<int>(domains.size()); }
    /// Target of variable v (1-based) rewritten in x1.
    Skeleton univariate_target(int v) const;
};

const std::vector<BenchmarkProblem>& benchmark_registry();
/// Throws std::invalid_argument for unknown ids.
const BenchmarkProblem& find_problem(const std::string& id);

struct ObservedData {
    Matrix X;
    std::vector<double> y;
};

/// X uniform over the problem domains, y = f(X); rows where f is undefined
/// are redrawn.
ObservedData make_observed_data(const BenchmarkProblem& problem, std::size_t n, Rng& rng);

/// Maps input rows to responses.
using ResponseFn = std::function<std::vector<double>(const Matrix&)>;

ResponseFn regressor_response(const MLPModel& model);
/// The problem's own function; NaN where undefined.
ResponseFn exact_response(const BenchmarkProblem& problem);

/// N_S sets of n rows: column v ~ U(min, max) of the observed column, every
/// other column fixed per set to a U(min, max) draw. Only (x_v, response)
/// is kept per set; the target field is left empty.
SetCollection build_artificial_collection(const ResponseFn& response, const Matrix& observed, int v, int n_sets,
                                          int n, Rng& rng);

/// Produces a skeleton (or a diagnostic) for one analyzed variable.
class SkeletonSolver {
public:
    virtual ~SkeletonSolver() = default;
    virtual DecodeResult solve(const SetCollection& collection, const BenchmarkProblem& problem, int v) const = 0;
    virtual std::string name() const = 0;
};

/// Stub that answers with the registered target (plumbing checks), or with
/// a fixed skeleton when one is given.
class OracleSolver : public SkeletonSolver {
public:
    OracleSolver() = default;
    explicit OracleSolver(Skeleton fixed) : fixed_(std::move(fixed)) {}
    DecodeResult solve(const SetCollection& collection, const BenchmarkProblem& problem, int v) const override;
    std::string name() const override { return "oracle"; }

private:
    std::optional<Skeleton> fixed_;
};

class MSTSolver : public SkeletonSolver {
public:
    explicit MSTSolver(std::shared_ptr<const MSTModel> model) : model_(std::move(model)) {}
    DecodeResult solve(const SetCollection& collection, const BenchmarkProblem& problem, int v) const override;
    std::string name() const override { return "mst"; }

private:
    std::shared_ptr<const MSTModel> model_;
};

struct PipelineConfig {
    std::size_t n_observed = 10000;  // N_R
    int n_sets = 10;                 // N_S
    int n_points = 256;              // n
    MLPConfig regressor;
    std::string mst_path;
    /// Skip the regressor and the MST: sets come from the exact function and
    /// the solver answers with the registered target.
    bool oracle = false;
    EvalConfig eval;
    std::vector<std::string> problems;  // empty = all
    std::uint64_t seed = 0;
};

struct VariablePrediction {
    int variable = 0;
    DecodeResult decoded;
};

std::vector<VariablePrediction> predict_univariate_skeletons(const SkeletonSolver& solver, const ResponseFn& response,
                                                             const BenchmarkProblem& problem,
                                                             const Matrix& observed, const PipelineConfig& cfg,
                                                             Rng& rng);

struct CellReport {
    std::string problem;
    int variable = 0;
    std::string target;     // prefix, univariate
    std::string predicted;  // prefix, empty if decoding failed
    std::string diagnostic;
    bool canonical_match = false;
    std::optional<EvalResult> eval;
    double seconds = 0.0;
};

struct RunReport {
    std::string solver;
    std::uint64_t seed = 0;
    std::string isa;
    std::vector<CellReport> cells;
    std::map<std::string, double> regressor_val_r2;
};

RunReport run_benchmark(const PipelineConfig& cfg);

/// Packs curves (one set each, lengths may differ) and decodes them. Throws
/// EmptySet for no curves or a curve with fewer than two points.
DecodeResult mssp_on_curves(const std::vector<DataSet>& curves, const SkeletonSolver& solver);

// ---- reports ---------------------------------------------------------------

/// JSON text; timing fields only when include_timing is set so reruns are
/// byte-identical by default.
std::string report_json(const RunReport& report, bool include_timing = false);
/// problem,variable,target,predicted,mean,std,mean_normalized,std_normalized
std::string report_csv(const RunReport& report);
std::string eval_json(const std::string& est, const std::string& target, double low, double high,
                      const EvalConfig& cfg, const EvalResult& r);

// ---- configuration ---------------------------------------------------------

/// `key = value` lines; '#' starts a comment.
class KeyValueConfig {
public:
    static KeyValueConfig parse(const std::string& text);
    static KeyValueConfig load(const std::string& path);

    bool has(const std::string& key) const { return values_.count(key) > 0; }
    std::string get(const std::string& key, const std::string& fallback) const;
    double get(const std::string& key, double fallback) const;
    long long get(const std::string& key, long long fallback) const;
    int get(const std::string& key, int fallback) const { return static_cast<int>(get(key, static_cast<long long>(fallback))); }
    bool get(const std::string& key, bool fallback) const;
    std::vector<int> get_ints(const std::string& key, const std::vector<int>& fallback) const;
    void set(const std::string& key, const std::string& value) { values_[key] = value; }

    /// Keys never read through get(); typos show up here.
    std::vector<std::string> unused() const;
    const std::map<std::string, std::string>& values() const { return values_; }

private:
    std::map<std::string, std::string> values_;
    mutable std::map<std::string, bool> used_;
    const std::string* find(const std::string& key) const;
};

/// Seed from SKELSR_SEED, or `fallback` when unset.
std::uint64_t default_seed(std::uint64_t fallback = 0);

void apply_config(const KeyValueConfig& kv, MLPConfig& cfg, const std::string& prefix = "nn.");
void apply_config(const KeyValueConfig& kv, MSTConfig& cfg, const std::string& prefix = "mst.");
void apply_config(const KeyValueConfig& kv, MSTTrainConfig& cfg, const std::string& prefix = "train.");
void apply_config(const KeyValueConfig& kv, EvalConfig& cfg, const std::string& prefix = "eval.");
void apply_config(const KeyValueConfig& kv, GenConfig& cfg, const std::string& prefix = "gen.");
void apply_config(const KeyValueConfig& kv, DataConfig& cfg, const std::string& prefix = "data.");
void apply_config(const KeyValueConfig& kv, PipelineConfig& cfg);

}  // namespace skelsr
