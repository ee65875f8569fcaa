#pragma once
// Multi-set training data: constants, supports, domain repair and
// collections of sets that share one skeleton.

#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <vector>

#include "skelsr/expr.hpp"
#include "skelsr/rng.hpp"
#include "skelsr/skeleton.hpp"

namespace skelsr {

class RepairFailed : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct SupportSet {
    std::vector<double> values;
    double low = 0.0;
    double high = 0.0;
};

struct ConcreteFunction {
    Expr tree;
    Skeleton source;
    std::vector<double> constants;  // values substituted for source placeholders, preorder
};

struct DataSet {
    std::vector<double> x;
    std::vector<double> y;
};

struct SetCollection {
    std::vector<DataSet> sets;
    std::optional<Skeleton> target;   // empty at inference time
    std::vector<Expr> functions;      // generating function of each set, when known
};

struct DataConfig {
    double constant_bound = 10.0;       // constants ~ U(-bound, bound)
    double min_abs_constant = 0.01;     // redraw below this magnitude
    double support_limit_low = 1.0;     // x_limit ~ U(low, high)
    double support_limit_high = 10.0;
    double max_abs_value = 1e12;        // larger magnitudes count as invalid
    double log_margin = 0.05;           // log argument minimum after repair
    double exp_cap = 7.0;               // exp-family argument cap
    double singular_halfwidth = 0.05;   // x (domain width / n)
    int grid_factor = 10;               // singularity scan resolution, x n
    int repair_passes = 5;
    int per_set_retries = 20;
    int per_collection_retries = 200;
};

/// Magnitude-bounded finite check used for every emitted response.
bool is_valid_value(double v, double max_abs = 1e12);

ConcreteFunction sample_constants(const Skeleton& skeleton, Rng& rng, const DataConfig& cfg = {});

/// Keep `n_f` randomly chosen placeholders; the rest are fixed to 1 (in a
/// product or quotient) or 0 (in a sum) and simplified away. Skeletons with
/// fewer than two placeholders are returned unchanged.
Skeleton select_constants(const Skeleton& skeleton, int n_f, Rng& rng);
/// Deterministic variant: keep the listed 1-based placeholder indices.
Skeleton select_constants_keep(const Skeleton& skeleton, const std::vector<int>& keep);

SupportSet sample_support(std::size_t n, Rng& rng, const DataConfig& cfg = {});

struct RepairResult {
    SupportSet x;
    ConcreteFunction f;
    std::vector<double> singularities;
};

/// Repair f and x so that f is valid on every support point. Constants inside
/// special-function arguments are shifted or scaled; support points are
/// resampled away from singularities of tan, division and negative powers.
RepairResult avoid_nans(const SupportSet& x, const ConcreteFunction& f, Rng& rng, const DataConfig& cfg = {});

/// One collection of N_S sets sharing a skeleton. The target is the skeleton
/// of the first set's repaired function; later sets with a different skeleton
/// are regenerated.
SetCollection generate_sets(const Skeleton& source, int n_sets, std::size_t n, Rng& rng, const DataConfig& cfg = {});

/// Evaluate a univariate tree at many points.
std::vector<double> eval_points(const Expr& tree, const std::vector<double>& x);

// ---- training-record files --------------------------------------------------
// Header line "# skelsr-records v1 count=N", then one record per line:
//   T tok_1 .. tok_T  S  n_1 x y x y ..  n_2 x y ..  ..  n_S x y ..
// where T is the target token count and S the number of sets. Numbers use the
// shortest round-trip decimal form.

void write_record(std::ostream& out, const SetCollection& c);
SetCollection read_record(std::string_view line);
void write_records(std::ostream& out, const std::vector<SetCollection>& records);
std::vector<SetCollection> read_records(std::istream& in);

std::string format_double(double v);

}  // namespace skelsr
