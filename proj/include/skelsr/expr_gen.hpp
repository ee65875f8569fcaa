#pragma once
// Constrained random expression generation and pretraining corpora.

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "skelsr/expr.hpp"
#include "skelsr/rng.hpp"
#include "skelsr/skeleton.hpp"

namespace skelsr {

class RetryExhausted : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Unary-like operator name of a node as used by the generator: the unary
/// operator name, "pow2".."pow5" for pow(., k), or nullopt.
std::optional<std::string> generator_op_name(const Expr& node);

/// Every unary-like operator the generator can emit (13 unary + pow2..pow5).
const std::vector<std::string>& generator_unary_ops();

/// Forbidden combinations: one row per group of parents sharing a list.
struct ForbiddenRow {
    std::vector<std::string> parents;
    std::vector<std::string> children;
};
const std::vector<ForbiddenRow>& forbidden_table();

using ForbiddenMap = std::map<std::string, std::set<std::string>>;
ForbiddenMap default_forbidden();

struct GenConfig {
    int max_operators = 7;
    int max_unary_nesting = 1;  // unary ops below a unary op on any path
    int max_unary_ops = 5;
    double weight_unary = 2.0;
    double weight_binary = 1.0;
    double weight_leaf = 1.0;
    ForbiddenMap forbidden = default_forbidden();
    /// Operators whose argument receives only a multiplicative placeholder.
    std::set<std::string> multiplicative_only = {"exp", "sinh", "cosh", "tanh"};
    int max_retries = 100;
    std::uint64_t seed = 0;

    std::string describe() const;  // stable text used for the config hash
    std::uint64_t hash() const;
};

struct Violation {
    enum class Kind { Forbidden, OperatorBudget, UnaryBudget, UnaryNesting, NoVariable } kind;
    std::string detail;
};

/// Check a tree against the config. `check_budget` covers the operator and
/// unary-op budgets, which only apply to trees before placeholder insertion.
std::vector<Violation> validate_tree(const Expr& tree, const GenConfig& config, bool check_budget = true);

/// One raw tree (variable leaves only, no placeholders).
Expr generate_tree(const GenConfig& config, Rng& rng);

/// Wrap variable leaves and unary nodes as c*node + c, and div nodes as
/// node + c; arguments of multiplicative-only operators get c*node. The
/// result is merged and reindexed.
Expr insert_placeholders(const Expr& tree, const std::set<std::string>& multiplicative_only = {"exp", "sinh", "cosh",
                                                                                               "tanh"});

/// generate_tree -> simplify -> insert_placeholders -> skeleton.
Skeleton generate_skeleton(const GenConfig& config, Rng& rng);

struct Corpus {
    std::vector<Skeleton> entries;
    std::uint64_t seed = 0;
    std::uint64_t config_hash = 0;
};

/// `size` skeletons, pairwise distinct by canonical form. Entry i draws from
/// its own stream derived from (seed, i).
Corpus generate_corpus(std::size_t size, const GenConfig& config);

void write_corpus(std::ostream& out, const Corpus& corpus);
Corpus read_corpus(std::istream& in);

}  // namespace skelsr
