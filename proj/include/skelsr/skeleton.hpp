#pragma once
// Simplification, skeleton functions and skeleton equality.

#include <span>
#include <string>
#include <vector>

#include "skelsr/expr.hpp"

namespace skelsr {

/// Fixed rewrite ruleset: constant folding, additive/multiplicative
/// identities and annihilators, double negation, log/exp cancellation,
/// integer pow-of-pow merging, flattening and sorting of add/mul chains.
/// Never increases operator_count.
Expr simplify(const Expr& tree);

/// True when the tree is finite for every finite input (no domain-restricted
/// or overflow-prone operator anywhere).
bool is_total(const Expr& tree);

/// Collapse redundant placeholders: f(c) -> c, c op c -> c, and one
/// placeholder per add/mul chain (numbers in such a chain are absorbed).
Expr merge_placeholders(const Expr& tree);

/// Placeholder-algebra normal form: products distributed over sums, integer
/// powers 2..5 of sums expanded, like terms and constants merged, operands
/// sorted. Two skeletons describe the same family iff their normal forms
/// serialize identically.
Expr normal_form(const Expr& tree);

struct Skeleton {
    Expr tree;              // placeholders indexed 1..n in preorder
    std::string canonical;  // prefix text of normal_form(tree)

    int num_constants() const { return static_cast<int>(placeholder_count(tree)); }
    std::string prefix() const { return to_prefix_text(tree); }
};

/// Build a skeleton from a placeholder tree (merges redundant placeholders,
/// reindexes, fills `canonical`). Numbers are kept as they are.
Skeleton make_skeleton(Expr tree);
Skeleton skeleton_from_text(std::string_view prefix_text);

/// kappa(.): every numeric constant becomes a placeholder, except the integer
/// exponent of pow.
Skeleton skeletonize(const Expr& tree);

/// kappa(., x_v): every maximal subtree free of x_v becomes a placeholder;
/// the result is returned in normal form.
Skeleton skeletonize_wrt(const Expr& tree, int v);

/// Replace placeholder i (preorder) by values[i-1]. Throws ArityMismatch.
Expr set_constants(const Skeleton& skeleton, std::span<const double> values);
Expr set_constants(const Expr& placeholder_tree, std::span<const double> values);

bool canonical_equal(const Skeleton& a, const Skeleton& b);

/// Rename every variable to index `to`.
Expr rename_variables(const Expr& tree, int to);

}  // namespace skelsr
