#pragma once

#include <bit>
#include <cstdint>
#include <limits>
#include <queue>
#include <vector>

#include "model.hpp"

namespace regdesign {

/// Arms [0, depth) are decided; `selected` holds the chosen ones among them.
struct PartialDesign {
  std::size_t depth = 0;
  std::uint64_t selected = 0;
};

struct ScoredDesign {
  std::uint64_t mask = 0;
  double value = 0.0;
};

/**
 * Best-first branch-and-bound over AtMostK / All feasibility sets. `bound` must
 * return a lower bound of `leaf` over every completion of a node. Returns every
 * evaluated leaf; all leaves within `tie_tol` of the optimum are guaranteed to be
 * among them.
 */
template <class Bound, class Leaf>
std::vector<ScoredDesign> branch_and_bound(const DesignProblem& problem, Bound&& bound, Leaf&& leaf,
                                           double tie_tol) {
  const std::size_t p = problem.dim();
  const auto& f = problem.feasibility;
  if (f.mode == FeasibilitySet::Mode::ExplicitList)
    fail(ErrorCode::InvalidArgument, "branch-and-bound needs an AtMostK or All feasibility set");
  const std::size_t cap = f.mode == FeasibilitySet::Mode::AtMostK ? f.k : p;

  struct Node {
    double bound;
    PartialDesign design;
  };
  auto worse = [](const Node& a, const Node& b) {
    if (a.bound != b.bound) return a.bound > b.bound;
    if (a.design.depth != b.design.depth) return a.design.depth < b.design.depth;
    return a.design.selected > b.design.selected;
  };
  std::priority_queue<Node, std::vector<Node>, decltype(worse)> queue(worse);

  std::vector<ScoredDesign> leaves;
  double incumbent = std::numeric_limits<double>::infinity();
  auto evaluate = [&](std::uint64_t mask) {
    const double v = leaf(mask);
    leaves.push_back({mask, v});
    if (v < incumbent) incumbent = v;
  };

  queue.push({bound(PartialDesign{0, 0}), PartialDesign{0, 0}});
  while (!queue.empty()) {
    const Node node = queue.top();
    queue.pop();
    if (node.bound > incumbent + tie_tol) break;
    const auto& d = node.design;
    const auto used = static_cast<std::size_t>(std::popcount(d.selected));
    if (d.depth == p || used == cap) {
      evaluate(d.selected);
      continue;
    }
    const PartialDesign children[2] = {{d.depth + 1, d.selected},
                                       {d.depth + 1, d.selected | (std::uint64_t{1} << d.depth)}};
    for (const auto& child : children) {
      const double b = bound(child);
      if (b <= incumbent + tie_tol) queue.push({b, child});
    }
  }
  return leaves;
}

}  // namespace regdesign
