#pragma once

// Gradient-boosted regression trees for one or two predictors, used as the
// nonparametric smoother of the additive decomposition. Everything is
// deterministic: rows are brought into a canonical order before fitting, all
// split ties break toward the lower feature and threshold, and no sampling is
// involved, so refits and row permutations reproduce the model exactly.

#include <algorithm>
#include <array>
#include <cstdint>
#include <numeric>
#include <vector>

#include "platsim/errors.hpp"

namespace platsim {

struct SmootherConfig {
  int n_trees = 300;
  int max_depth = 3;
  int min_leaf = 5;
  double learning_rate = 0.1;
  std::uint64_t seed = 0;  // reserved for stochastic variants; fitting is full-batch
};

struct TreeNode {
  std::int16_t left = -1;   // -1 marks a leaf
  std::int16_t right = -1;
  std::int8_t feature = -1;
  double threshold = 0.0;
  double value = 0.0;       // leaf mean of the residuals
};

struct Tree {
  std::vector<TreeNode> nodes;  // nodes[0] is the root

  double predict(const std::array<double, 2>& x) const {
    int i = 0;
    while (nodes[i].left >= 0)
      i = x[nodes[i].feature] <= nodes[i].threshold ? nodes[i].left : nodes[i].right;
    return nodes[i].value;
  }
};

struct TreeSmoother {
  SmootherConfig cfg;
  int n_features = 1;
  double base = 0.0;          // mean of the training response
  std::vector<Tree> trees;

  double predict(const std::array<double, 2>& x) const {
    double acc = base;
    for (const Tree& t : trees) acc += cfg.learning_rate * t.predict(x);
    return acc;
  }
  double predict(double x) const { return predict({x, 0.0}); }

  static TreeSmoother fit(const std::vector<std::array<double, 2>>& rows, int n_features,
                          const std::vector<double>& y, const SmootherConfig& cfg = {},
                          std::vector<double>* train_mse = nullptr);
};

namespace detail {

// Split scan state for one node: per-feature index lists kept sorted by that
// feature's value, so every scan is a single pass with prefix sums.
struct NodeSlice {
  std::array<std::vector<std::uint32_t>, 2> order;
  int depth = 0;
  int node = 0;
};

struct BestSplit {
  bool found = false;
  int feature = 0;
  double threshold = 0.0;
  double gain = 0.0;
};

inline BestSplit scan_node(const NodeSlice& slice, int n_features,
                           const std::vector<std::array<double, 2>>& x,
                           const std::vector<double>& r, int min_leaf) {
  const auto& idx0 = slice.order[0];
  const std::size_t n = idx0.size();
  double total = 0.0;
  for (std::uint32_t i : idx0) total += r[i];

  BestSplit best;
  if (n < 2 * static_cast<std::size_t>(min_leaf)) return best;
  for (int f = 0; f < n_features; ++f) {
    const auto& idx = slice.order[f];
    double left_sum = 0.0;
    for (std::size_t k = 0; k + 1 < n; ++k) {
      left_sum += r[idx[k]];
      double a = x[idx[k]][f], b = x[idx[k + 1]][f];
      if (!(a < b)) continue;  // only between distinct values
      std::size_t nl = k + 1, nr = n - nl;
      if (nl < static_cast<std::size_t>(min_leaf) || nr < static_cast<std::size_t>(min_leaf))
        continue;
      double mid = a + 0.5 * (b - a);
      // Adjacent representables can round the midpoint onto an endpoint,
      // which would cut nothing; skip such unusable candidates.
      if (!(a < mid) || !(mid < b)) continue;
      double right_sum = total - left_sum;
      double gain = left_sum * left_sum / static_cast<double>(nl) +
                    right_sum * right_sum / static_cast<double>(nr) -
                    total * total / static_cast<double>(n);
      // Strictly-better wins; the scan order (low feature, low threshold
      // first) makes equal-gain ties deterministic.
      if (gain > best.gain) {
        best.found = true;
        best.feature = f;
        best.threshold = mid;
        best.gain = gain;
      }
    }
  }
  return best;
}

}  // namespace detail

inline TreeSmoother TreeSmoother::fit(const std::vector<std::array<double, 2>>& rows,
                                      int n_features, const std::vector<double>& y,
                                      const SmootherConfig& cfg,
                                      std::vector<double>* train_mse) {
  if (rows.size() != y.size())
    throw ShapeMismatch("tree smoother: predictor and response lengths disagree");
  if (rows.size() < 10) throw TooFewSamples("tree smoother", rows.size(), 10);
  if (n_features < 1 || n_features > 2)
    throw ConfigError("smoother/n_features", "must be 1 or 2");

  const std::size_t n = rows.size();

  // Canonical order: sort rows by (x0, x1, y) so the fit cannot depend on how
  // the caller happened to arrange them.
  std::vector<std::uint32_t> canon(n);
  std::iota(canon.begin(), canon.end(), 0u);
  std::sort(canon.begin(), canon.end(), [&](std::uint32_t a, std::uint32_t b) {
    if (rows[a][0] != rows[b][0]) return rows[a][0] < rows[b][0];
    if (rows[a][1] != rows[b][1]) return rows[a][1] < rows[b][1];
    return y[a] < y[b];
  });
  std::vector<std::array<double, 2>> x(n);
  std::vector<double> resid(n);
  for (std::size_t i = 0; i < n; ++i) {
    x[i] = rows[canon[i]];
    resid[i] = y[canon[i]];
  }

  TreeSmoother model;
  model.cfg = cfg;
  model.n_features = n_features;
  double mean = 0.0;
  for (double v : resid) mean += v;
  model.base = mean / static_cast<double>(n);
  for (double& v : resid) v -= model.base;

  // Per-feature orderings of the canonical rows, reused as the root slice of
  // every tree.
  detail::NodeSlice root;
  for (int f = 0; f < n_features; ++f) {
    auto& ord = root.order[f];
    ord.resize(n);
    std::iota(ord.begin(), ord.end(), 0u);
    std::stable_sort(ord.begin(), ord.end(), [&](std::uint32_t a, std::uint32_t b) {
      return x[a][f] < x[b][f];
    });
  }

  std::vector<std::uint32_t> leaf_of(n);
  model.trees.reserve(cfg.n_trees);
  if (train_mse) train_mse->clear();

  for (int t = 0; t < cfg.n_trees; ++t) {
    Tree tree;
    tree.nodes.emplace_back();
    std::vector<detail::NodeSlice> open{root};
    open[0].node = 0;

    while (!open.empty()) {
      detail::NodeSlice slice = std::move(open.back());
      open.pop_back();
      TreeNode& nd = tree.nodes[slice.node];

      detail::BestSplit split =
          slice.depth < cfg.max_depth
              ? detail::scan_node(slice, n_features, x, resid, cfg.min_leaf)
              : detail::BestSplit{};
      if (!split.found) {
        double sum = 0.0;
        for (std::uint32_t i : slice.order[0]) sum += resid[i];
        nd.value = sum / static_cast<double>(slice.order[0].size());
        for (std::uint32_t i : slice.order[0]) leaf_of[i] = slice.node;
        continue;
      }

      nd.feature = static_cast<std::int8_t>(split.feature);
      nd.threshold = split.threshold;
      detail::NodeSlice left, right;
      left.depth = right.depth = slice.depth + 1;
      for (int f = 0; f < n_features; ++f) {
        for (std::uint32_t i : slice.order[f]) {
          if (x[i][split.feature] <= split.threshold)
            left.order[f].push_back(i);
          else
            right.order[f].push_back(i);
        }
      }
      nd.left = static_cast<std::int16_t>(tree.nodes.size());
      nd.right = static_cast<std::int16_t>(tree.nodes.size() + 1);
      left.node = nd.left;
      right.node = nd.right;
      tree.nodes.emplace_back();
      tree.nodes.emplace_back();
      open.push_back(std::move(right));
      open.push_back(std::move(left));
    }

    // Shrunken step toward the leaf means; leaf assignment was recorded
    // during partitioning and agrees with predict() because both use x <=
    // threshold.
    for (std::size_t i = 0; i < n; ++i)
      resid[i] -= cfg.learning_rate * tree.nodes[leaf_of[i]].value;
    model.trees.push_back(std::move(tree));

    if (train_mse) {
      double sse = 0.0;
      for (double v : resid) sse += v * v;
      train_mse->push_back(sse / static_cast<double>(n));
    }
  }
  return model;
}

}  // namespace platsim
