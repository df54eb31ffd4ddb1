#include "platsim/gbrt.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "platsim/errors.hpp"
#include "platsim/rng.hpp"

namespace {

using platsim::Rng;
using platsim::SmootherConfig;
using platsim::TreeSmoother;

using Rows = std::vector<std::array<double, 2>>;

double variance(const std::vector<double>& y) {
  double mean = 0.0;
  for (double v : y) mean += v;
  mean /= static_cast<double>(y.size());
  double acc = 0.0;
  for (double v : y) acc += (v - mean) * (v - mean);
  return acc / static_cast<double>(y.size());
}

// Structural equality down to the bit level, the strongest form of "same
// model" two fits can satisfy.
void expect_identical(const TreeSmoother& a, const TreeSmoother& b) {
  EXPECT_EQ(a.base, b.base);
  ASSERT_EQ(a.trees.size(), b.trees.size());
  for (std::size_t t = 0; t < a.trees.size(); ++t) {
    const auto& ta = a.trees[t].nodes;
    const auto& tb = b.trees[t].nodes;
    ASSERT_EQ(ta.size(), tb.size()) << "tree " << t;
    for (std::size_t i = 0; i < ta.size(); ++i) {
      EXPECT_EQ(ta[i].left, tb[i].left);
      EXPECT_EQ(ta[i].right, tb[i].right);
      EXPECT_EQ(ta[i].feature, tb[i].feature);
      EXPECT_EQ(ta[i].threshold, tb[i].threshold);
      EXPECT_EQ(ta[i].value, tb[i].value);
    }
  }
}

TEST(TreeSmoother, ConstantResponseIsReproducedExactly) {
  // 3.5 and all its partial sums are exactly representable, so the residuals
  // after the base subtraction are exactly zero and no split can have gain.
  Rows rows;
  std::vector<double> y;
  Rng rng(11);
  for (int i = 0; i < 50; ++i) {
    rows.push_back({rng.uniform() * 4 - 2, rng.uniform() * 4 - 2});
    y.push_back(3.5);
  }
  TreeSmoother m = TreeSmoother::fit(rows, 2, y, {.n_trees = 40});
  EXPECT_EQ(m.base, 3.5);
  for (const auto& tree : m.trees) EXPECT_EQ(tree.nodes.size(), 1u);
  for (double x = -3.0; x <= 3.0; x += 0.37)
    EXPECT_EQ(m.predict({x, -x}), 3.5);
}

TEST(TreeSmoother, ConstantResponseWithRoundingStaysClose) {
  Rows rows;
  std::vector<double> y;
  Rng rng(12);
  for (int i = 0; i < 64; ++i) {
    rows.push_back({rng.uniform(), 0.0});
    y.push_back(0.3);  // not exactly representable
  }
  TreeSmoother m = TreeSmoother::fit(rows, 1, y, {.n_trees = 100});
  for (double x = 0.0; x <= 1.0; x += 0.11)
    EXPECT_NEAR(m.predict(x), 0.3, 1e-12);
}

TEST(TreeSmoother, StepFunctionIsDrivenBelowOneThousandthOfVariance) {
  Rows rows;
  std::vector<double> y;
  for (int i = 0; i < 200; ++i) {
    double x = static_cast<double>(i) / 199.0;
    rows.push_back({x, 0.0});
    y.push_back(x < 0.5 ? -1.0 : 2.0);
  }
  std::vector<double> trace;
  TreeSmoother m =
      TreeSmoother::fit(rows, 1, y, {.n_trees = 200, .max_depth = 1}, &trace);
  ASSERT_EQ(trace.size(), 200u);
  EXPECT_LT(trace.back(), 1e-3 * variance(y));
  EXPECT_NEAR(m.predict(0.1), -1.0, 1e-6);
  EXPECT_NEAR(m.predict(0.9), 2.0, 1e-6);
}

TEST(TreeSmoother, TrainingMseNeverIncreasesWithMoreTrees) {
  Rows rows;
  std::vector<double> y;
  Rng rng(77);
  for (int i = 0; i < 150; ++i) {
    double a = rng.uniform() * 2 - 1, b = rng.uniform() * 2 - 1;
    rows.push_back({a, b});
    y.push_back(std::sin(3 * a) + 0.5 * b * b + 0.2 * rng.normal());
  }
  std::vector<double> trace;
  TreeSmoother::fit(rows, 2, y, {.n_trees = 120, .max_depth = 2}, &trace);
  ASSERT_EQ(trace.size(), 120u);
  for (std::size_t t = 1; t < trace.size(); ++t)
    EXPECT_LE(trace[t], trace[t - 1] * (1 + 1e-12)) << "tree " << t;
}

TEST(TreeSmoother, RowPermutationLeavesModelIdentical) {
  Rows rows;
  std::vector<double> y;
  Rng rng(5);
  for (int i = 0; i < 80; ++i) {
    double a = rng.uniform(), b = rng.uniform();
    rows.push_back({a, b});
    y.push_back(a * b + 0.3 * rng.normal());
  }
  // Duplicated predictor rows with distinct responses exercise the full
  // (x0, x1, y) canonical sort key.
  for (int i = 0; i < 5; ++i) {
    rows.push_back({0.25, 0.75});
    y.push_back(0.1 * i);
  }

  std::vector<std::size_t> perm(rows.size());
  for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
  Rng shuf(99);
  for (std::size_t i = perm.size() - 1; i > 0; --i)
    std::swap(perm[i], perm[shuf.uniform_below(static_cast<std::uint32_t>(i) + 1)]);
  Rows rows2(rows.size());
  std::vector<double> y2(y.size());
  for (std::size_t i = 0; i < perm.size(); ++i) {
    rows2[i] = rows[perm[i]];
    y2[i] = y[perm[i]];
  }

  SmootherConfig cfg{.n_trees = 60, .max_depth = 3};
  TreeSmoother a = TreeSmoother::fit(rows, 2, y, cfg);
  TreeSmoother b = TreeSmoother::fit(rows2, 2, y2, cfg);
  expect_identical(a, b);
}

TEST(TreeSmoother, RefitIsDeterministic) {
  Rows rows;
  std::vector<double> y;
  Rng rng(21);
  for (int i = 0; i < 60; ++i) {
    rows.push_back({rng.normal(), rng.normal()});
    y.push_back(rng.normal());
  }
  SmootherConfig cfg{.n_trees = 50, .max_depth = 3};
  expect_identical(TreeSmoother::fit(rows, 2, y, cfg),
                   TreeSmoother::fit(rows, 2, y, cfg));
}

TEST(TreeSmoother, DepthOneCannotUseSecondFeatureInteraction) {
  // Smooth product surface: stumps capture the additive part only, deeper
  // trees capture the interaction, so depth must strictly help.
  Rows rows;
  std::vector<double> y;
  for (int i = 0; i < 20; ++i)
    for (int j = 0; j < 20; ++j) {
      double a = i / 19.0 * 2 - 1, b = j / 19.0 * 2 - 1;
      rows.push_back({a, b});
      y.push_back(a * b);
    }
  std::vector<double> t1, t3;
  TreeSmoother::fit(rows, 2, y, {.n_trees = 150, .max_depth = 1}, &t1);
  TreeSmoother m3 = TreeSmoother::fit(rows, 2, y, {.n_trees = 150, .max_depth = 3}, &t3);
  EXPECT_LT(t3.back(), 0.1 * t1.back());
  EXPECT_LT(t3.back(), 1e-2 * variance(y));
  EXPECT_NEAR(m3.predict({0.9, 0.9}), 0.81, 0.15);
  EXPECT_NEAR(m3.predict({-0.9, 0.9}), -0.81, 0.15);
}

TEST(TreeSmoother, MinLeafBlocksAllSplitsOnTinySample) {
  Rows rows;
  std::vector<double> y;
  Rng rng(3);
  double sum = 0.0;
  for (int i = 0; i < 10; ++i) {
    rows.push_back({static_cast<double>(i), 0.0});
    y.push_back(rng.uniform());
    sum += y.back();
  }
  TreeSmoother m = TreeSmoother::fit(rows, 1, y, {.n_trees = 30, .min_leaf = 6});
  for (const auto& tree : m.trees) EXPECT_EQ(tree.nodes.size(), 1u);
  EXPECT_NEAR(m.predict(4.0), sum / 10.0, 1e-12);
  EXPECT_NEAR(m.predict(-100.0), sum / 10.0, 1e-12);
}

TEST(TreeSmoother, InputValidation) {
  Rows rows(12, {0.0, 0.0});
  std::vector<double> y(11, 1.0);
  EXPECT_THROW(TreeSmoother::fit(rows, 1, y), platsim::ShapeMismatch);

  Rows few(9, {0.0, 0.0});
  std::vector<double> yfew(9, 1.0);
  EXPECT_THROW(TreeSmoother::fit(few, 1, yfew), platsim::TooFewSamples);

  std::vector<double> y12(12, 1.0);
  EXPECT_THROW(TreeSmoother::fit(rows, 0, y12), platsim::ConfigError);
  EXPECT_THROW(TreeSmoother::fit(rows, 3, y12), platsim::ConfigError);
}

TEST(TreeSmoother, UnivariatePredictIgnoresSecondColumn) {
  Rows rows;
  std::vector<double> y;
  Rng rng(8);
  for (int i = 0; i < 40; ++i) {
    double a = rng.uniform();
    rows.push_back({a, rng.uniform() * 100});  // garbage second column
    y.push_back(a > 0.5 ? 1.0 : 0.0);
  }
  TreeSmoother m = TreeSmoother::fit(rows, 1, y, {.n_trees = 100});
  EXPECT_EQ(m.predict({0.9, 0.0}), m.predict({0.9, 1e9}));
  EXPECT_NEAR(m.predict(0.9), 1.0, 1e-3);
  EXPECT_NEAR(m.predict(0.1), 0.0, 1e-3);
}

}  // namespace
