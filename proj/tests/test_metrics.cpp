#include "platsim/metrics.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <vector>

namespace {

using namespace platsim;

const EquilibriumPair& default_eq() {
  static EquilibriumPair eq = solve_equilibria(MarketParams{});
  return eq;
}

TEST(CollusiveLevel, Anchors) {
  double ps = 1.19, pc = 1.37;
  EXPECT_EQ(collusive_level(ps, ps, pc), 0.0);
  EXPECT_EQ(collusive_level(pc, ps, pc), 1.0);
  EXPECT_NEAR(collusive_level(0.5 * (ps + pc), ps, pc), 0.5, 1e-12);
  EXPECT_GT(collusive_level(pc + 0.1, ps, pc), 1.0);
}

TEST(CollusiveLevel, AffineInvariance) {
  Rng rng(5);
  for (int rep = 0; rep < 200; ++rep) {
    double ps = rng.uniform(), pc = ps + 0.5 + rng.uniform(), pi = rng.uniform() * 4 - 1;
    for (double a : {2.5, -1.3}) {
      double b = 0.7;
      double lhs = collusive_level(a * pi + b, a * ps + b, a * pc + b);
      double rhs = collusive_level(pi, ps, pc);
      EXPECT_NEAR(lhs, rhs, 1e-12 * std::max(1.0, std::abs(rhs)));
    }
  }
}

TEST(CollusiveLevel, DegenerateGapThrows) {
  EXPECT_THROW(collusive_level(1.0, 2.0, 2.0 + 1e-9), DegenerateDenominator);
}

TEST(AveragedDelta, AnchorsAndIdentity) {
  MarketParams mp;
  const EquilibriumPair& eq = default_eq();
  EXPECT_NEAR(averaged_delta(PriceProfile(2, eq.coll.price), eq, mp), 1.0, 1e-10);
  EXPECT_NEAR(averaged_delta(PriceProfile(2, eq.nash.price), eq, mp), 0.0, 1e-10);

  Rng rng(9);
  for (int rep = 0; rep < 30; ++rep) {
    PriceProfile prices(2);
    for (auto& p : prices) p = {rng.uniform() * 3.0, rng.uniform() * 3.0};
    double avg = averaged_delta(prices, eq, mp);
    std::vector<double> pi = profile_profits(prices, mp);
    double d1 = collusive_level(pi[0], eq.nash.profit, eq.coll.profit);
    double d2 = collusive_level(pi[1], eq.nash.profit, eq.coll.profit);
    EXPECT_NEAR(avg, 0.5 * (d1 + d2), 1e-12);
  }
}

// Independent brute force over all M^4 profiles on a tiny grid.
TEST(MaxAveragedDelta, MatchesTinyBruteForce) {
  MarketParams mp;
  const EquilibriumPair& eq = default_eq();
  PriceGrid grid = PriceGrid::build(eq, 0.1, 3);
  GridMax got = max_averaged_delta(mp, eq, grid);

  double best = -1e300;
  std::uint32_t b1 = 0, b2 = 0;
  for (std::uint32_t a1 = 0; a1 < 9; ++a1)
    for (std::uint32_t a2 = 0; a2 < 9; ++a2) {
      PriceProfile prices{grid.action_prices(a1), grid.action_prices(a2)};
      double v = averaged_delta(prices, eq, mp);
      if (v > best) {
        best = v;
        b1 = a1;
        b2 = a2;
      }
    }
  EXPECT_DOUBLE_EQ(got.value, best);
  EXPECT_EQ(got.a1, b1);
  EXPECT_EQ(got.a2, b2);
}

TEST(MaxAveragedDelta, DominatesEveryProfile) {
  MarketParams mp;
  mp.phi = {0.5, 0.0, 0.0, 0.5};
  EquilibriumPair eq = solve_equilibria(mp);
  PriceGrid grid = PriceGrid::build(eq, 0.1, 5);
  GridMax got = max_averaged_delta(mp, eq, grid);
  for (std::uint32_t a1 = 0; a1 < 25; ++a1)
    for (std::uint32_t a2 = 0; a2 < 25; ++a2) {
      PriceProfile prices{grid.action_prices(a1), grid.action_prices(a2)};
      EXPECT_GE(got.value, averaged_delta(prices, eq, mp));
    }
}

TEST(MaxAveragedDelta, TieBreaksToLexSmallest) {
  ProfitTable table;
  table.m = 3;
  table.pi[0].assign(81, 0.75);
  table.pi[1].assign(81, 0.75);
  PriceGrid grid;
  grid.m = 3;
  grid.b = {1.0, 2.0, 3.0};
  grid.s = {1.0, 2.0, 3.0};
  GridMax got = max_averaged_delta_scan(table, grid, 0.5, 1.0);
  EXPECT_EQ(got.a1, 0u);
  EXPECT_EQ(got.a2, 0u);
  EXPECT_DOUBLE_EQ(got.value, 0.5);  // (1.5 - 1.0) / (2 * 0.5)
}

TEST(Bootstrap, ConstantSamplesGiveDegenerateInterval) {
  Rng rng(1);
  std::vector<double> x(50, 3.25);
  BootstrapCi ci = bootstrap_ci(x, 0.95, 200, rng);
  EXPECT_EQ(ci.lo, 3.25);
  EXPECT_EQ(ci.hi, 3.25);
}

TEST(Bootstrap, LevelZeroIsMedianConvention) {
  Rng rng(2);
  std::vector<double> x{1.0, 2.0, 3.0, 4.0, 10.0};
  BootstrapCi ci = bootstrap_ci(x, 0.0, 501, rng);
  EXPECT_EQ(ci.lo, ci.hi);
}

TEST(Bootstrap, EmptySampleThrows) {
  Rng rng(3);
  std::vector<double> x;
  EXPECT_THROW(bootstrap_ci(x, 0.95, 100, rng), EmptySample);
}

TEST(Bootstrap, EndpointsMonotoneInLevel) {
  std::vector<double> x;
  Rng gen(4);
  for (int i = 0; i < 200; ++i) x.push_back(gen.normal());
  BootstrapCi prev{0.0, 0.0};
  bool first = true;
  for (double level : {0.5, 0.9, 0.99}) {
    Rng rng(42);  // same resample stream for every level
    BootstrapCi ci = bootstrap_ci(x, level, 400, rng);
    if (!first) {
      EXPECT_LE(ci.lo, prev.lo);
      EXPECT_GE(ci.hi, prev.hi);
    }
    prev = ci;
    first = false;
  }
}

TEST(Bootstrap, CoverageNearNominal) {
  Rng gen(6);
  int covered = 0;
  const int trials = 300;
  for (int t = 0; t < trials; ++t) {
    std::vector<double> x(100);
    for (double& v : x) v = gen.normal();
    Rng rng = gen.split(t + 1);
    BootstrapCi ci = bootstrap_ci(x, 0.9, 300, rng);
    covered += (ci.lo <= 0.0 && 0.0 <= ci.hi);
  }
  double rate = covered / static_cast<double>(trials);
  EXPECT_GE(rate, 0.82);
  EXPECT_LE(rate, 0.97);
}

TEST(Summary, FromRunTraces) {
  RunResult r;
  r.delta_trace[0] = {0.2, 0.4, 1.2};
  r.delta_trace[1] = {0.1, 0.3, 0.5};
  r.delta_tilde = (0.2 + 0.4 + 1.2 + 0.1 + 0.3 + 0.5) / 6.0;
  CollusionSummary s = summarize_run(r, 1.0, 1.5);
  EXPECT_NEAR(s.platform_mean[0], 0.6, 1e-15);
  EXPECT_NEAR(s.platform_mean[1], 0.3, 1e-15);
  EXPECT_TRUE(s.exceeded_one);
  EXPECT_FALSE(s.degenerate);
  EXPECT_DOUBLE_EQ(s.denominator, 0.5);

  r.delta_trace[0] = {0.2};
  r.delta_trace[1] = {0.3};
  CollusionSummary s2 = summarize_run(r, 1.0, 1.5);
  EXPECT_FALSE(s2.exceeded_one);
}

}  // namespace
