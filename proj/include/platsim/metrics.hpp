#pragma once

// Collusion metrics: the per-platform collusive level, its average across the
// two platforms for asymmetric profiles, the exhaustive grid maximum of that
// average, and percentile bootstrap confidence intervals.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <vector>

#include "platsim/errors.hpp"
#include "platsim/grid.hpp"
#include "platsim/market.hpp"
#include "platsim/qlearn.hpp"
#include "platsim/rng.hpp"

namespace platsim {

// Position of a profit between the competitive (0) and collusive (1) anchors.
// Not clamped; asymmetric play can push it above 1.
inline double collusive_level(double pi_t, double pi_star, double pi_coll) {
  double denom = pi_coll - pi_star;
  if (std::abs(denom) < 1e-8) throw DegenerateDenominator(denom);
  return (pi_t - pi_star) / denom;
}

struct CollusionSummary {
  double delta_tilde = 0.0;
  std::array<double, 2> platform_mean{0.0, 0.0};
  double denominator = 0.0;
  bool degenerate = false;
  bool exceeded_one = false;  // any recorded per-step level above 1
};

inline CollusionSummary summarize_run(const RunResult& r, double pi_star,
                                      double pi_coll) {
  CollusionSummary s;
  s.denominator = pi_coll - pi_star;
  s.degenerate = std::abs(s.denominator) < 1e-8;
  s.delta_tilde = r.delta_tilde;
  for (int i = 0; i < 2; ++i) {
    double sum = 0.0;
    for (double d : r.delta_trace[i]) {
      sum += d;
      s.exceeded_one = s.exceeded_one || d > 1.0;
    }
    s.platform_mean[i] = r.delta_trace[i].empty() ? 0.0 : sum / r.delta_trace[i].size();
  }
  return s;
}

// Collusive level averaged over the two platforms at an arbitrary profile:
// (total profit - 2 pi*) / (2 (piC - pi*)), which equals the mean of the two
// per-platform levels.
inline double averaged_delta(const PriceProfile& prices, const EquilibriumPair& eq,
                             const MarketParams& params,
                             const ShareSolveOptions& opts = {}) {
  double denom = eq.coll.profit - eq.nash.profit;
  if (std::abs(denom) < 1e-8) throw DegenerateDenominator(denom);
  double total = asymmetric_total_profit(prices, params, opts);
  double n = static_cast<double>(params.n_platforms);
  return (total - n * eq.nash.profit) / (n * denom);
}

struct GridMax {
  double value = 0.0;
  std::uint32_t a1 = 0;  // argmax joint actions, lexicographically smallest
  std::uint32_t a2 = 0;
  Sides price1, price2;
};

// Exhaustive scan over a prebuilt profit table. Lexicographic iteration with
// a strict improvement test lands on the lexicographically smallest argmax.
// The platform-swap twin of each profile carries an equal level, so a pruned
// scan could halve the loop, but the full scan keeps the exhaustiveness
// property exact (twin entries come from independent solves and can differ in
// the last ulp) and is negligible next to building the table.
inline GridMax max_averaged_delta_scan(const ProfitTable& table, const PriceGrid& grid,
                                       double pi_star, double pi_coll) {
  double denom = pi_coll - pi_star;
  if (std::abs(denom) < 1e-8) throw DegenerateDenominator(denom);
  const int mm = grid.m * grid.m;
  GridMax best;
  best.value = -std::numeric_limits<double>::infinity();
  for (int a1 = 0; a1 < mm; ++a1) {
    for (int a2 = 0; a2 < mm; ++a2) {
      std::size_t idx = static_cast<std::size_t>(a1) * mm + a2;
      double v = (table.pi[0][idx] + table.pi[1][idx] - 2.0 * pi_star) / (2.0 * denom);
      if (v > best.value) {
        best.value = v;
        best.a1 = static_cast<std::uint32_t>(a1);
        best.a2 = static_cast<std::uint32_t>(a2);
      }
    }
  }
  best.price1 = grid.action_prices(best.a1);
  best.price2 = grid.action_prices(best.a2);
  return best;
}

inline GridMax max_averaged_delta(const MarketParams& params, const EquilibriumPair& eq,
                                  const PriceGrid& grid,
                                  const ShareSolveOptions& opts = {}) {
  ProfitTable table = ProfitTable::build(grid, params, opts);
  return max_averaged_delta_scan(table, grid, eq.nash.profit, eq.coll.profit);
}

struct BootstrapCi {
  double lo = 0.0;
  double hi = 0.0;
};

namespace detail {

inline double quantile_sorted(const std::vector<double>& sorted, double q) {
  double pos = q * static_cast<double>(sorted.size() - 1);
  std::size_t i = static_cast<std::size_t>(pos);
  double f = pos - static_cast<double>(i);
  return i + 1 < sorted.size() ? sorted[i] * (1.0 - f) + sorted[i + 1] * f
                               : sorted.back();
}

}  // namespace detail

// Percentile bootstrap CI for the mean. level = 0 degenerates to the
// bootstrap median (both endpoints at the 0.5 quantile).
inline BootstrapCi bootstrap_ci(const std::vector<double>& samples, double level,
                                int resamples, Rng& rng) {
  if (samples.empty()) throw EmptySample();
  if (!(level >= 0.0) || level >= 1.0)
    throw ConfigError("bootstrap/level", "must be in [0,1)");
  if (resamples < 1) throw ConfigError("bootstrap/resamples", "must be >= 1");
  const std::size_t n = samples.size();
  std::vector<double> means(resamples);
  for (int r = 0; r < resamples; ++r) {
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      sum += samples[rng.uniform_below(static_cast<std::uint32_t>(n))];
    means[r] = sum / static_cast<double>(n);
  }
  std::sort(means.begin(), means.end());
  double q_lo = (1.0 - level) / 2.0;
  return {detail::quantile_sorted(means, q_lo),
          detail::quantile_sorted(means, 1.0 - q_lo)};
}

}  // namespace platsim
