#pragma once

// Tabular Q-learning over the discrete price grid. Two independent learners
// (one per platform) share a state: the previous joint action (a1, a2). Each
// period both draw an action from a Boltzmann policy with a decaying
// temperature, collect the static-market profit of the joint profile, and
// update their own table.
//
// All profits on the grid are precomputed once into a ProfitTable; the hot
// loop never solves the share fixed point.

#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "platsim/errors.hpp"
#include "platsim/grid.hpp"
#include "platsim/market.hpp"
#include "platsim/rng.hpp"

namespace platsim {

struct QTable {
  int m = 0;
  std::vector<double> v;  // [state * m^2 + action], m^4 rows

  static QTable zeros(int m) {
    QTable q;
    q.m = m;
    q.v.assign(static_cast<std::size_t>(m) * m * m * m * m * m, 0.0);
    return q;
  }
  int n_actions() const { return m * m; }
  std::uint32_t n_states() const { return static_cast<std::uint32_t>(m) * m * m * m; }
  double* row(std::uint32_t s) { return v.data() + static_cast<std::size_t>(s) * n_actions(); }
  const double* row(std::uint32_t s) const {
    return v.data() + static_cast<std::size_t>(s) * n_actions();
  }
};

// Per-platform profits for every joint action profile, solved once up front.
// Entries are exactly what a fresh cold-start solve returns; nothing is
// filled in by symmetry, so memoization is bit-exact by construction.
struct ProfitTable {
  int m = 0;
  std::array<std::vector<double>, 2> pi;  // [platform][a1 * m^2 + a2]

  double at(int platform, std::uint32_t a1, std::uint32_t a2) const {
    return pi[platform][static_cast<std::size_t>(a1) * (m * m) + a2];
  }

  static ProfitTable build(const PriceGrid& grid, const MarketParams& params,
                           const ShareSolveOptions& opts = {}) {
    if (params.n_platforms != 2)
      throw ConfigError("market/n_platforms", "learning layer supports exactly 2 platforms");
    ProfitTable t;
    t.m = grid.m;
    const int mm = grid.m * grid.m;
    t.pi[0].resize(static_cast<std::size_t>(mm) * mm);
    t.pi[1].resize(static_cast<std::size_t>(mm) * mm);
    PriceProfile prices(2);
    for (int a1 = 0; a1 < mm; ++a1) {
      prices[0] = grid.action_prices(a1);
      for (int a2 = 0; a2 < mm; ++a2) {
        prices[1] = grid.action_prices(a2);
        Shares sh;
        try {
          sh = solve_shares(prices, params, opts);
        } catch (const NonConvergence& e) {
          throw NonConvergence("profit table profile (" + std::to_string(a1) + "," +
                                   std::to_string(a2) + "): " + e.what(),
                               e.iterations, e.residual);
        }
        std::size_t idx = static_cast<std::size_t>(a1) * mm + a2;
        t.pi[0][idx] = platform_profit(prices[0], sh.platform[0]);
        t.pi[1][idx] = platform_profit(prices[1], sh.platform[1]);
      }
    }
    return t;
  }
};

enum class UpdateTarget {
  next_state,   // bootstrap from the state just created by the joint play
  literal_eq9,  // bootstrap from the current state's own row
};

struct LearningConfig {
  double alpha = 0.15;
  double delta = 0.05;        // discount factor
  int m = 15;
  double grid_eps = 0.1;
  std::int64_t t_steps = 2000000;
  std::int64_t k_report = 1000;   // trailing window entering the collusion index
  std::int64_t tail_window = 5000;  // trailing joint actions kept for analysis
  double temp0 = 0.0;             // 0 = derive from delta
  double lambda = 0.0;            // 0 = derive from t_steps
  double temp_floor = 1e-6;
  double rho = 0.0;               // price-dominance penalty weight
  UpdateTarget update_target = UpdateTarget::next_state;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(alpha > 0.0) || alpha > 1.0) throw ConfigError("learning/alpha", "must be in (0,1]");
    if (!(delta >= 0.0) || delta >= 1.0) throw ConfigError("learning/delta", "must be in [0,1)");
    if (m < 2 || m > 255) throw ConfigError("learning/m", "must be in [2,255]");
    if (!(grid_eps >= 0.0)) throw ConfigError("learning/grid_eps", "must be >= 0");
    if (t_steps < 1) throw ConfigError("learning/t_steps", "must be >= 1");
    if (k_report < 1 || k_report > t_steps)
      throw ConfigError("learning/k_report", "must be in [1, t_steps]");
    if (tail_window < 1) throw ConfigError("learning/tail_window", "must be >= 1");
    if (temp0 < 0.0) throw ConfigError("learning/temp0", "must be >= 0 (0 = auto)");
    if (lambda < 0.0 || lambda > 1.0)
      throw ConfigError("learning/lambda", "must be in [0,1] (0 = auto)");
    if (!(temp_floor > 0.0)) throw ConfigError("learning/temp_floor", "must be > 0");
    if (rho < 0.0) throw ConfigError("learning/rho", "must be >= 0");
  }
};

// Initial temperature tied to the reward scale of the discounted game.
inline double default_temp0(double delta) { return 1000.0 / (1.0 - delta); }

inline constexpr double kPaperLambda = 1.0 - 1e-7;
inline constexpr std::int64_t kPaperSteps = 500000000;

// Decay rate that makes a shorter run traverse the same temperature envelope
// as the full-length schedule: lambda^t_steps = kPaperLambda^kPaperSteps.
inline double rescaled_lambda(std::int64_t t_steps) {
  double log_total = static_cast<double>(kPaperSteps) * std::log1p(-1e-7);
  return std::exp(log_total / static_cast<double>(t_steps));
}

// Fills in temp0/lambda when left at 0. Call before running.
inline LearningConfig resolved(LearningConfig cfg) {
  if (cfg.temp0 == 0.0) cfg.temp0 = default_temp0(cfg.delta);
  if (cfg.lambda == 0.0)
    cfg.lambda = cfg.t_steps == kPaperSteps ? kPaperLambda : rescaled_lambda(cfg.t_steps);
  return cfg;
}

inline double temperature(std::int64_t t, const LearningConfig& cfg) {
  return std::max(cfg.temp0 * std::pow(cfg.lambda, static_cast<double>(t)),
                  cfg.temp_floor);
}

// Draws an action from the Boltzmann distribution over the state's Q row.
// At the temperature floor (exploration spent) this degenerates to a uniform
// draw over the exact argmax set. Exactly one RNG draw is consumed per call.
// Terms with (q - max)/temp below -40 are dropped from the softmax; their
// total weight is under 1e-15 of the sum.
inline std::uint32_t boltzmann_sample(const QTable& q, std::uint32_t s, double temp,
                                      const LearningConfig& cfg, Rng& rng) {
  const int na = q.n_actions();
  const double* row = q.row(s);
  double qmax = row[0];
  for (int a = 1; a < na; ++a) qmax = std::max(qmax, row[a]);

  if (temp <= cfg.temp_floor) {
    int ties = 0;
    for (int a = 0; a < na; ++a) ties += (row[a] == qmax);
    std::uint32_t pick = rng.uniform_below(static_cast<std::uint32_t>(ties));
    for (int a = 0; a < na; ++a) {
      if (row[a] == qmax && pick-- == 0) return static_cast<std::uint32_t>(a);
    }
    return static_cast<std::uint32_t>(na - 1);  // unreachable
  }

  static thread_local std::vector<double> w;
  w.resize(na);
  double sum = 0.0;
  for (int a = 0; a < na; ++a) {
    double z = (row[a] - qmax) / temp;
    w[a] = z > -40.0 ? std::exp(z) : 0.0;
    sum += w[a];
  }
  double u = rng.uniform() * sum;
  double cum = 0.0;
  for (int a = 0; a < na; ++a) {
    cum += w[a];
    if (u < cum) return static_cast<std::uint32_t>(a);
  }
  return static_cast<std::uint32_t>(na - 1);  // rounding fell off the end
}

inline double row_max(const QTable& q, std::uint32_t s) {
  const double* row = q.row(s);
  double best = row[0];
  for (int a = 1; a < q.n_actions(); ++a) best = std::max(best, row[a]);
  return best;
}

// One tabular update toward reward + delta * max of the bootstrap row.
inline void q_update(QTable& q, std::uint32_t s, std::uint32_t a, double reward,
                     std::uint32_t s_next, const LearningConfig& cfg) {
  std::uint32_t boot = cfg.update_target == UpdateTarget::next_state ? s_next : s;
  double target = reward + cfg.delta * row_max(q, boot);
  double& cell = q.row(s)[a];
  cell = (1.0 - cfg.alpha) * cell + cfg.alpha * target;
}

// Update with the price-dominance penalty: pricing above the across-platform
// mean on either side is fined inside the learning target (the realized
// profit is untouched).
inline void q_update_penalized(QTable& q, std::uint32_t s, std::uint32_t a, double reward,
                               std::uint32_t s_next, const Sides& own_price,
                               const Sides& mean_price, const LearningConfig& cfg) {
  std::uint32_t boot = cfg.update_target == UpdateTarget::next_state ? s_next : s;
  double pen = cfg.rho * (std::max(own_price.b - mean_price.b, 0.0) +
                          std::max(own_price.s - mean_price.s, 0.0));
  double target = (reward - pen) + cfg.delta * row_max(q, boot);
  double& cell = q.row(s)[a];
  cell = (1.0 - cfg.alpha) * cell + cfg.alpha * target;
}

// Optimistic-ish start: value of playing `a` forever against the opponent
// part of the state, discounted to the horizon.
inline QTable init_q(const ProfitTable& table, int platform, double delta) {
  QTable q = QTable::zeros(table.m);
  const int mm = table.m * table.m;
  // Plain division, not reciprocal multiplication: the contract is exact
  // equality with pi / (1 - delta).
  const double den = 1.0 - delta;
  for (std::uint32_t s = 0; s < q.n_states(); ++s) {
    std::uint32_t a1 = s / mm, a2 = s % mm;
    double* row = q.row(s);
    if (platform == 0) {
      for (int a = 0; a < mm; ++a) row[a] = table.at(0, a, a2) / den;
    } else {
      for (int a = 0; a < mm; ++a) row[a] = table.at(1, a1, a) / den;
    }
  }
  return q;
}

struct RunResult {
  double delta_tilde = 0.0;
  std::array<std::vector<double>, 2> delta_trace;       // last k_report steps
  std::vector<std::array<std::uint16_t, 2>> tail;       // last tail_window joint actions
  std::array<QTable, 2> q;
  std::uint64_t seed = 0;
  double wall_ms = 0.0;
};

// One full learning run on a prebuilt grid/profit table. pi_star and pi_coll
// are the per-platform competitive and collusive anchor profits.
inline RunResult run_simulation_with(const PriceGrid& grid, const ProfitTable& table,
                                     double pi_star, double pi_coll,
                                     const LearningConfig& cfg_in) {
  LearningConfig cfg = resolved(cfg_in);
  cfg.validate();
  if (grid.m != cfg.m) throw ShapeMismatch("grid M does not match learning config M");
  const double denom = pi_coll - pi_star;
  if (std::abs(denom) < 1e-8) throw DegenerateDenominator(denom);

  auto t_begin = std::chrono::steady_clock::now();
  const int mm = grid.m * grid.m;
  Rng rng(cfg.seed);

  RunResult out;
  out.seed = cfg.seed;
  out.q[0] = init_q(table, 0, cfg.delta);
  out.q[1] = init_q(table, 1, cfg.delta);

  const std::int64_t k_from = cfg.t_steps - cfg.k_report;
  const std::int64_t w_from = std::max<std::int64_t>(0, cfg.t_steps - cfg.tail_window);
  out.delta_trace[0].reserve(cfg.k_report);
  out.delta_trace[1].reserve(cfg.k_report);
  out.tail.reserve(cfg.t_steps - w_from);

  std::uint32_t a1 = rng.uniform_below(mm);
  std::uint32_t a2 = rng.uniform_below(mm);
  std::uint32_t s = state_flat(a1, a2, grid.m);

  // Once the schedule hits the floor it never leaves; skip the pow.
  bool floored = false;
  double dsum = 0.0;
  for (std::int64_t t = 0; t < cfg.t_steps; ++t) {
    double temp = cfg.temp_floor;
    if (!floored) {
      temp = temperature(t, cfg);
      floored = temp <= cfg.temp_floor;
    }
    a1 = boltzmann_sample(out.q[0], s, temp, cfg, rng);
    a2 = boltzmann_sample(out.q[1], s, temp, cfg, rng);
    std::uint32_t s_next = state_flat(a1, a2, grid.m);
    double r1 = table.at(0, a1, a2);
    double r2 = table.at(1, a1, a2);

    if (cfg.rho != 0.0) {
      Sides p1 = grid.action_prices(a1);
      Sides p2 = grid.action_prices(a2);
      Sides mean{0.5 * (p1.b + p2.b), 0.5 * (p1.s + p2.s)};
      q_update_penalized(out.q[0], s, a1, r1, s_next, p1, mean, cfg);
      q_update_penalized(out.q[1], s, a2, r2, s_next, p2, mean, cfg);
    } else {
      q_update(out.q[0], s, a1, r1, s_next, cfg);
      q_update(out.q[1], s, a2, r2, s_next, cfg);
    }

    if (t >= k_from) {
      double d1 = (r1 - pi_star) / denom;
      double d2 = (r2 - pi_star) / denom;
      out.delta_trace[0].push_back(d1);
      out.delta_trace[1].push_back(d2);
      dsum += d1 + d2;
    }
    if (t >= w_from)
      out.tail.push_back({static_cast<std::uint16_t>(a1), static_cast<std::uint16_t>(a2)});
    s = s_next;
  }
  out.delta_tilde = dsum / (2.0 * cfg.k_report);
  out.wall_ms = std::chrono::duration<double, std::milli>(
                    std::chrono::steady_clock::now() - t_begin)
                    .count();
  return out;
}

// Convenience entry: builds the grid and profit table from the equilibrium
// anchors first. Sweeps reuse one table across runs via run_simulation_with.
inline RunResult run_simulation(const MarketParams& params, const EquilibriumPair& eq,
                                const LearningConfig& cfg) {
  PriceGrid grid = PriceGrid::build(eq, cfg.grid_eps, cfg.m);
  ProfitTable table = ProfitTable::build(grid, params);
  return run_simulation_with(grid, table, eq.nash.profit, eq.coll.profit, cfg);
}

}  // namespace platsim
