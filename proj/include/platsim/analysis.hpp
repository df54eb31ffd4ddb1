#pragma once

// Post-run diagnostics: limit-cycle taxonomy of the recorded action tail,
// backward-induction best-response audits of the learned tables, deviation
// (punishment-and-return) tests, and Q-loss measures, aggregated into a
// per-category sensitivity report.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "platsim/errors.hpp"
#include "platsim/qlearn.hpp"

namespace platsim {

enum class CycleCategory { OneSym, OneAsym, C2_4, C5_8, C9plus, NoCycle };

inline const char* to_string(CycleCategory c) {
  switch (c) {
    case CycleCategory::OneSym: return "one_sym";
    case CycleCategory::OneAsym: return "one_asym";
    case CycleCategory::C2_4: return "c2_4";
    case CycleCategory::C5_8: return "c5_8";
    case CycleCategory::C9plus: return "c9_plus";
    default: return "no_cycle";
  }
}

struct CycleRecord {
  CycleCategory category = CycleCategory::NoCycle;
  int period = 0;                      // 0 when no cycle was found
  std::vector<std::uint32_t> states;   // distinct states in one cycle, sorted
};

// Greedy action of a table row, ties broken by the lowest action index so
// every diagnostic below is reproducible.
inline std::uint32_t argmax_row(const QTable& q, std::uint32_t s) {
  const double* row = q.row(s);
  std::uint32_t best = 0;
  for (int a = 1; a < q.n_actions(); ++a)
    if (row[a] > row[best]) best = static_cast<std::uint32_t>(a);
  return best;
}

// Finds the smallest p such that the last `window` joint actions repeat with
// period p, and buckets it into the taxonomy. Candidate periods stop at
// p_max; a window that matches none of them is NoCycle rather than a forced
// fit into the largest bucket.
inline CycleRecord classify_cycle(const std::vector<std::array<std::uint16_t, 2>>& tail,
                                  std::size_t window, int m, int p_max = 500) {
  if (tail.size() < window) throw TailTooShort(tail.size(), window);
  const std::size_t begin = tail.size() - window;
  const int p_cap = static_cast<int>(std::min<std::size_t>(p_max, window - 1));

  CycleRecord rec;
  for (int p = 1; p <= p_cap; ++p) {
    bool periodic = true;
    for (std::size_t i = begin; i + p < tail.size(); ++i)
      if (tail[i] != tail[i + p]) {
        periodic = false;
        break;
      }
    if (!periodic) continue;
    rec.period = p;
    const auto& last = tail.back();
    if (p == 1)
      rec.category = last[0] == last[1] ? CycleCategory::OneSym : CycleCategory::OneAsym;
    else if (p <= 4)
      rec.category = CycleCategory::C2_4;
    else if (p <= 8)
      rec.category = CycleCategory::C5_8;
    else
      rec.category = CycleCategory::C9plus;
    for (std::size_t i = tail.size() - p; i < tail.size(); ++i)
      rec.states.push_back(state_flat(tail[i][0], tail[i][1], m));
    std::sort(rec.states.begin(), rec.states.end());
    rec.states.erase(std::unique(rec.states.begin(), rec.states.end()), rec.states.end());
    return rec;
  }
  return rec;
}

// One-shot payoff of platform 1 when the opponent answers every state with
// the greedy action of its final table. This is both the seed of the
// backward induction and the "one-step" reference table on its own.
inline QTable best_response_seed(const QTable& q_opponent, const ProfitTable& table) {
  if (q_opponent.m != table.m)
    throw ShapeMismatch("best_response_seed: table sizes disagree");
  const int m = table.m;
  const int na = m * m;
  QTable seed = QTable::zeros(m);
  for (std::uint32_t x = 0; x < seed.n_states(); ++x) {
    std::uint32_t reply = argmax_row(q_opponent, x);
    double* row = seed.row(x);
    for (int p = 0; p < na; ++p)
      row[p] = table.at(0, static_cast<std::uint32_t>(p), reply);
  }
  return seed;
}

// Finite-horizon best response of platform 1 against the frozen greedy policy
// of the opponent's final table: seed with the one-shot payoff, then walk the
// recursion horizon steps back to the present. Only the per-state row maxima
// of each level feed the next one, so levels live in a pair of state-sized
// vectors and the full table is materialized once at the end.
inline QTable best_response_q(const QTable& q_opponent, const ProfitTable& table,
                              double delta, int horizon) {
  QTable seed = best_response_seed(q_opponent, table);
  if (horizon <= 0 || delta == 0.0) return seed;

  const int m = table.m;
  const int na = m * m;
  const std::uint32_t ns = seed.n_states();

  // reply[x] and the successor state x' = (p, reply[x]) reused at every level
  std::vector<std::uint32_t> reply(ns);
  for (std::uint32_t x = 0; x < ns; ++x) reply[x] = argmax_row(q_opponent, x);

  // value[x] = max_p Q^(level)(p, x), starting at level = horizon (the seed)
  std::vector<double> value(ns), next(ns);
  for (std::uint32_t x = 0; x < ns; ++x) value[x] = row_max(seed, x);
  for (int level = horizon; level > 1; --level) {
    for (std::uint32_t x = 0; x < ns; ++x) {
      const double* srow = seed.row(x);
      double best = -std::numeric_limits<double>::infinity();
      for (int p = 0; p < na; ++p) {
        std::uint32_t succ = state_flat(static_cast<std::uint32_t>(p), reply[x], m);
        best = std::max(best, srow[p] + delta * value[succ]);
      }
      next[x] = best;
    }
    value.swap(next);
  }

  QTable q0 = QTable::zeros(m);
  for (std::uint32_t x = 0; x < ns; ++x) {
    const double* srow = seed.row(x);
    double* row = q0.row(x);
    for (int p = 0; p < na; ++p) {
      std::uint32_t succ = state_flat(static_cast<std::uint32_t>(p), reply[x], m);
      row[p] = srow[p] + delta * value[succ];
    }
  }
  return q0;
}

// Convenience overload that builds the profit memo for callers that do not
// hold one already.
inline QTable best_response_q(const QTable& q_opponent, const MarketParams& params,
                              const PriceGrid& grid, double delta, int horizon,
                              const ShareSolveOptions& opts = {}) {
  ProfitTable table = ProfitTable::build(grid, params, opts);
  return best_response_q(q_opponent, table, delta, horizon);
}

enum class NeighborRule { chebyshev, manhattan };

// Fraction of the given states where the greedy actions of the learned table
// and of the reference table coincide or sit next to each other on the price
// grid. "Next to" means both coordinates of the (j_b, j_s) action pair are
// within one grid step (Chebyshev); the Manhattan variant is stricter.
inline double state_match_fraction(const QTable& q_final, const QTable& q_ref,
                                   const std::vector<std::uint32_t>& states,
                                   NeighborRule rule = NeighborRule::chebyshev) {
  if (q_final.m != q_ref.m)
    throw ShapeMismatch("state_match_fraction: table sizes disagree");
  if (states.empty()) throw EmptySample();
  const int m = q_final.m;
  int hits = 0;
  for (std::uint32_t x : states) {
    auto [fb, fs] = action_split(argmax_row(q_final, x), m);
    auto [rb, rs] = action_split(argmax_row(q_ref, x), m);
    int db = std::abs(fb - rb), ds = std::abs(fs - rs);
    int dist = rule == NeighborRule::chebyshev ? std::max(db, ds) : db + ds;
    if (dist <= 1) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(states.size());
}

enum class DeviationMode { one, both };

// Punishment-and-return probe: from the state the run ended in, force the
// deviator(s) onto the grid point nearest the competitive price (ties to the
// lower index, matching PriceGrid::snap) while everyone else answers
// greedily, then let both tables play greedily for `steps` rounds. True iff
// play has folded back into the detected cycle. Platform 1 deviates in mode
// `one`.
inline bool deviation_test(const QTable& q1, const QTable& q2, const EquilibriumPair& eq,
                           const PriceGrid& grid, const CycleRecord& cycle,
                           std::uint32_t last_state, DeviationMode mode, int steps = 100) {
  const int m = grid.m;
  std::uint32_t nash = action_flat(PriceGrid::snap(grid.b, eq.nash.price.b),
                                   PriceGrid::snap(grid.s, eq.nash.price.s), m);
  std::uint32_t a1 = nash;
  std::uint32_t a2 = mode == DeviationMode::both ? nash : argmax_row(q2, last_state);
  std::uint32_t s = state_flat(a1, a2, m);
  for (int t = 0; t < steps; ++t) {
    a1 = argmax_row(q1, s);
    a2 = argmax_row(q2, s);
    s = state_flat(a1, a2, m);
  }
  return std::binary_search(cycle.states.begin(), cycle.states.end(), s);
}

// Mean absolute gap, over the states of one cycle, between the reward
// platform 1 actually collects over the next `horizon` discounted steps and
// the value its backward-induction best response promises. The recorded tail
// supplies the realized rewards; when the window runs out, greedy replay of
// the final tables extends it. The state preceding the first tail entry is
// recovered by periodic extension of the cycle.
inline double q_loss_on_path(const std::vector<std::array<std::uint16_t, 2>>& tail,
                             const CycleRecord& cycle, const ProfitTable& table,
                             const QTable& q1, const QTable& q2, const QTable& q_br,
                             double delta, int horizon = 100) {
  const int p = cycle.period;
  if (p <= 0) throw TailTooShort(tail.size(), 1);
  if (tail.size() < static_cast<std::size_t>(p))
    throw TailTooShort(tail.size(), static_cast<std::size_t>(p));
  const int m = table.m;
  const std::size_t n_terms = cycle.states.size();
  const std::size_t need = n_terms + static_cast<std::size_t>(horizon);

  std::vector<double> reward(need + 1);
  std::uint32_t replay = state_flat(tail.back()[0], tail.back()[1], m);
  for (std::size_t j = 0; j <= need; ++j) {
    if (j < tail.size()) {
      reward[j] = table.at(0, tail[j][0], tail[j][1]);
    } else {
      std::uint32_t a1 = argmax_row(q1, replay);
      std::uint32_t a2 = argmax_row(q2, replay);
      reward[j] = table.at(0, a1, a2);
      replay = state_flat(a1, a2, m);
    }
  }

  double loss = 0.0;
  for (std::size_t j = 0; j < n_terms; ++j) {
    double v = 0.0;
    for (int tau = horizon; tau >= 0; --tau) v = reward[j + tau] + delta * v;
    const auto& prev = j == 0 ? tail[p - 1] : tail[j - 1];
    std::uint32_t x = state_flat(prev[0], prev[1], m);
    loss += std::abs(v - row_max(q_br, x));
  }
  return loss / static_cast<double>(n_terms);
}

// Mean absolute gap between the row maxima of two tables over all states.
inline double q_loss_all_states(const QTable& q_final, const QTable& q_br) {
  if (q_final.m != q_br.m || q_final.v.size() != q_br.v.size())
    throw ShapeMismatch("q_loss_all_states: table sizes disagree");
  double acc = 0.0;
  for (std::uint32_t x = 0; x < q_final.n_states(); ++x)
    acc += std::abs(row_max(q_final, x) - row_max(q_br, x));
  return acc / static_cast<double>(q_final.n_states());
}

struct AnalysisOptions {
  int br_horizon = 10;       // backward-induction depth
  int path_horizon = 100;    // discounted reward window of the on-path loss
  int deviation_steps = 100; // greedy steps before checking for return
  int p_max = 500;           // largest period the classifier searches
  NeighborRule rule = NeighborRule::chebyshev;
};

// Everything the report needs from one finished run. Cycle-dependent fields
// are absent when no cycle was detected.
struct RunAnalysis {
  CycleRecord cycle;
  double delta_tilde = 0.0;
  std::optional<double> y_eq;
  std::optional<double> y_one;
  std::optional<bool> returns_one;
  std::optional<bool> returns_both;
  std::optional<double> loss_path;
  double loss_all = 0.0;
};

inline RunAnalysis analyze_run(const RunResult& run, const PriceGrid& grid,
                               const ProfitTable& table, const EquilibriumPair& eq,
                               const LearningConfig& cfg, const AnalysisOptions& opts = {}) {
  RunAnalysis out;
  out.delta_tilde = run.delta_tilde;
  out.cycle = classify_cycle(run.tail, run.tail.size(), grid.m, opts.p_max);

  QTable seed = best_response_seed(run.q[1], table);
  QTable q_br = best_response_q(run.q[1], table, cfg.delta, opts.br_horizon);
  out.loss_all = q_loss_all_states(run.q[0], q_br);

  if (out.cycle.period > 0) {
    out.y_eq = state_match_fraction(run.q[0], q_br, out.cycle.states, opts.rule);
    out.y_one = state_match_fraction(run.q[0], seed, out.cycle.states, opts.rule);
    std::uint32_t last = state_flat(run.tail.back()[0], run.tail.back()[1], grid.m);
    out.returns_one = deviation_test(run.q[0], run.q[1], eq, grid, out.cycle, last,
                                     DeviationMode::one, opts.deviation_steps);
    out.returns_both = deviation_test(run.q[0], run.q[1], eq, grid, out.cycle, last,
                                      DeviationMode::both, opts.deviation_steps);
    out.loss_path = q_loss_on_path(run.tail, out.cycle, table, run.q[0], run.q[1],
                                   q_br, cfg.delta, opts.path_horizon);
  }
  return out;
}

// One column of the report: count plus mean/spread cells, each absent until
// at least one observation lands in it.
struct CategoryStats {
  int count = 0;
  std::optional<double> freq;
  std::optional<double> avg_delta, sd_delta;
  std::optional<double> freq_eq, freq_one_step_eq;
  std::optional<double> freq_return_one, freq_return_both;
  std::optional<double> avg_loss_path, sd_loss_path;
  std::optional<double> avg_loss_all, sd_loss_all;
};

struct SensitivityReport {
  std::array<CategoryStats, 6> category;  // indexed by CycleCategory order
  CategoryStats all;                      // aggregate over every analyzed run
  int n_runs = 0;
  int n_rejected = 0;

  std::string to_csv() const;
};

namespace detail {

// Streaming mean / population spread for optional report cells.
struct CellAcc {
  std::size_t n = 0;
  double sum = 0.0, sumsq = 0.0;
  void add(double x) {
    ++n;
    sum += x;
    sumsq += x * x;
  }
  std::optional<double> mean() const {
    if (n == 0) return std::nullopt;
    return sum / static_cast<double>(n);
  }
  std::optional<double> sd() const {
    if (n == 0) return std::nullopt;
    double mu = sum / static_cast<double>(n);
    double var = sumsq / static_cast<double>(n) - mu * mu;
    return std::sqrt(std::max(0.0, var));
  }
};

struct ColumnAcc {
  int count = 0;
  CellAcc delta, y_eq, y_one, ret_one, ret_both, loss_path, loss_all;

  void add(const RunAnalysis& a) {
    ++count;
    delta.add(a.delta_tilde);
    if (a.y_eq) y_eq.add(*a.y_eq);
    if (a.y_one) y_one.add(*a.y_one);
    if (a.returns_one) ret_one.add(*a.returns_one ? 1.0 : 0.0);
    if (a.returns_both) ret_both.add(*a.returns_both ? 1.0 : 0.0);
    if (a.loss_path) loss_path.add(*a.loss_path);
    loss_all.add(a.loss_all);
  }

  CategoryStats stats(int n_total) const {
    CategoryStats s;
    s.count = count;
    if (n_total > 0) s.freq = static_cast<double>(count) / n_total;
    s.avg_delta = delta.mean();
    s.sd_delta = delta.sd();
    s.freq_eq = y_eq.mean();
    s.freq_one_step_eq = y_one.mean();
    s.freq_return_one = ret_one.mean();
    s.freq_return_both = ret_both.mean();
    s.avg_loss_path = loss_path.mean();
    s.sd_loss_path = loss_path.sd();
    s.avg_loss_all = loss_all.mean();
    s.sd_loss_all = loss_all.sd();
    return s;
  }
};

inline void csv_cell(std::ostringstream& os, const std::optional<double>& v) {
  os << ',';
  if (v) os << *v;
}

}  // namespace detail

inline std::string SensitivityReport::to_csv() const {
  std::ostringstream os;
  os.precision(10);
  os << "metric";
  for (int c = 0; c < 6; ++c) os << ',' << to_string(static_cast<CycleCategory>(c));
  os << ",all\n";

  auto row = [&](const char* name, auto pick) {
    os << name;
    for (int c = 0; c < 6; ++c) detail::csv_cell(os, pick(category[c]));
    detail::csv_cell(os, pick(all));
    os << '\n';
  };
  row("count", [](const CategoryStats& s) {
    return std::optional<double>(static_cast<double>(s.count));
  });
  row("freq", [](const CategoryStats& s) { return s.freq; });
  row("avg_collusive_level", [](const CategoryStats& s) { return s.avg_delta; });
  row("sd_collusive_level", [](const CategoryStats& s) { return s.sd_delta; });
  row("freq_eq", [](const CategoryStats& s) { return s.freq_eq; });
  row("freq_one_step_eq", [](const CategoryStats& s) { return s.freq_one_step_eq; });
  row("freq_conv_back_one", [](const CategoryStats& s) { return s.freq_return_one; });
  row("freq_conv_back_both", [](const CategoryStats& s) { return s.freq_return_both; });
  row("avg_q_loss_on_path", [](const CategoryStats& s) { return s.avg_loss_path; });
  row("sd_q_loss_on_path", [](const CategoryStats& s) { return s.sd_loss_path; });
  row("avg_q_loss_all", [](const CategoryStats& s) { return s.avg_loss_all; });
  row("sd_q_loss_all", [](const CategoryStats& s) { return s.sd_loss_all; });
  return os.str();
}

// Folds a batch of per-run diagnostics into the per-category report. The
// accumulation order is the list order, so the result is deterministic.
inline SensitivityReport aggregate_report(const std::vector<RunAnalysis>& runs,
                                          int n_rejected = 0) {
  SensitivityReport rep;
  rep.n_runs = static_cast<int>(runs.size()) + n_rejected;
  rep.n_rejected = n_rejected;
  std::array<detail::ColumnAcc, 6> cols;
  detail::ColumnAcc total;
  for (const RunAnalysis& a : runs) {
    cols[static_cast<int>(a.cycle.category)].add(a);
    total.add(a);
  }
  int analyzed = total.count;
  for (int c = 0; c < 6; ++c) rep.category[c] = cols[c].stats(analyzed);
  rep.all = total.stats(analyzed);
  if (analyzed > 0) rep.all.freq = 1.0;
  return rep;
}

// Solves the market once, then runs n_runs independent simulations (seeds
// split off cfg.seed by run index) and aggregates their diagnostics per
// cycle category. Runs that fail to simulate or classify are counted as
// rejected, never silently dropped.
inline SensitivityReport sensitivity_report(const MarketParams& params, int n_runs,
                                            const LearningConfig& cfg,
                                            const AnalysisOptions& opts = {},
                                            const EqSolveOptions& eq_opts = {}) {
  EquilibriumPair eq = solve_equilibria(params, eq_opts);
  PriceGrid grid = PriceGrid::build(eq, cfg.grid_eps, cfg.m);
  ProfitTable table = ProfitTable::build(grid, params, eq_opts.shares);

  std::vector<RunAnalysis> analyzed;
  analyzed.reserve(static_cast<std::size_t>(n_runs));
  int rejected = 0;
  Rng seeder(cfg.seed);
  for (int i = 0; i < n_runs; ++i) {
    LearningConfig run_cfg = cfg;
    run_cfg.seed = seeder.split(static_cast<std::uint64_t>(i)).state();
    try {
      RunResult run = run_simulation_with(grid, table, eq.nash.profit,
                                          eq.coll.profit, run_cfg);
      analyzed.push_back(analyze_run(run, grid, table, eq, run_cfg, opts));
    } catch (const std::runtime_error&) {
      ++rejected;
    }
  }
  return aggregate_report(analyzed, rejected);
}

}  // namespace platsim
