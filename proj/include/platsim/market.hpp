#pragma once

// Static two-sided market: logit share fixed point, profits, and the two
// symmetric equilibrium anchors (competitive Nash and joint-collusive).
//
// Conventions: side b = buyers, side s = sellers. Platform i's side-k utility
// is phi_kb*x_b(i) + phi_ks*x_s(i) - p_k(i); the outside option has fixed
// utility u0_k. Shares are the multinomial logit over the N+1 options with
// noise scale beta_k, which makes them a fixed point because utilities depend
// on the platform's own shares.
//
// Everything here is deterministic, and side-symmetric by construction: the
// two sides are updated simultaneously with identical instruction sequences,
// so swapping the b/s labels of all inputs swaps all outputs bit for bit.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "platsim/errors.hpp"

namespace platsim {

inline constexpr int kMaxPlatforms = 8;

struct Sides {
  double b = 0.0;
  double s = 0.0;
};

// phi_kl: weight of the side-l share in side-k utility, row = affected side.
struct ExternalityMatrix {
  double bb = 0.0;
  double bs = 0.0;
  double sb = 0.0;
  double ss = 0.0;
  bool is_zero() const { return bb == 0.0 && bs == 0.0 && sb == 0.0 && ss == 0.0; }
};

struct MarketParams {
  int n_platforms = 2;
  double beta_b = 1.0;
  double beta_s = 1.0;
  double u0_b = -2.0;
  double u0_s = -2.0;
  ExternalityMatrix phi;

  void validate() const {
    if (n_platforms < 2 || n_platforms > kMaxPlatforms)
      throw ConfigError("market/n_platforms",
                        "must be in [2, " + std::to_string(kMaxPlatforms) + "]");
    if (!(beta_b > 0.0) || !std::isfinite(beta_b))
      throw ConfigError("market/beta_b", "must be finite and > 0");
    if (!(beta_s > 0.0) || !std::isfinite(beta_s))
      throw ConfigError("market/beta_s", "must be finite and > 0");
    for (auto [v, name] : {std::pair{u0_b, "market/u0_b"}, {u0_s, "market/u0_s"},
                           {phi.bb, "market/phi"}, {phi.bs, "market/phi"},
                           {phi.sb, "market/phi"}, {phi.ss, "market/phi"}}) {
      if (!std::isfinite(v)) throw ConfigError(name, "must be finite");
    }
  }
};

// One (p_b, p_s) pair per platform.
using PriceProfile = std::vector<Sides>;

// Per-option side values; index 0 of `platform` is platform 1.
struct SideProfile {
  Sides outside;
  std::vector<Sides> platform;
};
using Shares = SideProfile;
using Utilities = SideProfile;

struct ShareSolveOptions {
  double tol = 1e-10;        // sup-norm of the fixed-point residual
  int max_iter = 100000;
  double damping = 0.5;      // step toward the logit map
  double damping_fallback = 0.1;
};

inline Utilities utilities(const PriceProfile& prices, const Shares& shares,
                           const MarketParams& params) {
  Utilities u;
  u.outside = {params.u0_b, params.u0_s};
  u.platform.resize(prices.size());
  for (std::size_t i = 0; i < prices.size(); ++i) {
    const Sides& x = shares.platform[i];
    u.platform[i].b = params.phi.bb * x.b + params.phi.bs * x.s - prices[i].b;
    u.platform[i].s = params.phi.ss * x.s + params.phi.sb * x.b - prices[i].s;
  }
  return u;
}

namespace detail {

// One side's logit map evaluated at the current shares. Writes the mapped
// shares (outside first) into `out` and returns nothing; the residual is the
// caller's business. `x_own`/`x_oth` are the current per-platform shares of
// this side and the other side. phi_own weights x_own, phi_cross weights
// x_oth; prices `p` are this side's. Stabilized by max subtraction.
inline void logit_side(int n, double beta, double u0, const double* p,
                       const double* x_own, const double* x_oth, double phi_own,
                       double phi_cross, double* out) {
  std::array<double, kMaxPlatforms + 1> z;
  z[0] = u0 / beta;
  for (int i = 0; i < n; ++i)
    z[i + 1] = (phi_own * x_own[i] + phi_cross * x_oth[i] - p[i]) / beta;
  double zmax = z[0];
  for (int i = 1; i <= n; ++i) zmax = std::max(zmax, z[i]);
  double sum = 0.0;
  std::array<double, kMaxPlatforms + 1> e;
  for (int i = 0; i <= n; ++i) {
    e[i] = std::exp(z[i] - zmax);
    sum += e[i];
  }
  for (int i = 0; i <= n; ++i) out[i] = e[i] / sum;
}

}  // namespace detail

// Damped fixed-point iteration on the share map, starting from the uniform
// split 1/(N+1). With Phi == 0 the map does not depend on shares, so a single
// evaluation is exact and the iteration is skipped. On non-convergence the
// iteration is retried once with the fallback damping before throwing.
// Where the map has multiple fixed points (strong positive feedback), the
// deterministic start selects one reproducibly.
inline Shares solve_shares(const PriceProfile& prices, const MarketParams& params,
                           const ShareSolveOptions& opts = {}) {
  params.validate();
  const int n = params.n_platforms;
  if (static_cast<int>(prices.size()) != n)
    throw ShapeMismatch("price profile has " + std::to_string(prices.size()) +
                        " platforms, params say " + std::to_string(n));

  std::array<double, kMaxPlatforms + 1> xb, xs, pb, ps, gb, gs;
  for (int i = 0; i < n; ++i) {
    pb[i] = prices[i].b;
    ps[i] = prices[i].s;
  }

  auto pack = [&](const std::array<double, kMaxPlatforms + 1>& b,
                  const std::array<double, kMaxPlatforms + 1>& s) {
    Shares sh;
    sh.outside = {b[0], s[0]};
    sh.platform.resize(n);
    for (int i = 0; i < n; ++i) sh.platform[i] = {b[i + 1], s[i + 1]};
    return sh;
  };

  if (params.phi.is_zero()) {
    // x plays no role; pass the (unused) uniform start.
    xb.fill(1.0 / (n + 1));
    xs.fill(1.0 / (n + 1));
    detail::logit_side(n, params.beta_b, params.u0_b, pb.data(), xb.data() + 1,
                       xs.data() + 1, params.phi.bb, params.phi.bs, gb.data());
    detail::logit_side(n, params.beta_s, params.u0_s, ps.data(), xs.data() + 1,
                       xb.data() + 1, params.phi.ss, params.phi.sb, gs.data());
    return pack(gb, gs);
  }

  double residual = 0.0;
  for (double eta : {opts.damping, opts.damping_fallback}) {
    xb.fill(1.0 / (n + 1));
    xs.fill(1.0 / (n + 1));
    for (int it = 0; it < opts.max_iter; ++it) {
      // Both sides are mapped from the same current iterate so the update is
      // order-free across sides.
      detail::logit_side(n, params.beta_b, params.u0_b, pb.data(), xb.data() + 1,
                         xs.data() + 1, params.phi.bb, params.phi.bs, gb.data());
      detail::logit_side(n, params.beta_s, params.u0_s, ps.data(), xs.data() + 1,
                         xb.data() + 1, params.phi.ss, params.phi.sb, gs.data());
      residual = 0.0;
      for (int i = 0; i <= n; ++i) {
        residual = std::max(residual, std::abs(gb[i] - xb[i]));
        residual = std::max(residual, std::abs(gs[i] - xs[i]));
      }
      if (residual <= opts.tol) return pack(xb, xs);
      for (int i = 0; i <= n; ++i) {
        xb[i] += eta * (gb[i] - xb[i]);
        xs[i] += eta * (gs[i] - xs[i]);
      }
    }
  }
  throw NonConvergence("share fixed point did not converge", opts.max_iter, residual);
}

inline double platform_profit(const Sides& price, const Sides& share) {
  return price.b * share.b + price.s * share.s;
}

// Per-platform profits at an arbitrary profile (shares solved internally).
inline std::vector<double> profile_profits(const PriceProfile& prices,
                                           const MarketParams& params,
                                           const ShareSolveOptions& opts = {}) {
  Shares sh = solve_shares(prices, params, opts);
  std::vector<double> out(prices.size());
  for (std::size_t i = 0; i < prices.size(); ++i)
    out[i] = platform_profit(prices[i], sh.platform[i]);
  return out;
}

// Total profit when every platform posts the same (p_b, p_s). All platforms
// get bitwise identical shares from the symmetric solve, so N * profit of
// platform 1 is exact.
inline double total_collusive_profit(const Sides& price, const MarketParams& params,
                                     const ShareSolveOptions& opts = {}) {
  PriceProfile prices(params.n_platforms, price);
  Shares sh = solve_shares(prices, params, opts);
  return params.n_platforms * platform_profit(price, sh.platform[0]);
}

// Total profit with no symmetry assumption.
inline double asymmetric_total_profit(const PriceProfile& prices,
                                      const MarketParams& params,
                                      const ShareSolveOptions& opts = {}) {
  std::vector<double> pi = profile_profits(prices, params, opts);
  double total = 0.0;
  for (double v : pi) total += v;
  return total;
}

struct EqSolveOptions {
  double foc_tol = 1e-5;      // sup-norm of the central-difference gradient
  double foc_step = 1e-4;
  double price_tol = 1e-9;    // best-response fixed point movement
  int max_br_iter = 200;
  int n_starts = 5;
  double bracket_lo = -5.0;   // times beta_k, per side
  double bracket_hi = 10.0;
  int scan_points = 25;       // per side, collusive coarse scan
  double cluster_tol = 1e-6;  // price distance that separates fixed points
  ShareSolveOptions shares;
};

struct Equilibrium {
  Sides price;
  double profit = 0.0;        // per platform
  Shares shares;              // at the (symmetric) equilibrium profile
  Sides foc_residual;
  int n_starts_ok = 0;        // starts that converged
  int n_clusters = 1;         // distinct solutions among them
  bool multiple = false;
  // False when the winning stationary point is not an own-profit local
  // maximum. Strongly negative cross externalities leave the symmetric
  // first-order condition with only a valley root between tipped best
  // replies; the root still anchors the price grid and the profit
  // normalization, but it is not deviation-proof.
  bool second_order_ok = true;
  std::vector<Sides> trace;   // iteration path of the winning start
};

namespace detail {

// Golden-section maximum of a unimodal-on-bracket function.
template <class F>
double golden_max(F&& f, double a, double b, double tol) {
  constexpr double invphi = 0.6180339887498948482;
  double x1 = b - invphi * (b - a);
  double x2 = a + invphi * (b - a);
  double f1 = f(x1), f2 = f(x2);
  while (b - a > tol) {
    if (f1 < f2) {
      a = x1;
      x1 = x2;
      f1 = f2;
      x2 = a + invphi * (b - a);
      f2 = f(x2);
    } else {
      b = x2;
      x2 = x1;
      f2 = f1;
      x1 = b - invphi * (b - a);
      f1 = f(x1);
    }
  }
  return 0.5 * (a + b);
}

// 2-d maximization by simultaneous per-coordinate golden sections over a
// shrinking bracket. Both coordinates search from the same current point, so
// the procedure commutes with the b/s swap. If a coordinate's maximum lands
// near its bracket edge the bracket re-centers without shrinking, which lets
// the search travel arbitrarily far from the start.
template <class F>
Sides maximize_bs(F&& f, Sides start, double width_b, double width_s,
                  double xtol = 1e-10) {
  Sides x = start;
  double wb = width_b, ws = width_s;
  for (int round = 0; round < 200 && std::max(wb, ws) > xtol; ++round) {
    // Loose line searches early on; the shrinking bracket restores precision.
    double gtol_b = std::max(wb * 1e-3, 1e-12);
    double gtol_s = std::max(ws * 1e-3, 1e-12);
    double nb = golden_max([&](double t) { return f(Sides{t, x.s}); }, x.b - wb,
                           x.b + wb, gtol_b);
    double ns = golden_max([&](double t) { return f(Sides{x.b, t}); }, x.s - ws,
                           x.s + ws, gtol_s);
    bool edge_b = std::abs(nb - x.b) > 0.9 * wb;
    bool edge_s = std::abs(ns - x.s) > 0.9 * ws;
    x = {nb, ns};
    wb = edge_b ? wb : wb * 0.5;
    ws = edge_s ? ws : ws * 0.5;
  }
  return x;
}

template <class F>
Sides central_gradient(F&& f, Sides x, double h) {
  double gb = (f({x.b + h, x.s}) - f({x.b - h, x.s})) / (2.0 * h);
  double gs = (f({x.b, x.s + h}) - f({x.b, x.s - h})) / (2.0 * h);
  return {gb, gs};
}

struct Candidate {
  Sides price;
  double objective;
  double foc;           // sup-norm residual
  Sides foc_pair;
  std::vector<Sides> trace;
  bool max_ok = true;   // own-profit curvature negative on both sides
};

// Groups candidate prices into clusters of agreeing solutions.
inline int count_clusters(const std::vector<Candidate>& cands, double tol) {
  std::vector<Sides> reps;
  for (const auto& c : cands) {
    bool found = false;
    for (const auto& r : reps)
      if (std::abs(c.price.b - r.b) <= tol && std::abs(c.price.s - r.s) <= tol) {
        found = true;
        break;
      }
    if (!found) reps.push_back(c.price);
  }
  return static_cast<int>(reps.size());
}

}  // namespace detail

// Symmetric competitive Nash equilibrium: iterate the best response of one
// platform against all rivals posting the current candidate prices until the
// prices stop moving, from several starts spread along the diagonal of the
// search box [lo*beta_k, hi*beta_k] per side. The winner is the converged
// start with the smallest first-order residual.
inline Equilibrium solve_cne(const MarketParams& params, const EqSolveOptions& opts = {}) {
  params.validate();
  const int n = params.n_platforms;

  auto deviation_profit = [&](Sides own, Sides rival) {
    PriceProfile prices(n, rival);
    prices[0] = own;
    Shares sh = solve_shares(prices, params, opts.shares);
    return platform_profit(own, sh.platform[0]);
  };

  const Sides lo{opts.bracket_lo * params.beta_b, opts.bracket_lo * params.beta_s};
  const Sides hi{opts.bracket_hi * params.beta_b, opts.bracket_hi * params.beta_s};
  const double runaway = 100.0 * std::max({std::abs(lo.b), std::abs(hi.b),
                                           std::abs(lo.s), std::abs(hi.s)});

  auto grad_at = [&](Sides p) {
    return detail::central_gradient([&](Sides q) { return deviation_profit(q, p); },
                                    p, opts.foc_step);
  };
  const double jac_h = 10.0 * opts.foc_step;

  // Damped Newton on the symmetric own-price gradient. Polishes best-reply
  // endpoints to first-order precision well beyond what the derivative-free
  // line searches deliver, and doubles as a standalone solver when the best
  // reply jumps between distant profit peaks and its iteration cycles forever
  // (strong positive feedback does that): the stationarity condition stays
  // smooth even where the reply map is discontinuous.
  auto newton_polish = [&](Sides p, std::vector<Sides>& trace,
                           Sides& g_out, double& gnorm_out, bool& max_ok_out) -> bool {
    Sides g;
    try {
      g = grad_at(p);
    } catch (const NonConvergence&) {
      return false;
    }
    double gnorm = std::max(std::abs(g.b), std::abs(g.s));
    const double target = std::max(1e-3 * opts.foc_tol, 1e-10);
    for (int it = 0; it < opts.max_br_iter && gnorm > target; ++it) {
      // Jacobian of the gradient by central differences, one column per side.
      Sides gbp, gbm, gsp, gsm;
      try {
        gbp = grad_at({p.b + jac_h, p.s});
        gbm = grad_at({p.b - jac_h, p.s});
        gsp = grad_at({p.b, p.s + jac_h});
        gsm = grad_at({p.b, p.s - jac_h});
      } catch (const NonConvergence&) {
        break;
      }
      double jbb = (gbp.b - gbm.b) / (2.0 * jac_h);
      double jsb = (gbp.s - gbm.s) / (2.0 * jac_h);
      double jbs = (gsp.b - gsm.b) / (2.0 * jac_h);
      double jss = (gsp.s - gsm.s) / (2.0 * jac_h);
      double det = jbb * jss - jbs * jsb;
      if (std::abs(det) < 1e-14) break;
      // Cramer's rule keeps the update symmetric under the b/s swap.
      Sides dp{(g.b * jss - g.s * jbs) / det, (g.s * jbb - g.b * jsb) / det};
      bool improved = false;
      for (double step : {1.0, 0.5, 0.25, 0.125, 0.0625}) {
        Sides cand{p.b - step * dp.b, p.s - step * dp.s};
        if (std::max(std::abs(cand.b), std::abs(cand.s)) > runaway) continue;
        Sides gc;
        try {
          gc = grad_at(cand);
        } catch (const NonConvergence&) {
          continue;
        }
        double gn = std::max(std::abs(gc.b), std::abs(gc.s));
        if (gn < gnorm) {
          p = cand;
          g = gc;
          gnorm = gn;
          trace.push_back(p);
          improved = true;
          break;
        }
      }
      if (!improved) break;
    }
    if (gnorm > opts.foc_tol) return false;
    // Classify the stationary point through own-price curvature. Proper
    // local maxima beat everything else in the selection below; flagged
    // roots survive only when no start finds a maximum, which happens when
    // heavy negative cross feedback tips the market and the symmetric
    // stationary point sits in a valley between asymmetric best replies.
    double f0, d2b, d2s;
    try {
      f0 = deviation_profit(p, p);
      d2b = deviation_profit({p.b + jac_h, p.s}, p) - 2.0 * f0 +
            deviation_profit({p.b - jac_h, p.s}, p);
      d2s = deviation_profit({p.b, p.s + jac_h}, p) - 2.0 * f0 +
            deviation_profit({p.b, p.s - jac_h}, p);
    } catch (const NonConvergence&) {
      return false;
    }
    max_ok_out = d2b < 0.0 && d2s < 0.0;
    trace.push_back(p);
    g_out = g;
    gnorm_out = gnorm;
    return true;
  };

  const double near_tol = std::max(opts.price_tol, 1e-6);

  std::vector<detail::Candidate> cands;
  for (int k = 0; k < opts.n_starts; ++k) {
    double frac = (k + 0.5) / opts.n_starts;
    Sides start{lo.b + frac * (hi.b - lo.b), lo.s + frac * (hi.s - lo.s)};
    bool found = false;
    // Undamped response iteration first; if it cycles, once more with an
    // averaged step. Either way the endpoint goes through the Newton polish,
    // so the iteration only has to get near a fixed point, not onto it.
    for (double step : {1.0, 0.5}) {
      Sides cur = start;
      std::vector<Sides> trace{cur};
      double last_move = 0.0;
      std::vector<double> moves;
      for (int it = 0; it < opts.max_br_iter; ++it) {
        auto f = [&](Sides q) { return deviation_profit(q, cur); };
        // After the first iteration the response moves little, so the search
        // bracket tracks the last step instead of spanning the whole box. The
        // line-search resolution scales with the bracket; the polish restores
        // full precision afterwards.
        double w_scale = it == 0 ? 1.0 : std::max(1e-3, 8.0 * last_move);
        double wb = w_scale * params.beta_b, ws = w_scale * params.beta_s;
        Sides br;
        try {
          br = detail::maximize_bs(f, cur, wb, ws,
                                   std::max(1e-10, 3e-3 * std::min(wb, ws)));
        } catch (const NonConvergence&) {
          break;
        }
        Sides next{cur.b + step * (br.b - cur.b), cur.s + step * (br.s - cur.s)};
        trace.push_back(next);
        double move = std::max(std::abs(next.b - cur.b), std::abs(next.s - cur.s));
        last_move = move;
        cur = next;
        if (std::max(std::abs(cur.b), std::abs(cur.s)) > runaway) break;
        if (move <= near_tol) break;
        // A contracting iteration shrinks its step quickly; if the step has
        // not even halved over the last 25 iterations the map is cycling, so
        // hand the endpoint to the polish early instead of draining the
        // iteration budget.
        moves.push_back(move);
        if (moves.size() > 25 && move > 0.5 * moves[moves.size() - 26]) break;
      }
      Sides g;
      double gnorm;
      bool max_ok;
      if (newton_polish(cur, trace, g, gnorm, max_ok)) {
        cands.push_back({trace.back(), deviation_profit(trace.back(), trace.back()),
                         gnorm, {std::abs(g.b), std::abs(g.s)}, std::move(trace),
                         max_ok});
        found = true;
        break;
      }
    }
    if (found) continue;
    // Best reply went nowhere useful; try the Newton search from the raw start.
    std::vector<Sides> trace{start};
    Sides g;
    double gnorm;
    bool max_ok;
    if (newton_polish(start, trace, g, gnorm, max_ok))
      cands.push_back({trace.back(), deviation_profit(trace.back(), trace.back()),
                       gnorm, {std::abs(g.b), std::abs(g.s)}, std::move(trace),
                       max_ok});
  }
  if (cands.empty())
    throw NoEquilibriumFound("competitive equilibrium: no start converged with small residual");

  // Prefer proper maxima whenever any start found one. Otherwise every
  // stationary point is a flagged valley root; keep the payoff-dominant one
  // so degenerate far-field plateaus cannot outrank the economically
  // meaningful anchor on residual alone.
  bool any_max = std::any_of(cands.begin(), cands.end(),
                             [](const detail::Candidate& c) { return c.max_ok; });
  if (any_max)
    std::erase_if(cands, [](const detail::Candidate& c) { return !c.max_ok; });
  const detail::Candidate* best = &cands[0];
  for (const auto& c : cands)
    if (any_max ? c.foc < best->foc
                : (c.objective > best->objective ||
                   (c.objective == best->objective && c.foc < best->foc)))
      best = &c;

  Equilibrium eq;
  eq.price = best->price;
  PriceProfile prices(n, best->price);
  eq.shares = solve_shares(prices, params, opts.shares);
  eq.profit = platform_profit(best->price, eq.shares.platform[0]);
  eq.foc_residual = best->foc_pair;
  eq.n_starts_ok = static_cast<int>(cands.size());
  eq.n_clusters = detail::count_clusters(cands, opts.cluster_tol);
  eq.multiple = eq.n_clusters > 1;
  eq.second_order_ok = any_max;
  eq.trace = best->trace;
  return eq;
}

// Symmetric collusive equilibrium: maximize the all-platform total profit over
// one shared (p_b, p_s). Coarse scan of the search box picks the local-ascent
// starts (plus any caller-supplied ones, typically the CNE point, which also
// guarantees the collusive value cannot fall below Nash). A maximum pinned to
// the box edge triggers one box doubling before giving up.
inline Equilibrium solve_ce(const MarketParams& params, const EqSolveOptions& opts = {},
                            const std::vector<Sides>& extra_starts = {}) {
  params.validate();
  auto total = [&](Sides p) { return total_collusive_profit(p, params, opts.shares); };

  Sides lo{opts.bracket_lo * params.beta_b, opts.bracket_lo * params.beta_s};
  Sides hi{opts.bracket_hi * params.beta_b, opts.bracket_hi * params.beta_s};

  for (int attempt = 0; attempt < 2; ++attempt) {
    const int g = opts.scan_points;
    std::vector<detail::Candidate> cells;
    for (int ib = 0; ib < g; ++ib) {
      for (int is = 0; is < g; ++is) {
        Sides p{lo.b + (ib + 0.5) * (hi.b - lo.b) / g,
                lo.s + (is + 0.5) * (hi.s - lo.s) / g};
        cells.push_back({p, total(p), 0.0, {}, {}});
      }
    }
    std::stable_sort(cells.begin(), cells.end(),
                     [](const auto& a, const auto& b) { return a.objective > b.objective; });

    std::vector<Sides> starts;
    for (int k = 0; k < opts.n_starts && k < static_cast<int>(cells.size()); ++k)
      starts.push_back(cells[k].price);
    starts.insert(starts.end(), extra_starts.begin(), extra_starts.end());

    std::vector<detail::Candidate> cands;
    const double cell_b = (hi.b - lo.b) / g, cell_s = (hi.s - lo.s) / g;
    for (const Sides& s0 : starts) {
      Sides p = detail::maximize_bs(total, s0, cell_b, cell_s);
      Sides grad = detail::central_gradient(total, p, opts.foc_step);
      double res = std::max(std::abs(grad.b), std::abs(grad.s));
      cands.push_back({p, total(p), res, {std::abs(grad.b), std::abs(grad.s)},
                       {s0, p}});
    }

    const detail::Candidate* best = &cands[0];
    for (const auto& c : cands)
      if (c.objective > best->objective) best = &c;

    double margin_b = 1e-3 * (hi.b - lo.b), margin_s = 1e-3 * (hi.s - lo.s);
    bool at_edge = best->price.b < lo.b + margin_b || best->price.b > hi.b - margin_b ||
                   best->price.s < lo.s + margin_s || best->price.s > hi.s - margin_s;
    if (at_edge && attempt == 0) {
      // Double the box around its center and rescan.
      Sides c{0.5 * (lo.b + hi.b), 0.5 * (lo.s + hi.s)};
      Sides half{hi.b - c.b, hi.s - c.s};
      lo = {c.b - 2.0 * half.b, c.s - 2.0 * half.s};
      hi = {c.b + 2.0 * half.b, c.s + 2.0 * half.s};
      continue;
    }
    if (at_edge)
      throw NoEquilibriumFound("collusive maximum sits on the search boundary after expansion");
    if (best->foc > opts.foc_tol)
      throw NoEquilibriumFound("collusive maximum failed the first-order check");

    Equilibrium eq;
    eq.price = best->price;
    PriceProfile prices(params.n_platforms, best->price);
    eq.shares = solve_shares(prices, params, opts.shares);
    eq.profit = total_collusive_profit(best->price, params, opts.shares) / params.n_platforms;
    eq.foc_residual = best->foc_pair;
    eq.n_starts_ok = static_cast<int>(cands.size());
    eq.n_clusters = detail::count_clusters(cands, opts.cluster_tol);
    eq.multiple = false;  // distinct local maxima are expected; the best wins
    eq.trace = best->trace;
    return eq;
  }
  throw NoEquilibriumFound("collusive search did not terminate");  // unreachable
}

struct EquilibriumPair {
  Equilibrium nash;
  Equilibrium coll;
};

inline EquilibriumPair solve_equilibria(const MarketParams& params,
                                        const EqSolveOptions& opts = {}) {
  EquilibriumPair pair;
  pair.nash = solve_cne(params, opts);
  pair.coll = solve_ce(params, opts, {pair.nash.price});
  if (pair.coll.profit < pair.nash.profit - 1e-8)
    throw NoEquilibriumFound("collusive profit below Nash profit; ascent failed");
  return pair;
}

}  // namespace platsim
