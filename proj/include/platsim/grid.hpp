#pragma once

// Discrete action space for the learners. Each side's price grid has M points
// spanning the competitive-to-collusive range extended by a fraction eps on
// both ends:
//   g_j = p* - eps*(pC - p*) + (j/(M-1)) * (1 + 2*eps) * (pC - p*).
// An action is a (j_b, j_s) pair flattened to j_b*M + j_s; a state is the
// previous joint action pair (a1, a2) flattened to a1*M^2 + a2.

#include <algorithm>
#include <cstdint>
#include <vector>

#include "platsim/errors.hpp"
#include "platsim/market.hpp"

namespace platsim {

// One side's grid. Throws if the anchors coincide; sorts ascending so a
// collusive anchor below the competitive one still yields a monotone grid.
inline std::vector<double> build_grid_side(double p_star, double p_coll, double eps,
                                           int m) {
  if (m < 2) throw ConfigError("learning/m", "grid needs at least 2 points");
  double d = p_coll - p_star;
  if (std::abs(d) < 1e-8) throw DegenerateGrid(p_star, p_coll);
  std::vector<double> g(m);
  for (int j = 0; j < m; ++j)
    g[j] = p_star - eps * d + (static_cast<double>(j) / (m - 1)) * (1.0 + 2.0 * eps) * d;
  std::sort(g.begin(), g.end());
  return g;
}

struct PriceGrid {
  int m = 0;
  double eps = 0.0;
  std::vector<double> b;  // ascending prices, side b
  std::vector<double> s;

  static PriceGrid build(const EquilibriumPair& eq, double eps, int m) {
    PriceGrid g;
    g.m = m;
    g.eps = eps;
    g.b = build_grid_side(eq.nash.price.b, eq.coll.price.b, eps, m);
    g.s = build_grid_side(eq.nash.price.s, eq.coll.price.s, eps, m);
    return g;
  }

  int n_actions() const { return m * m; }
  int n_states() const { return m * m * m * m; }

  Sides action_prices(std::uint32_t a) const {
    return {b[a / m], s[a % m]};
  }

  // Nearest grid index to `price` on the given side's grid; ties go down.
  static int snap(const std::vector<double>& side, double price) {
    int best = 0;
    double dist = std::abs(side[0] - price);
    for (int j = 1; j < static_cast<int>(side.size()); ++j) {
      double d = std::abs(side[j] - price);
      if (d < dist) {
        best = j;
        dist = d;
      }
    }
    return best;
  }
};

inline std::uint32_t action_flat(int jb, int js, int m) {
  return static_cast<std::uint32_t>(jb * m + js);
}

inline std::pair<int, int> action_split(std::uint32_t a, int m) {
  return {static_cast<int>(a) / m, static_cast<int>(a) % m};
}

inline std::uint32_t state_flat(std::uint32_t a1, std::uint32_t a2, int m) {
  return a1 * static_cast<std::uint32_t>(m * m) + a2;
}

inline std::pair<std::uint32_t, std::uint32_t> state_split(std::uint32_t st, int m) {
  std::uint32_t mm = static_cast<std::uint32_t>(m * m);
  return {st / mm, st % mm};
}

}  // namespace platsim
