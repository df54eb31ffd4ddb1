#pragma once

// Additive decomposition of the collusive level as a function of the
// externality matrix: a baseline plus four univariate and six bivariate
// component functions, each fitted by sequential residual smoothing and
// averaged over an ensemble of fitting orders.

#include <array>
#include <cstdint>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "platsim/errors.hpp"
#include "platsim/gbrt.hpp"
#include "platsim/market.hpp"
#include "platsim/rng.hpp"

namespace platsim {

// One experiment outcome: the sampled externality matrix and the collusive
// level its runs produced.
struct PhiSample {
  ExternalityMatrix phi;
  double delta_tilde = 0.0;
};

// Standard-normal draw for every externality entry, in field order.
inline ExternalityMatrix sample_phi(Rng& rng) {
  ExternalityMatrix phi;
  phi.bb = rng.normal();
  phi.bs = rng.normal();
  phi.sb = rng.normal();
  phi.ss = rng.normal();
  return phi;
}

// Canonical component order of the decomposition. The univariate components
// are keyed bb, ss, bs, sb; the bivariate ones pair them as listed.
inline constexpr std::array<const char*, 4> kUniNames{"bb", "ss", "bs", "sb"};
inline constexpr std::array<std::array<int, 2>, 6> kPairKeys{{
    {0, 1},  // (bb, ss)
    {3, 2},  // (sb, bs)
    {0, 2},  // (bb, bs)
    {0, 3},  // (bb, sb)
    {1, 2},  // (ss, bs)
    {1, 3},  // (ss, sb)
}};

inline double phi_entry(const ExternalityMatrix& phi, int key) {
  switch (key) {
    case 0: return phi.bb;
    case 1: return phi.ss;
    case 2: return phi.bs;
    default: return phi.sb;
  }
}

inline std::string pair_name(int pair) {
  return std::string(kUniNames[kPairKeys[pair][0]]) + "_" + kUniNames[kPairKeys[pair][1]];
}

// Mean of the smoothers fitted for one component across the permutation
// ensemble, summed in storage order (ascending permutation rank), so the
// value cannot depend on how the ranks were enumerated.
struct ComponentEnsemble {
  std::vector<TreeSmoother> members;

  double predict(const std::array<double, 2>& x) const {
    if (members.empty()) return 0.0;
    double acc = 0.0;
    for (const TreeSmoother& m : members) acc += m.predict(x);
    return acc / static_cast<double>(members.size());
  }
  double predict(double x) const { return predict({x, 0.0}); }
};

// One residual-chain pass: the smoothers in fitting order plus the final
// residuals, kept so the telescoping identity can be replayed exactly.
template <std::size_t N>
struct SequenceFit {
  std::array<int, N> order{};
  std::vector<TreeSmoother> fits;   // fits[i] belongs to component order[i]
  std::vector<double> residual;     // response minus every fit, in pass order
};

namespace detail {

// Permutation of {0..n-1} with the given lexicographic rank.
inline std::vector<int> unrank_permutation(int rank, int n) {
  std::vector<int> pool(n), out;
  for (int i = 0; i < n; ++i) pool[i] = i;
  int fact = 1;
  for (int i = 2; i < n; ++i) fact *= i;
  for (int slot = n - 1; slot >= 1; --slot) {
    int pick = rank / fact;
    rank %= fact;
    out.push_back(pool[pick]);
    pool.erase(pool.begin() + pick);
    if (slot > 1) fact /= slot;
  }
  out.push_back(pool[0]);
  return out;
}

// Ascending sample of `count` distinct ranks out of `total`; all of them when
// count covers the range. Subsampled ranks are drawn by seeded shuffle, then
// sorted so downstream accumulation has a canonical order.
inline std::vector<int> choose_ranks(int total, int count, std::uint64_t seed) {
  std::vector<int> ranks(total);
  for (int i = 0; i < total; ++i) ranks[i] = i;
  if (count >= total || count < 0) return ranks;
  Rng rng(seed);
  for (int i = total - 1; i > 0; --i) {
    int j = static_cast<int>(rng.uniform_below(static_cast<std::uint32_t>(i) + 1));
    std::swap(ranks[i], ranks[j]);
  }
  ranks.resize(count);
  std::sort(ranks.begin(), ranks.end());
  return ranks;
}

}  // namespace detail

// Fits the four univariate components in the given order: each smoother sees
// the residual left by the previous ones, starting from delta_tilde - delta0.
inline SequenceFit<4> fit_univariate_sequence(const std::vector<PhiSample>& data,
                                              const std::array<int, 4>& order,
                                              double delta0,
                                              const SmootherConfig& cfg = {}) {
  SequenceFit<4> pass;
  pass.order = order;
  const std::size_t n = data.size();
  pass.residual.resize(n);
  for (std::size_t i = 0; i < n; ++i) pass.residual[i] = data[i].delta_tilde - delta0;

  std::vector<std::array<double, 2>> rows(n);
  for (int key : order) {
    for (std::size_t i = 0; i < n; ++i) rows[i] = {phi_entry(data[i].phi, key), 0.0};
    TreeSmoother fit = TreeSmoother::fit(rows, 1, pass.residual, cfg);
    for (std::size_t i = 0; i < n; ++i) pass.residual[i] -= fit.predict(rows[i]);
    pass.fits.push_back(std::move(fit));
  }
  return pass;
}

// Same residual chain over the six pair components, starting from the
// caller-provided first-stage residual y1.
inline SequenceFit<6> fit_bivariate_sequence(const std::vector<PhiSample>& data,
                                             const std::vector<double>& y1,
                                             const std::array<int, 6>& order,
                                             const SmootherConfig& cfg) {
  if (y1.size() != data.size())
    throw ShapeMismatch("bivariate stage: residual length does not match data");
  SequenceFit<6> pass;
  pass.order = order;
  pass.residual = y1;
  const std::size_t n = data.size();

  std::vector<std::array<double, 2>> rows(n);
  for (int pair : order) {
    for (std::size_t i = 0; i < n; ++i)
      rows[i] = {phi_entry(data[i].phi, kPairKeys[pair][0]),
                 phi_entry(data[i].phi, kPairKeys[pair][1])};
    TreeSmoother fit = TreeSmoother::fit(rows, 2, pass.residual, cfg);
    for (std::size_t i = 0; i < n; ++i) pass.residual[i] -= fit.predict(rows[i]);
    pass.fits.push_back(std::move(fit));
  }
  return pass;
}

struct AdditiveOptions {
  int n_uni_perms = 24;    // out of 4! fitting orders
  int n_biv_perms = 720;   // out of 6! fitting orders
  std::uint64_t perm_seed = 0x5eedULL;  // only used when subsampling orders
  // A near-interpolating smoother estimates conditional means at roughly
  // n / min_leaf cells, and each stage of a residual chain then bleeds about
  // one part per min_leaf of every later component's sample projection. The
  // larger leaves keep that attrition to a few percent per stage at the
  // sample sizes this stage is used with.
  SmootherConfig uni_smoother{.n_trees = 300, .max_depth = 3, .min_leaf = 25};
  SmootherConfig biv_smoother{.n_trees = 300, .max_depth = 4, .min_leaf = 25};
};

struct AdditiveModel {
  double delta0 = 0.0;
  std::array<ComponentEnsemble, 4> univariate;
  std::array<ComponentEnsemble, 6> bivariate;
  std::vector<int> uni_ranks;  // permutation ranks the ensembles averaged over
  std::vector<int> biv_ranks;
  AdditiveOptions opts;

  double evaluate(const ExternalityMatrix& phi) const {
    double acc = delta0;
    for (int k = 0; k < 4; ++k) acc += univariate[k].predict(phi_entry(phi, k));
    for (int p = 0; p < 6; ++p)
      acc += bivariate[p].predict(
          {phi_entry(phi, kPairKeys[p][0]), phi_entry(phi, kPairKeys[p][1])});
    return acc;
  }
};

// Full two-stage fit: the univariate stage averaged over its fitting orders,
// then the bivariate stage on the residual y1 = delta_tilde - (delta0 + sum
// of averaged univariate components), averaged over its own orders.
inline AdditiveModel fit_additive_model(const std::vector<PhiSample>& data,
                                        const AdditiveOptions& opts = {}) {
  if (data.size() < 10) throw TooFewSamples("additive fit", data.size(), 10);
  AdditiveModel model;
  model.opts = opts;

  double sum = 0.0;
  for (const PhiSample& s : data) sum += s.delta_tilde;
  model.delta0 = sum / static_cast<double>(data.size());

  model.uni_ranks = detail::choose_ranks(24, opts.n_uni_perms, opts.perm_seed);
  for (int rank : model.uni_ranks) {
    std::vector<int> p = detail::unrank_permutation(rank, 4);
    std::array<int, 4> order{p[0], p[1], p[2], p[3]};
    SequenceFit<4> pass = fit_univariate_sequence(data, order, model.delta0,
                                                  opts.uni_smoother);
    for (std::size_t slot = 0; slot < 4; ++slot)
      model.univariate[order[slot]].members.push_back(std::move(pass.fits[slot]));
  }

  std::vector<double> y1(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    double uni_sum = 0.0;
    for (int k = 0; k < 4; ++k)
      uni_sum += model.univariate[k].predict(phi_entry(data[i].phi, k));
    y1[i] = data[i].delta_tilde - (model.delta0 + uni_sum);
  }

  model.biv_ranks = detail::choose_ranks(720, opts.n_biv_perms, opts.perm_seed + 1);
  for (int rank : model.biv_ranks) {
    std::vector<int> p = detail::unrank_permutation(rank, 6);
    std::array<int, 6> order{p[0], p[1], p[2], p[3], p[4], p[5]};
    SequenceFit<6> pass = fit_bivariate_sequence(data, y1, order, opts.biv_smoother);
    for (std::size_t slot = 0; slot < 6; ++slot)
      model.bivariate[order[slot]].members.push_back(std::move(pass.fits[slot]));
  }
  return model;
}

// Uniform-grid samples of every univariate component over the observed range
// of its predictor, for external plotting.
inline std::string univariate_curves_csv(const AdditiveModel& model,
                                         const std::vector<PhiSample>& data,
                                         int n_points = 101) {
  std::ostringstream os;
  os.precision(10);
  os << "component,x,value\n";
  for (int k = 0; k < 4; ++k) {
    double lo = phi_entry(data.front().phi, k), hi = lo;
    for (const PhiSample& s : data) {
      lo = std::min(lo, phi_entry(s.phi, k));
      hi = std::max(hi, phi_entry(s.phi, k));
    }
    for (int i = 0; i < n_points; ++i) {
      double t = n_points == 1 ? 0.0 : static_cast<double>(i) / (n_points - 1);
      double xv = lo + t * (hi - lo);
      os << kUniNames[k] << ',' << xv << ',' << model.univariate[k].predict(xv) << '\n';
    }
  }
  return os.str();
}

// Grid samples of every bivariate component over the observed ranges of its
// two predictors.
inline std::string bivariate_grid_csv(const AdditiveModel& model,
                                      const std::vector<PhiSample>& data,
                                      int n_points = 41) {
  std::ostringstream os;
  os.precision(10);
  os << "component,x,y,value\n";
  for (int p = 0; p < 6; ++p) {
    int ka = kPairKeys[p][0], kb = kPairKeys[p][1];
    double alo = phi_entry(data.front().phi, ka), ahi = alo;
    double blo = phi_entry(data.front().phi, kb), bhi = blo;
    for (const PhiSample& s : data) {
      alo = std::min(alo, phi_entry(s.phi, ka));
      ahi = std::max(ahi, phi_entry(s.phi, ka));
      blo = std::min(blo, phi_entry(s.phi, kb));
      bhi = std::max(bhi, phi_entry(s.phi, kb));
    }
    for (int i = 0; i < n_points; ++i) {
      double ti = n_points == 1 ? 0.0 : static_cast<double>(i) / (n_points - 1);
      double xv = alo + ti * (ahi - alo);
      for (int j = 0; j < n_points; ++j) {
        double tj = n_points == 1 ? 0.0 : static_cast<double>(j) / (n_points - 1);
        double yv = blo + tj * (bhi - blo);
        os << pair_name(p) << ',' << xv << ',' << yv << ','
           << model.bivariate[p].predict({xv, yv}) << '\n';
      }
    }
  }
  return os.str();
}

}  // namespace platsim
