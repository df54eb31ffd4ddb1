#include "platsim/additive.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <functional>
#include <sstream>
#include <vector>

#include "platsim/errors.hpp"
#include "platsim/rng.hpp"

namespace {

using platsim::AdditiveModel;
using platsim::AdditiveOptions;
using platsim::ExternalityMatrix;
using platsim::PhiSample;
using platsim::Rng;
using platsim::SmootherConfig;

ExternalityMatrix uniform_phi(Rng& rng, double half_width = 2.0) {
  auto u = [&] { return (rng.uniform() * 2 - 1) * half_width; };
  ExternalityMatrix phi;
  phi.bb = u();
  phi.bs = u();
  phi.sb = u();
  phi.ss = u();
  return phi;
}

std::size_t count_lines(const std::string& s) {
  return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n'));
}

TEST(SamplePhi, EntriesAreStandardNormalAndUncorrelated) {
  const int n = 100000;
  Rng rng(777);
  std::array<double, 4> sum{}, sumsq{};
  std::array<double, 6> cross{};
  for (int i = 0; i < n; ++i) {
    ExternalityMatrix phi = platsim::sample_phi(rng);
    std::array<double, 4> v{phi.bb, phi.bs, phi.sb, phi.ss};
    int c = 0;
    for (int a = 0; a < 4; ++a) {
      sum[a] += v[a];
      sumsq[a] += v[a] * v[a];
      for (int b = a + 1; b < 4; ++b) cross[c++] += v[a] * v[b];
    }
  }
  std::array<double, 4> mean, var;
  for (int a = 0; a < 4; ++a) {
    mean[a] = sum[a] / n;
    var[a] = sumsq[a] / n - mean[a] * mean[a];
    EXPECT_GT(mean[a], -0.02);
    EXPECT_LT(mean[a], 0.02);
    EXPECT_GT(var[a], 0.97);
    EXPECT_LT(var[a], 1.03);
  }
  int c = 0;
  for (int a = 0; a < 4; ++a)
    for (int b = a + 1; b < 4; ++b) {
      double cov = cross[c++] / n - mean[a] * mean[b];
      double rho = cov / std::sqrt(var[a] * var[b]);
      EXPECT_LT(std::fabs(rho), 0.02) << "pair " << a << "," << b;
    }
}

TEST(Permutations, UnrankEnumeratesLexicographically) {
  std::vector<std::vector<int>> all3;
  for (int r = 0; r < 6; ++r) all3.push_back(platsim::detail::unrank_permutation(r, 3));
  std::vector<std::vector<int>> want{{0, 1, 2}, {0, 2, 1}, {1, 0, 2},
                                     {1, 2, 0}, {2, 0, 1}, {2, 1, 0}};
  EXPECT_EQ(all3, want);

  EXPECT_EQ(platsim::detail::unrank_permutation(0, 4), (std::vector<int>{0, 1, 2, 3}));
  EXPECT_EQ(platsim::detail::unrank_permutation(23, 4), (std::vector<int>{3, 2, 1, 0}));

  std::vector<std::vector<int>> all4;
  for (int r = 0; r < 24; ++r) all4.push_back(platsim::detail::unrank_permutation(r, 4));
  std::sort(all4.begin(), all4.end());
  EXPECT_EQ(std::unique(all4.begin(), all4.end()), all4.end());
}

TEST(Permutations, ChooseRanksCoversOrSubsamples) {
  std::vector<int> full = platsim::detail::choose_ranks(24, 24, 1);
  ASSERT_EQ(full.size(), 24u);
  for (int i = 0; i < 24; ++i) EXPECT_EQ(full[i], i);
  EXPECT_EQ(platsim::detail::choose_ranks(24, 30, 1), full);  // can't oversample

  std::vector<int> sub = platsim::detail::choose_ranks(720, 50, 42);
  ASSERT_EQ(sub.size(), 50u);
  EXPECT_TRUE(std::is_sorted(sub.begin(), sub.end()));
  EXPECT_EQ(std::adjacent_find(sub.begin(), sub.end()), sub.end());
  EXPECT_GE(sub.front(), 0);
  EXPECT_LT(sub.back(), 720);
  EXPECT_EQ(platsim::detail::choose_ranks(720, 50, 42), sub);  // seed-stable
  EXPECT_NE(platsim::detail::choose_ranks(720, 50, 43), sub);
}

TEST(UnivariateChain, RecoversSingleActiveComponent) {
  // Response depends on phi.bb only; the chain should load everything onto
  // that component and leave the other three near zero.
  std::vector<PhiSample> data;
  Rng rng(101);
  auto g = [](double x) { return std::tanh(2 * x); };
  for (int i = 0; i < 800; ++i) {
    PhiSample s;
    s.phi = uniform_phi(rng);
    s.delta_tilde = 0.7 + g(s.phi.bb);
    data.push_back(s);
  }
  double delta0 = 0.0;
  for (const PhiSample& s : data) delta0 += s.delta_tilde;
  delta0 /= data.size();

  auto pass = platsim::fit_univariate_sequence(data, {0, 1, 2, 3}, delta0,
                                               {.n_trees = 200});

  double sse = 0.0, sst = 0.0;
  for (const PhiSample& s : data) {
    double target = s.delta_tilde - delta0;
    double fit = pass.fits[0].predict(s.phi.bb);
    sse += (target - fit) * (target - fit);
    sst += target * target;
  }
  EXPECT_GT(1.0 - sse / sst, 0.9);

  for (int slot = 1; slot < 4; ++slot) {
    double worst = 0.0;
    for (double x = -2.0; x <= 2.0; x += 0.05)
      worst = std::max(worst, std::fabs(pass.fits[slot].predict(x)));
    EXPECT_LT(worst, 0.05) << "slot " << slot;
  }
}

TEST(UnivariateChain, ZeroVarianceResponseGivesZeroComponents) {
  std::vector<PhiSample> data;
  Rng rng(5);
  for (int i = 0; i < 40; ++i) {
    PhiSample s;
    s.phi = uniform_phi(rng);
    s.delta_tilde = 0.75;  // exactly representable
    data.push_back(s);
  }
  auto pass = platsim::fit_univariate_sequence(data, {2, 0, 3, 1}, 0.75,
                                               {.n_trees = 50});
  for (int slot = 0; slot < 4; ++slot)
    for (double x = -2.0; x <= 2.0; x += 0.25)
      EXPECT_EQ(pass.fits[slot].predict(x), 0.0);
  for (double r : pass.residual) EXPECT_EQ(r, 0.0);
}

// Full factorial lattice over symmetric levels. On such a design the rows
// falling into any cell of one predictor carry an identical multiset of the
// other predictors, so a stage fit removes exactly its own component (plus a
// constant) and cannot disturb the others, whatever the fitting order.
std::vector<ExternalityMatrix> factorial_design(const std::vector<double>& levels) {
  std::vector<ExternalityMatrix> out;
  for (double a : levels)
    for (double b : levels)
      for (double c : levels)
        for (double d : levels) {
          ExternalityMatrix phi;
          phi.bb = a;
          phi.ss = b;
          phi.bs = c;
          phi.sb = d;
          out.push_back(phi);
        }
  return out;
}

const std::vector<double> kSixLevels{-5.0 / 3, -1.0, -1.0 / 3, 1.0 / 3, 1.0, 5.0 / 3};

TEST(UnivariateChain, OrderInvarianceOnOrthogonalDesign) {
  std::vector<PhiSample> data;
  for (const ExternalityMatrix& phi : factorial_design(kSixLevels)) {
    PhiSample s;
    s.phi = phi;
    s.delta_tilde = 0.5 + std::tanh(1.5 * phi.bb) + 0.6 * phi.ss +
                    0.4 * std::sin(1.3 * phi.bs) - 0.5 * std::tanh(phi.sb);
    data.push_back(s);
  }
  double delta0 = 0.0;
  for (const PhiSample& s : data) delta0 += s.delta_tilde;
  delta0 /= data.size();

  SmootherConfig cfg{.n_trees = 200, .max_depth = 3, .min_leaf = 25};
  auto fwd = platsim::fit_univariate_sequence(data, {0, 1, 2, 3}, delta0, cfg);
  auto rev = platsim::fit_univariate_sequence(data, {3, 2, 1, 0}, delta0, cfg);

  // fwd.fits[slot] belongs to component slot; rev fits them in reverse.
  for (int key = 0; key < 4; ++key) {
    const auto& a = fwd.fits[key];
    const auto& b = rev.fits[3 - key];
    double worst = 0.0;
    for (double x = -5.0 / 3; x <= 5.0 / 3 + 1e-9; x += 0.05)
      worst = std::max(worst, std::fabs(a.predict(x) - b.predict(x)));
    EXPECT_LT(worst, 0.05) << "component " << key;
  }
}

TEST(UnivariateChain, ResidualTelescopingReplaysExactly) {
  std::vector<PhiSample> data;
  Rng rng(64);
  for (int i = 0; i < 120; ++i) {
    PhiSample s;
    s.phi = uniform_phi(rng);
    s.delta_tilde = rng.normal();
    data.push_back(s);
  }
  double delta0 = 0.0;
  for (const PhiSample& s : data) delta0 += s.delta_tilde;
  delta0 /= data.size();

  std::array<int, 4> order{1, 3, 0, 2};
  auto pass = platsim::fit_univariate_sequence(data, order, delta0, {.n_trees = 60});
  for (std::size_t i = 0; i < data.size(); ++i) {
    double r = data[i].delta_tilde - delta0;
    for (int slot = 0; slot < 4; ++slot)
      r -= pass.fits[slot].predict(platsim::phi_entry(data[i].phi, order[slot]));
    EXPECT_EQ(r, pass.residual[i]) << "row " << i;  // bit-exact replay
  }
}

TEST(BivariateChain, ResidualTelescopingReplaysExactly) {
  std::vector<PhiSample> data;
  std::vector<double> y1;
  Rng rng(65);
  for (int i = 0; i < 100; ++i) {
    PhiSample s;
    s.phi = uniform_phi(rng);
    s.delta_tilde = 0.0;
    data.push_back(s);
    y1.push_back(rng.normal());
  }
  std::array<int, 6> order{4, 0, 5, 2, 1, 3};
  auto pass = platsim::fit_bivariate_sequence(data, y1, order,
                                              {.n_trees = 40, .max_depth = 4});
  for (std::size_t i = 0; i < data.size(); ++i) {
    double r = y1[i];
    for (int slot = 0; slot < 6; ++slot) {
      int pair = order[slot];
      r -= pass.fits[slot].predict(
          {platsim::phi_entry(data[i].phi, platsim::kPairKeys[pair][0]),
           platsim::phi_entry(data[i].phi, platsim::kPairKeys[pair][1])});
    }
    EXPECT_EQ(r, pass.residual[i]) << "row " << i;
  }

  std::vector<double> bad(data.size() + 1, 0.0);
  EXPECT_THROW(platsim::fit_bivariate_sequence(data, bad, order, {}),
               platsim::ShapeMismatch);
}

TEST(AdditiveModel, ConstantDataCollapsesToBaseline) {
  std::vector<PhiSample> data;
  Rng rng(9);
  for (int i = 0; i < 50; ++i) {
    PhiSample s;
    s.phi = uniform_phi(rng);
    s.delta_tilde = 2.25;
    data.push_back(s);
  }
  AdditiveOptions opts;
  opts.n_uni_perms = 3;
  opts.n_biv_perms = 3;
  opts.uni_smoother.n_trees = 30;
  opts.biv_smoother.n_trees = 30;
  AdditiveModel model = platsim::fit_additive_model(data, opts);
  EXPECT_EQ(model.delta0, 2.25);
  Rng probe(10);
  for (int i = 0; i < 20; ++i)
    EXPECT_EQ(model.evaluate(uniform_phi(probe)), 2.25);
}

TEST(AdditiveModel, RecoversGroundTruthComponents) {
  // Odd per-factor interactions and symmetric levels give mean-zero truth
  // with exactly zero conditional means, so on the factorial design the
  // stages are separately identified.
  auto f_bb = [](double x) { return 0.6 * std::tanh(1.5 * x); };
  auto f_ss = [](double x) { return 0.5 * std::cos(0.5 * M_PI * x); };
  auto f_bs = [](double x) { return 0.4 * std::clamp(x, -1.5, 1.5); };
  auto f_sb = [](double x) { return 0.3 * (std::tanh(x) * std::tanh(x) - 0.518); };
  auto g_bb_ss = [](double x, double y) {
    return 0.35 * std::sin(0.5 * M_PI * x) * std::sin(0.5 * M_PI * y);
  };
  auto g_sb_bs = [](double x, double y) { return 0.3 * std::tanh(x) * std::tanh(y); };

  std::vector<PhiSample> data;
  for (const ExternalityMatrix& phi : factorial_design(kSixLevels)) {
    PhiSample s;
    s.phi = phi;
    s.delta_tilde = 0.3 + f_bb(phi.bb) + f_ss(phi.ss) + f_bs(phi.bs) +
                    f_sb(phi.sb) + g_bb_ss(phi.bb, phi.ss) +
                    g_sb_bs(phi.sb, phi.bs);
    data.push_back(s);
  }

  AdditiveOptions opts;
  opts.n_uni_perms = 6;
  opts.n_biv_perms = 12;
  opts.uni_smoother.n_trees = 200;
  opts.biv_smoother.n_trees = 200;
  AdditiveModel model = platsim::fit_additive_model(data, opts);

  // Components are identified up to additive constants (the baseline soaks
  // those up), so compare shapes after removing each side's own grid mean.
  auto sup_centered = [](const std::vector<double>& a, const std::vector<double>& b) {
    double ma = 0.0, mb = 0.0;
    for (double v : a) ma += v;
    for (double v : b) mb += v;
    ma /= a.size();
    mb /= b.size();
    double worst = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
      worst = std::max(worst, std::fabs((a[i] - ma) - (b[i] - mb)));
    return worst;
  };

  std::array<std::function<double(double)>, 4> truth_uni{f_bb, f_ss, f_bs, f_sb};
  for (int k = 0; k < 4; ++k) {
    std::vector<double> pred, truth;
    for (double x : kSixLevels) {
      pred.push_back(model.univariate[k].predict(x));
      truth.push_back(truth_uni[k](x));
    }
    EXPECT_LT(sup_centered(pred, truth), 0.1) << "univariate " << k;
  }

  {
    std::vector<double> pred, truth;
    for (double a : kSixLevels)
      for (double b : kSixLevels) {
        pred.push_back(model.bivariate[0].predict({a, b}));
        truth.push_back(g_bb_ss(a, b));
      }
    EXPECT_LT(sup_centered(pred, truth), 0.1) << "pair bb,ss";
  }
  {
    std::vector<double> pred, truth;
    for (double a : kSixLevels)
      for (double b : kSixLevels) {
        pred.push_back(model.bivariate[1].predict({a, b}));
        truth.push_back(g_sb_bs(a, b));
      }
    EXPECT_LT(sup_centered(pred, truth), 0.1) << "pair sb,bs";
  }
  // The four inactive pairs should stay small everywhere.
  for (int p = 2; p < 6; ++p) {
    double worst = 0.0;
    for (double a : kSixLevels)
      for (double b : kSixLevels)
        worst = std::max(worst, std::fabs(model.bivariate[p].predict({a, b})));
    EXPECT_LT(worst, 0.05) << "pair " << p;
  }

  // Whole model beats the baseline alone by a wide margin (R^2 > 0).
  double sse = 0.0, sst = 0.0;
  for (const PhiSample& s : data) {
    double e = s.delta_tilde - model.evaluate(s.phi);
    double b = s.delta_tilde - model.delta0;
    sse += e * e;
    sst += b * b;
  }
  EXPECT_GT(1.0 - sse / sst, 0.95);

  // The two even truth terms nearly integrate to zero over these levels, so
  // the baseline lands close to the additive constant 0.3.
  EXPECT_NEAR(model.delta0, 0.3, 0.02);
  ASSERT_EQ(model.uni_ranks.size(), 6u);
  ASSERT_EQ(model.biv_ranks.size(), 12u);
  EXPECT_TRUE(std::is_sorted(model.biv_ranks.begin(), model.biv_ranks.end()));
}

TEST(AdditiveModel, ExplainsVarianceOnRandomDesign) {
  // Random (non-orthogonal) sampling, the production use case: the model
  // should still clearly beat the baseline even though sequential residual
  // chains lose some late-stage signal on such designs.
  std::vector<PhiSample> data;
  Rng rng(404);
  for (int i = 0; i < 600; ++i) {
    PhiSample s;
    s.phi = platsim::sample_phi(rng);
    s.delta_tilde = 0.3 + 0.5 * std::tanh(s.phi.bb) - 0.3 * std::tanh(s.phi.ss) +
                    0.25 * std::tanh(s.phi.bb) * std::tanh(s.phi.ss);
    data.push_back(s);
  }
  AdditiveOptions opts;
  opts.n_uni_perms = 4;
  opts.n_biv_perms = 6;
  opts.uni_smoother.n_trees = 120;
  opts.biv_smoother.n_trees = 120;
  AdditiveModel model = platsim::fit_additive_model(data, opts);

  double sse = 0.0, sst = 0.0;
  for (const PhiSample& s : data) {
    double e = s.delta_tilde - model.evaluate(s.phi);
    double b = s.delta_tilde - model.delta0;
    sse += e * e;
    sst += b * b;
  }
  EXPECT_GT(1.0 - sse / sst, 0.5);
}

TEST(AdditiveModel, FitIsDeterministic) {
  std::vector<PhiSample> data;
  Rng rng(51);
  for (int i = 0; i < 80; ++i) {
    PhiSample s;
    s.phi = uniform_phi(rng);
    s.delta_tilde = s.phi.bb * 0.2 + rng.normal() * 0.05;
    data.push_back(s);
  }
  AdditiveOptions opts;
  opts.n_uni_perms = 4;
  opts.n_biv_perms = 5;
  opts.uni_smoother.n_trees = 40;
  opts.biv_smoother.n_trees = 40;
  AdditiveModel a = platsim::fit_additive_model(data, opts);
  AdditiveModel b = platsim::fit_additive_model(data, opts);
  Rng probe(7);
  for (int i = 0; i < 25; ++i) {
    ExternalityMatrix phi = uniform_phi(probe);
    EXPECT_EQ(a.evaluate(phi), b.evaluate(phi));
  }
  EXPECT_EQ(a.uni_ranks, b.uni_ranks);
  EXPECT_EQ(a.biv_ranks, b.biv_ranks);
}

TEST(AdditiveModel, AddingConstantMemberShiftsEvaluationByThatConstant) {
  std::vector<PhiSample> data;
  Rng rng(52);
  for (int i = 0; i < 30; ++i) {
    PhiSample s;
    s.phi = uniform_phi(rng);
    s.delta_tilde = rng.uniform();
    data.push_back(s);
  }
  AdditiveOptions opts;
  opts.n_uni_perms = 2;
  opts.n_biv_perms = 2;
  opts.uni_smoother.n_trees = 20;
  opts.biv_smoother.n_trees = 20;
  AdditiveModel model = platsim::fit_additive_model(data, opts);

  ExternalityMatrix phi = uniform_phi(rng);
  double before = model.evaluate(phi);

  platsim::TreeSmoother constant;
  constant.n_features = 1;
  constant.base = 0.125;  // exactly representable shift
  AdditiveModel shifted = model;
  shifted.univariate[2].members = {constant};
  EXPECT_NEAR(shifted.evaluate(phi) - before + model.univariate[2].predict(phi.bs),
              0.125, 1e-12);
}

TEST(AdditiveModel, CsvExportsHaveExpectedShape) {
  std::vector<PhiSample> data;
  Rng rng(53);
  for (int i = 0; i < 40; ++i) {
    PhiSample s;
    s.phi = uniform_phi(rng);
    s.delta_tilde = s.phi.ss;
    data.push_back(s);
  }
  AdditiveOptions opts;
  opts.n_uni_perms = 2;
  opts.n_biv_perms = 2;
  opts.uni_smoother.n_trees = 15;
  opts.biv_smoother.n_trees = 15;
  AdditiveModel model = platsim::fit_additive_model(data, opts);

  std::string uni = platsim::univariate_curves_csv(model, data, 21);
  EXPECT_EQ(count_lines(uni), 1u + 4u * 21u);
  EXPECT_EQ(uni.substr(0, 18), "component,x,value\n");

  std::string biv = platsim::bivariate_grid_csv(model, data, 11);
  EXPECT_EQ(count_lines(biv), 1u + 6u * 11u * 11u);
  EXPECT_EQ(biv.substr(0, 20), "component,x,y,value\n");
  std::istringstream is(biv);
  std::string line;
  std::getline(is, line);
  std::getline(is, line);
  EXPECT_EQ(line.substr(0, 6), "bb_ss,");
}

TEST(AdditiveModel, RejectsTinyDatasets) {
  std::vector<PhiSample> data(9);
  EXPECT_THROW(platsim::fit_additive_model(data), platsim::TooFewSamples);
}

}  // namespace
