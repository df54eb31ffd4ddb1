#pragma once

// JSON round trip for the tree smoother and the additive decomposition.
// Every double survives exactly because the writer emits shortest
// round-trip decimals, so a reloaded model predicts bit-identically.
//
// Layout sketch:
//   smoother  {"base": .., "n_features": .., "cfg": {..},
//              "trees": [[[left, right, feature, threshold, value], ..], ..]}
//   model     {"delta0": .., "opts": {..}, "uni_ranks": [..], "biv_ranks": [..],
//              "univariate": {"bb": [smoother, ..], ..},
//              "bivariate":  {"bb_ss": [smoother, ..], ..}}
// Component ensembles are keyed by name so the file is self-describing.

#include <fstream>
#include <string>

#include "json.hpp"
#include "platsim/additive.hpp"
#include "platsim/errors.hpp"
#include "platsim/gbrt.hpp"

namespace platsim {

inline nlohmann::json smoother_config_to_json(const SmootherConfig& c) {
  return {{"n_trees", c.n_trees},
          {"max_depth", c.max_depth},
          {"min_leaf", c.min_leaf},
          {"learning_rate", c.learning_rate},
          {"seed", c.seed}};
}

inline SmootherConfig smoother_config_from_json(const nlohmann::json& j) {
  SmootherConfig c;
  c.n_trees = j.at("n_trees").get<int>();
  c.max_depth = j.at("max_depth").get<int>();
  c.min_leaf = j.at("min_leaf").get<int>();
  c.learning_rate = j.at("learning_rate").get<double>();
  c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

inline nlohmann::json smoother_to_json(const TreeSmoother& s) {
  nlohmann::json trees = nlohmann::json::array();
  for (const Tree& t : s.trees) {
    nlohmann::json nodes = nlohmann::json::array();
    for (const TreeNode& n : t.nodes)
      nodes.push_back({n.left, n.right, n.feature, n.threshold, n.value});
    trees.push_back(std::move(nodes));
  }
  return {{"base", s.base},
          {"n_features", s.n_features},
          {"cfg", smoother_config_to_json(s.cfg)},
          {"trees", std::move(trees)}};
}

inline TreeSmoother smoother_from_json(const nlohmann::json& j) {
  TreeSmoother s;
  s.base = j.at("base").get<double>();
  s.n_features = j.at("n_features").get<int>();
  s.cfg = smoother_config_from_json(j.at("cfg"));
  for (const nlohmann::json& jt : j.at("trees")) {
    Tree t;
    for (const nlohmann::json& jn : jt) {
      if (!jn.is_array() || jn.size() != 5)
        throw IoError("malformed tree node, expected [left, right, feature, threshold, value]");
      TreeNode n;
      n.left = jn[0].get<std::int16_t>();
      n.right = jn[1].get<std::int16_t>();
      n.feature = jn[2].get<std::int8_t>();
      n.threshold = jn[3].get<double>();
      n.value = jn[4].get<double>();
      t.nodes.push_back(n);
    }
    if (t.nodes.empty()) throw IoError("tree with no nodes in model file");
    s.trees.push_back(std::move(t));
  }
  return s;
}

inline nlohmann::json additive_options_to_json(const AdditiveOptions& o) {
  return {{"n_uni_perms", o.n_uni_perms},
          {"n_biv_perms", o.n_biv_perms},
          {"perm_seed", o.perm_seed},
          {"uni_smoother", smoother_config_to_json(o.uni_smoother)},
          {"biv_smoother", smoother_config_to_json(o.biv_smoother)}};
}

inline AdditiveOptions additive_options_from_json(const nlohmann::json& j) {
  AdditiveOptions o;
  o.n_uni_perms = j.at("n_uni_perms").get<int>();
  o.n_biv_perms = j.at("n_biv_perms").get<int>();
  o.perm_seed = j.at("perm_seed").get<std::uint64_t>();
  o.uni_smoother = smoother_config_from_json(j.at("uni_smoother"));
  o.biv_smoother = smoother_config_from_json(j.at("biv_smoother"));
  return o;
}

inline nlohmann::json additive_model_to_json(const AdditiveModel& m) {
  nlohmann::json uni = nlohmann::json::object();
  for (int k = 0; k < 4; ++k) {
    nlohmann::json members = nlohmann::json::array();
    for (const TreeSmoother& s : m.univariate[k].members) members.push_back(smoother_to_json(s));
    uni[kUniNames[k]] = std::move(members);
  }
  nlohmann::json biv = nlohmann::json::object();
  for (int p = 0; p < 6; ++p) {
    nlohmann::json members = nlohmann::json::array();
    for (const TreeSmoother& s : m.bivariate[p].members) members.push_back(smoother_to_json(s));
    biv[pair_name(p)] = std::move(members);
  }
  return {{"delta0", m.delta0},
          {"opts", additive_options_to_json(m.opts)},
          {"uni_ranks", m.uni_ranks},
          {"biv_ranks", m.biv_ranks},
          {"univariate", std::move(uni)},
          {"bivariate", std::move(biv)}};
}

inline AdditiveModel additive_model_from_json(const nlohmann::json& j) {
  AdditiveModel m;
  m.delta0 = j.at("delta0").get<double>();
  m.opts = additive_options_from_json(j.at("opts"));
  m.uni_ranks = j.at("uni_ranks").get<std::vector<int>>();
  m.biv_ranks = j.at("biv_ranks").get<std::vector<int>>();
  for (int k = 0; k < 4; ++k) {
    for (const nlohmann::json& js : j.at("univariate").at(kUniNames[k]))
      m.univariate[k].members.push_back(smoother_from_json(js));
  }
  for (int p = 0; p < 6; ++p) {
    for (const nlohmann::json& js : j.at("bivariate").at(pair_name(p)))
      m.bivariate[p].members.push_back(smoother_from_json(js));
  }
  return m;
}

inline void save_model(const std::string& path, const AdditiveModel& m) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write model file: " + path);
  out << additive_model_to_json(m).dump(1) << '\n';
  if (!out.good()) throw IoError("write failed: " + path);
}

inline AdditiveModel load_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open model file: " + path);
  nlohmann::json j;
  try {
    in >> j;
    return additive_model_from_json(j);
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed model file " + path + ": " + e.what());
  }
}

}  // namespace platsim
