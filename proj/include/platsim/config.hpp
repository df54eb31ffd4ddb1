#pragma once

// Experiment configuration: a JSON schema with fail-closed parsing, presets,
// and a content hash that names the output directory.
//
// Top-level keys (all optional unless noted):
//   schema_version   required, must be 1
//   preset           "desk" (default) or "paper"; fills t_steps and
//                    runs_per_point before any explicit key overrides them
//   out_dir          parent directory for results (default "out")
//   base_seed        root of every per-run seed (default 1)
//   runs_per_point   simulations per sweep point (preset default: 20 / 100)
//   save_q_tables    dump final Q tables per run (default false; at m=15 a
//                    single table is ~91 MB, so this is opt-in)
//   save_tails       dump the recorded action tail per run (default true)
//   market           beta_b, beta_s, u0_b, u0_s, phi {bb, bs, sb, ss}
//   learning         alpha, delta, m, grid_eps, t_steps, k_report,
//                    tail_window, temp0, lambda, temp_floor, rho,
//                    update_target ("next-state" or "literal-eq9")
//   sweep            axis plus its parameters, see below
//
// The sweep block names exactly one axis:
//   "none"                       single point at the base parameters
//   "delta", "rho"               learning-side scalar sweeps
//   "beta", "u0"                 market-side sweeps, applied to both sides
//   "phi-grid"                   sweeps one externality entry; "entry" picks
//                                bb / ss / bs / sb, or diag (bb and ss
//                                together) / offdiag (bs and sb together)
//   "phi-random"                 n_points independent standard-normal draws
//                                of the full externality matrix
// Scalar axes and phi-grid take either an explicit "values" array or an
// inclusive "from"/"to"/"step" range, never both. Whether each value yields
// a solvable market is a per-point question; the sweep runner records
// unsolvable points as skipped instead of failing the whole config.
//
// Unknown keys anywhere are errors: a typo must never silently fall back to
// a default. Error messages carry the slash-separated path of the offender.
//
// The hash covers everything that affects results (so it excludes out_dir),
// and ranges are resolved to value lists first, so two spellings of the same
// sweep hash identically.

#include <cinttypes>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <initializer_list>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "platsim/errors.hpp"
#include "platsim/market.hpp"
#include "platsim/qlearn.hpp"

namespace platsim {

enum class SweepAxis { none, phi_grid, phi_random, beta, u0, delta, rho };
enum class PhiEntry { bb, ss, bs, sb, diag, offdiag };

inline const char* to_string(SweepAxis a) {
  switch (a) {
    case SweepAxis::none: return "none";
    case SweepAxis::phi_grid: return "phi-grid";
    case SweepAxis::phi_random: return "phi-random";
    case SweepAxis::beta: return "beta";
    case SweepAxis::u0: return "u0";
    case SweepAxis::delta: return "delta";
    case SweepAxis::rho: return "rho";
  }
  return "?";
}

inline const char* to_string(PhiEntry e) {
  switch (e) {
    case PhiEntry::bb: return "bb";
    case PhiEntry::ss: return "ss";
    case PhiEntry::bs: return "bs";
    case PhiEntry::sb: return "sb";
    case PhiEntry::diag: return "diag";
    case PhiEntry::offdiag: return "offdiag";
  }
  return "?";
}

struct SweepSpec {
  SweepAxis axis = SweepAxis::none;
  PhiEntry entry = PhiEntry::bb;  // phi-grid only
  std::vector<double> values;     // resolved list, scalar axes and phi-grid
  int n_points = 0;               // phi-random only
};

namespace detail {

inline std::uint64_t fnv1a64(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016" PRIx64, v);
  return buf;
}

inline std::string join_path(const std::string& base, const std::string& key) {
  return base.empty() ? key : base + "/" + key;
}

inline const nlohmann::json* find_key(const nlohmann::json& o, const char* key) {
  auto it = o.find(key);
  return it == o.end() ? nullptr : &*it;
}

inline void check_keys(const nlohmann::json& o, const std::string& base,
                       std::initializer_list<const char*> allowed) {
  for (auto it = o.begin(); it != o.end(); ++it) {
    bool known = false;
    for (const char* k : allowed) {
      if (it.key() == k) {
        known = true;
        break;
      }
    }
    if (!known) throw ConfigError(join_path(base, it.key()), "unknown key");
  }
}

inline const nlohmann::json& require_object(const nlohmann::json& o, const std::string& path) {
  if (!o.is_object()) throw ConfigError(path, "must be a JSON object");
  return o;
}

inline double get_num(const nlohmann::json& o, const std::string& base, const char* key,
                      double fallback) {
  const nlohmann::json* v = find_key(o, key);
  if (!v) return fallback;
  if (!v->is_number()) throw ConfigError(join_path(base, key), "must be a number");
  return v->get<double>();
}

// Accepts integers and floats with an exact integral value (so "2e6" works).
inline std::int64_t get_int(const nlohmann::json& o, const std::string& base, const char* key,
                            std::int64_t fallback) {
  const nlohmann::json* v = find_key(o, key);
  if (!v) return fallback;
  if (v->is_number_integer()) return v->get<std::int64_t>();
  if (v->is_number_float()) {
    double d = v->get<double>();
    if (std::floor(d) == d && std::abs(d) <= 9.007199254740992e15)
      return static_cast<std::int64_t>(d);
  }
  throw ConfigError(join_path(base, key), "must be an integer");
}

inline std::uint64_t get_u64(const nlohmann::json& o, const std::string& base, const char* key,
                             std::uint64_t fallback) {
  const nlohmann::json* v = find_key(o, key);
  if (!v) return fallback;
  if (v->is_number_unsigned()) return v->get<std::uint64_t>();
  if (v->is_number_integer() && v->get<std::int64_t>() >= 0)
    return static_cast<std::uint64_t>(v->get<std::int64_t>());
  throw ConfigError(join_path(base, key), "must be a non-negative integer");
}

inline bool get_bool(const nlohmann::json& o, const std::string& base, const char* key,
                     bool fallback) {
  const nlohmann::json* v = find_key(o, key);
  if (!v) return fallback;
  if (!v->is_boolean()) throw ConfigError(join_path(base, key), "must be true or false");
  return v->get<bool>();
}

inline std::string get_str(const nlohmann::json& o, const std::string& base, const char* key,
                           const std::string& fallback) {
  const nlohmann::json* v = find_key(o, key);
  if (!v) return fallback;
  if (!v->is_string()) throw ConfigError(join_path(base, key), "must be a string");
  return v->get<std::string>();
}

}  // namespace detail

inline SweepAxis axis_from_string(const std::string& s) {
  for (SweepAxis a : {SweepAxis::none, SweepAxis::phi_grid, SweepAxis::phi_random,
                      SweepAxis::beta, SweepAxis::u0, SweepAxis::delta, SweepAxis::rho}) {
    if (s == to_string(a)) return a;
  }
  throw ConfigError("sweep/axis",
                    "must be one of none, phi-grid, phi-random, beta, u0, delta, rho");
}

inline PhiEntry phi_entry_from_string(const std::string& s) {
  for (PhiEntry e : {PhiEntry::bb, PhiEntry::ss, PhiEntry::bs, PhiEntry::sb, PhiEntry::diag,
                     PhiEntry::offdiag}) {
    if (s == to_string(e)) return e;
  }
  throw ConfigError("sweep/entry", "must be one of bb, ss, bs, sb, diag, offdiag");
}

struct ExperimentConfig {
  int schema_version = 1;
  std::string preset = "desk";
  MarketParams market;
  LearningConfig learning;  // .seed is ignored; seeds are derived per run
  SweepSpec sweep;
  int runs_per_point = 20;
  std::uint64_t base_seed = 1;
  std::string out_dir = "out";
  bool save_q_tables = false;
  bool save_tails = true;

  void validate() const {
    if (schema_version != 1)
      throw ConfigError("schema_version", "unsupported version, expected 1");
    if (preset != "desk" && preset != "paper")
      throw ConfigError("preset", "must be \"desk\" or \"paper\"");
    market.validate();
    learning.validate();
    if (preset == "desk" && learning.t_steps > 10000000)
      throw ConfigError("learning/t_steps", "desk preset caps t_steps at 10000000");
    if (runs_per_point < 1) throw ConfigError("runs_per_point", "must be >= 1");
    if (out_dir.empty()) throw ConfigError("out_dir", "must not be empty");

    switch (sweep.axis) {
      case SweepAxis::none:
        if (!sweep.values.empty() || sweep.n_points != 0)
          throw ConfigError("sweep", "axis \"none\" takes no values");
        break;
      case SweepAxis::phi_random:
        if (!sweep.values.empty())
          throw ConfigError("sweep/values", "phi-random takes n_points, not values");
        if (sweep.n_points < 1) throw ConfigError("sweep/n_points", "must be >= 1");
        break;
      default:
        if (sweep.n_points != 0)
          throw ConfigError("sweep/n_points", "only valid for axis \"phi-random\"");
        if (sweep.values.empty()) throw ConfigError("sweep/values", "must not be empty");
        for (double v : sweep.values) {
          if (!std::isfinite(v)) throw ConfigError("sweep/values", "must be finite");
        }
        break;
    }
  }

  // Canonical JSON form. The hash variant drops out_dir: relocating output
  // does not change what was computed.
  nlohmann::json to_json(bool include_out_dir = true) const {
    nlohmann::json j;
    j["schema_version"] = schema_version;
    j["preset"] = preset;
    if (include_out_dir) j["out_dir"] = out_dir;
    j["base_seed"] = base_seed;
    j["runs_per_point"] = runs_per_point;
    j["save_q_tables"] = save_q_tables;
    j["save_tails"] = save_tails;
    j["market"] = {{"beta_b", market.beta_b},
                   {"beta_s", market.beta_s},
                   {"u0_b", market.u0_b},
                   {"u0_s", market.u0_s},
                   {"phi",
                    {{"bb", market.phi.bb},
                     {"bs", market.phi.bs},
                     {"sb", market.phi.sb},
                     {"ss", market.phi.ss}}}};
    j["learning"] = {
        {"alpha", learning.alpha},
        {"delta", learning.delta},
        {"m", learning.m},
        {"grid_eps", learning.grid_eps},
        {"t_steps", learning.t_steps},
        {"k_report", learning.k_report},
        {"tail_window", learning.tail_window},
        {"temp0", learning.temp0},
        {"lambda", learning.lambda},
        {"temp_floor", learning.temp_floor},
        {"rho", learning.rho},
        {"update_target",
         learning.update_target == UpdateTarget::next_state ? "next-state" : "literal-eq9"}};
    nlohmann::json sw;
    sw["axis"] = to_string(sweep.axis);
    if (sweep.axis == SweepAxis::phi_random) {
      sw["n_points"] = sweep.n_points;
    } else if (sweep.axis != SweepAxis::none) {
      if (sweep.axis == SweepAxis::phi_grid) sw["entry"] = to_string(sweep.entry);
      sw["values"] = sweep.values;
    }
    j["sweep"] = sw;
    return j;
  }

  // FNV-1a over the canonical serialization; stable across platforms because
  // the writer emits shortest round-trip decimals and sorts object keys.
  std::string hash() const { return detail::hex64(detail::fnv1a64(to_json(false).dump())); }

  static ExperimentConfig from_json(const nlohmann::json& root);
  static ExperimentConfig from_file(const std::string& path);
};

namespace detail {

inline std::vector<double> expand_sweep_range(const nlohmann::json& sw) {
  const nlohmann::json* pf = find_key(sw, "from");
  const nlohmann::json* pt = find_key(sw, "to");
  const nlohmann::json* ps = find_key(sw, "step");
  if (!pf || !pt || !ps)
    throw ConfigError("sweep", "a range needs all of from, to and step");
  double from = get_num(sw, "sweep", "from", 0.0);
  double to = get_num(sw, "sweep", "to", 0.0);
  double step = get_num(sw, "sweep", "step", 0.0);
  if (!std::isfinite(from) || !std::isfinite(to))
    throw ConfigError("sweep/from", "range endpoints must be finite");
  if (!(step > 0.0) || !std::isfinite(step))
    throw ConfigError("sweep/step", "must be finite and > 0");
  if (to < from) throw ConfigError("sweep/to", "must be >= from");
  // Inclusive endpoint with a small slack so from=0, to=1, step=0.1 lands
  // on 1.0 despite binary rounding.
  double slack = 1e-9 * std::max({1.0, std::abs(from), std::abs(to)});
  double count = std::floor((to - from) / step + slack);
  if (count > 9999.0) throw ConfigError("sweep/step", "expands to more than 10000 points");
  std::vector<double> v;
  for (long k = 0; k <= static_cast<long>(count); ++k)
    v.push_back(from + static_cast<double>(k) * step);
  return v;
}

}  // namespace detail

inline ExperimentConfig ExperimentConfig::from_json(const nlohmann::json& root) {
  detail::require_object(root, "");
  detail::check_keys(root, "",
                     {"schema_version", "preset", "out_dir", "base_seed", "runs_per_point",
                      "save_q_tables", "save_tails", "market", "learning", "sweep"});

  ExperimentConfig c;
  const nlohmann::json* sv = detail::find_key(root, "schema_version");
  if (!sv) throw ConfigError("schema_version", "required");
  c.schema_version = static_cast<int>(detail::get_int(root, "", "schema_version", 0));
  if (c.schema_version != 1)
    throw ConfigError("schema_version", "unsupported version, expected 1");

  c.preset = detail::get_str(root, "", "preset", "desk");
  if (c.preset == "desk") {
    c.learning.t_steps = 2000000;
    c.runs_per_point = 20;
  } else if (c.preset == "paper") {
    c.learning.t_steps = kPaperSteps;
    c.runs_per_point = 100;
  } else {
    throw ConfigError("preset", "must be \"desk\" or \"paper\"");
  }

  c.out_dir = detail::get_str(root, "", "out_dir", c.out_dir);
  c.base_seed = detail::get_u64(root, "", "base_seed", c.base_seed);
  c.runs_per_point =
      static_cast<int>(detail::get_int(root, "", "runs_per_point", c.runs_per_point));
  c.save_q_tables = detail::get_bool(root, "", "save_q_tables", c.save_q_tables);
  c.save_tails = detail::get_bool(root, "", "save_tails", c.save_tails);

  if (const nlohmann::json* m = detail::find_key(root, "market")) {
    detail::require_object(*m, "market");
    detail::check_keys(*m, "market", {"beta_b", "beta_s", "u0_b", "u0_s", "phi"});
    c.market.beta_b = detail::get_num(*m, "market", "beta_b", c.market.beta_b);
    c.market.beta_s = detail::get_num(*m, "market", "beta_s", c.market.beta_s);
    c.market.u0_b = detail::get_num(*m, "market", "u0_b", c.market.u0_b);
    c.market.u0_s = detail::get_num(*m, "market", "u0_s", c.market.u0_s);
    if (const nlohmann::json* p = detail::find_key(*m, "phi")) {
      detail::require_object(*p, "market/phi");
      detail::check_keys(*p, "market/phi", {"bb", "bs", "sb", "ss"});
      c.market.phi.bb = detail::get_num(*p, "market/phi", "bb", 0.0);
      c.market.phi.bs = detail::get_num(*p, "market/phi", "bs", 0.0);
      c.market.phi.sb = detail::get_num(*p, "market/phi", "sb", 0.0);
      c.market.phi.ss = detail::get_num(*p, "market/phi", "ss", 0.0);
    }
  }

  if (const nlohmann::json* l = detail::find_key(root, "learning")) {
    detail::require_object(*l, "learning");
    detail::check_keys(*l, "learning",
                       {"alpha", "delta", "m", "grid_eps", "t_steps", "k_report",
                        "tail_window", "temp0", "lambda", "temp_floor", "rho",
                        "update_target"});
    c.learning.alpha = detail::get_num(*l, "learning", "alpha", c.learning.alpha);
    c.learning.delta = detail::get_num(*l, "learning", "delta", c.learning.delta);
    c.learning.m = static_cast<int>(detail::get_int(*l, "learning", "m", c.learning.m));
    c.learning.grid_eps = detail::get_num(*l, "learning", "grid_eps", c.learning.grid_eps);
    c.learning.t_steps = detail::get_int(*l, "learning", "t_steps", c.learning.t_steps);
    c.learning.k_report = detail::get_int(*l, "learning", "k_report", c.learning.k_report);
    c.learning.tail_window =
        detail::get_int(*l, "learning", "tail_window", c.learning.tail_window);
    c.learning.temp0 = detail::get_num(*l, "learning", "temp0", c.learning.temp0);
    c.learning.lambda = detail::get_num(*l, "learning", "lambda", c.learning.lambda);
    c.learning.temp_floor =
        detail::get_num(*l, "learning", "temp_floor", c.learning.temp_floor);
    c.learning.rho = detail::get_num(*l, "learning", "rho", c.learning.rho);
    std::string ut = detail::get_str(*l, "learning", "update_target", "next-state");
    if (ut == "next-state") {
      c.learning.update_target = UpdateTarget::next_state;
    } else if (ut == "literal-eq9") {
      c.learning.update_target = UpdateTarget::literal_eq9;
    } else {
      throw ConfigError("learning/update_target",
                        "must be \"next-state\" or \"literal-eq9\"");
    }
  }

  if (const nlohmann::json* sw = detail::find_key(root, "sweep")) {
    detail::require_object(*sw, "sweep");
    detail::check_keys(*sw, "sweep",
                       {"axis", "values", "from", "to", "step", "entry", "n_points"});
    std::string axis = detail::get_str(*sw, "sweep", "axis", "");
    if (axis.empty()) throw ConfigError("sweep/axis", "required");
    c.sweep.axis = axis_from_string(axis);

    const nlohmann::json* vals = detail::find_key(*sw, "values");
    bool has_range = detail::find_key(*sw, "from") || detail::find_key(*sw, "to") ||
                     detail::find_key(*sw, "step");
    const nlohmann::json* entry = detail::find_key(*sw, "entry");
    const nlohmann::json* np = detail::find_key(*sw, "n_points");

    switch (c.sweep.axis) {
      case SweepAxis::none:
        if (vals || has_range || entry || np)
          throw ConfigError("sweep", "axis \"none\" takes no further keys");
        break;
      case SweepAxis::phi_random:
        if (vals || has_range || entry)
          throw ConfigError("sweep", "phi-random takes only n_points");
        c.sweep.n_points = static_cast<int>(detail::get_int(*sw, "sweep", "n_points", 0));
        break;
      default: {
        if (np) throw ConfigError("sweep/n_points", "only valid for axis \"phi-random\"");
        if (c.sweep.axis == SweepAxis::phi_grid) {
          if (!entry) throw ConfigError("sweep/entry", "required for axis \"phi-grid\"");
          c.sweep.entry = phi_entry_from_string(detail::get_str(*sw, "sweep", "entry", ""));
        } else if (entry) {
          throw ConfigError("sweep/entry", "only valid for axis \"phi-grid\"");
        }
        if (vals && has_range)
          throw ConfigError("sweep", "give either values or from/to/step, not both");
        if (vals) {
          if (!vals->is_array() || vals->empty())
            throw ConfigError("sweep/values", "must be a non-empty array");
          for (const nlohmann::json& x : *vals) {
            if (!x.is_number()) throw ConfigError("sweep/values", "must be numbers");
            c.sweep.values.push_back(x.get<double>());
          }
        } else if (has_range) {
          c.sweep.values = detail::expand_sweep_range(*sw);
        } else {
          throw ConfigError("sweep", "give either values or from/to/step");
        }
        break;
      }
    }
  }

  c.validate();
  return c;
}

inline ExperimentConfig ExperimentConfig::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("", std::string("invalid JSON in ") + path + ": " + e.what());
  }
  return from_json(j);
}

}  // namespace platsim
