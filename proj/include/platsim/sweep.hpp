#pragma once

// Sweep orchestration. A config expands into points; every point's market is
// solved once up front (equilibria, price grid, profit table), then the
// (point, run) jobs fan out over a worker pool. All artifacts land under
// <out_dir>/<config hash>/:
//
//   config.json     the resolved config, re-parseable as-is
//   records.jsonl   one line per run, in (point, run) order
//   points.jsonl    per-point anchors, or the reason the point was skipped
//   summary.csv     point, mean, ci_lo, ci_hi, n_ok, n_rejected
//   traces/         recorded action tails (save_tails)
//   qdumps/         final Q tables (save_q_tables)
//
// Per-run seeds depend only on (base_seed, point index, run index), so the
// records are identical for any worker count, and a skipped point never
// shifts the seeds of its neighbors. Reruns of the same config are
// byte-identical except for the wall_ms timing field.
//
// A point that fails to solve (no equilibrium, share fixed point divergence,
// degenerate grid or profit gap, out-of-domain parameter) is recorded as
// skipped with its reason; the sweep carries on. Points are all solved and
// held in memory before any run starts; at m=15 a point costs about 0.8 MB.

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"
#include "platsim/additive.hpp"
#include "platsim/config.hpp"
#include "platsim/errors.hpp"
#include "platsim/market.hpp"
#include "platsim/metrics.hpp"
#include "platsim/qdump.hpp"
#include "platsim/qlearn.hpp"
#include "platsim/rng.hpp"

namespace platsim {

struct SweepPoint {
  int index = 0;
  nlohmann::json coords;  // axis label plus this point's coordinates
  bool has_axis_value = false;
  double axis_value = 0.0;  // scalar x for summary.csv when meaningful
  MarketParams params;
  LearningConfig learning;
};

namespace detail {

inline nlohmann::json phi_to_json(const ExternalityMatrix& phi) {
  return {{"bb", phi.bb}, {"bs", phi.bs}, {"sb", phi.sb}, {"ss", phi.ss}};
}

// Shortest exact decimal for a double, reused for CSV cells so the tables
// carry full precision without padding zeros.
inline std::string shortest(double v) { return nlohmann::json(v).dump(); }

}  // namespace detail

// Materializes the sweep axis into concrete per-point parameters. The random
// phi stream is keyed off the base seed but kept disjoint from run seeds.
inline std::vector<SweepPoint> expand_points(const ExperimentConfig& cfg) {
  std::vector<SweepPoint> pts;
  auto scalar_point = [&](int i, double v) {
    SweepPoint p;
    p.index = i;
    p.has_axis_value = true;
    p.axis_value = v;
    p.params = cfg.market;
    p.learning = cfg.learning;
    p.coords = {{"axis", to_string(cfg.sweep.axis)}, {"value", v}};
    return p;
  };

  switch (cfg.sweep.axis) {
    case SweepAxis::none: {
      SweepPoint p;
      p.index = 0;
      p.params = cfg.market;
      p.learning = cfg.learning;
      p.coords = {{"axis", "none"}};
      pts.push_back(std::move(p));
      break;
    }
    case SweepAxis::delta:
      for (std::size_t i = 0; i < cfg.sweep.values.size(); ++i) {
        SweepPoint p = scalar_point(static_cast<int>(i), cfg.sweep.values[i]);
        p.learning.delta = cfg.sweep.values[i];
        pts.push_back(std::move(p));
      }
      break;
    case SweepAxis::rho:
      for (std::size_t i = 0; i < cfg.sweep.values.size(); ++i) {
        SweepPoint p = scalar_point(static_cast<int>(i), cfg.sweep.values[i]);
        p.learning.rho = cfg.sweep.values[i];
        pts.push_back(std::move(p));
      }
      break;
    case SweepAxis::beta:
      for (std::size_t i = 0; i < cfg.sweep.values.size(); ++i) {
        SweepPoint p = scalar_point(static_cast<int>(i), cfg.sweep.values[i]);
        p.params.beta_b = p.params.beta_s = cfg.sweep.values[i];
        pts.push_back(std::move(p));
      }
      break;
    case SweepAxis::u0:
      for (std::size_t i = 0; i < cfg.sweep.values.size(); ++i) {
        SweepPoint p = scalar_point(static_cast<int>(i), cfg.sweep.values[i]);
        p.params.u0_b = p.params.u0_s = cfg.sweep.values[i];
        pts.push_back(std::move(p));
      }
      break;
    case SweepAxis::phi_grid:
      for (std::size_t i = 0; i < cfg.sweep.values.size(); ++i) {
        SweepPoint p = scalar_point(static_cast<int>(i), cfg.sweep.values[i]);
        double v = cfg.sweep.values[i];
        switch (cfg.sweep.entry) {
          case PhiEntry::bb: p.params.phi.bb = v; break;
          case PhiEntry::ss: p.params.phi.ss = v; break;
          case PhiEntry::bs: p.params.phi.bs = v; break;
          case PhiEntry::sb: p.params.phi.sb = v; break;
          case PhiEntry::diag: p.params.phi.bb = p.params.phi.ss = v; break;
          case PhiEntry::offdiag: p.params.phi.bs = p.params.phi.sb = v; break;
        }
        p.coords["entry"] = to_string(cfg.sweep.entry);
        p.coords["phi"] = detail::phi_to_json(p.params.phi);
        pts.push_back(std::move(p));
      }
      break;
    case SweepAxis::phi_random: {
      Rng root(cfg.base_seed ^ 0x9e3779b97f4a7c15ULL);
      for (int i = 0; i < cfg.sweep.n_points; ++i) {
        SweepPoint p;
        p.index = i;
        p.params = cfg.market;
        p.learning = cfg.learning;
        Rng ri = root.split(static_cast<std::uint64_t>(i));
        p.params.phi = sample_phi(ri);
        p.coords = {{"axis", "phi-random"},
                    {"index", i},
                    {"phi", detail::phi_to_json(p.params.phi)}};
        pts.push_back(std::move(p));
      }
      break;
    }
  }
  return pts;
}

struct SweepOutcome {
  std::filesystem::path dir;  // out_dir / config hash
  std::string config_hash;
  int n_points = 0;
  int n_points_ok = 0;
  int n_points_skipped = 0;
  int n_runs_ok = 0;
  int n_runs_rejected = 0;
};

namespace detail {

struct PointState {
  SweepPoint spec;
  bool ok = false;
  std::string reason;
  EquilibriumPair eq;
  PriceGrid grid;
  ProfitTable table;
};

struct SweepJob {
  int point = 0;      // index into the point vector
  int run = 0;        // run index within the point
  std::int64_t g = 0; // global index feeding the seed derivation
};

struct JobOut {
  bool ok = false;
  std::string reason;
  double delta_tilde = 0.0;
  std::uint64_t seed = 0;
  double wall_ms = 0.0;
  bool temp_floor_reached = false;
  std::string trace_path;  // relative to the result dir, empty if not saved
  std::array<std::string, 2> q_paths;
};

}  // namespace detail

inline SweepOutcome run_sweep(const ExperimentConfig& cfg, int workers = 1,
                              std::ostream* log = nullptr) {
  cfg.validate();
  if (workers < 1) throw ConfigError("workers", "must be >= 1");

  SweepOutcome out;
  out.config_hash = cfg.hash();
  out.dir = std::filesystem::path(cfg.out_dir) / out.config_hash;
  std::error_code ec;
  std::filesystem::create_directories(out.dir, ec);
  if (ec) throw IoError("cannot create " + out.dir.string() + ": " + ec.message());
  if (cfg.save_tails) std::filesystem::create_directories(out.dir / "traces", ec);
  if (cfg.save_q_tables) std::filesystem::create_directories(out.dir / "qdumps", ec);
  if (ec) throw IoError("cannot create artifact dirs under " + out.dir.string());

  // Solve every point before any run starts. Serial and in point order, so
  // the points file and all downstream seeds are scheduling-independent.
  std::vector<SweepPoint> specs = expand_points(cfg);
  std::vector<detail::PointState> points(specs.size());
  out.n_points = static_cast<int>(specs.size());
  for (std::size_t i = 0; i < specs.size(); ++i) {
    detail::PointState& st = points[i];
    st.spec = std::move(specs[i]);
    try {
      st.spec.params.validate();
      st.spec.learning.validate();
      st.eq = solve_equilibria(st.spec.params);
      double gap = st.eq.coll.profit - st.eq.nash.profit;
      if (std::abs(gap) < 1e-8) throw DegenerateDenominator(gap);
      st.grid = PriceGrid::build(st.eq, st.spec.learning.grid_eps, st.spec.learning.m);
      st.table = ProfitTable::build(st.grid, st.spec.params);
      st.ok = true;
      ++out.n_points_ok;
    } catch (const std::runtime_error& e) {
      st.reason = e.what();
      ++out.n_points_skipped;
    }
    if (log)
      *log << "point " << st.spec.index << "/" << out.n_points << ": "
           << (st.ok ? "solved" : "skipped: " + st.reason) << "\n";
  }

  // One job per (solvable point, run). The global index g fixes the seed and
  // is derived from the point index, not the job position, so skipped points
  // do not reseed anything else.
  std::vector<detail::SweepJob> jobs;
  for (const detail::PointState& st : points) {
    if (!st.ok) continue;
    for (int r = 0; r < cfg.runs_per_point; ++r) {
      std::int64_t g =
          static_cast<std::int64_t>(st.spec.index) * cfg.runs_per_point + r;
      jobs.push_back({st.spec.index, r, g});
    }
  }

  std::vector<detail::JobOut> outs(jobs.size());
  std::atomic<std::size_t> cursor{0};
  auto work = [&]() {
    for (;;) {
      std::size_t k = cursor.fetch_add(1);
      if (k >= jobs.size()) return;
      const detail::SweepJob& jb = jobs[k];
      const detail::PointState& st = points[jb.point];
      detail::JobOut& o = outs[k];
      LearningConfig lc = st.spec.learning;
      lc.seed = run_rng(cfg.base_seed, static_cast<std::uint64_t>(jb.g)).next_u64();
      o.seed = lc.seed;
      try {
        RunResult r = run_simulation_with(st.grid, st.table, st.eq.nash.profit,
                                          st.eq.coll.profit, lc);
        o.ok = true;
        o.delta_tilde = r.delta_tilde;
        o.wall_ms = r.wall_ms;
        LearningConfig rc = resolved(lc);
        o.temp_floor_reached = temperature(rc.t_steps - 1, rc) <= rc.temp_floor;
        char name[64];
        if (cfg.save_tails) {
          std::snprintf(name, sizeof name, "traces/p%03d_r%03d.bin", jb.point, jb.run);
          write_tail((out.dir / name).string(), r.tail, st.grid.m);
          o.trace_path = name;
        }
        if (cfg.save_q_tables) {
          for (int pl = 0; pl < 2; ++pl) {
            std::snprintf(name, sizeof name, "qdumps/p%03d_r%03d_q%d.bin", jb.point,
                          jb.run, pl);
            write_qdump((out.dir / name).string(), r.q[pl], pl);
            o.q_paths[pl] = name;
          }
        }
      } catch (const std::runtime_error& e) {
        o.ok = false;
        o.reason = e.what();
      }
    }
  };
  if (workers == 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(work);
    for (std::thread& t : pool) t.join();
  }

  // All output files are written by this thread, in point-then-run order.
  std::ofstream cfg_out(out.dir / "config.json", std::ios::trunc);
  cfg_out << cfg.to_json(true).dump(1) << '\n';
  if (!cfg_out.good()) throw IoError("write failed: " + (out.dir / "config.json").string());

  std::ofstream pts_out(out.dir / "points.jsonl", std::ios::trunc);
  for (const detail::PointState& st : points) {
    nlohmann::json line = {{"point_index", st.spec.index},
                           {"coords", st.spec.coords},
                           {"status", st.ok ? "ok" : "skipped"}};
    if (st.ok) {
      line["p_star"] = {{"b", st.eq.nash.price.b}, {"s", st.eq.nash.price.s}};
      line["p_coll"] = {{"b", st.eq.coll.price.b}, {"s", st.eq.coll.price.s}};
      line["pi_star"] = st.eq.nash.profit;
      line["pi_coll"] = st.eq.coll.profit;
      line["grid_b"] = {st.grid.b.front(), st.grid.b.back()};
      line["grid_s"] = {st.grid.s.front(), st.grid.s.back()};
    } else {
      line["reason"] = st.reason;
    }
    pts_out << line.dump() << '\n';
  }
  if (!pts_out.good()) throw IoError("write failed: " + (out.dir / "points.jsonl").string());

  std::ofstream rec_out(out.dir / "records.jsonl", std::ios::trunc);
  for (std::size_t k = 0; k < jobs.size(); ++k) {
    const detail::SweepJob& jb = jobs[k];
    const detail::JobOut& o = outs[k];
    nlohmann::json line = {{"config_hash", out.config_hash},
                           {"point_index", jb.point},
                           {"point", points[jb.point].spec.coords},
                           {"run_index", jb.run},
                           {"seed", o.seed},
                           {"ok", o.ok},
                           {"flags", {{"temp_floor_reached", o.temp_floor_reached}}},
                           {"wall_ms", o.wall_ms}};
    if (o.ok) {
      line["delta_tilde"] = o.delta_tilde;
      line["trace_path"] = o.trace_path;
      line["q_paths"] = o.q_paths;
      ++out.n_runs_ok;
    } else {
      line["delta_tilde"] = nullptr;
      line["reason"] = o.reason;
      ++out.n_runs_rejected;
    }
    rec_out << line.dump() << '\n';
  }
  if (!rec_out.good()) throw IoError("write failed: " + (out.dir / "records.jsonl").string());

  std::ofstream sum_out(out.dir / "summary.csv", std::ios::trunc);
  sum_out << "point,mean,ci_lo,ci_hi,n_ok,n_rejected\n";
  std::size_t job_at = 0;
  for (const detail::PointState& st : points) {
    std::string label = st.spec.has_axis_value ? detail::shortest(st.spec.axis_value)
                                               : std::to_string(st.spec.index);
    std::vector<double> deltas;
    int n_rej = 0;
    if (st.ok) {
      for (int r = 0; r < cfg.runs_per_point; ++r, ++job_at) {
        if (outs[job_at].ok)
          deltas.push_back(outs[job_at].delta_tilde);
        else
          ++n_rej;
      }
    }
    if (deltas.empty()) {
      sum_out << label << ",,,," << 0 << ',' << n_rej << '\n';
      continue;
    }
    double mean = 0.0;
    for (double d : deltas) mean += d;
    mean /= static_cast<double>(deltas.size());
    Rng boot_rng =
        Rng(cfg.base_seed ^ 0xb007b007b007ULL).split(static_cast<std::uint64_t>(st.spec.index));
    BootstrapCi ci = bootstrap_ci(deltas, 0.99, 10000, boot_rng);
    sum_out << label << ',' << detail::shortest(mean) << ',' << detail::shortest(ci.lo)
            << ',' << detail::shortest(ci.hi) << ',' << deltas.size() << ',' << n_rej
            << '\n';
  }
  if (!sum_out.good()) throw IoError("write failed: " + (out.dir / "summary.csv").string());

  if (log)
    *log << "sweep " << out.config_hash << ": " << out.n_runs_ok << " runs ok, "
         << out.n_runs_rejected << " rejected, " << out.n_points_skipped
         << " points skipped\n";
  return out;
}

// Reads a whole .jsonl file; used by the analyze and report commands.
inline std::vector<nlohmann::json> read_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open: " + path);
  std::vector<nlohmann::json> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      lines.push_back(nlohmann::json::parse(line));
    } catch (const nlohmann::json::exception& e) {
      throw IoError("malformed JSONL line " + std::to_string(lines.size() + 1) + " in " +
                    path + ": " + e.what());
    }
  }
  return lines;
}

}  // namespace platsim
