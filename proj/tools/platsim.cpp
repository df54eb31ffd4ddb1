// Command line front end over the simulation library.
//
//   solve-eq      competitive and collusive anchors for one market
//   run           simulations at the config's base point (no sweep axis)
//   sweep         full sweep, written under out_dir/<config hash>/
//   analyze       per-category diagnostics rebuilt from stored sweep records
//   fit-additive  additive decomposition of (phi, outcome) samples
//   report        joins sweep summaries into one figure-ready CSV
//
// Exit codes: 0 success, 2 bad flags or config, 3 nothing could be computed
// (every point failed), 4 I/O failure.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "platsim/analysis.hpp"
#include "platsim/config.hpp"
#include "platsim/model_io.hpp"
#include "platsim/sweep.hpp"

namespace fs = std::filesystem;

namespace {

struct CommonFlags {
  std::string config_path;
  std::string out_dir;
  std::string preset;
  std::string update_target;
  std::uint64_t seed = 0;
  bool seed_set = false;
  int workers = 1;
};

// Flag overrides are spliced into the config JSON before parsing, so
// precedence and validation live in one place: an explicit key in the file
// still beats a --preset default, and a bad override fails like a bad key.
platsim::ExperimentConfig load_config(const CommonFlags& f) {
  std::ifstream in(f.config_path);
  if (!in) throw platsim::IoError("cannot open config file: " + f.config_path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw platsim::ConfigError("", "invalid JSON in " + f.config_path + ": " + e.what());
  }
  if (!j.is_object()) throw platsim::ConfigError("", "top level must be a JSON object");
  if (!f.preset.empty()) j["preset"] = f.preset;
  if (!f.out_dir.empty()) j["out_dir"] = f.out_dir;
  if (f.seed_set) j["base_seed"] = f.seed;
  if (!f.update_target.empty()) {
    if (!j.contains("learning")) j["learning"] = nlohmann::json::object();
    j["learning"]["update_target"] = f.update_target;
  }
  return platsim::ExperimentConfig::from_json(j);
}

struct SolveEqFlags {
  platsim::MarketParams params;
  bool as_json = false;
};

int cmd_solve_eq(const SolveEqFlags& f) {
  f.params.validate();
  platsim::EquilibriumPair eq = platsim::solve_equilibria(f.params);
  if (f.as_json) {
    nlohmann::json j = {
        {"p_star", {{"b", eq.nash.price.b}, {"s", eq.nash.price.s}}},
        {"pi_star", eq.nash.profit},
        {"p_coll", {{"b", eq.coll.price.b}, {"s", eq.coll.price.s}}},
        {"pi_coll", eq.coll.profit},
        {"nash_multiple", eq.nash.multiple},
        {"coll_multiple", eq.coll.multiple}};
    std::cout << j.dump(1) << "\n";
  } else {
    std::cout << "competitive: p = (" << eq.nash.price.b << ", " << eq.nash.price.s
              << "), profit = " << eq.nash.profit << "\n"
              << "collusive:   p = (" << eq.coll.price.b << ", " << eq.coll.price.s
              << "), profit = " << eq.coll.profit << "\n";
    if (eq.nash.multiple || eq.coll.multiple)
      std::cout << "warning: multiple candidate solutions detected\n";
  }
  return 0;
}

int cmd_run_or_sweep(const CommonFlags& f, bool want_sweep) {
  platsim::ExperimentConfig cfg = load_config(f);
  if (want_sweep && cfg.sweep.axis == platsim::SweepAxis::none)
    throw platsim::ConfigError("sweep/axis",
                               "sweep needs an axis; use the run command for a single point");
  if (!want_sweep && cfg.sweep.axis != platsim::SweepAxis::none)
    throw platsim::ConfigError("sweep/axis",
                               "run takes no sweep axis; use the sweep command");
  platsim::SweepOutcome res = platsim::run_sweep(cfg, f.workers, &std::cerr);
  std::cout << "results: " << res.dir.string() << "\n";
  std::ifstream sum(res.dir / "summary.csv");
  std::cout << sum.rdbuf();
  if (res.n_runs_ok == 0) {
    std::cerr << "error: no run succeeded ("
              << res.n_points_skipped << " points skipped, "
              << res.n_runs_rejected << " runs rejected)\n";
    return 3;
  }
  return 0;
}

struct AnalyzeFlags {
  std::string results_dir;
  std::string out_dir;
  int workers = 1;
};

// Heavy per-run state (Q tables, tails) is not stored by default, so the
// analyzer re-simulates each recorded seed; the library is deterministic,
// which makes the rebuilt runs identical to the originals.
int cmd_analyze(const AnalyzeFlags& f) {
  fs::path dir = f.results_dir;
  fs::path cfg_path = dir / "config.json";
  fs::path rec_path = dir / "records.jsonl";
  if (!fs::exists(cfg_path) || !fs::exists(rec_path))
    throw platsim::IoError("not a results directory (missing config.json or records.jsonl): " +
                           dir.string());

  platsim::ExperimentConfig cfg = platsim::ExperimentConfig::from_file(cfg_path.string());
  std::vector<nlohmann::json> records = platsim::read_jsonl(rec_path.string());

  // (point index, seed) pairs of the successful runs, grouped by point.
  std::vector<platsim::SweepPoint> pts = platsim::expand_points(cfg);
  std::vector<std::vector<std::uint64_t>> seeds(pts.size());
  std::vector<int> rejected(pts.size(), 0);
  for (const nlohmann::json& r : records) {
    int pi = r.at("point_index").get<int>();
    if (pi < 0 || pi >= static_cast<int>(pts.size()))
      throw platsim::IoError("record points outside the config's sweep: index " +
                             std::to_string(pi));
    if (r.at("ok").get<bool>())
      seeds[pi].push_back(r.at("seed").get<std::uint64_t>());
    else
      ++rejected[pi];
  }
  std::size_t total = 0;
  for (const auto& s : seeds) total += s.size();
  if (total == 0)
    throw platsim::IoError("no successful runs recorded in " + rec_path.string());

  fs::path out_dir = f.out_dir.empty() ? dir / "analysis" : fs::path(f.out_dir);
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw platsim::IoError("cannot create " + out_dir.string() + ": " + ec.message());

  nlohmann::json index = nlohmann::json::array();
  for (std::size_t pi = 0; pi < pts.size(); ++pi) {
    if (seeds[pi].empty()) continue;
    platsim::EquilibriumPair eq = platsim::solve_equilibria(pts[pi].params);
    platsim::PriceGrid grid =
        platsim::PriceGrid::build(eq, pts[pi].learning.grid_eps, pts[pi].learning.m);
    platsim::ProfitTable table = platsim::ProfitTable::build(grid, pts[pi].params);

    std::vector<platsim::RunAnalysis> done(seeds[pi].size());
    std::vector<char> run_ok(seeds[pi].size(), 0);
    std::atomic<std::size_t> cursor{0};
    auto work = [&]() {
      for (;;) {
        std::size_t k = cursor.fetch_add(1);
        if (k >= seeds[pi].size()) return;
        platsim::LearningConfig lc = pts[pi].learning;
        lc.seed = seeds[pi][k];
        try {
          platsim::RunResult run = platsim::run_simulation_with(
              grid, table, eq.nash.profit, eq.coll.profit, lc);
          done[k] = platsim::analyze_run(run, grid, table, eq, lc);
          run_ok[k] = 1;
        } catch (const std::runtime_error&) {
          run_ok[k] = 0;
        }
      }
    };
    if (f.workers == 1) {
      work();
    } else {
      std::vector<std::thread> pool;
      for (int w = 0; w < f.workers; ++w) pool.emplace_back(work);
      for (std::thread& t : pool) t.join();
    }

    std::vector<platsim::RunAnalysis> kept;
    int rej = rejected[pi];
    for (std::size_t k = 0; k < done.size(); ++k) {
      if (run_ok[k])
        kept.push_back(done[k]);
      else
        ++rej;
    }
    platsim::SensitivityReport rep = platsim::aggregate_report(kept, rej);

    char name[32];
    std::snprintf(name, sizeof name, "table_p%03d.csv", pts[pi].index);
    fs::path csv_path = out_dir / name;
    std::ofstream csv(csv_path, std::ios::trunc);
    csv << rep.to_csv();
    if (!csv.good()) throw platsim::IoError("write failed: " + csv_path.string());
    index.push_back({{"point_index", pts[pi].index},
                     {"coords", pts[pi].coords},
                     {"n_runs", rep.n_runs},
                     {"n_rejected", rep.n_rejected},
                     {"table", name}});
    std::cout << "point " << pts[pi].index << ": " << kept.size() << " runs analyzed -> "
              << csv_path.string() << "\n";
  }

  std::ofstream idx(out_dir / "index.json", std::ios::trunc);
  idx << index.dump(1) << "\n";
  if (!idx.good()) throw platsim::IoError("write failed: " + (out_dir / "index.json").string());
  return 0;
}

struct FitFlags {
  std::string records_dir;
  std::string data_csv;
  std::string out_dir = "additive";
  int uni_perms = 24;
  int biv_perms = 720;
  std::uint64_t perm_seed = 0;
  bool perm_seed_set = false;
};

std::vector<platsim::PhiSample> samples_from_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw platsim::IoError("cannot open: " + path);
  std::string line;
  if (!std::getline(in, line) || line.rfind("phi_bb,phi_bs,phi_sb,phi_ss,delta_tilde", 0) != 0)
    throw platsim::IoError(
        "expected header phi_bb,phi_bs,phi_sb,phi_ss,delta_tilde in " + path);
  std::vector<platsim::PhiSample> out;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream row(line);
    platsim::PhiSample s;
    char c1, c2, c3, c4;
    if (!(row >> s.phi.bb >> c1 >> s.phi.bs >> c2 >> s.phi.sb >> c3 >> s.phi.ss >> c4 >>
          s.delta_tilde) ||
        c1 != ',' || c2 != ',' || c3 != ',' || c4 != ',')
      throw platsim::IoError("malformed row " + std::to_string(lineno) + " in " + path);
    out.push_back(s);
  }
  return out;
}

std::vector<platsim::PhiSample> samples_from_records(const std::string& dir) {
  fs::path rec_path = fs::path(dir) / "records.jsonl";
  if (!fs::exists(rec_path))
    throw platsim::IoError("not a results directory (missing records.jsonl): " + dir);
  std::vector<platsim::PhiSample> out;
  for (const nlohmann::json& r : platsim::read_jsonl(rec_path.string())) {
    if (!r.at("ok").get<bool>()) continue;
    const nlohmann::json& point = r.at("point");
    if (!point.contains("phi"))
      throw platsim::ConfigError(
          "sweep/axis", "fit-additive needs phi coordinates; run a phi-random sweep");
    platsim::PhiSample s;
    s.phi.bb = point["phi"].at("bb").get<double>();
    s.phi.bs = point["phi"].at("bs").get<double>();
    s.phi.sb = point["phi"].at("sb").get<double>();
    s.phi.ss = point["phi"].at("ss").get<double>();
    s.delta_tilde = r.at("delta_tilde").get<double>();
    out.push_back(s);
  }
  return out;
}

int cmd_fit_additive(const FitFlags& f) {
  if (f.records_dir.empty() == f.data_csv.empty())
    throw platsim::ConfigError("fit-additive", "give exactly one of --records or --data");
  std::vector<platsim::PhiSample> data = f.data_csv.empty()
                                             ? samples_from_records(f.records_dir)
                                             : samples_from_csv(f.data_csv);

  platsim::AdditiveOptions opts;
  opts.n_uni_perms = f.uni_perms;
  opts.n_biv_perms = f.biv_perms;
  if (f.perm_seed_set) opts.perm_seed = f.perm_seed;
  platsim::AdditiveModel model = platsim::fit_additive_model(data, opts);

  double sse = 0.0, sst = 0.0, mean = 0.0;
  for (const platsim::PhiSample& s : data) mean += s.delta_tilde;
  mean /= static_cast<double>(data.size());
  for (const platsim::PhiSample& s : data) {
    double e = s.delta_tilde - model.evaluate(s.phi);
    sse += e * e;
    sst += (s.delta_tilde - mean) * (s.delta_tilde - mean);
  }
  double r2 = sst > 0.0 ? 1.0 - sse / sst : 1.0;

  fs::path out_dir = f.out_dir;
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw platsim::IoError("cannot create " + out_dir.string() + ": " + ec.message());
  platsim::save_model((out_dir / "model.json").string(), model);
  for (auto [name, text] :
       {std::pair{"univariate.csv", platsim::univariate_curves_csv(model, data)},
        std::pair{"bivariate.csv", platsim::bivariate_grid_csv(model, data)}}) {
    std::ofstream out(out_dir / name, std::ios::trunc);
    out << text;
    if (!out.good()) throw platsim::IoError("write failed: " + (out_dir / name).string());
  }
  nlohmann::json fit = {{"n_samples", data.size()},
                        {"delta0", model.delta0},
                        {"r_squared", r2},
                        {"uni_ranks", model.uni_ranks},
                        {"biv_ranks", model.biv_ranks}};
  std::ofstream fj(out_dir / "fit.json", std::ios::trunc);
  fj << fit.dump(1) << "\n";
  if (!fj.good()) throw platsim::IoError("write failed: " + (out_dir / "fit.json").string());
  std::cout << "fit " << data.size() << " samples, r2 = " << r2 << ", model in "
            << out_dir.string() << "\n";
  return 0;
}

struct ReportFlags {
  std::vector<std::string> dirs;
  std::string out_file;
};

int cmd_report(const ReportFlags& f) {
  std::ostringstream joined;
  joined << "config_hash,axis,point,mean,ci_lo,ci_hi,n_ok,n_rejected\n";
  for (const std::string& d : f.dirs) {
    fs::path dir = d;
    platsim::ExperimentConfig cfg =
        platsim::ExperimentConfig::from_file((dir / "config.json").string());
    std::ifstream sum(dir / "summary.csv");
    if (!sum) throw platsim::IoError("cannot open: " + (dir / "summary.csv").string());
    std::string hash = cfg.hash();
    const char* axis = to_string(cfg.sweep.axis);
    std::string line;
    std::getline(sum, line);  // drop the per-file header
    while (std::getline(sum, line)) {
      if (line.empty()) continue;
      joined << hash << ',' << axis << ',' << line << '\n';
    }
  }
  if (f.out_file.empty()) {
    std::cout << joined.str();
  } else {
    std::ofstream out(f.out_file, std::ios::trunc);
    out << joined.str();
    if (!out.good()) throw platsim::IoError("write failed: " + f.out_file);
    std::cout << "report written to " << f.out_file << "\n";
  }
  return 0;
}

void add_common_flags(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("--config", f.config_path, "JSON experiment config")
      ->required()
      ->check(CLI::ExistingFile);
  cmd->add_option("--out", f.out_dir, "override the config's out_dir");
  cmd->add_option("--preset", f.preset, "override the config's preset")
      ->check(CLI::IsMember({"desk", "paper"}));
  cmd->add_option("--seed", f.seed, "override the config's base_seed");
  cmd->add_option("--update-target", f.update_target, "Q update bootstrap row")
      ->check(CLI::IsMember({"next-state", "literal-eq9"}));
  cmd->add_option("--workers", f.workers, "worker threads")->check(CLI::Range(1, 256));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"two-sided platform pricing simulations"};
  app.require_subcommand(1);

  SolveEqFlags se;
  CLI::App* solve_eq = app.add_subcommand("solve-eq", "solve the market anchors");
  solve_eq->add_option("--beta-b", se.params.beta_b, "buyer-side price sensitivity");
  solve_eq->add_option("--beta-s", se.params.beta_s, "seller-side price sensitivity");
  solve_eq->add_option("--u0-b", se.params.u0_b, "buyer outside option");
  solve_eq->add_option("--u0-s", se.params.u0_s, "seller outside option");
  solve_eq->add_option("--phi-bb", se.params.phi.bb, "buyer-on-buyer externality");
  solve_eq->add_option("--phi-bs", se.params.phi.bs, "seller-on-buyer externality");
  solve_eq->add_option("--phi-sb", se.params.phi.sb, "buyer-on-seller externality");
  solve_eq->add_option("--phi-ss", se.params.phi.ss, "seller-on-seller externality");
  solve_eq->add_flag("--json", se.as_json, "machine-readable output");

  CommonFlags run_f, sweep_f;
  CLI::App* run = app.add_subcommand("run", "simulate the config's base point");
  add_common_flags(run, run_f);
  CLI::App* sweep = app.add_subcommand("sweep", "simulate every sweep point");
  add_common_flags(sweep, sweep_f);

  AnalyzeFlags an;
  CLI::App* analyze = app.add_subcommand("analyze", "diagnostics from stored records");
  analyze->add_option("--results", an.results_dir, "a sweep result directory")
      ->required()
      ->check(CLI::ExistingDirectory);
  analyze->add_option("--out", an.out_dir, "where to write tables (default <results>/analysis)");
  analyze->add_option("--workers", an.workers, "worker threads")->check(CLI::Range(1, 256));

  FitFlags fit;
  CLI::App* fit_cmd = app.add_subcommand("fit-additive", "decompose outcomes over phi");
  fit_cmd->add_option("--records", fit.records_dir, "a phi-random sweep result directory");
  fit_cmd->add_option("--data", fit.data_csv,
                      "CSV with phi_bb,phi_bs,phi_sb,phi_ss,delta_tilde");
  fit_cmd->add_option("--out", fit.out_dir, "output directory");
  fit_cmd->add_option("--uni-perms", fit.uni_perms, "univariate fitting orders averaged");
  fit_cmd->add_option("--biv-perms", fit.biv_perms, "bivariate fitting orders averaged");
  auto* ps = fit_cmd->add_option("--perm-seed", fit.perm_seed,
                                 "seed for subsampling fitting orders");

  ReportFlags rep;
  CLI::App* report = app.add_subcommand("report", "join sweep summaries");
  report->add_option("--results", rep.dirs, "sweep result directories")
      ->required()
      ->check(CLI::ExistingDirectory);
  report->add_option("--out", rep.out_file, "output CSV (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }
  run_f.seed_set = run->count("--seed") > 0;
  sweep_f.seed_set = sweep->count("--seed") > 0;
  fit.perm_seed_set = ps->count() > 0;

  try {
    if (app.got_subcommand(solve_eq)) return cmd_solve_eq(se);
    if (app.got_subcommand(run)) return cmd_run_or_sweep(run_f, false);
    if (app.got_subcommand(sweep)) return cmd_run_or_sweep(sweep_f, true);
    if (app.got_subcommand(analyze)) return cmd_analyze(an);
    if (app.got_subcommand(fit_cmd)) return cmd_fit_additive(fit);
    if (app.got_subcommand(report)) return cmd_report(rep);
  } catch (const platsim::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const platsim::IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  } catch (const platsim::NoEquilibriumFound& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const platsim::NonConvergence& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;  // unreachable: require_subcommand guarantees a dispatch
}
