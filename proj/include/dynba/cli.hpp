#pragma once

// Command-line front end: simulate, solve, ablate, eval.
//
// Exit codes: 0 success, 1 usage/config/input error, 2 runtime failure,
// 3 ablation finished with failed cells.

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "dynba/config.hpp"
#include "dynba/errors.hpp"
#include "dynba/io.hpp"
#include "dynba/metrics.hpp"
#include "dynba/simulation.hpp"
#include "dynba/solver.hpp"

namespace dynba::cli {

inline constexpr const char* kVersion = "0.3.0";

enum ExitCode : int { kOk = 0, kUsage = 1, kRuntime = 2, kPartial = 3 };

namespace detail {

namespace fs = std::filesystem;

inline std::string utc_timestamp() {
  const std::time_t t = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

inline double ms_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(
             std::chrono::steady_clock::now() - t0)
      .count();
}

/// Tracks emitted files and keeps the manifest on disk up to date.
class Run {
 public:
  Run(std::string command, const std::string& out_dir) : dir_(out_dir) {
    fs::create_directories(dir_);
    m_.command = std::move(command);
    m_.output_dir = out_dir;
    m_.tool_version = kVersion;
  }

  io::RunManifest& manifest() { return m_; }

  /// Writes the manifest before any result file exists.
  void begin() {
    m_.timestamp = utc_timestamp();
    m_.write_file(path("manifest.txt"));
  }

  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  template <typename Fn>
  void emit(const std::string& name, Fn&& write) {
    std::ofstream os(path(name), std::ios::binary);
    if (!os) throw std::runtime_error("cannot write " + path(name));
    write(os);
    if (!os) throw std::runtime_error("write failed: " + path(name));
    m_.files.push_back(name);
  }

  void finish(const std::string& status) {
    m_.status = status;
    m_.timestamp = utc_timestamp();
    m_.write_file(path("manifest.txt"));
  }

 private:
  fs::path dir_;
  io::RunManifest m_;
};

/// "3", "0-9", "1,4,7" or combinations such as "0-4,10".
inline std::vector<std::uint64_t> parse_seeds(const std::string& text) {
  std::vector<std::uint64_t> out;
  std::stringstream ss(text);
  std::string item;
  const auto num = [&](const std::string& s) {
    std::uint64_t v = 0;
    const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
    if (s.empty() || r.ec != std::errc() || r.ptr != s.data() + s.size()) {
      throw ConfigError("bad seed '" + s + "'", "--seeds");
    }
    return v;
  };
  while (std::getline(ss, item, ',')) {
    const auto dash = item.find('-');
    if (dash == std::string::npos) {
      out.push_back(num(item));
      continue;
    }
    const std::uint64_t a = num(item.substr(0, dash));
    const std::uint64_t b = num(item.substr(dash + 1));
    if (b < a) throw ConfigError("empty seed range '" + item + "'", "--seeds");
    for (std::uint64_t s = a; s <= b; ++s) out.push_back(s);
  }
  if (out.empty()) throw ConfigError("no seeds given", "--seeds");
  return out;
}

inline std::vector<AblationMode> parse_modes(const std::string& text) {
  std::vector<AblationMode> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto m = parse_mode(item);
    if (!m) throw ConfigError("unknown mode '" + item + "'", "--modes");
    if (std::find(out.begin(), out.end(), *m) != out.end()) {
      throw ConfigError("duplicate mode '" + item + "'", "--modes");
    }
    out.push_back(*m);
  }
  if (out.empty()) throw ConfigError("no modes given", "--modes");
  return out;
}

/// Fixed 6-decimal field; empty for NaN.
inline std::string cell(double x) {
  return std::isfinite(x) ? io::format_fixed(x) : std::string();
}

inline std::string cm(double meters) { return cell(io::meters_to_cm(meters)); }

}  // namespace detail

// -------------------------------------------------------------- simulate --

struct SimulateArgs {
  std::string config;
  std::uint64_t seed = 0;
  std::string out;
};

struct LandmarkCounts {
  int static_landmarks = 0;
  int dynamic_landmarks = 0;

  double dynamic_per_static() const {
    return static_landmarks > 0
               ? static_cast<double>(dynamic_landmarks) / static_landmarks
               : std::numeric_limits<double>::infinity();
  }
};

/// Landmarks placed in the world.
[[nodiscard]] inline LandmarkCounts count_landmarks(const GroundTruth& gt) {
  LandmarkCounts n;
  n.static_landmarks = static_cast<int>(gt.static_points.size());
  for (const auto& object : gt.parts) {
    for (const auto& part : object) {
      n.dynamic_landmarks += static_cast<int>(part.shape_world.size());
    }
  }
  return n;
}

/// Distinct landmarks selected in at least one frame.
[[nodiscard]] inline LandmarkCounts count_landmarks(const SimDataset& ds) {
  std::set<LandmarkRef> s, d;
  for (const auto& f : ds.frames) {
    for (const auto& m : f) (m.landmark.dynamic ? d : s).insert(m.landmark);
  }
  return {static_cast<int>(s.size()), static_cast<int>(d.size())};
}

inline int cmd_simulate(const SimulateArgs& a, std::ostream& out) {
  const auto t0 = std::chrono::steady_clock::now();
  SimConfig config = config::sim_config(config::load_json(a.config));
  config.seed = a.seed;

  detail::Run run("simulate", a.out);
  run.manifest().config_path = a.config;
  run.manifest().seeds = {a.seed};
  run.begin();

  auto [gt, ds] = generate(config);
  const Values init = perturb_initialization(gt, ds, config);
  const GraphContents contents = ds.has_dynamic() ? GraphContents{}
                                                  : contents_of(AblationMode::kStaticOnly);
  const FactorGraph graph = build_graph(ds, contents);
  const Values init_g = restrict_to(init, graph);
  const Values truth_g = restrict_to(ground_truth_values(gt, ds), graph);

  run.emit("graph.txt", [&](std::ostream& os) { io::write_graph(os, graph); });
  run.emit("init.txt", [&](std::ostream& os) { io::write_values(os, init_g); });
  run.emit("truth.txt", [&](std::ostream& os) { io::write_values(os, truth_g); });
  run.emit("measurements.txt",
           [&](std::ostream& os) { io::write_measurements(os, ds); });
  run.emit("truth.tum",
           [&](std::ostream& os) { io::write_tum(os, camera_trajectory(gt)); });
  run.emit("init.tum",
           [&](std::ostream& os) { io::write_tum(os, camera_trajectory(init_g)); });

  const LandmarkCounts placed = count_landmarks(gt);
  const LandmarkCounts seen = count_landmarks(ds);
  std::ostringstream summary;
  summary << "frames " << ds.n_frames() << '\n';
  summary << "static_landmarks " << placed.static_landmarks << '\n';
  summary << "dynamic_landmarks " << placed.dynamic_landmarks << '\n';
  summary << "dynamic_per_static " << io::format_fixed(placed.dynamic_per_static(), 3)
          << '\n';
  summary << "observed_static_landmarks " << seen.static_landmarks << '\n';
  summary << "observed_dynamic_landmarks " << seen.dynamic_landmarks << '\n';
  summary << "variables " << graph.variables().size() << '\n';
  summary << "factors " << graph.factors().size() << '\n';
  for (const auto& w : ds.warnings) summary << "warning " << w << '\n';
  run.emit("summary.txt", [&](std::ostream& os) { os << summary.str(); });
  out << summary.str();

  run.manifest().timings_ms.emplace_back("total", detail::ms_since(t0));
  run.finish("ok");
  return kOk;
}

// ----------------------------------------------------------------- solve --

struct SolveArgs {
  std::string graph;
  std::string init;
  std::string out;
  std::optional<int> prune_rounds;
  std::optional<double> motion_threshold;
  std::optional<double> rigidity_threshold;
  int max_iterations = SolverConfig{}.max_iterations;
  int threads = 1;
};

inline int cmd_solve(const SolveArgs& a, std::ostream& out) {
  const auto t0 = std::chrono::steady_clock::now();
  const FactorGraph graph = io::read_graph_file(a.graph);
  const Values init = io::read_values_file(a.init);

  SolverConfig sc;
  sc.max_iterations = a.max_iterations;
  sc.threads = a.threads;
  if (a.prune_rounds || a.motion_threshold || a.rigidity_threshold) {
    PruneConfig pc;
    pc.rounds = a.prune_rounds.value_or(pc.rounds);
    pc.motion_threshold = a.motion_threshold.value_or(pc.motion_threshold);
    pc.rigidity_threshold = a.rigidity_threshold.value_or(pc.rigidity_threshold);
    sc.prune = pc;
  }
  sc.validate();

  detail::Run run("solve", a.out);
  run.manifest().config_path = a.graph + " " + a.init;
  run.begin();

  graph.check_values(init);
  const PrunedSolveResult r = solve_with_pruning(graph, restrict_to(init, graph), sc);

  run.emit("values.txt", [&](std::ostream& os) { io::write_values(os, r.values); });
  run.emit("report.txt", [&](std::ostream& os) { io::write_report(os, r.report); });
  run.emit("trajectory.tum",
           [&](std::ostream& os) { io::write_tum(os, camera_trajectory(r.values)); });
  run.emit("timing.txt", [&](std::ostream& os) { io::write_timing(os, r.report); });

  out << "status " << status_name(r.report.status) << '\n';
  out << "initial_cost " << io::format_number(r.report.initial_cost) << '\n';
  out << "final_cost " << io::format_number(r.report.final_cost) << '\n';
  out << "iterations " << r.report.iterations.size() << '\n';
  for (const auto& p : r.report.pruning) {
    out << "prune_round " << p.round << " removed";
    for (auto id : p.removed_factors) out << ' ' << id;
    out << '\n';
  }

  run.manifest().timings_ms.emplace_back("solve",
                                         static_cast<double>(r.report.total_micros) / 1000.0);
  run.manifest().timings_ms.emplace_back("total", detail::ms_since(t0));
  const bool ok = r.report.status != SolveStatus::kDegenerate;
  run.finish(ok ? "ok" : "degenerate");
  return ok ? kOk : kRuntime;
}

// ---------------------------------------------------------------- ablate --

struct AblateArgs {
  std::string config;
  std::string out;
  std::optional<std::string> seeds;
  std::optional<std::string> modes;
  std::optional<int> workers;
  std::optional<int> prune_rounds;
};

inline void write_results_csv(
    std::ostream& os,
    const std::vector<std::pair<std::string, AblationResult>>& results) {
  io::CsvWriter w(os);
  w.row({"group", "mode", "seeds", "failed", "ate_cm_mean", "ate_cm_std",
         "rpe_trans_cm_mean", "rpe_trans_cm_std", "rpe_rot_deg_mean",
         "rpe_rot_deg_std", "dynamic_ate_cm_mean", "dynamic_ate_cm_std"});
  for (const auto& [group, res] : results) {
    for (const auto& s : res.summary) {
      w.row({group, mode_name(s.mode), std::to_string(s.ate.n + s.failed),
             std::to_string(s.failed), detail::cm(s.ate.mean), detail::cm(s.ate.std),
             detail::cm(s.rpe_trans.mean), detail::cm(s.rpe_trans.std),
             detail::cell(s.rpe_rot.mean), detail::cell(s.rpe_rot.std),
             detail::cm(s.dynamic_ate.mean), detail::cm(s.dynamic_ate.std)});
    }
  }
}

inline void write_cells_csv(
    std::ostream& os,
    const std::vector<std::pair<std::string, AblationResult>>& results) {
  io::CsvWriter w(os);
  w.row({"group", "mode", "seed", "ok", "status", "iterations", "ate_cm",
         "rpe_trans_cm", "rpe_rot_deg", "dynamic_ate_cm", "lm_monotone", "error"});
  for (const auto& [group, res] : results) {
    for (const auto& c : res.cells) {
      const bool solved = c.mode != AblationMode::kBeforeBA;
      w.row({group, mode_name(c.mode), std::to_string(c.seed), c.ok ? "1" : "0",
             solved ? status_name(c.status) : "NotRun",
             std::to_string(c.iterations), detail::cm(c.ate),
             detail::cm(c.rpe_trans), detail::cell(c.rpe_rot),
             detail::cm(c.dynamic_ate), c.lm_monotone ? "1" : "0", c.error});
    }
  }
}

/// Observation-only timing baseline of one group.
struct BaselineTiming {
  Stat solve_ms;
  Stat ms_per_iteration;
  Stat iterations;
  int failed = 0;
};

[[nodiscard]] inline BaselineTiming time_baseline(
    const SimConfig& config, const std::vector<std::uint64_t>& seeds,
    SolverConfig solver) {
  solver.prune.reset();
  BaselineTiming b;
  std::vector<double> ms, mspi, it;
  for (auto seed : seeds) {
    const TimingResult t = time_solve(config, kObservationsOnly, seed, solver);
    if (!t.ok) {
      ++b.failed;
      continue;
    }
    ms.push_back(static_cast<double>(t.solve_micros) / 1000.0);
    mspi.push_back(t.micros_per_iteration / 1000.0);
    it.push_back(t.iterations);
  }
  b.solve_ms = summarize(ms);
  b.ms_per_iteration = summarize(mspi);
  b.iterations = summarize(it);
  return b;
}

inline void write_timing_csv(
    std::ostream& os,
    const std::vector<std::pair<std::string, AblationResult>>& results,
    const std::map<std::string, BaselineTiming>& baselines) {
  io::CsvWriter w(os);
  w.row({"group", "mode", "solve_ms_mean", "solve_ms_std", "ms_per_iteration_mean",
         "ms_per_iteration_std", "iterations_mean", "per_iteration_ratio"});
  for (const auto& [group, res] : results) {
    const BaselineTiming& b = baselines.at(group);
    const double base = b.ms_per_iteration.mean;
    w.row({group, "ObservationsOnly", detail::cell(b.solve_ms.mean),
           detail::cell(b.solve_ms.std), detail::cell(b.ms_per_iteration.mean),
           detail::cell(b.ms_per_iteration.std), detail::cell(b.iterations.mean),
           detail::cell(1.0)});
    for (const auto& s : res.summary) {
      if (s.mode == AblationMode::kBeforeBA) continue;
      w.row({group, mode_name(s.mode), detail::cell(s.solve_ms.mean),
             detail::cell(s.solve_ms.std), detail::cell(s.ms_per_iteration.mean),
             detail::cell(s.ms_per_iteration.std), detail::cell(s.iterations.mean),
             detail::cell(s.ms_per_iteration.mean / base)});
    }
  }
}

inline int cmd_ablate(const AblateArgs& a, std::ostream& out) {
  const auto t0 = std::chrono::steady_clock::now();
  const std::string stem = std::filesystem::path(a.config).stem().string();
  config::AblationSpec spec = config::ablation_spec(config::load_json(a.config), stem);
  if (a.seeds) spec.seeds = detail::parse_seeds(*a.seeds);
  if (a.modes) spec.modes = detail::parse_modes(*a.modes);
  if (a.workers) {
    if (*a.workers < 1) throw ConfigError("must be >= 1", "--workers");
    spec.workers = *a.workers;
  }
  if (a.prune_rounds) {
    PruneConfig pc = spec.solver.prune.value_or(PruneConfig{});
    pc.rounds = *a.prune_rounds;
    spec.solver.prune = pc;
  }
  spec.solver.validate();

  detail::Run run("ablate", a.out);
  run.manifest().config_path = a.config;
  run.manifest().seeds = spec.seeds;
  for (auto m : spec.modes) run.manifest().modes.push_back(mode_name(m));
  run.begin();

  std::vector<std::pair<std::string, AblationResult>> results;
  std::map<std::string, BaselineTiming> baselines;
  const bool any_solve =
      std::any_of(spec.modes.begin(), spec.modes.end(),
                  [](AblationMode m) { return m != AblationMode::kBeforeBA; });
  for (const auto& g : spec.groups) {
    const auto tg = std::chrono::steady_clock::now();
    AblationOptions opt;
    opt.workers = spec.workers;
    opt.solver = spec.solver;
    results.emplace_back(g.name, run_ablation(g.config, spec.modes, spec.seeds, opt));
    run.manifest().timings_ms.emplace_back(g.name, detail::ms_since(tg));
    if (any_solve) {
      const auto tb = std::chrono::steady_clock::now();
      baselines[g.name] = time_baseline(g.config, spec.seeds, spec.solver);
      run.manifest().timings_ms.emplace_back(g.name + "/ObservationsOnly",
                                             detail::ms_since(tb));
    }
  }

  run.emit("results.csv", [&](std::ostream& os) { write_results_csv(os, results); });
  run.emit("cells.csv", [&](std::ostream& os) { write_cells_csv(os, results); });
  if (any_solve) {
    run.emit("timing.csv",
             [&](std::ostream& os) { write_timing_csv(os, results, baselines); });
  }

  int failed = 0;
  for (const auto& [group, res] : results) {
    failed += res.failed_cells();
    for (const auto& s : res.summary) {
      out << group << ' ' << mode_name(s.mode) << " ate_cm "
          << detail::cm(s.ate.mean) << " dynamic_ate_cm "
          << detail::cm(s.dynamic_ate.mean) << " failed " << s.failed << '\n';
    }
  }
  run.manifest().timings_ms.emplace_back("total", detail::ms_since(t0));
  run.finish(failed ? "partial" : "ok");
  if (failed) {
    out << "failed_cells " << failed << '\n';
    return kPartial;
  }
  return kOk;
}

// ------------------------------------------------------------------ eval --

struct EvalArgs {
  std::string estimate;
  std::string truth;
  int delta = 1;
  std::string align = "rigid";
  std::optional<std::string> csv;
};

inline int cmd_eval(const EvalArgs& a, std::ostream& out) {
  const PoseTrajectory est = io::read_tum_file(a.estimate);
  const PoseTrajectory gt = io::read_tum_file(a.truth);
  if (a.delta < 1) throw ConfigError("must be >= 1", "--delta");
  AlignmentMode mode;
  if (a.align == "rigid") {
    mode = AlignmentMode::kRigid;
  } else if (a.align == "first-pose") {
    mode = AlignmentMode::kFirstPose;
  } else {
    throw ConfigError("expected rigid or first-pose", "--align");
  }
  const MetricReport m = evaluate(est, gt, a.delta, mode);
  io::write_metric_report(out, m);
  if (a.csv) {
    std::ofstream os(*a.csv, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write " + *a.csv);
    io::CsvWriter w(os);
    w.row({"estimate", "truth", "ate_cm", "rpe_trans_cm", "rpe_rot_deg",
           "alignment", "common_frames"});
    w.row({a.estimate, a.truth, detail::cm(m.ate_rmse), detail::cm(m.rpe_trans_rmse),
           detail::cell(m.rpe_rot_rmse), m.alignment.method,
           std::to_string(m.alignment.common_frames)});
  }
  return kOk;
}

// ------------------------------------------------------------------ main --

inline int run(int argc, const char* const* argv, std::ostream& out,
               std::ostream& err) {
  CLI::App app{"Bundle adjustment with rigid-part and motion constraints"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);

  SimulateArgs sim;
  auto* s = app.add_subcommand("simulate", "generate a dataset and ground truth");
  s->add_option("config", sim.config, "JSON config")->required();
  s->add_option("--seed", sim.seed, "random seed")->required();
  s->add_option("--out", sim.out, "output directory")->required();

  SolveArgs sol;
  auto* v = app.add_subcommand("solve", "optimize a graph from initial values");
  v->add_option("graph", sol.graph, "graph text file")->required();
  v->add_option("init", sol.init, "initial values file")->required();
  v->add_option("--out", sol.out, "output directory")->required();
  v->add_option("--prune-rounds", sol.prune_rounds, "solve/prune rounds");
  v->add_option("--motion-threshold", sol.motion_threshold, "motion chi2 gate");
  v->add_option("--rigidity-threshold", sol.rigidity_threshold, "rigidity chi2 gate");
  v->add_option("--max-iterations", sol.max_iterations, "LM iteration cap");
  v->add_option("--threads", sol.threads, "linearization threads");

  AblateArgs abl;
  auto* b = app.add_subcommand("ablate", "run the ablation over seeds and modes");
  b->add_option("config", abl.config, "JSON config")->required();
  b->add_option("--out", abl.out, "output directory")->required();
  b->add_option("--seeds", abl.seeds, "e.g. 0-9 or 1,4,7");
  b->add_option("--modes", abl.modes, "comma list of BeforeBA,StaticOnly,NoMotion,NoRigidity,Full");
  b->add_option("--workers", abl.workers, "parallel cells");
  b->add_option("--prune-rounds", abl.prune_rounds, "solve/prune rounds");

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "ATE/RPE of an estimated TUM trajectory");
  e->add_option("estimate", ev.estimate, "estimated trajectory")->required();
  e->add_option("truth", ev.truth, "ground-truth trajectory")->required();
  e->add_option("--delta", ev.delta, "RPE frame offset");
  e->add_option("--align", ev.align, "rigid or first-pose");
  e->add_option("--csv", ev.csv, "also write a CSV row here");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& ex) {
    const int code = app.exit(ex, out, err);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*s) return cmd_simulate(sim, out);
    if (*v) return cmd_solve(sol, out);
    if (*b) return cmd_ablate(abl, out);
    return cmd_eval(ev, out);
  } catch (const ConfigError& ex) {
    const std::string what = ex.what();
    err << "config error: ";
    if (!ex.field().empty() && what.rfind(ex.field(), 0) != 0) err << ex.field() << ": ";
    err << what << '\n';
    return kUsage;
  } catch (const ParseError& ex) {
    err << "parse error: " << ex.what() << '\n';
    return kUsage;
  } catch (const GraphIntegrityError& ex) {
    err << "graph error: " << ex.what() << '\n';
    return kUsage;
  } catch (const std::exception& ex) {
    err << "error: " << ex.what() << '\n';
    return kRuntime;
  }
}

}  // namespace dynba::cli
