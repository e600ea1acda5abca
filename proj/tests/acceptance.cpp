// Acceptance checks. Prints one PASS/FAIL line per criterion; exit status is
// nonzero when any selected criterion fails.
//
//   dynba_acceptance                 all criteria
//   dynba_acceptance --only timing   one criterion (repeatable)

#include <chrono>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <random>
#include <sstream>

#include "CLI11.hpp"

#include "dynba/cli.hpp"
#include "dynba/metrics.hpp"
#include "dynba/simulation.hpp"
#include "dynba/solver.hpp"
#include "test_utils.hpp"

using namespace dynba;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(double x, int precision = 4) {
  std::ostringstream os;
  os << std::setprecision(precision) << x;
  return os.str();
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

/// Accepted-step costs of every solve run here, checked without the
/// library's own monotonicity helper.
struct LmLedger {
  int solves = 0;
  int violations = 0;

  void check(const SolveReport& r) {
    ++solves;
    int round = -1;
    double last = 0;
    for (const auto& it : r.iterations) {
      if (it.round != round) {
        round = it.round;
        last = std::numeric_limits<double>::infinity();
        if (round == 0) last = r.initial_cost;
      }
      if (!it.accepted) continue;
      if (it.cost > last) ++violations;
      last = it.cost;
    }
  }

  void check(const CellResult& c) {
    if (c.mode == AblationMode::kBeforeBA) return;
    ++solves;
    if (!c.lm_monotone) ++violations;
  }
};

LmLedger g_lm;

std::vector<std::uint64_t> seeds(std::uint64_t n) {
  std::vector<std::uint64_t> s;
  for (std::uint64_t k = 0; k < n; ++k) s.push_back(k);
  return s;
}

// ------------------------------------------------------------------------

Outcome check_ablation_ordering() {
  const auto t0 = std::chrono::steady_clock::now();
  const AblationResult r = run_ablation(preset("group1"), all_modes(), seeds(10));
  const double elapsed = seconds_since(t0);
  for (const auto& c : r.cells) g_lm.check(c);
  std::map<AblationMode, double> ate;
  for (const auto& s : r.summary) ate[s.mode] = s.ate.mean;
  const double before = ate[AblationMode::kBeforeBA];
  const double full = ate[AblationMode::kFull];
  const double norig = ate[AblationMode::kNoRigidity];
  const double nomot = ate[AblationMode::kNoMotion];
  const double stat = ate[AblationMode::kStaticOnly];
  double worst_gain = std::numeric_limits<double>::infinity();
  for (auto m : {AblationMode::kStaticOnly, AblationMode::kNoMotion,
                 AblationMode::kNoRigidity, AblationMode::kFull}) {
    worst_gain = std::min(worst_gain, before / ate[m]);
  }
  const bool order = full <= norig && norig <= nomot && nomot <= stat;
  const bool pass = order && worst_gain >= 3.0 && elapsed < 120.0 && r.failed_cells() == 0;
  std::ostringstream d;
  d << "mean ATE cm: Full " << fmt(100 * full, 6) << " NoRigidity " << fmt(100 * norig, 6)
    << " NoMotion " << fmt(100 * nomot, 6) << " StaticOnly " << fmt(100 * stat, 6)
    << " BeforeBA " << fmt(100 * before, 6) << "; min gain " << fmt(worst_gain, 3)
    << "x; " << fmt(elapsed, 3) << " s";
  return {pass, d.str()};
}

Outcome check_dynamic_points() {
  const std::vector<AblationMode> modes = {AblationMode::kNoMotion,
                                           AblationMode::kNoRigidity, AblationMode::kFull};
  const AblationResult r = run_ablation(preset("group1"), modes, seeds(100));
  for (const auto& c : r.cells) g_lm.check(c);
  if (r.failed_cells() > 0) {
    return {false, std::to_string(r.failed_cells()) + " failed cells"};
  }
  // cells are seed-major in request order
  std::vector<double> d_norig, d_full;
  for (std::size_t n = 0; n < r.cells.size(); n += 3) {
    d_norig.push_back(r.cells[n].dynamic_ate - r.cells[n + 1].dynamic_ate);
    d_full.push_back(r.cells[n].dynamic_ate - r.cells[n + 2].dynamic_ate);
  }
  const MeanInterval a = bootstrap_mean(d_norig, 10000, 0.95, 1);
  const MeanInterval b = bootstrap_mean(d_full, 10000, 0.95, 2);
  const bool pass = a.mean > 0 && a.lower > 0 && b.mean > 0 && b.lower > 0;
  std::ostringstream d;
  d << "NoMotion minus NoRigidity " << fmt(100 * a.mean) << " cm [" << fmt(100 * a.lower)
    << ", " << fmt(100 * a.upper) << "]; NoMotion minus Full " << fmt(100 * b.mean)
    << " cm [" << fmt(100 * b.lower) << ", " << fmt(100 * b.upper) << "] (100 seeds)";
  return {pass, d.str()};
}

Outcome check_timing() {
  const SimConfig c = preset("group1");
  std::int64_t full_us = 0, obs_us = 0;
  int full_it = 0, obs_it = 0;
  const auto t0 = std::chrono::steady_clock::now();
  for (std::uint64_t s = 0; full_it < 50 || obs_it < 50; ++s) {
    const TimingResult f = time_solve(c, contents_of(AblationMode::kFull), s);
    const TimingResult o = time_solve(c, kObservationsOnly, s);
    if (!f.ok || !o.ok) return {false, "solve failed on seed " + std::to_string(s)};
    full_us += static_cast<std::int64_t>(f.micros_per_iteration * f.iterations);
    obs_us += static_cast<std::int64_t>(o.micros_per_iteration * o.iterations);
    full_it += f.iterations;
    obs_it += o.iterations;
  }
  const double full_ms = full_us / 1000.0 / full_it;
  const double obs_ms = obs_us / 1000.0 / obs_it;
  const double ratio = full_ms / obs_ms;
  std::ostringstream d;
  d << "Full " << fmt(full_ms) << " ms/it over " << full_it << " it, observations-only "
    << fmt(obs_ms) << " ms/it over " << obs_it << " it, ratio " << fmt(ratio, 3)
    << " (bound 3); " << fmt(seconds_since(t0), 3) << " s";
  return {ratio <= 3.0, d.str()};
}

// -------------------------------------------------------------- jacobians --

Vector3 random_point(std::mt19937_64& rng, double scale) {
  return test::random_vector(rng, scale);
}

/// Random rotation vector; every tenth is below the small-angle cutoff.
Vector3 random_omega(std::mt19937_64& rng, int n) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const Vector3 axis = test::random_vector(rng).normalized();
  if (n % 10 == 0) return 1e-9 * u(rng) * axis;
  return (0.05 + 2.6 * u(rng)) * axis;
}

/// Central differences of every residual with respect to each variable,
/// perturbed on its manifold.
std::vector<Eigen::MatrixXd> numeric_factor_jacobians(const Factor& f, const Values& v) {
  std::vector<Eigen::MatrixXd> out;
  const double h = 1e-6;
  for (const auto& id : factor_variables(f)) {
    const int dim = tangent_dim(id.kind);
    const int rows = residual_dim(f);
    Eigen::MatrixXd j(rows, dim);
    for (int k = 0; k < dim; ++k) {
      Values plus = v, minus = v;
      plus.erase(id);
      minus.erase(id);
      const Value& x = v.at(id);
      if (const auto* p = std::get_if<Pose>(&x)) {
        Twist d = Twist::Zero();
        d(k) = h;
        plus.insert(id, compose(exp(d), *p));
        minus.insert(id, compose(exp(-d), *p));
      } else if (const auto* q = std::get_if<Point3>(&x)) {
        Vector3 d = Vector3::Zero();
        d(k) = h;
        plus.insert(id, Point3(*q + d));
        minus.insert(id, Point3(*q - d));
      } else {
        plus.insert(id, std::get<double>(x) + h);
        minus.insert(id, std::get<double>(x) - h);
      }
      j.col(k) = (residual(f, plus) - residual(f, minus)) / (2 * h);
    }
    out.push_back(j);
  }
  return out;
}

Outcome check_jacobians() {
  std::mt19937_64 rng(20240601);
  std::map<std::string, double> worst;
  std::map<std::string, int> count;
  const auto record = [&](const std::string& name, const Eigen::MatrixXd& numeric,
                          const Eigen::MatrixXd& analytic) {
    worst[name] = std::max(worst[name], test::relative_error(numeric, analytic));
    ++count[name];
  };
  const int n = 200;
  for (int t = 0; t < n; ++t) {
    const Pose cam(Rotation::Exp(random_omega(rng, t)), random_point(rng, 5.0));
    const Pose mot(Rotation::Exp(random_omega(rng, t + 1)), random_point(rng, 2.0));
    const Point3 p = random_point(rng, 5.0);
    Point3 q = random_point(rng, 5.0);
    while ((q - p).norm() < 0.1) q = random_point(rng, 5.0);
    const Point3 z = random_point(rng, 5.0);

    const VariableId c = VariableId::camera(1), pi = VariableId::dynamic_point(0, 0, 0, 1),
                     pj = VariableId::dynamic_point(0, 0, 1, 1),
                     pn = VariableId::dynamic_point(0, 0, 0, 2),
                     s = VariableId::segment(0, 0, 0, 1), m = VariableId::motion(0, 0, 0);
    Values v;
    v.insert(c, cam);
    v.insert(pi, p);
    v.insert(pj, q);
    v.insert(pn, Point3(random_point(rng, 5.0)));
    v.insert(s, 0.5 + static_cast<double>(rng() % 1000) / 500.0);
    v.insert(m, mot);
    const std::vector<std::pair<std::string, Factor>> factors = {
        {"observation", ObservationFactor{c, pi, z, isotropic(0.05)}},
        {"rigidity", RigidityFactor{pi, pj, s, 0.005}},
        {"motion", MotionFactor{pi, pn, m, isotropic(0.07)}}};
    for (const auto& [name, f] : factors) {
      const auto analytic = dynba::jacobians(f, v);
      const auto numeric = numeric_factor_jacobians(f, v);
      Eigen::MatrixXd a(residual_dim(f), 0), b(residual_dim(f), 0);
      for (std::size_t k = 0; k < analytic.size(); ++k) {
        Eigen::MatrixXd wa(a.rows(), a.cols() + analytic[k].matrix.cols());
        wa << a, analytic[k].matrix;
        a = wa;
        Eigen::MatrixXd wb(b.rows(), b.cols() + numeric[k].cols());
        wb << b, numeric[k];
        b = wb;
      }
      record("factor/" + name, b, a);
    }

    const ActJacobians aj = act_jacobians(cam, p);
    record("geometry/act_pose",
           test::numeric_pose_jacobian<3>([&](const Pose& x) { return act(x, p); }, cam),
           aj.pose);
    record("geometry/act_point",
           test::numeric_point_jacobian<3>([&](const Point3& x) { return act(cam, x); }, p),
           aj.point);

    // Exp(w + d) = Exp(Jl(w) d) Exp(w) to first order.
    const Vector3 w = random_omega(rng, t);
    const Rotation rw = Rotation::Exp(w);
    Matrix3 jl, jl_inv;
    for (int k = 0; k < 3; ++k) {
      const double h = 1e-6;
      Vector3 d = Vector3::Zero();
      d(k) = h;
      jl.col(k) = ((Rotation::Exp(w + d) * rw.inverse()).Log() -
                   (Rotation::Exp(w - d) * rw.inverse()).Log()) /
                  (2 * h);
      // Log(Exp(e) R) = w + Jl(w)^-1 e to first order.
      jl_inv.col(k) =
          ((Rotation::Exp(d) * rw).Log() - (Rotation::Exp(-d) * rw).Log()) / (2 * h);
    }
    record("geometry/so3_left_jacobian", jl, so3_left_jacobian(w));
    record("geometry/so3_left_jacobian_inverse", jl_inv, so3_left_jacobian_inverse(w));
  }
  bool pass = true;
  std::ostringstream d;
  for (const auto& [name, e] : worst) {
    pass = pass && e < 1e-5 && count[name] >= 100;
    d << name << " " << fmt(e, 2) << " (" << count[name] << ") ";
  }
  return {pass, "max relative error: " + d.str()};
}

// ------------------------------------------------------------- noiseless --

Outcome check_noiseless() {
  double worst_ate = 0, worst_seg = 0, worst_cost = 0;
  int runs = 0;
  for (bool init_noise : {true, false}) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      for (AblationMode mode : all_modes()) {
        if (mode == AblationMode::kBeforeBA) continue;
        SimConfig c = preset("group1");
        c.noise.measurement = 0;
        if (!init_noise) c.noise.init_translation = c.noise.init_rotation_deg = 0;
        c.seed = seed;
        const auto [gt, ds] = generate(c);
        const FactorGraph g = *build_graph(ds, mode);
        const Values init = restrict_to(perturb_initialization(gt, ds, c), g);
        const SolveResult r = solve(g, init, SolverConfig{});
        g_lm.check(r.report);
        ++runs;
        worst_cost = std::max(worst_cost, r.report.final_cost);
        worst_ate = std::max(worst_ate, ate(camera_trajectory(r.values), camera_trajectory(gt)));
        for (const auto& id : g.variables()) {
          if (id.kind != VariableKind::kSegmentLength) continue;
          const int l = id.object(), p = id.part();
          const double truth = gt.segment_length(l, p, id.index[2], id.index[3]);
          worst_seg = std::max(worst_seg, std::abs(r.values.scalar(id) - truth));
        }
      }
    }
  }
  const bool pass = worst_ate < 1e-9 && worst_seg < 1e-6 && worst_cost < 1e-12;
  std::ostringstream d;
  d << runs << " solves (4 modes x 5 seeds, with and without initial noise): max ATE "
    << fmt(worst_ate, 3) << " m, max segment error " << fmt(worst_seg, 3)
    << " m, max final cost " << fmt(worst_cost, 3);
  return {pass, d.str()};
}

// --------------------------------------------------------------- pruning --

Outcome check_pruning() {
  double identified = 0, false_removed = 0;
  const int n = 20;
  for (int s = 0; s < n; ++s) {
    SimConfig c = preset("group1");
    c.seed = static_cast<std::uint64_t>(s);
    const auto [gt, ds] = generate(c);
    const FactorGraph clean = build_graph(ds, contents_of(AblationMode::kFull));
    const Values init = restrict_to(perturb_initialization(gt, ds, c), clean);
    const CorruptedGraph bad = corrupt_motion_factors(
        clean, restrict_to(ground_truth_values(gt, ds), clean), 0.1, c.seed);
    SolverConfig sc;
    sc.prune = PruneConfig{};
    sc.prune->rounds = 2;
    const PrunedSolveResult r = solve_with_pruning(bad.graph, init, sc);
    g_lm.check(r.report);
    std::set<FactorId> removed;
    for (const auto& round : r.report.pruning) {
      removed.insert(round.removed_factors.begin(), round.removed_factors.end());
    }
    int hit = 0;
    for (FactorId id : bad.corrupted) hit += static_cast<int>(removed.count(id));
    identified += static_cast<double>(hit) / static_cast<double>(bad.corrupted.size());
    false_removed += static_cast<double>(removed.size()) - hit;
  }
  identified /= n;
  false_removed /= n;
  std::ostringstream d;
  d << "identified " << fmt(100 * identified, 4) << "% of injected outliers, "
    << fmt(false_removed, 3) << " false removals per run (20 seeds, 10% corrupted, 2 rounds)";
  return {identified >= 0.9 && false_removed <= 1.0, d.str()};
}

// -------------------------------------------------------- metrics oracle --

std::map<std::string, double> read_expected(const std::string& path) {
  std::ifstream is(path);
  std::map<std::string, double> out;
  std::string key;
  double v;
  while (is >> key >> v) out[key] = v;
  return out;
}

Eigen::Matrix4d homogeneous(const Pose& p) {
  Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
  m.topLeftCorner<3, 3>() = p.rotation().matrix();
  m.topRightCorner<3, 1>() = p.translation();
  return m;
}

Outcome check_metrics_oracle() {
  const std::string dir = DYNBA_FIXTURE_DIR;
  const PoseTrajectory est = io::read_tum_file(dir + "/toy_est.tum");
  const PoseTrajectory gt = io::read_tum_file(dir + "/toy_gt.tum");
  const auto expected = read_expected(dir + "/toy_expected.txt");
  double worst = 0;
  const MetricReport m = evaluate(est, gt);
  worst = std::max(worst, std::abs(m.ate_rmse - expected.at("ate_m")));

  // Brute-force ATE with the reported alignment applied by matrix products.
  const Eigen::Matrix4d s = homogeneous(m.alignment.transform);
  double ss = 0;
  int common = 0;
  for (const auto& [k, g] : gt) {
    const Pose* e = est.find(k);
    if (!e) continue;
    ss += ((s * homogeneous(*e)).topRightCorner<3, 1>() - g.translation()).squaredNorm();
    ++common;
  }
  worst = std::max(worst, std::abs(std::sqrt(ss / common) - m.ate_rmse));

  for (int delta : {1, 2, 3}) {
    const std::string p = "rpe" + std::to_string(delta);
    const auto [rot, trans] = rpe(est, gt, delta);
    worst = std::max(worst, std::abs(rot - expected.at(p + "_rot_deg")));
    worst = std::max(worst, std::abs(trans - expected.at(p + "_trans_m")));
    double sr = 0, st = 0;
    int n = 0;
    for (const auto& [k, g0] : gt) {
      const Pose* g1 = gt.find(k + delta);
      const Pose* e0 = est.find(k);
      const Pose* e1 = est.find(k + delta);
      if (!g1 || !e0 || !e1) continue;
      const Eigen::Matrix4d err = (homogeneous(g0).inverse() * homogeneous(*g1)).inverse() *
                                  (homogeneous(*e0).inverse() * homogeneous(*e1));
      const Eigen::Matrix3d r = err.topLeftCorner<3, 3>();
      const Vector3 axis(r(2, 1) - r(1, 2), r(0, 2) - r(2, 0), r(1, 0) - r(0, 1));
      const double angle = std::atan2(0.5 * axis.norm(), 0.5 * (r.trace() - 1.0));
      sr += std::pow(angle * 180.0 / kPi, 2);
      st += err.topRightCorner<3, 1>().squaredNorm();
      ++n;
    }
    worst = std::max(worst, std::abs(std::sqrt(sr / n) - rot));
    worst = std::max(worst, std::abs(std::sqrt(st / n) - trans));
  }
  const bool frames = m.alignment.common_frames == static_cast<int>(expected.at("common_frames"));
  return {worst < 1e-12 && frames,
          "max deviation from reference loops and external fixture " + fmt(worst, 3)};
}

// ----------------------------------------------------------- determinism --

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

Outcome check_determinism() {
  const fs::path root = fs::temp_directory_path() / "dynba_acceptance_determinism";
  fs::remove_all(root);
  const std::string config = std::string(DYNBA_CONFIG_DIR) + "/group1.json";
  const auto ablate = [&](const std::string& name, const char* workers) {
    const std::string out = (root / name).string();
    const std::vector<std::string> args = {"dynba", "ablate", config,   "--out",
                                           out,     "--seeds", "0-9", "--workers",
                                           workers};
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream sink;
    return cli::run(static_cast<int>(argv.size()), argv.data(), sink, sink);
  };
  if (ablate("a", "1") != 0 || ablate("b", "1") != 0 || ablate("c", "8") != 0) {
    return {false, "ablate exited with an error"};
  }
  bool same = true;
  std::ostringstream d;
  for (const char* f : {"results.csv", "cells.csv"}) {
    const std::string a = slurp(root / "a" / f);
    const bool ok = !a.empty() && a == slurp(root / "b" / f) && a == slurp(root / "c" / f);
    same = same && ok;
    d << f << (ok ? " identical " : " DIFFERS ");
  }
  fs::remove_all(root);
  d << "(two runs with 1 worker, one with 8)";
  return {same, d.str()};
}

// ------------------------------------------------------------ lm contract --

Outcome check_lm_contract() {
  // Its own battery, plus every solve already run by other criteria.
  for (int g = 1; g <= 2; ++g) {
    const AblationResult r =
        run_ablation(preset("group" + std::to_string(g)), all_modes(), seeds(10));
    for (const auto& c : r.cells) g_lm.check(c);
  }
  for (std::uint64_t s = 0; s < 10; ++s) {
    SimConfig c = preset("group1");
    c.seed = s;
    const auto [gt, ds] = generate(c);
    const FactorGraph g = build_graph(ds, contents_of(AblationMode::kFull));
    const SolveResult r = solve(g, restrict_to(perturb_initialization(gt, ds, c), g), {});
    g_lm.check(r.report);
  }
  return {g_lm.violations == 0, std::to_string(g_lm.violations) + " violations in " +
                                    std::to_string(g_lm.solves) + " solves"};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"ablation-ordering", check_ablation_ordering},
      {"dynamic-points", check_dynamic_points},
      {"timing", check_timing},
      {"jacobians", check_jacobians},
      {"noiseless", check_noiseless},
      {"pruning", check_pruning},
      {"metrics-oracle", check_metrics_oracle},
      {"determinism", check_determinism},
      {"lm-contract", check_lm_contract},  // last: also audits the solves above
  };
  CLI::App app{"acceptance checks"};
  std::vector<std::string> only;
  app.add_option("--only", only, "criterion to run (repeatable)");
  CLI11_PARSE(app, argc, argv);
  for (const auto& name : only) {
    if (std::none_of(criteria.begin(), criteria.end(),
                     [&](const auto& c) { return c.first == name; })) {
      std::cerr << "unknown criterion '" << name << "'\n";
      return 2;
    }
  }
  int failed = 0;
  for (const auto& [name, fn] : criteria) {
    if (!only.empty() && std::find(only.begin(), only.end(), name) == only.end()) continue;
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    std::cout << (o.pass ? "PASS " : "FAIL ") << name << ": " << o.detail << std::endl;
    failed += o.pass ? 0 : 1;
  }
  return failed == 0 ? 0 : 1;
}
