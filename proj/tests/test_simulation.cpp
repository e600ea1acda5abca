#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <set>

#include "dynba/metrics.hpp"
#include "dynba/simulation.hpp"
#include "dynba/solver.hpp"

using namespace dynba;

namespace {

bool same_dataset(const SimDataset& a, const SimDataset& b) {
  if (a.frames.size() != b.frames.size() || a.warnings != b.warnings) return false;
  for (std::size_t k = 0; k < a.frames.size(); ++k) {
    if (a.frames[k].size() != b.frames[k].size()) return false;
    if (a.visible[k] != b.visible[k]) return false;
    for (std::size_t n = 0; n < a.frames[k].size(); ++n) {
      if (a.frames[k][n].landmark != b.frames[k][n].landmark) return false;
      // Bitwise: the same seed must give the same doubles.
      if (a.frames[k][n].z != b.frames[k][n].z) return false;
    }
  }
  return true;
}

SimConfig noiseless(SimConfig c) {
  c.noise.measurement = 0;
  return c;
}

std::map<FactorKind, int> count_kinds(const FactorGraph& g) {
  std::map<FactorKind, int> out;
  for (const auto& e : g.factors()) ++out[factor_kind(e.factor)];
  return out;
}

int count_vars(const FactorGraph& g, VariableKind kind) {
  int n = 0;
  for (const auto& v : g.variables()) n += v.kind == kind ? 1 : 0;
  return n;
}

}  // namespace

TEST(Simulation, SameSeedSameDataset) {
  SimConfig c = preset("group1");
  c.seed = 42;
  const auto [gt1, ds1] = generate(c);
  const auto [gt2, ds2] = generate(c);
  EXPECT_TRUE(same_dataset(ds1, ds2));
  EXPECT_TRUE(perturb_initialization(gt1, ds1, c) == perturb_initialization(gt2, ds2, c));
  c.seed = 43;
  const auto [gt3, ds3] = generate(c);
  EXPECT_FALSE(same_dataset(ds1, ds3));
}

TEST(Simulation, NoiselessMeasurementsAreExactProjections) {
  SimConfig c = noiseless(preset("group1"));
  c.fov.max_range = 1e9;
  c.fov.half_angle_deg = 180;
  c.static_budget = c.dynamic_budget = -1;
  const auto [gt, ds] = generate(c);
  const int n_dynamic = 18;
  for (int k = 0; k < ds.n_frames(); ++k) {
    const auto& frame = ds.frames[static_cast<std::size_t>(k)];
    ASSERT_EQ(static_cast<int>(frame.size()), c.static_count + n_dynamic);
    for (const auto& m : frame) {
      const Point3 expect = act(inverse(gt.cameras[static_cast<std::size_t>(k)]),
                                gt.landmark(m.landmark, k));
      EXPECT_LT((m.z - expect).norm(), 1e-12);
    }
  }
  EXPECT_TRUE(ds.warnings.empty());
}

TEST(Simulation, GroupOneBudgets) {
  for (std::uint64_t seed : {0u, 1u, 2u}) {
    SimConfig c = preset("group1");
    c.seed = seed;
    const auto [gt, ds] = generate(c);
    ASSERT_EQ(ds.n_frames(), 18);
    for (const auto& frame : ds.frames) {
      int s = 0, d = 0;
      for (const auto& m : frame) (m.landmark.dynamic ? d : s)++;
      EXPECT_EQ(s, 8);
      EXPECT_EQ(d, 12);
    }
    // Placed landmarks: 10 static, one walker of 3 x 6 points.
    std::size_t placed_dynamic = 0;
    for (const auto& parts : gt.parts) {
      for (const auto& p : parts) placed_dynamic += p.shape_world.size();
    }
    const double ratio = static_cast<double>(placed_dynamic) /
                         static_cast<double>(gt.static_points.size());
    EXPECT_NEAR(ratio, 1.8, 0.18);
  }
}

TEST(Simulation, GroupPresetsScale) {
  for (int g = 1; g <= 4; ++g) {
    const SimConfig c = preset("group" + std::to_string(g));
    EXPECT_EQ(c.n_frames, 18 * g);
    EXPECT_EQ(static_cast<int>(c.objects.size()), g);
    EXPECT_EQ(c.static_count, 10 * g);
    EXPECT_NO_THROW(c.validate());
  }
  EXPECT_THROW((void)preset("group5"), ConfigError);
  EXPECT_THROW((void)preset(""), ConfigError);
}

// Factor counts from an independent walk over the measurements.
TEST(Simulation, FullGraphFactorCounts) {
  for (auto topology : {RigidityTopology::kSpanning, RigidityTopology::kClique}) {
    SimConfig c = preset("group2");
    c.graph.topology = topology;
    const auto [gt, ds] = generate(c);
    int obs = 0, rigid = 0, motion = 0;
    std::vector<std::map<std::pair<int, int>, std::set<int>>> seen(ds.frames.size());
    for (std::size_t k = 0; k < ds.frames.size(); ++k) {
      obs += static_cast<int>(ds.frames[k].size());
      for (const auto& m : ds.frames[k]) {
        if (m.landmark.dynamic) {
          seen[k][{m.landmark.object, m.landmark.part}].insert(m.landmark.point);
        }
      }
    }
    for (std::size_t k = 0; k < seen.size(); ++k) {
      for (const auto& [key, ids] : seen[k]) {
        const int n = static_cast<int>(ids.size());
        if (topology == RigidityTopology::kClique) {
          rigid += n * (n - 1) / 2;
        } else {
          rigid += std::max(0, n - 1) + (n >= 3 ? 1 : 0);
        }
        if (k + 1 == seen.size()) continue;
        auto it = seen[k + 1].find(key);
        if (it == seen[k + 1].end()) continue;
        for (int i : ids) motion += static_cast<int>(it->second.count(i));
      }
    }
    const auto kinds = count_kinds(build_graph(ds, contents_of(AblationMode::kFull)));
    EXPECT_EQ(kinds.at(FactorKind::kObservation), obs);
    EXPECT_EQ(kinds.at(FactorKind::kRigidity), rigid);
    EXPECT_EQ(kinds.at(FactorKind::kMotion), motion);
    // Same landmarks in every frame for the group presets.
    EXPECT_EQ(motion, 24 * (c.n_frames - 1));
  }
}

TEST(Simulation, ModeCompositions) {
  const SimConfig c = preset("group1");
  const auto [gt, ds] = generate(c);
  EXPECT_FALSE(build_graph(ds, AblationMode::kBeforeBA).has_value());

  const FactorGraph s = *build_graph(ds, AblationMode::kStaticOnly);
  EXPECT_EQ(count_vars(s, VariableKind::kDynamicPoint), 0);
  EXPECT_EQ(count_vars(s, VariableKind::kSegmentLength), 0);
  EXPECT_EQ(count_vars(s, VariableKind::kObjectMotion), 0);

  const FactorGraph nm = *build_graph(ds, AblationMode::kNoMotion);
  EXPECT_GT(count_vars(nm, VariableKind::kSegmentLength), 0);
  EXPECT_EQ(count_vars(nm, VariableKind::kObjectMotion), 0);
  EXPECT_EQ(count_kinds(nm).count(FactorKind::kMotion), 0u);

  const FactorGraph nr = *build_graph(ds, AblationMode::kNoRigidity);
  EXPECT_EQ(count_vars(nr, VariableKind::kSegmentLength), 0);
  EXPECT_EQ(count_vars(nr, VariableKind::kObjectMotion), 3);

  const FactorGraph full = *build_graph(ds, AblationMode::kFull);
  EXPECT_EQ(count_vars(full, VariableKind::kObjectMotion), 3);
  EXPECT_TRUE(full.is_constant(VariableId::camera(0)));
  EXPECT_NO_THROW(full.check_values(restrict_to(perturb_initialization(gt, ds, c), full)));
}

TEST(Simulation, MotionWindowSplitsMotionVariables) {
  SimConfig c = preset("group1");
  c.graph.motion_window = 1;
  auto [gt, ds] = generate(c);
  EXPECT_EQ(count_vars(build_graph(ds, contents_of(AblationMode::kFull)),
                       VariableKind::kObjectMotion),
            3 * 17);
  ds.graph.motion_window = 6;
  EXPECT_EQ(count_vars(build_graph(ds, contents_of(AblationMode::kFull)),
                       VariableKind::kObjectMotion),
            3 * 3);
}

TEST(Simulation, DynamicModesNeedDynamicData) {
  SimConfig c = preset("group1");
  c.objects.clear();
  const auto [gt, ds] = generate(c);
  EXPECT_NO_THROW((void)build_graph(ds, AblationMode::kStaticOnly));
  EXPECT_THROW((void)build_graph(ds, AblationMode::kFull), PreconditionError);
  EXPECT_THROW((void)build_graph(ds, kObservationsOnly), PreconditionError);
}

TEST(Simulation, InitNoiseStatistics) {
  const int n = 10000;
  GroundTruth gt;
  gt.cameras.assign(n + 1, Pose::Identity());
  SimConfig c = preset("group1");
  c.init_mode = InitMode::kIndependent;
  c.noise.init_translation = 0.05;
  c.noise.init_rotation_deg = 2.9;
  const std::vector<Pose> cams = perturb_cameras(gt, c);
  Vector3 ss_t = Vector3::Zero(), ss_w = Vector3::Zero();
  for (int k = 1; k <= n; ++k) {
    const Twist xi = log(cams[static_cast<std::size_t>(k)]);
    ss_w += xi.head<3>().cwiseAbs2();
    ss_t += cams[static_cast<std::size_t>(k)].translation().cwiseAbs2();
  }
  const double sigma_w = 2.9 * kPi / 180.0;
  for (int a = 0; a < 3; ++a) {
    EXPECT_NEAR(std::sqrt(ss_t(a) / n), 0.05, 0.05 * 0.05) << a;
    EXPECT_NEAR(std::sqrt(ss_w(a) / n), sigma_w, sigma_w * 0.05) << a;
  }
  EXPECT_TRUE(cams[0].translation().isZero(0));
}

TEST(Simulation, ZeroInitNoiseStartsAtTruth) {
  for (auto mode : {InitMode::kDrift, InitMode::kIndependent}) {
    SimConfig c = noiseless(preset("group1"));
    c.noise.init_translation = 0;
    c.noise.init_rotation_deg = 0;
    c.init_mode = mode;
    const auto [gt, ds] = generate(c);
    const Values init = perturb_initialization(gt, ds, c);
    const Values truth = ground_truth_values(gt, ds);
    ASSERT_EQ(init.size(), truth.size());
    for (const auto& [id, value] : truth) {
      if (id.kind == VariableKind::kObjectMotion) {
        EXPECT_TRUE(init.pose(id).translation().isZero(0));
        EXPECT_EQ(init.pose(id).rotation().Log().norm(), 0.0);
        continue;
      }
      if (id.kind == VariableKind::kCameraPose) {
        EXPECT_LT(log(compose(inverse(truth.pose(id)), init.pose(id))).norm(), 1e-12);
      } else if (id.kind == VariableKind::kSegmentLength) {
        EXPECT_NEAR(init.scalar(id), truth.scalar(id), 1e-12);
      } else {
        EXPECT_LT((init.point(id) - truth.point(id)).norm(), 1e-12);
      }
    }
  }
}

TEST(Simulation, DriftAccumulates) {
  SimConfig c = preset("group1");
  c.seed = 5;
  const GroundTruth gt = generate_truth(c);
  const auto err = [&](InitMode m) {
    c.init_mode = m;
    const auto cams = perturb_cameras(gt, c);
    double late = 0;
    for (int k = 12; k < 18; ++k) {
      late += (cams[static_cast<std::size_t>(k)].translation() -
               gt.cameras[static_cast<std::size_t>(k)].translation())
                  .norm();
    }
    return std::make_pair(late, cams[1]);
  };
  const auto [drift, d1] = err(InitMode::kDrift);
  const auto [indep, i1] = err(InitMode::kIndependent);
  EXPECT_GT(drift, indep);
  // The first increment is the same noise draw in both modes.
  EXPECT_LT(log(compose(inverse(d1), i1)).norm(), 1e-12);
}

TEST(Simulation, TruthIsConsistent) {
  const SimConfig c = noiseless(preset("human14"));
  const auto [gt, ds] = generate(c);
  const Values truth = ground_truth_values(gt, ds);
  const FactorGraph full = build_graph(ds, contents_of(AblationMode::kFull));
  for (const auto& e : full.factors()) {
    EXPECT_LT(residual(e.factor, truth).norm(), 1e-9) << e.id;
  }
  for (std::size_t l = 0; l < gt.parts.size(); ++l) {
    for (std::size_t r = 0; r < gt.parts[l].size(); ++r) {
      const std::size_t n = gt.parts[l][r].shape_world.size();
      for (int k = 0; k < gt.n_frames(); ++k) {
        for (std::size_t i = 0; i + 1 < n; ++i) {
          const int li = static_cast<int>(l), ri = static_cast<int>(r);
          const int a = static_cast<int>(i), b = a + 1;
          const double d =
              (gt.dynamic_point(li, ri, a, k) - gt.dynamic_point(li, ri, b, k)).norm();
          EXPECT_NEAR(d, gt.segment_length(li, ri, a, b), 1e-12);
        }
      }
    }
  }
}

TEST(Simulation, NoiselessSolveRecoversTruthInEveryMode) {
  const SimConfig c = noiseless(preset("group1"));
  for (AblationMode mode : all_modes()) {
    if (mode == AblationMode::kBeforeBA) continue;
    const CellResult r = run_cell(c, mode, 3);
    ASSERT_TRUE(r.ok) << mode_name(mode) << ": " << r.error;
    EXPECT_LT(r.ate, 1e-9) << mode_name(mode);
    EXPECT_LT(r.rpe_trans, 1e-9) << mode_name(mode);
    EXPECT_TRUE(r.lm_monotone);
    if (mode != AblationMode::kStaticOnly) {
      EXPECT_LT(r.dynamic_ate, 1e-9) << mode_name(mode);
    }
  }
}

TEST(Simulation, BeforeBAReportsInitialization) {
  SimConfig c = preset("group1");
  const CellResult r = run_cell(c, AblationMode::kBeforeBA, 7);
  c.seed = 7;
  const auto [gt, ds] = generate(c);
  const Values init = perturb_initialization(gt, ds, c);
  const MetricReport m = evaluate(camera_trajectory(init), camera_trajectory(gt));
  EXPECT_EQ(r.ate, m.ate_rmse);
  EXPECT_EQ(r.rpe_rot, m.rpe_rot_rmse);
  EXPECT_EQ(r.rpe_trans, m.rpe_trans_rmse);
  EXPECT_EQ(r.iterations, 0);
  EXPECT_GT(r.ate, 0.0);
}

TEST(Simulation, WarnsWhenNoStaticLandmarkVisible) {
  SimConfig c = preset("group1");
  c.static_points = {Point3(0, 0, -50)};  // behind the camera
  const auto [gt, ds] = generate(c);
  EXPECT_EQ(ds.warnings.size(), 18u);
  EXPECT_NE(ds.warnings[0].find("no static landmark"), std::string::npos);
}

TEST(Simulation, CorruptionSwapsToFarthestPoint) {
  const SimConfig c = preset("group1");
  const auto [gt, ds] = generate(c);
  const FactorGraph g = build_graph(ds, contents_of(AblationMode::kFull));
  const Values truth = ground_truth_values(gt, ds);
  const CorruptedGraph bad = corrupt_motion_factors(g, truth, 0.1, 9);
  ASSERT_EQ(bad.graph.factors().size(), g.factors().size());
  const double n_motion = static_cast<double>(g.count_factors(FactorKind::kMotion));
  EXPECT_EQ(n_motion, 12 * 17);
  EXPECT_EQ(bad.corrupted.size(), static_cast<std::size_t>(std::llround(0.1 * n_motion)));
  const std::set<FactorId> hit(bad.corrupted.begin(), bad.corrupted.end());
  for (std::size_t n = 0; n < g.factors().size(); ++n) {
    const auto& a = g.factors()[n];
    const auto& b = bad.graph.factors()[n];
    ASSERT_EQ(a.id, b.id);
    if (!hit.count(a.id)) continue;
    const auto& fa = std::get<MotionFactor>(a.factor);
    const auto& fb = std::get<MotionFactor>(b.factor);
    EXPECT_NE(fa.point_next, fb.point_next);
    EXPECT_EQ(fa.point_next.object(), fb.point_next.object());
    EXPECT_EQ(fa.point_next.part(), fb.point_next.part());
    EXPECT_EQ(fa.point_next.frame(), fb.point_next.frame());
  }
  EXPECT_EQ(corrupt_motion_factors(g, truth, 0.1, 9).corrupted, bad.corrupted);
}

TEST(Simulation, AblationIndependentOfWorkers) {
  const SimConfig c = preset("group1");
  const std::vector<std::uint64_t> seeds = {0, 1, 2};
  const auto a = run_ablation(c, all_modes(), seeds, {1, {}});
  const auto b = run_ablation(c, all_modes(), seeds, {4, {}});
  ASSERT_EQ(a.cells.size(), b.cells.size());
  for (std::size_t n = 0; n < a.cells.size(); ++n) {
    EXPECT_EQ(a.cells[n].mode, b.cells[n].mode);
    EXPECT_EQ(a.cells[n].seed, b.cells[n].seed);
    EXPECT_EQ(a.cells[n].ate, b.cells[n].ate);
    EXPECT_EQ(a.cells[n].iterations, b.cells[n].iterations);
    EXPECT_TRUE(a.cells[n].dynamic_ate == b.cells[n].dynamic_ate ||
                (std::isnan(a.cells[n].dynamic_ate) && std::isnan(b.cells[n].dynamic_ate)));
  }
  EXPECT_EQ(a.failed_cells(), 0);
}

TEST(Simulation, InvalidConfigIsRejected) {
  SimConfig c = preset("group1");
  c.noise.measurement = -1;
  EXPECT_THROW((void)generate(c), ConfigError);
  c = preset("group1");
  c.waypoints.clear();
  EXPECT_THROW((void)generate(c), ConfigError);
  EXPECT_THROW((void)run_ablation(preset("group1"), {}, {0}), PreconditionError);
}
