#pragma once

// Simulated world for the ablation study: a camera moving along a waypoint
// path, static landmarks, and articulated objects whose rigid parts each
// follow one constant world-frame SE(3) motion per frame. Observations are
// camera-frame 3D points with isotropic Gaussian noise, limited by a
// range/cone field of view and a per-frame feature budget.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <thread>
#include <tuple>
#include <utility>
#include <vector>

#include "dynba/errors.hpp"
#include "dynba/factor_graph.hpp"
#include "dynba/geometry.hpp"
#include "dynba/metrics.hpp"
#include "dynba/rng.hpp"
#include "dynba/solver.hpp"

namespace dynba {

// ---------------------------------------------------------------- config --

struct Waypoint {
  int frame = 0;
  Vector3 position = Vector3::Zero();
  /// Rotation vector in degrees (camera-to-world).
  Vector3 rotation_deg = Vector3::Zero();
};

struct PartConfig {
  /// Point offsets from `anchor`. When empty, `points` offsets are drawn
  /// uniformly from a cube of side `extent`.
  std::vector<Point3> shape;
  int points = 6;
  double extent = 0.6;
  /// Position of the part (relative to the object origin) at frame 0.
  Vector3 anchor = Vector3::Zero();
  /// Constant per-frame motion: rotation about the frame-0 centroid of the
  /// part, then translation. Degrees and meters per frame.
  Vector3 angular_velocity_deg = Vector3::Zero();
  Vector3 linear_velocity = Vector3::Zero();
};

struct ObjectConfig {
  Vector3 origin = Vector3::Zero();
  std::vector<PartConfig> parts;
};

struct NoiseConfig {
  double init_translation = 0.05;  // m
  double init_rotation_deg = 2.9;
  double measurement = 0.05;  // m
};

struct FovConfig {
  double max_range = 30.0;  // m
  double half_angle_deg = 60.0;
};

struct BoxRegion {
  Vector3 min = Vector3(-4, -2, 12);
  Vector3 max = Vector3(4, 2, 20);
};

enum class InitMode {
  /// Each frame's pose is the previous estimate composed with the true
  /// relative motion and one noise increment (odometry-like drift).
  kDrift,
  /// Each frame's pose is the true pose composed with its own noise draw.
  kIndependent,
};

enum class RigidityTopology { kSpanning, kClique };

struct GraphOptions {
  /// Factor standard deviations in meters; <= 0 selects the default: the
  /// measurement sigma for observations and sqrt(2) times it for rigidity
  /// and motion (both compare two measured points). A zero measurement
  /// sigma is replaced by 0.05.
  double observation_sigma = 0;
  double rigidity_sigma = 0;
  double motion_sigma = 0;
  RigidityTopology topology = RigidityTopology::kSpanning;
  /// Frames covered by one motion variable; 0 = one variable per part for
  /// the whole sequence, 1 = one per consecutive frame pair.
  int motion_window = 0;
};

struct SimConfig {
  int n_frames = 18;
  std::vector<Waypoint> waypoints;
  int static_count = 10;
  BoxRegion static_region;
  std::vector<Point3> static_points;  // explicit layout; overrides random
  std::vector<ObjectConfig> objects;
  NoiseConfig noise;
  FovConfig fov;
  /// Feature budget per frame; negative means unlimited.
  int static_budget = -1;
  int dynamic_budget = -1;
  InitMode init_mode = InitMode::kDrift;
  GraphOptions graph;
  std::uint64_t seed = 0;

  void validate() const {
    if (n_frames < 1) throw ConfigError("n_frames must be >= 1", "n_frames");
    if (waypoints.empty()) throw ConfigError("no camera waypoints", "waypoints");
    for (std::size_t n = 0; n < waypoints.size(); ++n) {
      if (n > 0 && waypoints[n].frame <= waypoints[n - 1].frame) {
        throw ConfigError("waypoint frames must increase", "waypoints");
      }
    }
    if (waypoints.front().frame != 0) {
      throw ConfigError("first waypoint must be at frame 0", "waypoints");
    }
    if (waypoints.size() > 1 && waypoints.back().frame < n_frames - 1) {
      throw ConfigError("waypoints end before the last frame", "waypoints");
    }
    if (static_points.empty() && static_count < 1) {
      throw ConfigError("static_count must be >= 1", "static_count");
    }
    if ((static_region.max - static_region.min).minCoeff() < 0) {
      throw ConfigError("static_region max < min", "static_region");
    }
    if (!(noise.init_translation >= 0) || !(noise.init_rotation_deg >= 0) ||
        !(noise.measurement >= 0)) {
      throw ConfigError("noise sigmas must be >= 0", "noise");
    }
    if (!(fov.max_range > 0) || !(fov.half_angle_deg > 0)) {
      throw ConfigError("fov range and half-angle must be positive", "fov");
    }
    if (graph.motion_window < 0) {
      throw ConfigError("motion_window must be >= 0", "graph.motion_window");
    }
    for (const auto& o : objects) {
      if (o.parts.empty()) throw ConfigError("object without parts", "objects");
      for (const auto& p : o.parts) {
        const int count = p.shape.empty() ? p.points
                                          : static_cast<int>(p.shape.size());
        if (count < 1) throw ConfigError("part without points", "objects.parts");
        if (p.shape.empty() && !(p.extent > 0)) {
          throw ConfigError("part extent must be positive", "objects.parts");
        }
      }
    }
  }
};

// ------------------------------------------------------------ world data --

struct LandmarkRef {
  bool dynamic = false;
  int object = 0;
  int part = 0;
  int point = 0;  // static landmark index when !dynamic

  auto operator<=>(const LandmarkRef&) const = default;
};

struct Measurement {
  LandmarkRef landmark;
  Point3 z = Point3::Zero();  // camera frame, meters
};

struct PartTruth {
  std::vector<Point3> shape_world;  // frame-0 world positions
  Pose motion;                      // per-frame world motion
};

struct GroundTruth {
  std::vector<Pose> cameras;
  std::vector<Point3> static_points;
  /// [object][part]
  std::vector<std::vector<PartTruth>> parts;

  int n_frames() const { return static_cast<int>(cameras.size()); }

  /// Position of a dynamic point at frame k: motion^k applied to frame 0.
  Point3 dynamic_point(int l, int r, int i, int k) const {
    const PartTruth& p = parts[static_cast<std::size_t>(l)][static_cast<std::size_t>(r)];
    Point3 x = p.shape_world[static_cast<std::size_t>(i)];
    for (int n = 0; n < k; ++n) x = act(p.motion, x);
    return x;
  }

  double segment_length(int l, int r, int i, int j) const {
    const auto& s = parts[static_cast<std::size_t>(l)][static_cast<std::size_t>(r)].shape_world;
    return (s[static_cast<std::size_t>(i)] - s[static_cast<std::size_t>(j)]).norm();
  }

  Point3 landmark(const LandmarkRef& ref, int k) const {
    return ref.dynamic ? dynamic_point(ref.object, ref.part, ref.point, k)
                       : static_points[static_cast<std::size_t>(ref.point)];
  }
};

struct SimDataset {
  /// Selected measurements per frame, static ones first.
  std::vector<std::vector<Measurement>> frames;
  /// Landmarks inside the field of view per frame, before the budget.
  std::vector<std::vector<LandmarkRef>> visible;
  std::vector<std::string> warnings;
  GraphOptions graph;
  double measurement_sigma = 0;

  int n_frames() const { return static_cast<int>(frames.size()); }
  bool has_dynamic() const {
    for (const auto& f : frames) {
      for (const auto& m : f) {
        if (m.landmark.dynamic) return true;
      }
    }
    return false;
  }
};

// --------------------------------------------------------------- presets --

namespace detail {

inline ObjectConfig walker(const Vector3& origin, double speed,
                           const std::vector<double>& spin_deg) {
  ObjectConfig o;
  o.origin = origin;
  for (std::size_t r = 0; r < spin_deg.size(); ++r) {
    PartConfig p;
    p.points = 6;
    p.extent = 0.6;
    p.anchor = Vector3(0.0, 0.7 * (static_cast<double>(r) - 1.0), 0.0);
    p.angular_velocity_deg = Vector3(0, 0, spin_deg[r]);
    p.linear_velocity = Vector3(0, 0, speed);
    o.parts.push_back(p);
  }
  return o;
}

}  // namespace detail

/// Ablation groups 1..4: 18, 36, 54 and 72 frames with 1..4 walking objects
/// of three parts each. Group 1 observes 8 static and 12 dynamic landmarks
/// per frame. The camera advances 1 m per frame (street scale).
[[nodiscard]] inline SimConfig preset_group(int group) {
  if (group < 1 || group > 4) {
    throw ConfigError("unknown group preset " + std::to_string(group), "preset");
  }
  SimConfig c;
  c.n_frames = 18 * group;
  const double step = 1.0;
  const double path = step * (c.n_frames - 1);
  // Forward motion with a lateral sway every 6 frames, so the path is not
  // collinear and trajectory alignment is fully determined.
  for (int k = 0; k < c.n_frames - 1; k += 6) {
    const int phase = (k / 6) % 4;
    const double x = phase == 1 ? 2.0 : (phase == 3 ? -2.0 : 0.0);
    c.waypoints.push_back(Waypoint{k, Vector3(x, 0.25 * x, step * k), Vector3::Zero()});
  }
  c.waypoints.push_back(Waypoint{c.n_frames - 1, Vector3(0, 0, path), Vector3::Zero()});
  c.static_count = 10 * group;
  c.static_region.min = Vector3(-32, -16, 24);
  c.static_region.max = Vector3(32, 16, 39 + path);
  c.fov.max_range = 120.0;
  c.fov.half_angle_deg = 70.0;
  const std::vector<Vector3> origins = {
      Vector3(-6, 0, 20), Vector3(6, 0.8, 24), Vector3(-2, -2, 32),
      Vector3(3.2, 2.4, 36)};
  const std::vector<std::vector<double>> spins = {
      {1.0, -1.5, 2.0}, {-0.8, 1.2, 0.6}, {1.4, 0.5, -1.0}, {-1.2, 0.9, 1.6}};
  for (int l = 0; l < group; ++l) {
    c.objects.push_back(detail::walker(origins[static_cast<std::size_t>(l)],
                                       0.8 + 0.04 * l,
                                       spins[static_cast<std::size_t>(l)]));
  }
  c.static_budget = 8 * group;
  c.dynamic_budget = 12 * group;
  return c;
}

/// Group 1 with a 90 degree yaw turn over the second half of the path.
[[nodiscard]] inline SimConfig preset_turn() {
  SimConfig c = preset_group(1);
  c.waypoints = {Waypoint{0, Vector3::Zero(), Vector3::Zero()},
                 Waypoint{8, Vector3(0, 0, 8), Vector3::Zero()},
                 Waypoint{17, Vector3(6, 0, 14), Vector3(0, 90, 0)}};
  c.static_count = 20;
  c.static_region.min = Vector3(0, -12, 24);
  c.static_region.max = Vector3(60, 12, 64);
  c.static_budget = -1;
  c.dynamic_budget = -1;
  return c;
}

/// A 14 key-point human: torso (6 points) and four two-point limb parts.
/// Coordinates are invented.
[[nodiscard]] inline SimConfig preset_human() {
  SimConfig c = preset_group(1);
  ObjectConfig h;
  h.origin = Vector3(-4, 0, 20);
  const Vector3 v(0, 0, 0.8);
  PartConfig torso;
  torso.shape = {Point3(0, -0.75, 0),     Point3(0, -0.55, 0),
                 Point3(-0.2, -0.45, 0),  Point3(0.2, -0.45, 0.02),
                 Point3(-0.15, 0.05, 0),  Point3(0.15, 0.05, -0.02)};
  torso.linear_velocity = v;
  torso.angular_velocity_deg = Vector3(0, 0, 0.5);
  c.objects.clear();
  h.parts.push_back(torso);
  const std::vector<std::pair<Point3, Point3>> limbs = {
      {Point3(-0.28, -0.2, 0.02), Point3(-0.33, 0.05, 0.06)},   // left arm
      {Point3(0.28, -0.2, -0.02), Point3(0.33, 0.05, -0.06)},   // right arm
      {Point3(-0.12, 0.45, 0.03), Point3(-0.13, 0.85, 0.0)},    // left leg
      {Point3(0.12, 0.45, -0.03), Point3(0.13, 0.85, 0.01)}};   // right leg
  const std::vector<double> spin = {2.0, -2.0, -1.5, 1.5};
  for (std::size_t n = 0; n < limbs.size(); ++n) {
    PartConfig p;
    p.shape = {limbs[n].first, limbs[n].second};
    p.linear_velocity = v;
    p.angular_velocity_deg = Vector3(0, 0, spin[n]);
    h.parts.push_back(p);
  }
  c.objects.push_back(h);
  c.static_count = 8;
  c.static_budget = -1;
  c.dynamic_budget = -1;
  return c;
}

[[nodiscard]] inline SimConfig preset(const std::string& name) {
  if (name == "group1") return preset_group(1);
  if (name == "group2") return preset_group(2);
  if (name == "group3") return preset_group(3);
  if (name == "group4") return preset_group(4);
  if (name == "turn") return preset_turn();
  if (name == "human14") return preset_human();
  throw ConfigError("unknown preset '" + name + "'", "preset");
}

// ------------------------------------------------------------ generation --

/// Camera pose at frame k: piecewise interpolation between waypoints
/// (linear in position, geodesic in rotation).
[[nodiscard]] inline Pose camera_at(const std::vector<Waypoint>& wps, int k) {
  const auto rot = [](const Waypoint& w) {
    return Rotation::Exp(w.rotation_deg * (kPi / 180.0));
  };
  if (wps.size() == 1 || k <= wps.front().frame) {
    return Pose(rot(wps.front()), wps.front().position);
  }
  for (std::size_t n = 1; n < wps.size(); ++n) {
    const Waypoint& a = wps[n - 1];
    const Waypoint& b = wps[n];
    if (k > b.frame) continue;
    const double t =
        static_cast<double>(k - a.frame) / static_cast<double>(b.frame - a.frame);
    const Rotation ra = rot(a);
    const Rotation rel = ra.inverse() * rot(b);
    return Pose(ra * Rotation::Exp(rel.Log() * t),
                a.position + t * (b.position - a.position));
  }
  return Pose(rot(wps.back()), wps.back().position);
}

[[nodiscard]] inline bool in_fov(const FovConfig& fov, const Point3& q) {
  const double d = q.norm();
  if (!(d <= fov.max_range)) return false;
  if (fov.half_angle_deg >= 180.0) return true;
  if (d == 0.0) return false;
  return q.z() >= d * std::cos(fov.half_angle_deg * kPi / 180.0);
}

/// Ground truth only (no measurements).
[[nodiscard]] inline GroundTruth generate_truth(const SimConfig& config) {
  config.validate();
  GroundTruth gt;
  for (int k = 0; k < config.n_frames; ++k) {
    gt.cameras.push_back(camera_at(config.waypoints, k));
  }
  if (!config.static_points.empty()) {
    gt.static_points = config.static_points;
  } else {
    for (int i = 0; i < config.static_count; ++i) {
      RandomStream rng(config.seed, Stream::kStaticLayout,
                       {static_cast<std::uint64_t>(i)});
      Point3 p;
      for (int a = 0; a < 3; ++a) {
        p(a) = rng.uniform(config.static_region.min(a), config.static_region.max(a));
      }
      gt.static_points.push_back(p);
    }
  }
  for (std::size_t l = 0; l < config.objects.size(); ++l) {
    const ObjectConfig& o = config.objects[l];
    std::vector<PartTruth> parts;
    for (std::size_t r = 0; r < o.parts.size(); ++r) {
      const PartConfig& pc = o.parts[r];
      PartTruth pt;
      std::vector<Point3> local = pc.shape;
      if (local.empty()) {
        RandomStream rng(config.seed, Stream::kPartShape, {l, r});
        for (int i = 0; i < pc.points; ++i) {
          Point3 p;
          for (int a = 0; a < 3; ++a) p(a) = rng.uniform(-0.5, 0.5) * pc.extent;
          local.push_back(p);
        }
      }
      Point3 centroid = Point3::Zero();
      for (const auto& p : local) {
        pt.shape_world.push_back(o.origin + pc.anchor + p);
        centroid += pt.shape_world.back();
      }
      centroid /= static_cast<double>(local.size());
      for (std::size_t i = 0; i < local.size(); ++i) {
        for (std::size_t j = i + 1; j < local.size(); ++j) {
          if (!((pt.shape_world[i] - pt.shape_world[j]).norm() > 1e-6)) {
            throw ConfigError("part shape has coincident points", "objects.parts");
          }
        }
      }
      const Rotation rot = Rotation::Exp(pc.angular_velocity_deg * (kPi / 180.0));
      pt.motion = Pose(rot, centroid + pc.linear_velocity - (rot * centroid));
      parts.push_back(std::move(pt));
    }
    gt.parts.push_back(std::move(parts));
  }
  return gt;
}

namespace detail {

inline RandomStream measurement_stream(std::uint64_t seed, int k,
                                       const LandmarkRef& ref) {
  const auto u = [](int v) { return static_cast<std::uint64_t>(v); };
  if (ref.dynamic) {
    return RandomStream(seed, Stream::kMeasurement,
                        {u(k), 1, u(ref.object), u(ref.part), u(ref.point)});
  }
  return RandomStream(seed, Stream::kMeasurement, {u(k), 0, u(ref.point)});
}

}  // namespace detail

/// Ground truth and noisy measurements; deterministic in config.seed.
[[nodiscard]] inline std::pair<GroundTruth, SimDataset> generate(
    const SimConfig& config) {
  GroundTruth gt = generate_truth(config);
  SimDataset ds;
  ds.graph = config.graph;
  ds.measurement_sigma = config.noise.measurement;
  const int n_static = static_cast<int>(gt.static_points.size());

  // Dynamic priority order: point index first, then object and part, so a
  // budget spreads over all parts.
  std::vector<LandmarkRef> dynamic_order;
  std::size_t max_points = 0;
  for (const auto& parts : gt.parts) {
    for (const auto& p : parts) max_points = std::max(max_points, p.shape_world.size());
  }
  for (std::size_t i = 0; i < max_points; ++i) {
    for (std::size_t l = 0; l < gt.parts.size(); ++l) {
      for (std::size_t r = 0; r < gt.parts[l].size(); ++r) {
        if (i < gt.parts[l][r].shape_world.size()) {
          dynamic_order.push_back(LandmarkRef{true, static_cast<int>(l),
                                              static_cast<int>(r),
                                              static_cast<int>(i)});
        }
      }
    }
  }

  for (int k = 0; k < config.n_frames; ++k) {
    const Pose to_camera = inverse(gt.cameras[static_cast<std::size_t>(k)]);
    std::vector<Measurement> frame;
    std::vector<LandmarkRef> visible;
    int n_sel_static = 0, n_sel_dynamic = 0;
    const auto consider = [&](const LandmarkRef& ref, int budget, int& taken) {
      const Point3 q = act(to_camera, gt.landmark(ref, k));
      if (!in_fov(config.fov, q)) return;
      visible.push_back(ref);
      if (budget >= 0 && taken >= budget) return;
      ++taken;
      RandomStream rng = detail::measurement_stream(config.seed, k, ref);
      frame.push_back(Measurement{ref, q + rng.normal3(config.noise.measurement)});
    };
    for (int i = 0; i < n_static; ++i) {
      consider(LandmarkRef{false, 0, 0, i}, config.static_budget, n_sel_static);
    }
    for (const auto& ref : dynamic_order) {
      consider(ref, config.dynamic_budget, n_sel_dynamic);
    }
    if (n_sel_static == 0) {
      ds.warnings.push_back("frame " + std::to_string(k) +
                            ": no static landmark visible");
    }
    ds.frames.push_back(std::move(frame));
    ds.visible.push_back(std::move(visible));
  }
  return {std::move(gt), std::move(ds)};
}

// ---------------------------------------------------------- graph layout --

[[nodiscard]] inline VariableId motion_variable(int l, int r, int k, int window) {
  const int start = window <= 0 ? 0 : (k / window) * window;
  return VariableId::motion(l, r, start);
}

[[nodiscard]] inline VariableId landmark_variable(const LandmarkRef& ref, int k) {
  return ref.dynamic ? VariableId::dynamic_point(ref.object, ref.part, ref.point, k)
                     : VariableId::static_point(ref.point);
}

/// Point pairs (i < j) constrained by rigidity among the observed point ids
/// of one part in one frame.
[[nodiscard]] inline std::vector<std::pair<int, int>> rigidity_pairs(
    std::vector<int> observed, RigidityTopology topology) {
  std::sort(observed.begin(), observed.end());
  std::vector<std::pair<int, int>> out;
  const std::size_t n = observed.size();
  if (topology == RigidityTopology::kClique) {
    for (std::size_t a = 0; a < n; ++a) {
      for (std::size_t b = a + 1; b < n; ++b) out.emplace_back(observed[a], observed[b]);
    }
    return out;
  }
  for (std::size_t a = 0; a + 1 < n; ++a) out.emplace_back(observed[a], observed[a + 1]);
  if (n >= 3) out.emplace_back(observed[0], observed[2]);
  return out;
}

/// Observed point ids per (object, part) per frame.
using PartObservations = std::map<std::pair<int, int>, std::vector<int>>;

[[nodiscard]] inline std::vector<PartObservations> observed_parts(
    const SimDataset& ds) {
  std::vector<PartObservations> out;
  for (const auto& frame : ds.frames) {
    PartObservations po;
    for (const auto& m : frame) {
      if (m.landmark.dynamic) {
        po[{m.landmark.object, m.landmark.part}].push_back(m.landmark.point);
      }
    }
    for (auto& [key, ids] : po) std::sort(ids.begin(), ids.end());
    out.push_back(std::move(po));
  }
  return out;
}

namespace detail {

/// `scale` is sqrt(2) for factors relating two measured points.
inline double sigma_or_default(double option, double measurement,
                               double scale = 1.0) {
  if (option > 0) return option;
  return scale * (measurement > 0 ? measurement : 0.05);
}

}  // namespace detail

enum class AblationMode { kBeforeBA, kStaticOnly, kNoMotion, kNoRigidity, kFull };

inline const char* mode_name(AblationMode m) {
  switch (m) {
    case AblationMode::kBeforeBA: return "BeforeBA";
    case AblationMode::kStaticOnly: return "StaticOnly";
    case AblationMode::kNoMotion: return "NoMotion";
    case AblationMode::kNoRigidity: return "NoRigidity";
    case AblationMode::kFull: return "Full";
  }
  return "?";
}

inline std::optional<AblationMode> parse_mode(const std::string& s) {
  for (auto m : {AblationMode::kBeforeBA, AblationMode::kStaticOnly,
                 AblationMode::kNoMotion, AblationMode::kNoRigidity,
                 AblationMode::kFull}) {
    if (s == mode_name(m)) return m;
  }
  return std::nullopt;
}

inline const std::vector<AblationMode>& all_modes() {
  static const std::vector<AblationMode> modes = {
      AblationMode::kBeforeBA, AblationMode::kStaticOnly, AblationMode::kNoMotion,
      AblationMode::kNoRigidity, AblationMode::kFull};
  return modes;
}

/// Factor kinds included in a graph. Static observations are always present.
struct GraphContents {
  bool dynamic_observations = true;
  bool rigidity = true;
  bool motion = true;
};

/// Static and dynamic point observations only: the "reprojection error"
/// baseline used for timing comparisons.
inline constexpr GraphContents kObservationsOnly{true, false, false};

[[nodiscard]] inline GraphContents contents_of(AblationMode mode) {
  switch (mode) {
    case AblationMode::kStaticOnly: return {false, false, false};
    case AblationMode::kNoMotion: return {true, true, false};
    case AblationMode::kNoRigidity: return {true, false, true};
    default: return {true, true, true};
  }
}

/// Factor graph with the given contents. The first camera is held constant.
[[nodiscard]] inline FactorGraph build_graph(const SimDataset& ds,
                                             const GraphContents& contents) {
  const bool dynamic = contents.dynamic_observations;
  const bool rigidity = dynamic && contents.rigidity;
  const bool motion = dynamic && contents.motion;
  if (dynamic && !ds.has_dynamic()) {
    throw PreconditionError(
        "graph needs dynamic observations, dataset has none");
  }
  if (ds.frames.empty()) throw PreconditionError("dataset has no frames");

  const GraphOptions& opt = ds.graph;
  const double sm = ds.measurement_sigma;
  const Matrix3 obs_cov = isotropic(detail::sigma_or_default(opt.observation_sigma, sm));
  const double rig_sigma =
      detail::sigma_or_default(opt.rigidity_sigma, sm, std::sqrt(2.0));
  const Matrix3 mot_cov =
      isotropic(detail::sigma_or_default(opt.motion_sigma, sm, std::sqrt(2.0)));

  FactorGraph g;
  for (int k = 0; k < ds.n_frames(); ++k) g.add_variable(VariableId::camera(k));
  g.hold_constant(VariableId::camera(0));

  for (int k = 0; k < ds.n_frames(); ++k) {
    for (const auto& m : ds.frames[static_cast<std::size_t>(k)]) {
      if (m.landmark.dynamic && !dynamic) continue;
      const VariableId v = landmark_variable(m.landmark, k);
      if (!g.has_variable(v)) g.add_variable(v);
      g.add_factor(ObservationFactor{VariableId::camera(k), v, m.z, obs_cov});
    }
  }
  if (!dynamic) return g;

  const auto parts = observed_parts(ds);
  if (rigidity) {
    for (int k = 0; k < ds.n_frames(); ++k) {
      for (const auto& [key, ids] : parts[static_cast<std::size_t>(k)]) {
        const auto [l, r] = key;
        for (const auto& [i, j] : rigidity_pairs(ids, opt.topology)) {
          const VariableId s = VariableId::segment(l, r, i, j);
          if (!g.has_variable(s)) g.add_variable(s);
          g.add_factor(RigidityFactor{VariableId::dynamic_point(l, r, i, k),
                                      VariableId::dynamic_point(l, r, j, k), s,
                                      rig_sigma * rig_sigma});
        }
      }
    }
  }
  if (motion) {
    for (int k = 0; k + 1 < ds.n_frames(); ++k) {
      const auto& now = parts[static_cast<std::size_t>(k)];
      const auto& next = parts[static_cast<std::size_t>(k + 1)];
      for (const auto& [key, ids] : now) {
        auto it = next.find(key);
        if (it == next.end()) continue;
        const auto [l, r] = key;
        for (int i : ids) {
          if (!std::binary_search(it->second.begin(), it->second.end(), i)) continue;
          const VariableId t = motion_variable(l, r, k, opt.motion_window);
          if (!g.has_variable(t)) g.add_variable(t);
          g.add_factor(MotionFactor{VariableId::dynamic_point(l, r, i, k),
                                    VariableId::dynamic_point(l, r, i, k + 1), t,
                                    mot_cov});
        }
      }
    }
  }
  return g;
}

/// Factor graph of one ablation mode; empty for BeforeBA.
[[nodiscard]] inline std::optional<FactorGraph> build_graph(
    const SimDataset& ds, AblationMode mode) {
  if (mode == AblationMode::kBeforeBA) return std::nullopt;
  if (mode != AblationMode::kStaticOnly && !ds.has_dynamic()) {
    throw PreconditionError(std::string("mode ") + mode_name(mode) +
                            " needs dynamic observations, dataset has none");
  }
  return build_graph(ds, contents_of(mode));
}

// -------------------------------------------------------- initialization --

namespace detail {

inline Pose pose_noise(RandomStream& rng, const NoiseConfig& n) {
  const Vector3 w = rng.normal3(n.init_rotation_deg * kPi / 180.0);
  const Vector3 t = rng.normal3(n.init_translation);
  return Pose(Rotation::Exp(w), t);
}

}  // namespace detail

/// Noisy camera poses only (frame 0 exact).
[[nodiscard]] inline std::vector<Pose> perturb_cameras(const GroundTruth& gt,
                                                       const SimConfig& config) {
  std::vector<Pose> out;
  for (int k = 0; k < gt.n_frames(); ++k) {
    const Pose& truth = gt.cameras[static_cast<std::size_t>(k)];
    if (k == 0) {
      out.push_back(truth);
      continue;
    }
    RandomStream rng(config.seed, Stream::kInitPose, {static_cast<std::uint64_t>(k)});
    const Pose noise = detail::pose_noise(rng, config.noise);
    if (config.init_mode == InitMode::kIndependent) {
      out.push_back(compose(truth, noise));
    } else {
      const Pose rel = compose(inverse(gt.cameras[static_cast<std::size_t>(k - 1)]), truth);
      out.push_back(compose(compose(out.back(), rel), noise));
    }
  }
  return out;
}

/// Initial values for every variable of the Full graph: noisy cameras,
/// points back-projected through them (static points from their first
/// measurement), segments from first-frame point distances, identity motions.
[[nodiscard]] inline Values perturb_initialization(const GroundTruth& gt,
                                                   const SimDataset& ds,
                                                   const SimConfig& config) {
  const std::vector<Pose> cams = perturb_cameras(gt, config);
  Values v;
  for (int k = 0; k < ds.n_frames(); ++k) {
    const Pose& cam = cams[static_cast<std::size_t>(k)];
    v.insert(VariableId::camera(k), cam);
    for (const auto& m : ds.frames[static_cast<std::size_t>(k)]) {
      const VariableId id = landmark_variable(m.landmark, k);
      if (!v.contains(id)) v.insert(id, act(cam, m.z));
    }
  }
  const auto parts = observed_parts(ds);
  for (int k = 0; k < ds.n_frames(); ++k) {
    for (const auto& [key, ids] : parts[static_cast<std::size_t>(k)]) {
      const auto [l, r] = key;
      // Every topology's pairs are a subset of the clique.
      for (const auto& [i, j] : rigidity_pairs(ids, RigidityTopology::kClique)) {
        const VariableId s = VariableId::segment(l, r, i, j);
        if (v.contains(s)) continue;
        v.insert(s, (v.point(VariableId::dynamic_point(l, r, i, k)) -
                     v.point(VariableId::dynamic_point(l, r, j, k)))
                        .norm());
      }
    }
    if (k + 1 < ds.n_frames()) {
      for (const auto& [key, ids] : parts[static_cast<std::size_t>(k)]) {
        const VariableId t =
            motion_variable(key.first, key.second, k, ds.graph.motion_window);
        if (!v.contains(t)) v.insert(t, Pose::Identity());
      }
    }
  }
  return v;
}

/// True values for every variable of the Full graph.
[[nodiscard]] inline Values ground_truth_values(const GroundTruth& gt,
                                                const SimDataset& ds) {
  Values v;
  for (int k = 0; k < ds.n_frames(); ++k) {
    v.insert(VariableId::camera(k), gt.cameras[static_cast<std::size_t>(k)]);
    for (const auto& m : ds.frames[static_cast<std::size_t>(k)]) {
      const VariableId id = landmark_variable(m.landmark, k);
      if (!v.contains(id)) v.insert(id, gt.landmark(m.landmark, k));
    }
  }
  const auto parts = observed_parts(ds);
  for (int k = 0; k < ds.n_frames(); ++k) {
    for (const auto& [key, ids] : parts[static_cast<std::size_t>(k)]) {
      const auto [l, r] = key;
      for (const auto& [i, j] : rigidity_pairs(ids, RigidityTopology::kClique)) {
        const VariableId s = VariableId::segment(l, r, i, j);
        if (!v.contains(s)) v.insert(s, gt.segment_length(l, r, i, j));
      }
      if (k + 1 < ds.n_frames()) {
        const VariableId t = motion_variable(l, r, k, ds.graph.motion_window);
        if (!v.contains(t)) {
          v.insert(t, gt.parts[static_cast<std::size_t>(l)][static_cast<std::size_t>(r)].motion);
        }
      }
    }
  }
  return v;
}

/// Values restricted to the variables of a graph.
[[nodiscard]] inline Values restrict_to(const Values& v, const FactorGraph& g) {
  Values out;
  for (const auto& id : g.variables()) out.insert(id, v.at(id));
  return out;
}

// ------------------------------------------------------------ trajectories --

[[nodiscard]] inline PoseTrajectory camera_trajectory(const Values& v) {
  PoseTrajectory t;
  for (const auto& [id, value] : v) {
    if (id.kind == VariableKind::kCameraPose) t.push_back(id.frame(), std::get<Pose>(value));
  }
  return t;
}

[[nodiscard]] inline PoseTrajectory camera_trajectory(const GroundTruth& gt) {
  PoseTrajectory t;
  for (int k = 0; k < gt.n_frames(); ++k) t.push_back(k, gt.cameras[static_cast<std::size_t>(k)]);
  return t;
}

[[nodiscard]] inline PointTracks point_tracks(const Values& v) {
  PointTracks out;
  for (const auto& [id, value] : v) {
    if (id.kind != VariableKind::kDynamicPoint) continue;
    out[{id.object(), id.part(), id.point()}].push_back(id.frame(),
                                                        std::get<Point3>(value));
  }
  return out;
}

/// Dynamic points back-projected from their measurements through the given
/// camera poses; used when a mode does not estimate dynamic points.
[[nodiscard]] inline PointTracks backprojected_tracks(const SimDataset& ds,
                                                      const Values& cameras) {
  PointTracks out;
  for (int k = 0; k < ds.n_frames(); ++k) {
    const Pose& cam = cameras.pose(VariableId::camera(k));
    for (const auto& m : ds.frames[static_cast<std::size_t>(k)]) {
      if (!m.landmark.dynamic) continue;
      out[{m.landmark.object, m.landmark.part, m.landmark.point}].push_back(
          k, act(cam, m.z));
    }
  }
  return out;
}

[[nodiscard]] inline PointTracks truth_tracks(const GroundTruth& gt,
                                              const SimDataset& ds) {
  PointTracks out;
  for (int k = 0; k < ds.n_frames(); ++k) {
    for (const auto& m : ds.frames[static_cast<std::size_t>(k)]) {
      if (!m.landmark.dynamic) continue;
      out[{m.landmark.object, m.landmark.part, m.landmark.point}].push_back(
          k, gt.landmark(m.landmark, k));
    }
  }
  return out;
}

// ------------------------------------------------------------ corruption --

struct CorruptedGraph {
  FactorGraph graph;
  std::vector<FactorId> corrupted;
};

/// Re-associates a fraction of the motion factors: point_next is replaced by
/// the observed point of the same part and frame that is farthest from it in
/// the current values (a gross data-association swap). Factor ids are
/// preserved.
[[nodiscard]] inline CorruptedGraph corrupt_motion_factors(
    const FactorGraph& graph, const Values& values, double fraction,
    std::uint64_t seed) {
  std::vector<std::size_t> motion;
  for (std::size_t n = 0; n < graph.factors().size(); ++n) {
    if (factor_kind(graph.factors()[n].factor) == FactorKind::kMotion) motion.push_back(n);
  }
  // Observed point ids per (object, part, frame).
  std::map<std::tuple<int, int, int>, std::vector<int>> points;
  for (const auto& v : graph.variables()) {
    if (v.kind == VariableKind::kDynamicPoint) {
      points[{v.object(), v.part(), v.frame()}].push_back(v.point());
    }
  }
  const auto count = static_cast<std::size_t>(
      std::llround(fraction * static_cast<double>(motion.size())));
  RandomStream rng(seed, Stream::kCorruption);
  for (std::size_t n = 0; n < count && n < motion.size(); ++n) {
    std::swap(motion[n], motion[n + rng.index(motion.size() - n)]);
  }
  std::map<std::size_t, VariableId> replace;
  for (std::size_t n = 0; n < count && n < motion.size(); ++n) {
    const auto& f = std::get<MotionFactor>(graph.factors()[motion[n]].factor);
    const VariableId& next = f.point_next;
    std::optional<VariableId> best;
    double best_d = -1.0;
    for (int i : points[{next.object(), next.part(), next.frame()}]) {
      if (i == next.point()) continue;
      const VariableId cand =
          VariableId::dynamic_point(next.object(), next.part(), i, next.frame());
      const double d = (values.point(cand) - values.point(next)).norm();
      if (d > best_d) {
        best_d = d;
        best = cand;
      }
    }
    if (best) replace.emplace(motion[n], *best);
  }
  CorruptedGraph out;
  for (const auto& v : graph.variables()) out.graph.add_variable(v);
  for (const auto& c : graph.constants()) out.graph.hold_constant(c);
  for (std::size_t n = 0; n < graph.factors().size(); ++n) {
    const FactorEntry& e = graph.factors()[n];
    auto it = replace.find(n);
    if (it == replace.end()) {
      out.graph.add_factor_with_id(e.factor, e.id);
      continue;
    }
    MotionFactor f = std::get<MotionFactor>(e.factor);
    f.point_next = it->second;
    out.graph.add_factor_with_id(f, e.id);
    out.corrupted.push_back(e.id);
  }
  std::sort(out.corrupted.begin(), out.corrupted.end());
  return out;
}

// -------------------------------------------------------------- ablation --

struct CellResult {
  AblationMode mode = AblationMode::kBeforeBA;
  std::uint64_t seed = 0;
  bool ok = true;
  std::string error;
  SolveStatus status = SolveStatus::kConverged;
  double ate = 0;        // m
  double rpe_rot = 0;    // deg
  double rpe_trans = 0;  // m
  double dynamic_ate = std::numeric_limits<double>::quiet_NaN();  // m
  int iterations = 0;
  std::int64_t solve_micros = 0;
  double micros_per_iteration = 0;
  bool lm_monotone = true;
};

struct Stat {
  double mean = 0;
  double std = 0;
  int n = 0;
};

[[nodiscard]] inline Stat summarize(const std::vector<double>& x) {
  Stat s;
  std::vector<double> v;
  for (double d : x) {
    if (std::isfinite(d)) v.push_back(d);
  }
  s.n = static_cast<int>(v.size());
  if (v.empty()) {
    s.mean = s.std = std::numeric_limits<double>::quiet_NaN();
    return s;
  }
  for (double d : v) s.mean += d;
  s.mean /= static_cast<double>(v.size());
  if (v.size() > 1) {
    double ss = 0;
    for (double d : v) ss += (d - s.mean) * (d - s.mean);
    s.std = std::sqrt(ss / static_cast<double>(v.size() - 1));
  }
  return s;
}

struct ModeSummary {
  AblationMode mode = AblationMode::kBeforeBA;
  Stat ate, rpe_rot, rpe_trans, dynamic_ate;
  Stat solve_ms, ms_per_iteration, iterations;
  int failed = 0;
};

struct AblationResult {
  std::vector<CellResult> cells;  // seed-major, modes in request order
  std::vector<ModeSummary> summary;
  int failed_cells() const {
    return static_cast<int>(std::count_if(cells.begin(), cells.end(),
                                          [](const CellResult& c) { return !c.ok; }));
  }
};

struct AblationOptions {
  int workers = 1;
  SolverConfig solver;
};

/// Accepted-step costs never increase.
[[nodiscard]] inline bool lm_monotone(const SolveReport& report) {
  double last = std::numeric_limits<double>::infinity();
  int round = -1;
  for (const auto& it : report.iterations) {
    if (it.round != round) {
      // Pruning changes the objective between rounds.
      round = it.round;
      last = std::numeric_limits<double>::infinity();
    }
    if (!it.accepted) continue;
    if (it.cost > last) return false;
    last = it.cost;
  }
  return report.final_cost <= report.initial_cost || report.pruning.size() > 0;
}

/// generate -> perturb -> build -> solve -> metrics for one (mode, seed).
[[nodiscard]] inline CellResult run_cell(SimConfig config, AblationMode mode,
                                         std::uint64_t seed,
                                         const SolverConfig& solver = {}) {
  CellResult c;
  c.mode = mode;
  c.seed = seed;
  config.seed = seed;
  try {
    auto [gt, ds] = generate(config);
    const Values init = perturb_initialization(gt, ds, config);
    const PoseTrajectory gt_traj = camera_trajectory(gt);
    const PointTracks gt_tracks = truth_tracks(gt, ds);
    Values estimate = init;
    const auto graph = build_graph(ds, mode);
    if (graph) {
      const PrunedSolveResult r =
          solve_with_pruning(*graph, restrict_to(init, *graph), solver);
      c.status = r.report.status;
      c.iterations = static_cast<int>(r.report.iterations.size());
      c.solve_micros = r.report.total_micros;
      std::int64_t sum = 0;
      for (const auto& it : r.report.iterations) sum += it.micros;
      c.micros_per_iteration =
          c.iterations > 0 ? static_cast<double>(sum) / c.iterations : 0.0;
      c.lm_monotone = lm_monotone(r.report);
      if (r.report.status == SolveStatus::kDegenerate) {
        c.ok = false;
        c.error = "solver degenerate";
      }
      estimate = r.values;
    }
    const MetricReport m = evaluate(camera_trajectory(estimate), gt_traj);
    c.ate = m.ate_rmse;
    c.rpe_rot = m.rpe_rot_rmse;
    c.rpe_trans = m.rpe_trans_rmse;
    if (!gt_tracks.empty()) {
      const PointTracks est = mode == AblationMode::kStaticOnly
                                  ? backprojected_tracks(ds, estimate)
                                  : point_tracks(estimate);
      c.dynamic_ate = dynamic_point_ate(est, gt_tracks, m.alignment.transform);
    }
  } catch (const std::exception& e) {
    c.ok = false;
    c.error = e.what();
  }
  return c;
}

/// Runs every (seed, mode) cell on a worker pool; cells are stored by index
/// so the result does not depend on the number of workers.
[[nodiscard]] inline AblationResult run_ablation(
    const SimConfig& config, const std::vector<AblationMode>& modes,
    const std::vector<std::uint64_t>& seeds, const AblationOptions& options = {}) {
  if (seeds.empty()) throw PreconditionError("run_ablation: no seeds");
  if (modes.empty()) throw PreconditionError("run_ablation: no modes");
  config.validate();
  AblationResult out;
  const std::size_t n = seeds.size() * modes.size();
  out.cells.resize(n);
  std::atomic<std::size_t> next{0};
  const auto work = [&] {
    for (std::size_t c = next++; c < n; c = next++) {
      out.cells[c] = run_cell(config, modes[c % modes.size()],
                              seeds[c / modes.size()], options.solver);
    }
  };
  const int workers = std::max(1, std::min<int>(options.workers, static_cast<int>(n)));
  if (workers == 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }
  for (AblationMode mode : modes) {
    ModeSummary s;
    s.mode = mode;
    std::vector<double> ate, rr, rt, dyn, ms, mspi, iters;
    for (const auto& c : out.cells) {
      if (c.mode != mode) continue;
      if (!c.ok) {
        ++s.failed;
        continue;
      }
      ate.push_back(c.ate);
      rr.push_back(c.rpe_rot);
      rt.push_back(c.rpe_trans);
      dyn.push_back(c.dynamic_ate);
      ms.push_back(static_cast<double>(c.solve_micros) / 1000.0);
      mspi.push_back(c.micros_per_iteration / 1000.0);
      iters.push_back(c.iterations);
    }
    s.ate = summarize(ate);
    s.rpe_rot = summarize(rr);
    s.rpe_trans = summarize(rt);
    s.dynamic_ate = summarize(dyn);
    s.solve_ms = summarize(ms);
    s.ms_per_iteration = summarize(mspi);
    s.iterations = summarize(iters);
    out.summary.push_back(s);
  }
  return out;
}

struct TimingResult {
  std::uint64_t seed = 0;
  bool ok = true;
  std::string error;
  int iterations = 0;
  std::int64_t solve_micros = 0;
  double micros_per_iteration = 0;
};

/// Solve time of one seed for an arbitrary graph composition (used for the
/// observation-only timing baseline, which is not an ablation mode).
[[nodiscard]] inline TimingResult time_solve(SimConfig config,
                                             const GraphContents& contents,
                                             std::uint64_t seed,
                                             const SolverConfig& solver = {}) {
  TimingResult t;
  t.seed = seed;
  config.seed = seed;
  try {
    auto [gt, ds] = generate(config);
    const Values init = perturb_initialization(gt, ds, config);
    const FactorGraph graph = build_graph(ds, contents);
    const SolveResult r = solve(graph, restrict_to(init, graph), solver);
    t.iterations = static_cast<int>(r.report.iterations.size());
    t.solve_micros = r.report.total_micros;
    std::int64_t sum = 0;
    for (const auto& it : r.report.iterations) sum += it.micros;
    t.micros_per_iteration =
        t.iterations > 0 ? static_cast<double>(sum) / t.iterations : 0.0;
    if (r.report.status == SolveStatus::kDegenerate) {
      t.ok = false;
      t.error = "solver degenerate";
    }
  } catch (const std::exception& e) {
    t.ok = false;
    t.error = e.what();
  }
  return t;
}

}  // namespace dynba
