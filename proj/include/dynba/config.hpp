#pragma once

// JSON configuration: simulation configs (optionally layered on a named
// preset) and ablation run descriptions. Errors name the offending field.

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <iterator>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"

#include "dynba/errors.hpp"
#include "dynba/simulation.hpp"
#include "dynba/solver.hpp"

namespace dynba::config {

using Json = nlohmann::json;

namespace detail {

inline std::string join(const std::string& path, const std::string& key) {
  return path.empty() ? key : path + "." + key;
}

[[noreturn]] inline void fail(const std::string& field, const std::string& msg) {
  throw ConfigError(field + ": " + msg, field);
}

inline void only_keys(const Json& j, const std::string& path,
                      std::initializer_list<const char*> allowed) {
  if (!j.is_object()) fail(path.empty() ? "<root>" : path, "expected an object");
  for (const auto& [key, v] : j.items()) {
    if (std::none_of(allowed.begin(), allowed.end(),
                     [&](const char* a) { return key == a; })) {
      fail(join(path, key), "unknown field");
    }
  }
}

inline const Json* find(const Json& j, const char* key) {
  auto it = j.find(key);
  return it == j.end() ? nullptr : &*it;
}

inline const Json& require(const Json& j, const std::string& path,
                           const char* key) {
  const Json* v = find(j, key);
  if (!v) fail(join(path, key), "missing required field");
  return *v;
}

inline double number(const Json& v, const std::string& field) {
  if (!v.is_number()) fail(field, "expected a number");
  return v.get<double>();
}

inline std::int64_t integer(const Json& v, const std::string& field) {
  if (!v.is_number_integer()) fail(field, "expected an integer");
  return v.get<std::int64_t>();
}

inline int int32(const Json& v, const std::string& field) {
  const std::int64_t x = integer(v, field);
  if (x < INT32_MIN || x > INT32_MAX) fail(field, "integer out of range");
  return static_cast<int>(x);
}

inline std::string string(const Json& v, const std::string& field) {
  if (!v.is_string()) fail(field, "expected a string");
  return v.get<std::string>();
}

inline Vector3 vec3(const Json& v, const std::string& field) {
  if (!v.is_array() || v.size() != 3) fail(field, "expected [x, y, z]");
  Vector3 out;
  for (int n = 0; n < 3; ++n) {
    out(n) = number(v[static_cast<std::size_t>(n)],
                    field + "[" + std::to_string(n) + "]");
  }
  return out;
}

inline std::vector<Point3> points(const Json& v, const std::string& field) {
  if (!v.is_array()) fail(field, "expected a list of [x, y, z]");
  std::vector<Point3> out;
  for (std::size_t n = 0; n < v.size(); ++n) {
    out.push_back(vec3(v[n], field + "[" + std::to_string(n) + "]"));
  }
  return out;
}

template <typename T, typename Get>
void maybe(const Json& j, const std::string& path, const char* key, T& out,
           Get get) {
  if (const Json* v = find(j, key)) out = get(*v, join(path, key));
}

inline void number_field(const Json& j, const std::string& path,
                         const char* key, double& out, bool required) {
  if (required) require(j, path, key);
  maybe(j, path, key, out, number);
}

inline Waypoint waypoint(const Json& j, const std::string& path) {
  only_keys(j, path, {"frame", "position", "rotation_deg"});
  Waypoint w;
  w.frame = int32(require(j, path, "frame"), join(path, "frame"));
  w.position = vec3(require(j, path, "position"), join(path, "position"));
  maybe(j, path, "rotation_deg", w.rotation_deg, vec3);
  return w;
}

inline PartConfig part(const Json& j, const std::string& path) {
  only_keys(j, path, {"shape", "points", "extent", "anchor",
                      "angular_velocity_deg", "linear_velocity"});
  PartConfig p;
  maybe(j, path, "shape", p.shape, points);
  maybe(j, path, "points", p.points, int32);
  maybe(j, path, "extent", p.extent, number);
  maybe(j, path, "anchor", p.anchor, vec3);
  maybe(j, path, "angular_velocity_deg", p.angular_velocity_deg, vec3);
  maybe(j, path, "linear_velocity", p.linear_velocity, vec3);
  return p;
}

inline ObjectConfig object(const Json& j, const std::string& path) {
  only_keys(j, path, {"origin", "parts"});
  ObjectConfig o;
  maybe(j, path, "origin", o.origin, vec3);
  const Json& parts = require(j, path, "parts");
  const std::string pp = join(path, "parts");
  if (!parts.is_array()) fail(pp, "expected a list");
  for (std::size_t n = 0; n < parts.size(); ++n) {
    o.parts.push_back(part(parts[n], pp + "[" + std::to_string(n) + "]"));
  }
  return o;
}

/// Line of a byte offset in `text` (1-based).
inline int line_of(const std::string& text, std::size_t byte) {
  byte = std::min(byte, text.size());
  return 1 + static_cast<int>(std::count(
                 text.begin(), text.begin() + static_cast<std::ptrdiff_t>(byte),
                 '\n'));
}

}  // namespace detail

/// Parses JSON text; syntax errors become ConfigError with a line number.
[[nodiscard]] inline Json parse_json(const std::string& text,
                                     const std::string& name = "<config>") {
  try {
    return Json::parse(text);
  } catch (const Json::parse_error& e) {
    // e.byte is 1-based and points just past the offending character.
    const int line = detail::line_of(text, e.byte > 0 ? e.byte - 1 : 0);
    std::string msg = e.what();
    // Drop nlohmann's "[json.exception.parse_error.101] " prefix.
    if (auto p = msg.find("] "); p != std::string::npos) msg = msg.substr(p + 2);
    throw ConfigError(name + ":" + std::to_string(line) + ": " + msg, {}, line);
  }
}

[[nodiscard]] inline Json load_json(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ConfigError("cannot read " + path);
  const std::string text((std::istreambuf_iterator<char>(is)),
                         std::istreambuf_iterator<char>());
  return parse_json(text, path);
}

inline InitMode parse_init_mode(const Json& v, const std::string& field) {
  const std::string s = detail::string(v, field);
  if (s == "drift") return InitMode::kDrift;
  if (s == "independent") return InitMode::kIndependent;
  detail::fail(field, "expected \"drift\" or \"independent\"");
}

inline RigidityTopology parse_topology(const Json& v, const std::string& field) {
  const std::string s = detail::string(v, field);
  if (s == "spanning") return RigidityTopology::kSpanning;
  if (s == "clique") return RigidityTopology::kClique;
  detail::fail(field, "expected \"spanning\" or \"clique\"");
}

/// Reads a simulation config. With "preset", every other field is an
/// override of the preset; otherwise the scene fields are required.
[[nodiscard]] inline SimConfig sim_config(const Json& j,
                                          const std::string& path = {}) {
  using namespace detail;
  only_keys(j, path, {"name", "preset", "seed", "n_frames", "waypoints",
                      "static", "objects", "noise", "fov", "budget",
                      "init_mode", "graph"});
  SimConfig c;
  const bool from_preset = find(j, "preset") != nullptr;
  if (from_preset) {
    const std::string field = join(path, "preset");
    const std::string name = string(j["preset"], field);
    try {
      c = preset(name);
    } catch (const ConfigError& e) {
      fail(field, e.what());
    }
  }
  const bool req = !from_preset;

  if (req) require(j, path, "n_frames");
  maybe(j, path, "n_frames", c.n_frames, int32);
  maybe(j, path, "seed", c.seed, [](const Json& v, const std::string& f) {
    const std::int64_t s = integer(v, f);
    if (s < 0) fail(f, "seed must be >= 0");
    return static_cast<std::uint64_t>(s);
  });

  if (req) require(j, path, "waypoints");
  if (const Json* w = find(j, "waypoints")) {
    const std::string wp = join(path, "waypoints");
    if (!w->is_array()) fail(wp, "expected a list");
    c.waypoints.clear();
    for (std::size_t n = 0; n < w->size(); ++n) {
      c.waypoints.push_back(waypoint((*w)[n], wp + "[" + std::to_string(n) + "]"));
    }
  }

  if (req) require(j, path, "static");
  if (const Json* s = find(j, "static")) {
    const std::string sp = join(path, "static");
    only_keys(*s, sp, {"count", "region", "points"});
    maybe(*s, sp, "count", c.static_count, int32);
    maybe(*s, sp, "points", c.static_points, points);
    if (const Json* r = find(*s, "region")) {
      const std::string rp = join(sp, "region");
      only_keys(*r, rp, {"min", "max"});
      c.static_region.min = vec3(require(*r, rp, "min"), join(rp, "min"));
      c.static_region.max = vec3(require(*r, rp, "max"), join(rp, "max"));
    }
  }

  if (req) require(j, path, "objects");
  if (const Json* o = find(j, "objects")) {
    const std::string op = join(path, "objects");
    if (!o->is_array()) fail(op, "expected a list");
    c.objects.clear();
    for (std::size_t n = 0; n < o->size(); ++n) {
      c.objects.push_back(object((*o)[n], op + "[" + std::to_string(n) + "]"));
    }
  }

  if (req) require(j, path, "noise");
  if (const Json* n = find(j, "noise")) {
    const std::string np = join(path, "noise");
    only_keys(*n, np, {"init_translation", "init_rotation_deg", "measurement"});
    number_field(*n, np, "init_translation", c.noise.init_translation, req);
    number_field(*n, np, "init_rotation_deg", c.noise.init_rotation_deg, req);
    number_field(*n, np, "measurement", c.noise.measurement, req);
  }

  if (req) require(j, path, "fov");
  if (const Json* f = find(j, "fov")) {
    const std::string fp = join(path, "fov");
    only_keys(*f, fp, {"max_range", "half_angle_deg"});
    number_field(*f, fp, "max_range", c.fov.max_range, req);
    number_field(*f, fp, "half_angle_deg", c.fov.half_angle_deg, req);
  }

  if (const Json* b = find(j, "budget")) {
    const std::string bp = join(path, "budget");
    only_keys(*b, bp, {"static", "dynamic"});
    maybe(*b, bp, "static", c.static_budget, int32);
    maybe(*b, bp, "dynamic", c.dynamic_budget, int32);
  }

  maybe(j, path, "init_mode", c.init_mode, parse_init_mode);

  if (const Json* g = find(j, "graph")) {
    const std::string gp = join(path, "graph");
    only_keys(*g, gp, {"observation_sigma", "rigidity_sigma", "motion_sigma",
                       "topology", "motion_window"});
    maybe(*g, gp, "observation_sigma", c.graph.observation_sigma, number);
    maybe(*g, gp, "rigidity_sigma", c.graph.rigidity_sigma, number);
    maybe(*g, gp, "motion_sigma", c.graph.motion_sigma, number);
    maybe(*g, gp, "topology", c.graph.topology, parse_topology);
    maybe(*g, gp, "motion_window", c.graph.motion_window, int32);
  }

  try {
    c.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(e.what(), join(path, e.field()));
  }
  return c;
}

[[nodiscard]] inline SolverConfig solver_config(const Json& j,
                                                const std::string& path) {
  using namespace detail;
  only_keys(j, path, {"max_iterations", "initial_lambda", "lambda_up",
                      "lambda_down", "relative_tolerance", "step_tolerance",
                      "threads", "prune"});
  SolverConfig s;
  maybe(j, path, "max_iterations", s.max_iterations, int32);
  maybe(j, path, "initial_lambda", s.initial_lambda, number);
  maybe(j, path, "lambda_up", s.lambda_up, number);
  maybe(j, path, "lambda_down", s.lambda_down, number);
  maybe(j, path, "relative_tolerance", s.relative_tolerance, number);
  maybe(j, path, "step_tolerance", s.step_tolerance, number);
  maybe(j, path, "threads", s.threads, int32);
  if (const Json* p = find(j, "prune")) {
    const std::string pp = join(path, "prune");
    only_keys(*p, pp, {"rounds", "motion_threshold", "rigidity_threshold"});
    PruneConfig pc;
    maybe(*p, pp, "rounds", pc.rounds, int32);
    maybe(*p, pp, "motion_threshold", pc.motion_threshold, number);
    maybe(*p, pp, "rigidity_threshold", pc.rigidity_threshold, number);
    s.prune = pc;
  }
  try {
    s.validate();
  } catch (const ConfigError& e) {
    fail(path, e.what());
  }
  return s;
}

struct Group {
  std::string name;
  SimConfig config;
};

/// Everything `ablate` needs besides the output directory.
struct AblationSpec {
  std::vector<Group> groups;
  std::vector<std::uint64_t> seeds;
  std::vector<AblationMode> modes;
  int workers = 1;
  SolverConfig solver;
};

[[nodiscard]] inline std::vector<std::uint64_t> seed_list(const Json& v,
                                                         const std::string& field) {
  std::vector<std::uint64_t> out;
  if (v.is_object()) {
    detail::only_keys(v, field, {"first", "count"});
    const std::int64_t first = detail::integer(detail::require(v, field, "first"),
                                               detail::join(field, "first"));
    const std::int64_t count = detail::integer(detail::require(v, field, "count"),
                                               detail::join(field, "count"));
    if (first < 0 || count < 1) detail::fail(field, "need first >= 0 and count >= 1");
    for (std::int64_t n = 0; n < count; ++n) {
      out.push_back(static_cast<std::uint64_t>(first + n));
    }
    return out;
  }
  if (!v.is_array() || v.empty()) detail::fail(field, "expected a non-empty list");
  for (std::size_t n = 0; n < v.size(); ++n) {
    const std::string f = field + "[" + std::to_string(n) + "]";
    const std::int64_t s = detail::integer(v[n], f);
    if (s < 0) detail::fail(f, "seed must be >= 0");
    out.push_back(static_cast<std::uint64_t>(s));
  }
  return out;
}

[[nodiscard]] inline std::vector<AblationMode> mode_list(const Json& v,
                                                         const std::string& field) {
  if (!v.is_array() || v.empty()) detail::fail(field, "expected a non-empty list");
  std::vector<AblationMode> out;
  for (std::size_t n = 0; n < v.size(); ++n) {
    const std::string f = field + "[" + std::to_string(n) + "]";
    const auto m = parse_mode(detail::string(v[n], f));
    if (!m) detail::fail(f, "unknown mode");
    if (std::find(out.begin(), out.end(), *m) != out.end()) {
      detail::fail(f, "duplicate mode");
    }
    out.push_back(*m);
  }
  return out;
}

/// Accepts either {"groups": [...], ...} or a single simulation config.
/// Seeds default to 0..9, modes to all five, workers to 1.
[[nodiscard]] inline AblationSpec ablation_spec(const Json& j,
                                                const std::string& default_name) {
  using namespace detail;
  AblationSpec spec;
  for (std::uint64_t s = 0; s < 10; ++s) spec.seeds.push_back(s);
  spec.modes = all_modes();
  if (!j.is_object()) fail("<root>", "expected an object");
  if (find(j, "groups")) {
    only_keys(j, {}, {"groups", "seeds", "modes", "workers", "solver"});
    const Json& groups = j["groups"];
    if (!groups.is_array() || groups.empty()) fail("groups", "expected a non-empty list");
    std::set<std::string> names;
    for (std::size_t n = 0; n < groups.size(); ++n) {
      const std::string gp = "groups[" + std::to_string(n) + "]";
      const Json& g = groups[n];
      if (!g.is_object()) fail(gp, "expected an object");
      Group group;
      group.config = sim_config(g, gp);
      if (const Json* nm = find(g, "name")) {
        group.name = string(*nm, join(gp, "name"));
      } else if (const Json* p = find(g, "preset")) {
        group.name = p->get<std::string>();
      } else {
        group.name = "group" + std::to_string(n);
      }
      if (!names.insert(group.name).second) fail(join(gp, "name"), "duplicate group name");
      spec.groups.push_back(std::move(group));
    }
  } else {
    Json sim = j;
    for (const char* k : {"seeds", "modes", "workers", "solver"}) sim.erase(k);
    Group group;
    group.config = sim_config(sim);
    if (const Json* nm = find(j, "name")) {
      group.name = nm->get<std::string>();
    } else if (const Json* p = find(j, "preset")) {
      group.name = p->get<std::string>();
    } else {
      group.name = default_name;
    }
    spec.groups.push_back(std::move(group));
  }
  maybe(j, {}, "seeds", spec.seeds, seed_list);
  maybe(j, {}, "modes", spec.modes, mode_list);
  maybe(j, {}, "workers", spec.workers, int32);
  if (spec.workers < 1) fail("workers", "must be >= 1");
  maybe(j, {}, "solver", spec.solver, solver_config);
  return spec;
}

}  // namespace dynba::config
