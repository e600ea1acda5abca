#pragma once

// Text formats: TUM trajectories, the line-oriented factor-graph and values
// format, solve reports, CSV, and the run manifest. All numbers go through
// std::to_chars / std::from_chars, so output does not depend on the locale.

#include <charconv>
#include <cstdint>
#include <fstream>
#include <istream>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "dynba/errors.hpp"
#include "dynba/factor_graph.hpp"
#include "dynba/metrics.hpp"
#include "dynba/simulation.hpp"
#include "dynba/solver.hpp"

namespace dynba::io {

inline constexpr int kGraphDigits = 17;
inline constexpr int kTumDigits = 9;
inline constexpr int kCsvDecimals = 6;

// ---------------------------------------------------------------- numbers --

/// `digits` significant digits, %g style.
[[nodiscard]] inline std::string format_number(double x, int digits = kGraphDigits) {
  if (x == 0.0) return "0";  // also folds -0
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof(buf), x,
                               std::chars_format::general, digits);
  return std::string(buf, r.ptr);
}

/// Fixed notation with `decimals` digits after the point.
[[nodiscard]] inline std::string format_fixed(double x, int decimals = kCsvDecimals) {
  char buf[512];
  const auto r = std::to_chars(buf, buf + sizeof(buf), x,
                               std::chars_format::fixed, decimals);
  std::string s(buf, r.ptr);
  // "-0.000000" -> "0.000000"
  if (s.front() == '-' && s.find_first_not_of("-0.") == std::string::npos) {
    s.erase(0, 1);
  }
  return s;
}

namespace detail {

inline std::vector<std::string_view> split(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t' ||
                               line[i] == '\r')) {
      ++i;
    }
    const std::size_t start = i;
    while (i < line.size() && line[i] != ' ' && line[i] != '\t' &&
           line[i] != '\r') {
      ++i;
    }
    if (i > start) out.push_back(line.substr(start, i - start));
  }
  return out;
}

/// Sequential reader over the tokens of one line.
class Tokens {
 public:
  Tokens(std::vector<std::string_view> t, int line)
      : t_(std::move(t)), line_(line) {}

  bool done() const { return pos_ == t_.size(); }
  std::size_t remaining() const { return t_.size() - pos_; }
  int line() const { return line_; }

  std::string_view word() {
    if (done()) fail("unexpected end of line");
    return t_[pos_++];
  }

  double number() {
    const std::string_view s = word();
    double v = 0;
    const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
    if (r.ec != std::errc() || r.ptr != s.data() + s.size() || !std::isfinite(v)) {
      fail("expected a number, got '" + std::string(s) + "'");
    }
    return v;
  }

  std::int64_t integer() {
    const std::string_view s = word();
    std::int64_t v = 0;
    const auto r = std::from_chars(s.data(), s.data() + s.size(), v);
    if (r.ec != std::errc() || r.ptr != s.data() + s.size()) {
      fail("expected an integer, got '" + std::string(s) + "'");
    }
    return v;
  }

  int int32() {
    const std::int64_t v = integer();
    if (v < INT32_MIN || v > INT32_MAX) fail("integer out of range");
    return static_cast<int>(v);
  }

  Vector3 vec3() {
    const double x = number();
    const double y = number();
    const double z = number();
    return {x, y, z};
  }

  void expect_end() {
    if (!done()) fail("unexpected trailing token '" + std::string(t_[pos_]) + "'");
  }

  [[noreturn]] void fail(const std::string& msg) const {
    throw ParseError(msg, line_);
  }

 private:
  std::vector<std::string_view> t_;
  std::size_t pos_ = 0;
  int line_;
};

/// Calls fn(Tokens&) for each non-blank line not starting with '#'.
template <typename Fn>
void for_each_line(std::istream& in, Fn&& fn) {
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    ++n;
    auto toks = split(line);
    if (toks.empty() || toks.front().front() == '#') continue;
    Tokens t(std::move(toks), n);
    fn(t);
  }
}

inline void put(std::ostream& os, double x, int digits = kGraphDigits) {
  os << ' ' << format_number(x, digits);
}

inline void put_pose(std::ostream& os, const Pose& p, int digits = kGraphDigits) {
  const Vector3& t = p.translation();
  const Rotation& q = p.rotation();
  put(os, t.x(), digits);
  put(os, t.y(), digits);
  put(os, t.z(), digits);
  put(os, q.x(), digits);
  put(os, q.y(), digits);
  put(os, q.z(), digits);
  put(os, q.w(), digits);
}

inline Pose read_pose(Tokens& t) {
  const Vector3 tr = t.vec3();
  const double qx = t.number();
  const double qy = t.number();
  const double qz = t.number();
  const double qw = t.number();
  try {
    return Pose(Rotation(qw, qx, qy, qz), tr);
  } catch (const std::invalid_argument& e) {
    t.fail(e.what());
  }
}

inline void put_cov(std::ostream& os, const Matrix3& c) {
  for (int i = 0; i < 3; ++i) {
    for (int j = i; j < 3; ++j) put(os, c(i, j));
  }
}

inline Matrix3 read_cov(Tokens& t) {
  Matrix3 c;
  for (int i = 0; i < 3; ++i) {
    for (int j = i; j < 3; ++j) c(i, j) = c(j, i) = t.number();
  }
  return c;
}

inline std::ofstream open_out(const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path);
  return os;
}

inline std::ifstream open_in(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot read " + path);
  return is;
}

}  // namespace detail

// -------------------------------------------------------------------- TUM --

/// One line per pose: frame tx ty tz qx qy qz qw.
inline void write_tum(std::ostream& os, const PoseTrajectory& traj) {
  for (const auto& [frame, pose] : traj) {
    os << frame;
    detail::put_pose(os, pose, kTumDigits);
    os << '\n';
  }
}

[[nodiscard]] inline PoseTrajectory read_tum(std::istream& is) {
  PoseTrajectory out;
  detail::for_each_line(is, [&](detail::Tokens& t) {
    const int frame = t.int32();
    const Pose p = detail::read_pose(t);
    t.expect_end();
    if (!out.empty() && frame <= out[out.size() - 1].first) {
      t.fail("frame indices must increase");
    }
    out.push_back(frame, p);
  });
  return out;
}

[[nodiscard]] inline PoseTrajectory read_tum_file(const std::string& path) {
  auto is = detail::open_in(path);
  try {
    return read_tum(is);
  } catch (const ParseError& e) {
    throw ParseError(e.message(), e.line(), path);
  }
}

inline void write_tum_file(const std::string& path, const PoseTrajectory& t) {
  auto os = detail::open_out(path);
  write_tum(os, t);
}

// ------------------------------------------------------------ graph text --

inline void write_id(std::ostream& os, const VariableId& id) {
  os << ' ' << kind_name(id.kind);
  for (int n = 0; n < index_arity(id.kind); ++n) os << ' ' << id.index[n];
}

[[nodiscard]] inline VariableId read_id(detail::Tokens& t) {
  const std::string_view kind = t.word();
  VariableId id;
  bool found = false;
  for (auto k : {VariableKind::kCameraPose, VariableKind::kStaticPoint,
                 VariableKind::kDynamicPoint, VariableKind::kSegmentLength,
                 VariableKind::kObjectMotion}) {
    if (kind == kind_name(k)) {
      id.kind = k;
      found = true;
    }
  }
  if (!found) t.fail("unknown variable kind '" + std::string(kind) + "'");
  for (int n = 0; n < index_arity(id.kind); ++n) id.index[n] = t.int32();
  return id;
}

/// VAR <id> / FIX <id> / OBS, RIGID, MOTION <factor id> <variables> <data>.
/// Covariances are written as their upper triangle, row-major.
inline void write_graph(std::ostream& os, const FactorGraph& g) {
  for (const auto& v : g.variables()) {
    os << "VAR";
    write_id(os, v);
    os << '\n';
  }
  for (const auto& v : g.constants()) {
    os << "FIX";
    write_id(os, v);
    os << '\n';
  }
  for (const auto& e : g.factors()) {
    std::visit(
        [&](const auto& f) {
          using T = std::decay_t<decltype(f)>;
          if constexpr (std::is_same_v<T, ObservationFactor>) {
            os << "OBS " << e.id;
            write_id(os, f.camera);
            write_id(os, f.point);
            detail::put(os, f.measurement.x());
            detail::put(os, f.measurement.y());
            detail::put(os, f.measurement.z());
            detail::put_cov(os, f.covariance);
          } else if constexpr (std::is_same_v<T, RigidityFactor>) {
            os << "RIGID " << e.id;
            write_id(os, f.point_i);
            write_id(os, f.point_j);
            write_id(os, f.segment);
            detail::put(os, f.variance);
          } else {
            os << "MOTION " << e.id;
            write_id(os, f.point_prev);
            write_id(os, f.point_next);
            write_id(os, f.motion);
            detail::put_cov(os, f.covariance);
          }
        },
        e.factor);
    os << '\n';
  }
}

/// Integrity violations are rethrown with the offending line prefixed.
[[nodiscard]] inline FactorGraph read_graph(std::istream& is) {
  FactorGraph g;
  std::set<FactorId> seen;
  detail::for_each_line(is, [&](detail::Tokens& t) {
    const std::string tag(t.word());
    try {
      if (tag == "VAR" || tag == "FIX") {
        const VariableId id = read_id(t);
        t.expect_end();
        if (tag == "VAR") {
          g.add_variable(id);
        } else {
          g.hold_constant(id);
        }
        return;
      }
      if (tag != "OBS" && tag != "RIGID" && tag != "MOTION") {
        t.fail("unknown record '" + tag + "'");
      }
      const std::int64_t fid = t.integer();
      if (fid < 0) t.fail("negative factor id");
      Factor factor;
      if (tag == "OBS") {
        ObservationFactor f;
        f.camera = read_id(t);
        f.point = read_id(t);
        f.measurement = t.vec3();
        f.covariance = detail::read_cov(t);
        factor = f;
      } else if (tag == "RIGID") {
        RigidityFactor f;
        f.point_i = read_id(t);
        f.point_j = read_id(t);
        f.segment = read_id(t);
        f.variance = t.number();
        factor = f;
      } else {
        MotionFactor f;
        f.point_prev = read_id(t);
        f.point_next = read_id(t);
        f.motion = read_id(t);
        f.covariance = detail::read_cov(t);
        factor = f;
      }
      t.expect_end();
      if (!seen.insert(static_cast<FactorId>(fid)).second) {
        t.fail("duplicate factor id");
      }
      g.add_factor_with_id(factor, static_cast<FactorId>(fid));
    } catch (const GraphIntegrityError& e) {
      throw GraphIntegrityError(e.code(), "line " + std::to_string(t.line()) +
                                              ": " + e.what());
    }
  });
  return g;
}

/// One variable per line: <id> followed by tx ty tz qx qy qz qw for poses,
/// x y z for points, s for segment lengths.
inline void write_values(std::ostream& os, const Values& values) {
  for (const auto& [id, v] : values) {
    os << kind_name(id.kind);
    for (int n = 0; n < index_arity(id.kind); ++n) os << ' ' << id.index[n];
    if (const auto* p = std::get_if<Pose>(&v)) {
      detail::put_pose(os, *p);
    } else if (const auto* q = std::get_if<Point3>(&v)) {
      detail::put(os, q->x());
      detail::put(os, q->y());
      detail::put(os, q->z());
    } else {
      detail::put(os, std::get<double>(v));
    }
    os << '\n';
  }
}

[[nodiscard]] inline Values read_values(std::istream& is) {
  Values out;
  detail::for_each_line(is, [&](detail::Tokens& t) {
    const VariableId id = read_id(t);
    if (out.contains(id)) t.fail("duplicate value for " + to_string(id));
    switch (id.kind) {
      case VariableKind::kCameraPose:
      case VariableKind::kObjectMotion:
        out.insert(id, detail::read_pose(t));
        break;
      case VariableKind::kStaticPoint:
      case VariableKind::kDynamicPoint:
        out.insert(id, Point3(t.vec3()));
        break;
      case VariableKind::kSegmentLength:
        out.insert(id, t.number());
        break;
    }
    t.expect_end();
  });
  return out;
}

template <typename T, typename Reader>
[[nodiscard]] T read_file(const std::string& path, Reader reader) {
  auto is = detail::open_in(path);
  try {
    return reader(is);
  } catch (const ParseError& e) {
    throw ParseError(e.message(), e.line(), path);
  } catch (const GraphIntegrityError& e) {
    throw GraphIntegrityError(e.code(), path + ": " + e.what());
  }
}

[[nodiscard]] inline FactorGraph read_graph_file(const std::string& path) {
  return read_file<FactorGraph>(path, [](std::istream& is) { return read_graph(is); });
}

[[nodiscard]] inline Values read_values_file(const std::string& path) {
  return read_file<Values>(path, [](std::istream& is) { return read_values(is); });
}

// ----------------------------------------------------------- measurements --

/// frame S point zx zy zz, or frame D object part point zx zy zz.
inline void write_measurements(std::ostream& os, const SimDataset& ds) {
  os << "# frame S|D landmark z(camera frame)\n";
  for (int k = 0; k < ds.n_frames(); ++k) {
    for (const auto& m : ds.frames[static_cast<std::size_t>(k)]) {
      os << k;
      if (m.landmark.dynamic) {
        os << " D " << m.landmark.object << ' ' << m.landmark.part << ' '
           << m.landmark.point;
      } else {
        os << " S " << m.landmark.point;
      }
      detail::put(os, m.z.x());
      detail::put(os, m.z.y());
      detail::put(os, m.z.z());
      os << '\n';
    }
  }
}

// ----------------------------------------------------------------- report --

inline void write_report(std::ostream& os, const SolveReport& r) {
  os << "status " << status_name(r.status) << '\n';
  os << "initial_cost " << format_number(r.initial_cost) << '\n';
  os << "final_cost " << format_number(r.final_cost) << '\n';
  os << "iterations " << r.iterations.size() << '\n';
  os << "# index round cost lambda step_norm accepted\n";
  for (const auto& it : r.iterations) {
    os << "iter " << it.index << ' ' << it.round;
    detail::put(os, it.cost);
    detail::put(os, it.lambda);
    detail::put(os, it.step_norm);
    os << ' ' << (it.accepted ? 1 : 0) << '\n';
  }
  for (const auto& p : r.pruning) {
    os << "prune_round " << p.round << " removed " << p.removed_factors.size();
    for (auto id : p.removed_factors) os << ' ' << id;
    os << '\n';
    for (const auto& v : p.excluded_variables) {
      os << "prune_excluded " << p.round;
      write_id(os, v);
      os << '\n';
    }
  }
  for (const auto& v : r.underconstrained) {
    os << "underconstrained";
    write_id(os, v);
    os << '\n';
  }
  for (const auto& w : r.warnings) os << "warning " << w << '\n';
}

/// Per-iteration wall-clock times; kept apart from the report so the report
/// stays byte-identical across runs.
inline void write_timing(std::ostream& os, const SolveReport& r) {
  os << "# index round micros\n";
  for (const auto& it : r.iterations) {
    os << it.index << ' ' << it.round << ' ' << it.micros << '\n';
  }
  os << "total_micros " << r.total_micros << '\n';
}

/// Meters to centimeters. Every cm value written by the tools goes through
/// here.
[[nodiscard]] constexpr double meters_to_cm(double m) { return 100.0 * m; }

inline constexpr int kReportDecimals = 12;

/// Flat key/value record in report units (cm, degrees), fixed notation.
inline void write_metric_report(std::ostream& os, const MetricReport& m) {
  os << "ate_cm " << format_fixed(meters_to_cm(m.ate_rmse), kReportDecimals) << '\n';
  os << "rpe_trans_cm " << format_fixed(meters_to_cm(m.rpe_trans_rmse), kReportDecimals)
     << '\n';
  os << "rpe_rot_deg " << format_fixed(m.rpe_rot_rmse, kReportDecimals) << '\n';
  os << "alignment " << m.alignment.method << '\n';
  os << "alignment_degenerate " << (m.alignment.degenerate ? 1 : 0) << '\n';
  os << "common_frames " << m.alignment.common_frames << '\n';
  os << "rpe_pairs " << m.rpe_trans_errors.size() << '\n';
}

// -------------------------------------------------------------------- CSV --

[[nodiscard]] inline std::string csv_field(std::string_view s) {
  if (s.find_first_of(",\"\r\n") == std::string_view::npos) return std::string(s);
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

/// RFC 4180 rows with CRLF line endings.
class CsvWriter {
 public:
  explicit CsvWriter(std::ostream& os) : os_(os) {}

  void row(const std::vector<std::string>& fields) {
    for (std::size_t n = 0; n < fields.size(); ++n) {
      if (n) os_ << ',';
      os_ << csv_field(fields[n]);
    }
    os_ << "\r\n";
  }

 private:
  std::ostream& os_;
};

/// Parses RFC 4180 text (quoted fields may contain separators and newlines).
[[nodiscard]] inline std::vector<std::vector<std::string>> parse_csv(
    std::string_view text) {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> row;
  std::string field;
  bool quoted = false;
  bool any = false;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field += c;
      }
      continue;
    }
    if (c == '"') {
      quoted = true;
      any = true;
    } else if (c == ',') {
      row.push_back(std::move(field));
      field.clear();
      any = true;
    } else if (c == '\n' || c == '\r') {
      if (c == '\r' && i + 1 < text.size() && text[i + 1] == '\n') ++i;
      row.push_back(std::move(field));
      field.clear();
      rows.push_back(std::move(row));
      row.clear();
      any = false;
    } else {
      field += c;
      any = true;
    }
  }
  if (any || !field.empty()) {
    row.push_back(std::move(field));
    rows.push_back(std::move(row));
  }
  return rows;
}

// --------------------------------------------------------------- manifest --

/// Plain-text run manifest. Written once before any result file and
/// rewritten at the end with the file list and timings.
struct RunManifest {
  std::string command;
  std::string config_path;
  std::vector<std::uint64_t> seeds;
  std::vector<std::string> modes;
  std::string output_dir;
  std::string tool_version;
  std::vector<std::string> files;
  std::vector<std::pair<std::string, double>> timings_ms;
  std::string status = "running";
  std::string timestamp;

  void write(std::ostream& os) const {
    os << "command " << command << '\n';
    os << "config " << config_path << '\n';
    os << "seeds";
    for (auto s : seeds) os << ' ' << s;
    os << '\n';
    os << "modes";
    for (const auto& m : modes) os << ' ' << m;
    os << '\n';
    os << "output_dir " << output_dir << '\n';
    os << "tool_version " << tool_version << '\n';
    os << "status " << status << '\n';
    for (const auto& f : files) os << "file " << f << '\n';
    for (const auto& [name, ms] : timings_ms) {
      os << "time_ms " << name << ' ' << format_fixed(ms, 3) << '\n';
    }
    os << "timestamp " << timestamp << '\n';
  }

  void write_file(const std::string& path) const {
    auto os = detail::open_out(path);
    write(os);
  }
};

}  // namespace dynba::io
