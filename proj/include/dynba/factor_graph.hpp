#pragma once

// Typed variables, the three factor kinds (point observation, rigidity,
// motion) and the weighted least-squares cost they define.

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include <algorithm>
#include <array>
#include <cmath>
#include <compare>
#include <cstdint>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <utility>
#include <variant>
#include <vector>

#include "dynba/errors.hpp"
#include "dynba/geometry.hpp"

namespace dynba {

enum class VariableKind : std::uint8_t {
  kCameraPose,
  kStaticPoint,
  kDynamicPoint,
  kSegmentLength,
  kObjectMotion,
};

inline const char* kind_name(VariableKind k) {
  switch (k) {
    case VariableKind::kCameraPose: return "POSE";
    case VariableKind::kStaticPoint: return "STATIC";
    case VariableKind::kDynamicPoint: return "DYNAMIC";
    case VariableKind::kSegmentLength: return "SEGMENT";
    case VariableKind::kObjectMotion: return "MOTION";
  }
  return "?";
}

/// Number of index components carried by a kind.
inline int index_arity(VariableKind k) {
  switch (k) {
    case VariableKind::kCameraPose: return 1;     // frame
    case VariableKind::kStaticPoint: return 1;    // point
    case VariableKind::kDynamicPoint: return 4;   // object, part, point, frame
    case VariableKind::kSegmentLength: return 4;  // object, part, i, j
    case VariableKind::kObjectMotion: return 3;   // object, part, first frame
  }
  return 0;
}

/// Dimension of the tangent space used by the solver.
inline int tangent_dim(VariableKind k) {
  switch (k) {
    case VariableKind::kCameraPose:
    case VariableKind::kObjectMotion: return 6;
    case VariableKind::kStaticPoint:
    case VariableKind::kDynamicPoint: return 3;
    case VariableKind::kSegmentLength: return 1;
  }
  return 0;
}

struct VariableId {
  VariableKind kind = VariableKind::kCameraPose;
  std::array<std::int32_t, 4> index{};

  static VariableId camera(int frame) {
    return {VariableKind::kCameraPose, {frame, 0, 0, 0}};
  }
  static VariableId static_point(int point) {
    return {VariableKind::kStaticPoint, {point, 0, 0, 0}};
  }
  static VariableId dynamic_point(int object, int part, int point, int frame) {
    return {VariableKind::kDynamicPoint, {object, part, point, frame}};
  }
  static VariableId segment(int object, int part, int i, int j) {
    return {VariableKind::kSegmentLength, {object, part, i, j}};
  }
  /// Motion of (object, part) starting at `first_frame`. With one variable
  /// per frame pair, first_frame is k for the pair k -> k+1.
  static VariableId motion(int object, int part, int first_frame) {
    return {VariableKind::kObjectMotion, {object, part, first_frame, 0}};
  }

  int frame() const {
    switch (kind) {
      case VariableKind::kCameraPose: return index[0];
      case VariableKind::kDynamicPoint: return index[3];
      case VariableKind::kObjectMotion: return index[2];
      default: return -1;
    }
  }
  int object() const { return index[0]; }
  int part() const { return index[1]; }
  int point() const {
    return kind == VariableKind::kStaticPoint ? index[0] : index[2];
  }

  auto operator<=>(const VariableId&) const = default;
};

inline std::string to_string(const VariableId& id) {
  std::string s = kind_name(id.kind);
  for (int n = 0; n < index_arity(id.kind); ++n) {
    s += ' ';
    s += std::to_string(id.index[n]);
  }
  return s;
}

struct VariableIdHash {
  std::size_t operator()(const VariableId& id) const noexcept {
    std::uint64_t h = static_cast<std::uint64_t>(id.kind) + 0x9e3779b97f4a7c15ULL;
    for (auto v : id.index) {
      h ^= static_cast<std::uint64_t>(static_cast<std::uint32_t>(v)) +
           0x9e3779b97f4a7c15ULL + (h << 6) + (h >> 2);
    }
    return static_cast<std::size_t>(h);
  }
};

using Value = std::variant<Pose, Point3, double>;

inline bool value_matches_kind(const Value& v, VariableKind k) {
  switch (k) {
    case VariableKind::kCameraPose:
    case VariableKind::kObjectMotion: return std::holds_alternative<Pose>(v);
    case VariableKind::kStaticPoint:
    case VariableKind::kDynamicPoint: return std::holds_alternative<Point3>(v);
    case VariableKind::kSegmentLength: return std::holds_alternative<double>(v);
  }
  return false;
}

/// Assignment of a value to each variable. Iteration is ordered by id.
class Values {
 public:
  void insert(const VariableId& id, Value v) {
    if (!value_matches_kind(v, id.kind)) {
      throw GraphIntegrityError(GraphIntegrityError::Code::kKindMismatch,
                                "value type does not match " + to_string(id));
    }
    values_.insert_or_assign(id, std::move(v));
  }

  bool contains(const VariableId& id) const { return values_.count(id) != 0; }
  std::size_t size() const { return values_.size(); }
  void erase(const VariableId& id) { values_.erase(id); }

  const Value& at(const VariableId& id) const {
    auto it = values_.find(id);
    if (it == values_.end()) {
      throw GraphIntegrityError(GraphIntegrityError::Code::kMissingValue,
                                "no value for " + to_string(id));
    }
    return it->second;
  }

  const Pose& pose(const VariableId& id) const {
    return get<Pose>(id);
  }
  const Point3& point(const VariableId& id) const { return get<Point3>(id); }
  double scalar(const VariableId& id) const { return get<double>(id); }

  auto begin() const { return values_.begin(); }
  auto end() const { return values_.end(); }

  bool operator==(const Values& other) const {
    if (values_.size() != other.values_.size()) return false;
    auto a = values_.begin();
    auto b = other.values_.begin();
    for (; a != values_.end(); ++a, ++b) {
      if (a->first != b->first) return false;
      if (!same_value(a->second, b->second)) return false;
    }
    return true;
  }

 private:
  template <typename T>
  const T& get(const VariableId& id) const {
    const Value& v = at(id);
    if (const T* p = std::get_if<T>(&v)) return *p;
    throw GraphIntegrityError(GraphIntegrityError::Code::kKindMismatch,
                              "value of unexpected type for " + to_string(id));
  }

  static bool same_value(const Value& a, const Value& b) {
    if (a.index() != b.index()) return false;
    if (auto pa = std::get_if<Pose>(&a)) {
      const Pose& pb = std::get<Pose>(b);
      return pa->translation() == pb.translation() &&
             pa->rotation().quaternion().coeffs() ==
                 pb.rotation().quaternion().coeffs();
    }
    if (auto pa = std::get_if<Point3>(&a)) return *pa == std::get<Point3>(b);
    return std::get<double>(a) == std::get<double>(b);
  }

  std::map<VariableId, Value> values_;
};

/// Point measured in the camera frame: r = act(inverse(camera), p) - z.
struct ObservationFactor {
  VariableId camera;
  VariableId point;
  Point3 measurement = Point3::Zero();
  Matrix3 covariance = Matrix3::Identity();
};

/// Segment-length constraint: r = |p_i - p_j| - s.
struct RigidityFactor {
  VariableId point_i;
  VariableId point_j;
  VariableId segment;
  double variance = 1.0;
};

/// Rigid motion of a part between consecutive frames:
/// r = p_next - act(T, p_prev).
struct MotionFactor {
  VariableId point_prev;
  VariableId point_next;
  VariableId motion;
  Matrix3 covariance = Matrix3::Identity();
};

using Factor = std::variant<ObservationFactor, RigidityFactor, MotionFactor>;

enum class FactorKind : std::uint8_t { kObservation, kRigidity, kMotion };

inline FactorKind factor_kind(const Factor& f) {
  return static_cast<FactorKind>(f.index());
}

inline int residual_dim(const Factor& f) {
  return std::holds_alternative<RigidityFactor>(f) ? 1 : 3;
}

/// Variables referenced by a factor, in Jacobian-block order.
inline std::vector<VariableId> factor_variables(const Factor& f) {
  return std::visit(
      [](const auto& x) -> std::vector<VariableId> {
        using T = std::decay_t<decltype(x)>;
        if constexpr (std::is_same_v<T, ObservationFactor>) {
          return {x.camera, x.point};
        } else if constexpr (std::is_same_v<T, RigidityFactor>) {
          return {x.point_i, x.point_j, x.segment};
        } else {
          return {x.point_prev, x.point_next, x.motion};
        }
      },
      f);
}

// ---------------------------------------------------------------------------
// Residual/Jacobian kernels on raw values. Shared by the generic API below
// and the solver's linearization loop.
// ---------------------------------------------------------------------------
namespace kernels {

inline Vector3 observation_residual(const Pose& camera, const Point3& p,
                                    const Point3& z) {
  return camera.rotation().inverse() * (p - camera.translation()) - z;
}

/// d r / d xi (camera perturbed as exp(xi) * camera) and d r / d p.
inline void observation_jacobians(const Pose& camera, const Point3& p,
                                  Matrix36& j_camera, Matrix3& j_point) {
  const Matrix3 rt = camera.rotation().matrix().transpose();
  j_camera.leftCols<3>() = rt * skew(p);
  j_camera.rightCols<3>() = -rt;
  j_point = rt;
}

inline double rigidity_residual(const Point3& pi, const Point3& pj, double s) {
  return (pi - pj).norm() - s;
}

/// Coincident points have no gradient direction.
inline constexpr double kMinSegmentNorm = 1e-9;

inline void rigidity_jacobians(const Point3& pi, const Point3& pj,
                               Eigen::RowVector3d& j_i,
                               Eigen::RowVector3d& j_j) {
  const Vector3 d = pi - pj;
  const double n = d.norm();
  if (!(n > kMinSegmentNorm)) {
    throw DegenerateGeometryError(
        "rigidity factor: points coincide, gradient undefined");
  }
  j_i = d.transpose() / n;
  j_j = -j_i;
}

inline Vector3 motion_residual(const Pose& motion, const Point3& prev,
                               const Point3& next) {
  return next - act(motion, prev);
}

inline void motion_jacobians(const Pose& motion, const Point3& prev,
                             Matrix3& j_prev, Matrix3& j_next,
                             Matrix36& j_motion) {
  const ActJacobians a = act_jacobians(motion, prev);
  j_prev = -a.point;
  j_next = Matrix3::Identity();
  j_motion = -a.pose;
}

}  // namespace kernels

[[nodiscard]] inline Eigen::VectorXd residual(const Factor& factor,
                                              const Values& values) {
  return std::visit(
      [&](const auto& f) -> Eigen::VectorXd {
        using T = std::decay_t<decltype(f)>;
        if constexpr (std::is_same_v<T, ObservationFactor>) {
          return kernels::observation_residual(values.pose(f.camera),
                                               values.point(f.point),
                                               f.measurement);
        } else if constexpr (std::is_same_v<T, RigidityFactor>) {
          Eigen::VectorXd r(1);
          r(0) = kernels::rigidity_residual(values.point(f.point_i),
                                            values.point(f.point_j),
                                            values.scalar(f.segment));
          return r;
        } else {
          return kernels::motion_residual(values.pose(f.motion),
                                          values.point(f.point_prev),
                                          values.point(f.point_next));
        }
      },
      factor);
}

struct JacobianBlock {
  VariableId variable;
  Eigen::MatrixXd matrix;
};

/// One block per referenced variable, in factor_variables() order. Pose and
/// motion blocks are with respect to left-multiplicative twists. Throws
/// DegenerateGeometryError for a rigidity factor with coincident points.
[[nodiscard]] inline std::vector<JacobianBlock> jacobians(
    const Factor& factor, const Values& values) {
  return std::visit(
      [&](const auto& f) -> std::vector<JacobianBlock> {
        using T = std::decay_t<decltype(f)>;
        if constexpr (std::is_same_v<T, ObservationFactor>) {
          Matrix36 jc;
          Matrix3 jp;
          kernels::observation_jacobians(values.pose(f.camera),
                                         values.point(f.point), jc, jp);
          return {{f.camera, jc}, {f.point, jp}};
        } else if constexpr (std::is_same_v<T, RigidityFactor>) {
          Eigen::RowVector3d ji, jj;
          kernels::rigidity_jacobians(values.point(f.point_i),
                                      values.point(f.point_j), ji, jj);
          return {{f.point_i, ji},
                  {f.point_j, jj},
                  {f.segment, Eigen::MatrixXd::Constant(1, 1, -1.0)}};
        } else {
          Matrix3 jprev, jnext;
          Matrix36 jm;
          kernels::motion_jacobians(values.pose(f.motion),
                                    values.point(f.point_prev), jprev, jnext,
                                    jm);
          return {{f.point_prev, jprev}, {f.point_next, jnext}, {f.motion, jm}};
        }
      },
      factor);
}

using FactorId = std::size_t;

struct FactorEntry {
  FactorId id = 0;
  Factor factor;
  /// Inverse covariance; only the top-left 1x1 is used for rigidity.
  Matrix3 information = Matrix3::Identity();
};

/// r^T Omega^-1 r of one factor.
[[nodiscard]] inline double chi2(const FactorEntry& e, const Values& values) {
  const Eigen::VectorXd r = residual(e.factor, values);
  if (r.size() == 1) return r(0) * r(0) * e.information(0, 0);
  const Vector3 r3 = r;
  return r3.dot(e.information * r3);
}

/// Variables, factors, and gauge anchors. Factor ids are assigned in
/// insertion order and survive removal of other factors.
class FactorGraph {
 public:
  void add_variable(const VariableId& id) {
    for (int n = 0; n < index_arity(id.kind); ++n) {
      if (id.index[n] < 0) {
        throw GraphIntegrityError(GraphIntegrityError::Code::kInvalidFactor,
                                  "negative index in " + to_string(id));
      }
    }
    if (!declared_.insert(id).second) {
      throw GraphIntegrityError(GraphIntegrityError::Code::kDuplicateVariable,
                                "duplicate variable " + to_string(id));
    }
    variables_.push_back(id);
  }

  bool has_variable(const VariableId& id) const {
    return declared_.count(id) != 0;
  }

  FactorId add_factor(const Factor& factor) {
    return add_factor_with_id(factor, next_id_);
  }

  /// Used when reloading or filtering a graph so factor ids stay stable.
  FactorId add_factor_with_id(const Factor& factor, FactorId id) {
    validate(factor);
    FactorEntry e;
    e.id = id;
    e.factor = factor;
    e.information = information_of(factor);
    factors_.push_back(std::move(e));
    next_id_ = std::max(next_id_, id + 1);
    return id;
  }

  void hold_constant(const VariableId& id) {
    require_declared(id);
    constants_.insert(id);
  }

  bool is_constant(const VariableId& id) const {
    return constants_.count(id) != 0;
  }

  const std::vector<VariableId>& variables() const { return variables_; }
  const std::vector<FactorEntry>& factors() const { return factors_; }
  const std::set<VariableId>& constants() const { return constants_; }

  std::size_t count_variables(VariableKind k) const {
    return static_cast<std::size_t>(
        std::count_if(variables_.begin(), variables_.end(),
                      [k](const VariableId& v) { return v.kind == k; }));
  }

  std::size_t count_factors(FactorKind k) const {
    return static_cast<std::size_t>(std::count_if(
        factors_.begin(), factors_.end(),
        [k](const FactorEntry& e) { return factor_kind(e.factor) == k; }));
  }

  bool has_gauge_anchor() const {
    return std::any_of(constants_.begin(), constants_.end(),
                       [](const VariableId& v) {
                         return v.kind == VariableKind::kCameraPose;
                       });
  }

  /// Copy without the listed factors and variables. Variables to drop must
  /// not be referenced by any remaining factor.
  FactorGraph without(const std::set<FactorId>& drop_factors,
                      const std::set<VariableId>& drop_variables = {}) const {
    FactorGraph g;
    for (const auto& v : variables_) {
      if (!drop_variables.count(v)) g.add_variable(v);
    }
    for (const auto& c : constants_) {
      if (!drop_variables.count(c)) g.constants_.insert(c);
    }
    for (const auto& e : factors_) {
      if (!drop_factors.count(e.id)) g.add_factor_with_id(e.factor, e.id);
    }
    g.next_id_ = next_id_;
    return g;
  }

  /// Throws GraphIntegrityError if a variable lacks a value of its kind.
  void check_values(const Values& values) const {
    for (const auto& v : variables_) {
      if (!values.contains(v)) {
        throw GraphIntegrityError(GraphIntegrityError::Code::kMissingValue,
                                  "no value for " + to_string(v));
      }
      if (!value_matches_kind(values.at(v), v.kind)) {
        throw GraphIntegrityError(GraphIntegrityError::Code::kKindMismatch,
                                  "value of wrong type for " + to_string(v));
      }
    }
  }

 private:
  void require_declared(const VariableId& id) const {
    if (!declared_.count(id)) {
      throw GraphIntegrityError(GraphIntegrityError::Code::kDanglingReference,
                                "undeclared variable " + to_string(id));
    }
  }

  void require_kind(const VariableId& id, VariableKind kind,
                    const char* role) const {
    if (id.kind != kind) {
      throw GraphIntegrityError(
          GraphIntegrityError::Code::kKindMismatch,
          std::string(role) + " must be " + kind_name(kind) + ", got " +
              to_string(id));
    }
    require_declared(id);
  }

  static void invalid(const std::string& msg) {
    throw GraphIntegrityError(GraphIntegrityError::Code::kInvalidFactor, msg);
  }

  void validate(const Factor& factor) const {
    std::visit(
        [&](const auto& f) {
          using T = std::decay_t<decltype(f)>;
          if constexpr (std::is_same_v<T, ObservationFactor>) {
            require_kind(f.camera, VariableKind::kCameraPose, "camera");
            if (f.point.kind != VariableKind::kStaticPoint &&
                f.point.kind != VariableKind::kDynamicPoint) {
              throw GraphIntegrityError(
                  GraphIntegrityError::Code::kKindMismatch,
                  "observed variable must be a point, got " +
                      to_string(f.point));
            }
            require_declared(f.point);
            if (f.point.kind == VariableKind::kDynamicPoint &&
                f.point.frame() != f.camera.frame()) {
              invalid("dynamic point observed from a different frame: " +
                      to_string(f.point) + " by " + to_string(f.camera));
            }
            if (!f.measurement.allFinite()) invalid("non-finite measurement");
          } else if constexpr (std::is_same_v<T, RigidityFactor>) {
            require_kind(f.point_i, VariableKind::kDynamicPoint, "point_i");
            require_kind(f.point_j, VariableKind::kDynamicPoint, "point_j");
            require_kind(f.segment, VariableKind::kSegmentLength, "segment");
            const auto& a = f.point_i.index;
            const auto& b = f.point_j.index;
            const auto& s = f.segment.index;
            if (f.point_i == f.point_j) invalid("rigidity: point_i == point_j");
            if (a[0] != b[0] || a[1] != b[1] || a[3] != b[3]) {
              invalid("rigidity: points must share object, part and frame");
            }
            if (s[0] != a[0] || s[1] != a[1]) {
              invalid("rigidity: segment belongs to another part");
            }
            const bool same = s[2] == a[2] && s[3] == b[2];
            const bool swapped = s[2] == b[2] && s[3] == a[2];
            if (!same && !swapped) {
              invalid("rigidity: segment endpoints do not match points");
            }
          } else {
            require_kind(f.point_prev, VariableKind::kDynamicPoint,
                         "point_prev");
            require_kind(f.point_next, VariableKind::kDynamicPoint,
                         "point_next");
            require_kind(f.motion, VariableKind::kObjectMotion, "motion");
            const auto& a = f.point_prev.index;
            const auto& b = f.point_next.index;
            const auto& m = f.motion.index;
            if (a[0] != b[0] || a[1] != b[1]) {
              invalid("motion: points must share object and part");
            }
            if (b[3] != a[3] + 1) invalid("motion: frames must be consecutive");
            if (m[0] != a[0] || m[1] != a[1]) {
              invalid("motion: motion belongs to another part");
            }
            if (m[2] > a[3]) {
              invalid("motion: motion window starts after the point frame");
            }
          }
        },
        factor);
  }

  static Matrix3 information_of(const Factor& factor) {
    if (const auto* r = std::get_if<RigidityFactor>(&factor)) {
      if (!(r->variance > 0.0) || !std::isfinite(r->variance)) {
        throw GraphIntegrityError(GraphIntegrityError::Code::kNonSpdCovariance,
                                  "rigidity variance must be positive");
      }
      Matrix3 info = Matrix3::Zero();
      info(0, 0) = 1.0 / r->variance;
      return info;
    }
    const Matrix3& cov = std::visit(
        [](const auto& f) -> const Matrix3& {
          using T = std::decay_t<decltype(f)>;
          if constexpr (std::is_same_v<T, RigidityFactor>) {
            static const Matrix3 unused = Matrix3::Identity();
            return unused;
          } else {
            return f.covariance;
          }
        },
        factor);
    if (!cov.allFinite() ||
        (cov - cov.transpose()).cwiseAbs().maxCoeff() >
            1e-12 * cov.cwiseAbs().maxCoeff()) {
      throw GraphIntegrityError(GraphIntegrityError::Code::kNonSpdCovariance,
                                "covariance is not symmetric");
    }
    Eigen::LLT<Matrix3> llt(cov);
    if (llt.info() != Eigen::Success) {
      throw GraphIntegrityError(GraphIntegrityError::Code::kNonSpdCovariance,
                                "covariance is not positive definite");
    }
    return llt.solve(Matrix3::Identity());
  }

  std::vector<VariableId> variables_;
  std::set<VariableId> declared_;
  std::vector<FactorEntry> factors_;
  std::set<VariableId> constants_;
  FactorId next_id_ = 0;
};

/// Sum over factors of r^T Omega^-1 r.
[[nodiscard]] inline double cost(const FactorGraph& graph,
                                 const Values& values) {
  double total = 0.0;
  for (const auto& e : graph.factors()) total += chi2(e, values);
  return total;
}

inline Matrix3 isotropic(double sigma) {
  return Matrix3::Identity() * (sigma * sigma);
}

}  // namespace dynba
