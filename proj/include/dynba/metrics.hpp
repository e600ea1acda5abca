#pragma once

// Trajectory accuracy: ATE after rigid alignment, frame-to-frame RPE, and the
// position error of dynamic point tracks.

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "dynba/geometry.hpp"
#include "dynba/rng.hpp"

namespace dynba {

/// Samples keyed by strictly increasing frame index.
template <typename T>
class Trajectory {
 public:
  using Sample = std::pair<int, T>;

  Trajectory() = default;
  explicit Trajectory(std::vector<Sample> samples) {
    for (auto& s : samples) push_back(s.first, std::move(s.second));
  }

  void push_back(int frame, T value) {
    if (!samples_.empty() && frame <= samples_.back().first) {
      throw std::invalid_argument("trajectory frame indices must increase");
    }
    samples_.emplace_back(frame, std::move(value));
  }

  const T* find(int frame) const {
    auto it = std::lower_bound(
        samples_.begin(), samples_.end(), frame,
        [](const Sample& s, int f) { return s.first < f; });
    return (it != samples_.end() && it->first == frame) ? &it->second : nullptr;
  }

  std::size_t size() const { return samples_.size(); }
  bool empty() const { return samples_.empty(); }
  auto begin() const { return samples_.begin(); }
  auto end() const { return samples_.end(); }
  const Sample& operator[](std::size_t n) const { return samples_[n]; }

 private:
  std::vector<Sample> samples_;
};

using PoseTrajectory = Trajectory<Pose>;
using PointTrack = Trajectory<Point3>;

/// Track key: (object, part, point).
using TrackKey = std::tuple<int, int, int>;
using PointTracks = std::map<TrackKey, PointTrack>;

struct Alignment {
  /// Maps estimate coordinates into ground-truth coordinates.
  Pose transform;
  int common_frames = 0;
  /// Translations were collinear (or a single frame), the rotation about the
  /// line is not determined by the data.
  bool degenerate = false;
  /// "rigid-se3" or "first-pose".
  std::string method = "rigid-se3";
};

namespace detail {

template <typename A, typename B>
std::vector<std::pair<const A*, const B*>> common(const Trajectory<A>& a,
                                                  const Trajectory<B>& b) {
  std::vector<std::pair<const A*, const B*>> out;
  for (const auto& [frame, v] : a) {
    if (const B* w = b.find(frame)) out.emplace_back(&v, w);
  }
  return out;
}

inline double rms(const std::vector<double>& e) {
  if (e.empty()) return 0.0;
  double s = 0.0;
  for (double x : e) s += x * x;
  return std::sqrt(s / static_cast<double>(e.size()));
}

}  // namespace detail

/// Rigid transform A (no scale) minimizing sum |A t_est - t_gt|^2 over
/// common frames. One common frame falls back to first-pose alignment;
/// collinear translations are flagged as degenerate.
[[nodiscard]] inline Alignment align(const PoseTrajectory& est,
                                     const PoseTrajectory& gt) {
  const auto pairs = detail::common(est, gt);
  Alignment out;
  out.common_frames = static_cast<int>(pairs.size());
  if (pairs.empty()) {
    throw std::invalid_argument("align: trajectories share no frames");
  }
  if (pairs.size() == 1) {
    out.transform = compose(*pairs[0].second, inverse(*pairs[0].first));
    out.degenerate = true;
    out.method = "first-pose";
    return out;
  }
  const Eigen::Index n = static_cast<Eigen::Index>(pairs.size());
  Eigen::Matrix3Xd src(3, n), dst(3, n);
  for (Eigen::Index k = 0; k < n; ++k) {
    src.col(k) = pairs[static_cast<std::size_t>(k)].first->translation();
    dst.col(k) = pairs[static_cast<std::size_t>(k)].second->translation();
  }
  const Vector3 mu_src = src.rowwise().mean();
  const Vector3 mu_dst = dst.rowwise().mean();
  const Eigen::Matrix3Xd cs = src.colwise() - mu_src;
  const Eigen::Matrix3Xd cd = dst.colwise() - mu_dst;
  const Matrix3 sigma = cd * cs.transpose();
  Eigen::JacobiSVD<Matrix3> svd(sigma, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Matrix3 s = Matrix3::Identity();
  if (svd.matrixU().determinant() * svd.matrixV().determinant() < 0) s(2, 2) = -1;
  const Matrix3 r = svd.matrixU() * s * svd.matrixV().transpose();

  // Rank of the centered source spread.
  const Eigen::JacobiSVD<Matrix3> spread(cs * cs.transpose());
  const auto sv = spread.singularValues();
  out.degenerate = !(sv(1) > 1e-12 * std::max(sv(0), 1e-300));

  out.transform = Pose(Rotation::FromMatrix(r), mu_dst - r * mu_src);
  return out;
}

struct MetricReport {
  double ate_rmse = 0;        // meters
  double rpe_rot_rmse = 0;    // degrees
  double rpe_trans_rmse = 0;  // meters
  std::vector<double> ate_errors;
  std::vector<double> rpe_rot_errors;
  std::vector<double> rpe_trans_errors;
  Alignment alignment;
};

/// Per-frame translation errors |A t_est - t_gt| under a given alignment.
[[nodiscard]] inline std::vector<double> translation_errors(
    const PoseTrajectory& est, const PoseTrajectory& gt, const Pose& a) {
  std::vector<double> e;
  for (const auto& [pe, pg] : detail::common(est, gt)) {
    e.push_back((act(a, pe->translation()) - pg->translation()).norm());
  }
  return e;
}

[[nodiscard]] inline double ate(const PoseTrajectory& est,
                                const PoseTrajectory& gt) {
  return detail::rms(translation_errors(est, gt, align(est, gt).transform));
}

struct RelativeErrors {
  std::vector<double> rotation_deg;
  std::vector<double> translation;
};

[[nodiscard]] inline RelativeErrors relative_errors(const PoseTrajectory& est,
                                                    const PoseTrajectory& gt,
                                                    int delta = 1) {
  if (delta < 1) throw std::invalid_argument("rpe: delta must be >= 1");
  RelativeErrors out;
  for (const auto& [frame, g0] : gt) {
    const Pose* g1 = gt.find(frame + delta);
    const Pose* e0 = est.find(frame);
    const Pose* e1 = est.find(frame + delta);
    if (!g1 || !e0 || !e1) continue;
    const Pose err = compose(inverse(compose(inverse(g0), *g1)),
                             compose(inverse(*e0), *e1));
    out.rotation_deg.push_back(rad2deg(rotation_angle(err)));
    out.translation.push_back(err.translation().norm());
  }
  if (out.translation.empty()) {
    throw std::invalid_argument("rpe: not enough overlapping frames");
  }
  return out;
}

/// (RPE-R in degrees, RPE-T in meters).
[[nodiscard]] inline std::pair<double, double> rpe(const PoseTrajectory& est,
                                                   const PoseTrajectory& gt,
                                                   int delta = 1) {
  const RelativeErrors e = relative_errors(est, gt, delta);
  return {detail::rms(e.rotation_deg), detail::rms(e.translation)};
}

enum class AlignmentMode { kRigid, kFirstPose };

[[nodiscard]] inline MetricReport evaluate(
    const PoseTrajectory& est, const PoseTrajectory& gt, int delta = 1,
    AlignmentMode mode = AlignmentMode::kRigid) {
  MetricReport r;
  if (mode == AlignmentMode::kRigid) {
    r.alignment = align(est, gt);
  } else {
    const auto pairs = detail::common(est, gt);
    if (pairs.empty()) throw std::invalid_argument("evaluate: no common frames");
    r.alignment.transform = compose(*pairs[0].second, inverse(*pairs[0].first));
    r.alignment.common_frames = static_cast<int>(pairs.size());
    r.alignment.method = "first-pose";
  }
  r.ate_errors = translation_errors(est, gt, r.alignment.transform);
  r.ate_rmse = detail::rms(r.ate_errors);
  const RelativeErrors rel = relative_errors(est, gt, delta);
  r.rpe_rot_errors = rel.rotation_deg;
  r.rpe_trans_errors = rel.translation;
  r.rpe_rot_rmse = detail::rms(rel.rotation_deg);
  r.rpe_trans_rmse = detail::rms(rel.translation);
  return r;
}

/// RMSE of |A p_est - p_gt| over matching (object, part, point, frame).
[[nodiscard]] inline double dynamic_point_ate(const PointTracks& est,
                                              const PointTracks& gt,
                                              const Pose& camera_alignment) {
  std::vector<double> e;
  for (const auto& [key, track] : est) {
    auto it = gt.find(key);
    if (it == gt.end()) continue;
    for (const auto& [pe, pg] : detail::common(track, it->second)) {
      e.push_back((act(camera_alignment, *pe) - *pg).norm());
    }
  }
  if (e.empty()) {
    throw std::invalid_argument("dynamic_point_ate: no common track samples");
  }
  return detail::rms(e);
}

struct MeanInterval {
  double mean = 0;
  double lower = 0;
  double upper = 0;
};

/// Percentile bootstrap interval of the mean.
[[nodiscard]] inline MeanInterval bootstrap_mean(const std::vector<double>& x,
                                                 int resamples = 10000,
                                                 double confidence = 0.95,
                                                 std::uint64_t seed = 0) {
  if (x.empty()) throw std::invalid_argument("bootstrap_mean: no samples");
  MeanInterval out;
  for (double v : x) out.mean += v;
  out.mean /= static_cast<double>(x.size());
  RandomStream rng(seed, Stream::kBootstrap);
  std::vector<double> means(static_cast<std::size_t>(resamples));
  for (auto& m : means) {
    double s = 0.0;
    for (std::size_t n = 0; n < x.size(); ++n) s += x[rng.index(x.size())];
    m = s / static_cast<double>(x.size());
  }
  std::sort(means.begin(), means.end());
  const double alpha = 0.5 * (1.0 - confidence);
  const auto at = [&](double q) {
    const auto k = static_cast<std::size_t>(
        std::clamp(q * static_cast<double>(resamples - 1), 0.0,
                   static_cast<double>(resamples - 1)));
    return means[k];
  };
  out.lower = at(alpha);
  out.upper = at(1.0 - alpha);
  return out;
}

}  // namespace dynba
