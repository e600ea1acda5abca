#pragma once

// Levenberg-Marquardt over a FactorGraph with sparse normal equations, plus
// chi-square pruning of rigidity and motion factors.

#include <Eigen/Core>
#include <Eigen/SparseCholesky>
#include <Eigen/SparseCore>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <unordered_map>
#include <vector>

#include "dynba/errors.hpp"
#include "dynba/factor_graph.hpp"
#include "dynba/geometry.hpp"

namespace dynba {

/// 95% chi-square quantiles.
inline constexpr double kChi2Dof3 = 7.81;
inline constexpr double kChi2Dof1 = 3.84;

struct PruneConfig {
  double motion_threshold = kChi2Dof3;
  double rigidity_threshold = kChi2Dof1;
  int rounds = 1;
};

struct SolverConfig {
  int max_iterations = 100;
  double initial_lambda = 1e-4;
  double lambda_up = 10.0;
  double lambda_down = 0.1;
  /// Stop when an accepted step lowers the cost by less than this fraction.
  double relative_tolerance = 1e-8;
  /// Stop when the update norm falls below this.
  double step_tolerance = 1e-10;
  std::optional<PruneConfig> prune;
  /// Linearization workers; results do not depend on this.
  int threads = 1;

  void validate() const {
    if (max_iterations <= 0 || !(initial_lambda > 0) || !(lambda_up > 1) ||
        !(lambda_down > 0) || !(lambda_down < 1) ||
        !(relative_tolerance > 0) || !(step_tolerance > 0) || threads <= 0) {
      throw ConfigError("solver configuration values must be positive");
    }
    if (prune && (prune->rounds < 0 || !(prune->motion_threshold >= 0) ||
                  !(prune->rigidity_threshold >= 0))) {
      throw ConfigError("prune thresholds must be >= 0 and rounds >= 0");
    }
  }
};

enum class SolveStatus { kConverged, kMaxIterations, kDegenerate };

inline const char* status_name(SolveStatus s) {
  switch (s) {
    case SolveStatus::kConverged: return "Converged";
    case SolveStatus::kMaxIterations: return "MaxIterations";
    case SolveStatus::kDegenerate: return "Degenerate";
  }
  return "?";
}

struct IterationRecord {
  int index = 0;
  int round = 0;
  double cost = 0;  // cost after the iteration (candidate cost if rejected)
  double lambda = 0;
  double step_norm = 0;
  bool accepted = false;
  std::int64_t micros = 0;
};

struct PruneRound {
  int round = 0;
  std::vector<FactorId> removed_factors;
  std::vector<VariableId> excluded_variables;
};

struct SolveReport {
  SolveStatus status = SolveStatus::kConverged;
  std::vector<IterationRecord> iterations;
  double initial_cost = 0;
  double final_cost = 0;
  std::vector<PruneRound> pruning;
  std::vector<VariableId> underconstrained;
  std::vector<std::string> warnings;
  std::int64_t total_micros = 0;

  int accepted_steps() const {
    return static_cast<int>(std::count_if(
        iterations.begin(), iterations.end(),
        [](const IterationRecord& r) { return r.accepted; }));
  }
};

/// Assignment of free variables to tangent-space offsets. Held-constant
/// variables get offset -1.
class VariableLayout {
 public:
  struct Slot {
    VariableId id;
    int offset = -1;
    int dim = 0;
  };

  explicit VariableLayout(const FactorGraph& graph) {
    slots_.reserve(graph.variables().size());
    for (const auto& v : graph.variables()) {
      Slot s{v, -1, tangent_dim(v.kind)};
      if (!graph.is_constant(v)) {
        s.offset = total_;
        total_ += s.dim;
      }
      index_.emplace(v, static_cast<int>(slots_.size()));
      slots_.push_back(s);
    }
  }

  int slot_of(const VariableId& id) const {
    auto it = index_.find(id);
    if (it == index_.end()) {
      throw GraphIntegrityError(GraphIntegrityError::Code::kDanglingReference,
                                "undeclared variable " + to_string(id));
    }
    return it->second;
  }

  const std::vector<Slot>& slots() const { return slots_; }
  const Slot& slot(int s) const { return slots_[static_cast<std::size_t>(s)]; }
  int offset(const VariableId& id) const { return slot(slot_of(id)).offset; }
  int total_dim() const { return total_; }

 private:
  std::vector<Slot> slots_;
  std::unordered_map<VariableId, int, VariableIdHash> index_;
  int total_ = 0;
};

/// Retraction: exp(delta) * P for poses and motions, plus for vectors.
inline Value retract(const Value& v, const double* delta) {
  if (const auto* p = std::get_if<Pose>(&v)) {
    Twist xi;
    for (int n = 0; n < 6; ++n) xi(n) = delta[n];
    return compose(exp(xi), *p);
  }
  if (const auto* p = std::get_if<Point3>(&v)) {
    return Point3(*p + Vector3(delta[0], delta[1], delta[2]));
  }
  return std::get<double>(v) + delta[0];
}

/// Upper triangle of J^T Omega^-1 J and the gradient J^T Omega^-1 r.
struct NormalEquations {
  Eigen::SparseMatrix<double> hessian_upper;
  Eigen::VectorXd gradient;
};

namespace detail {

struct CompiledFactor {
  FactorId id = 0;
  FactorKind kind = FactorKind::kObservation;
  std::array<int, 3> slot{};
  int n_vars = 0;
  Point3 measurement = Point3::Zero();
  Matrix3 information = Matrix3::Identity();
  /// Block index per (a, b) pair of free variables, a <= b in tangent
  /// order; -1 where either is constant.
  std::array<int, 9> block{};
};

struct Linearization {
  int rdim = 3;
  Eigen::Vector3d r = Eigen::Vector3d::Zero();
  std::array<Eigen::Matrix<double, 3, 6>, 3> j;
  bool skipped = false;
};

// Linearization, sparse assembly and cost evaluation against a fixed
// variable layout. Values are held per slot.
class Problem {
 public:
  Problem(const FactorGraph& graph, const Values& values)
      : layout_(graph) {
    graph.check_values(values);
    state_.reserve(layout_.slots().size());
    for (const auto& s : layout_.slots()) state_.push_back(values.at(s.id));
    compile(graph);
    build_pattern();
  }

  const VariableLayout& layout() const { return layout_; }
  const std::vector<Value>& state() const { return state_; }
  std::vector<Value>& state() { return state_; }
  std::size_t num_factors() const { return factors_.size(); }
  const std::vector<CompiledFactor>& factors() const { return factors_; }

  double factor_chi2(const CompiledFactor& f,
                     const std::vector<Value>& st) const {
    if (f.kind == FactorKind::kRigidity) {
      const double r = kernels::rigidity_residual(point(st, f.slot[0]),
                                                  point(st, f.slot[1]),
                                                  scalar(st, f.slot[2]));
      return r * r * f.information(0, 0);
    }
    Vector3 r;
    if (f.kind == FactorKind::kObservation) {
      r = kernels::observation_residual(pose(st, f.slot[0]),
                                        point(st, f.slot[1]), f.measurement);
    } else {
      r = kernels::motion_residual(pose(st, f.slot[2]), point(st, f.slot[0]),
                                   point(st, f.slot[1]));
    }
    return r.dot(f.information * r);
  }

  double cost(const std::vector<Value>& st) const {
    double total = 0.0;
    for (const auto& f : factors_) total += factor_chi2(f, st);
    return total;
  }

  void linearize(const std::vector<Value>& st, int threads,
                 std::vector<std::string>* warnings) {
    lin_.resize(factors_.size());
    const std::size_t n = factors_.size();
    const auto work = [&](std::size_t begin, std::size_t end) {
      for (std::size_t k = begin; k < end; ++k) linearize_one(factors_[k], st, lin_[k]);
    };
    if (threads <= 1 || n < 256) {
      work(0, n);
    } else {
      std::vector<std::thread> pool;
      const std::size_t chunk = (n + static_cast<std::size_t>(threads) - 1) /
                                static_cast<std::size_t>(threads);
      for (std::size_t b = 0; b < n; b += chunk) {
        pool.emplace_back(work, b, std::min(n, b + chunk));
      }
      for (auto& t : pool) t.join();
    }
    if (warnings) {
      for (std::size_t k = 0; k < n; ++k) {
        if (lin_[k].skipped) {
          warnings->push_back("skipped degenerate rigidity factor " +
                              std::to_string(factors_[k].id));
        }
      }
    }
    assemble();
  }

  NormalEquations normal_equations() const { return {hessian_, gradient_}; }
  const Eigen::SparseMatrix<double>& hessian() const { return hessian_; }
  const Eigen::VectorXd& gradient() const { return gradient_; }
  /// Position of each diagonal entry in the sparse value array.
  const std::vector<int>& diagonal_index() const { return diag_index_; }

  std::vector<Value> retracted(const std::vector<Value>& st,
                               const Eigen::VectorXd& delta) const {
    std::vector<Value> out = st;
    for (std::size_t s = 0; s < out.size(); ++s) {
      const auto& slot = layout_.slots()[s];
      if (slot.offset < 0) continue;
      out[s] = retract(st[s], delta.data() + slot.offset);
    }
    return out;
  }

  Values to_values(const std::vector<Value>& st) const {
    Values v;
    for (std::size_t s = 0; s < st.size(); ++s) {
      v.insert(layout_.slots()[s].id, st[s]);
    }
    return v;
  }

 private:
  static const Pose& pose(const std::vector<Value>& st, int s) {
    return std::get<Pose>(st[static_cast<std::size_t>(s)]);
  }
  static const Point3& point(const std::vector<Value>& st, int s) {
    return std::get<Point3>(st[static_cast<std::size_t>(s)]);
  }
  static double scalar(const std::vector<Value>& st, int s) {
    return std::get<double>(st[static_cast<std::size_t>(s)]);
  }

  void compile(const FactorGraph& graph) {
    factors_.reserve(graph.factors().size());
    for (const auto& e : graph.factors()) {
      CompiledFactor f;
      f.id = e.id;
      f.kind = factor_kind(e.factor);
      f.information = e.information;
      const auto vars = factor_variables(e.factor);
      f.n_vars = static_cast<int>(vars.size());
      for (int a = 0; a < f.n_vars; ++a) {
        f.slot[static_cast<std::size_t>(a)] =
            layout_.slot_of(vars[static_cast<std::size_t>(a)]);
      }
      if (const auto* o = std::get_if<ObservationFactor>(&e.factor)) {
        f.measurement = o->measurement;
      }
      factors_.push_back(f);
    }
  }

  void linearize_one(const CompiledFactor& f, const std::vector<Value>& st,
                     Linearization& out) const {
    out.skipped = false;
    switch (f.kind) {
      case FactorKind::kObservation: {
        out.rdim = 3;
        const Pose& cam = pose(st, f.slot[0]);
        const Point3& p = point(st, f.slot[1]);
        out.r = kernels::observation_residual(cam, p, f.measurement);
        Matrix36 jc;
        Matrix3 jp;
        kernels::observation_jacobians(cam, p, jc, jp);
        out.j[0] = jc;
        out.j[1].leftCols<3>() = jp;
        break;
      }
      case FactorKind::kRigidity: {
        out.rdim = 1;
        const Point3& pi = point(st, f.slot[0]);
        const Point3& pj = point(st, f.slot[1]);
        out.r.setZero();
        out.r(0) = kernels::rigidity_residual(pi, pj, scalar(st, f.slot[2]));
        Eigen::RowVector3d ji, jj;
        try {
          kernels::rigidity_jacobians(pi, pj, ji, jj);
        } catch (const DegenerateGeometryError&) {
          out.skipped = true;
          return;
        }
        for (auto& m : out.j) m.setZero();
        out.j[0].row(0).head<3>() = ji;
        out.j[1].row(0).head<3>() = jj;
        out.j[2](0, 0) = -1.0;
        break;
      }
      case FactorKind::kMotion: {
        out.rdim = 3;
        const Pose& T = pose(st, f.slot[2]);
        const Point3& prev = point(st, f.slot[0]);
        out.r = kernels::motion_residual(T, prev, point(st, f.slot[1]));
        Matrix3 jprev, jnext;
        Matrix36 jm;
        kernels::motion_jacobians(T, prev, jprev, jnext, jm);
        out.j[0].leftCols<3>() = jprev;
        out.j[1].leftCols<3>() = jnext;
        out.j[2] = jm;
        break;
      }
    }
  }

  // Sparsity pattern of the upper triangle, built once. Each block (a, b)
  // with offset(a) <= offset(b) stores, per column of b, the value-array
  // position of row offset(a).
  void build_pattern() {
    const int n = layout_.total_dim();
    std::map<std::pair<int, int>, int> block_of;
    for (auto& f : factors_) {
      f.block.fill(-1);
      for (int a = 0; a < f.n_vars; ++a) {
        for (int b = 0; b < f.n_vars; ++b) {
          const auto& sa = layout_.slot(f.slot[static_cast<std::size_t>(a)]);
          const auto& sb = layout_.slot(f.slot[static_cast<std::size_t>(b)]);
          if (sa.offset < 0 || sb.offset < 0 || sa.offset > sb.offset) continue;
          const auto key = std::make_pair(f.slot[static_cast<std::size_t>(a)],
                                          f.slot[static_cast<std::size_t>(b)]);
          auto it = block_of.find(key);
          if (it == block_of.end()) {
            it = block_of.emplace(key, static_cast<int>(blocks_.size())).first;
            blocks_.push_back({key.first, key.second, {}});
          }
          f.block[static_cast<std::size_t>(a * 3 + b)] = it->second;
        }
      }
    }
    std::vector<Eigen::Triplet<double>> trip;
    for (const auto& blk : blocks_) {
      const auto& sa = layout_.slot(blk.row_slot);
      const auto& sb = layout_.slot(blk.col_slot);
      for (int c = 0; c < sb.dim; ++c) {
        for (int r = 0; r < sa.dim; ++r) {
          const int row = sa.offset + r;
          const int col = sb.offset + c;
          if (row <= col) trip.emplace_back(row, col, 0.0);
        }
      }
    }
    // Every free dimension gets a diagonal entry even if unconstrained.
    for (int d = 0; d < n; ++d) trip.emplace_back(d, d, 0.0);
    hessian_.resize(n, n);
    hessian_.setFromTriplets(trip.begin(), trip.end());
    hessian_.makeCompressed();

    const int* outer = hessian_.outerIndexPtr();
    const int* inner = hessian_.innerIndexPtr();
    for (auto& blk : blocks_) {
      const auto& sa = layout_.slot(blk.row_slot);
      const auto& sb = layout_.slot(blk.col_slot);
      blk.col_start.resize(static_cast<std::size_t>(sb.dim));
      for (int c = 0; c < sb.dim; ++c) {
        const int col = sb.offset + c;
        const int* first = inner + outer[col];
        const int* last = inner + outer[col + 1];
        const int* pos = std::lower_bound(first, last, sa.offset);
        blk.col_start[static_cast<std::size_t>(c)] =
            static_cast<int>(pos - inner);
      }
    }
    diag_index_.resize(static_cast<std::size_t>(n));
    for (int d = 0; d < n; ++d) diag_index_[static_cast<std::size_t>(d)] = outer[d + 1] - 1;
    gradient_ = Eigen::VectorXd::Zero(n);
  }

  void assemble() {
    double* val = hessian_.valuePtr();
    std::fill(val, val + hessian_.nonZeros(), 0.0);
    gradient_.setZero();
    for (std::size_t k = 0; k < factors_.size(); ++k) {
      const CompiledFactor& f = factors_[k];
      const Linearization& l = lin_[k];
      if (l.skipped) continue;
      const int rd = l.rdim;
      // Whitened Jacobian columns: W_a = Lambda * J_a.
      for (int a = 0; a < f.n_vars; ++a) {
        const auto& sa = layout_.slot(f.slot[static_cast<std::size_t>(a)]);
        if (sa.offset < 0) continue;
        const auto& ja = l.j[static_cast<std::size_t>(a)];
        Eigen::Matrix<double, 3, 6> wa;
        wa.topRows(rd).leftCols(sa.dim).noalias() =
            f.information.topLeftCorner(rd, rd) *
            ja.topRows(rd).leftCols(sa.dim);
        gradient_.segment(sa.offset, sa.dim).noalias() +=
            wa.topRows(rd).leftCols(sa.dim).transpose() * l.r.head(rd);
        for (int b = 0; b < f.n_vars; ++b) {
          const int bi = f.block[static_cast<std::size_t>(a * 3 + b)];
          if (bi < 0) continue;
          const auto& sb = layout_.slot(f.slot[static_cast<std::size_t>(b)]);
          const auto& jb = l.j[static_cast<std::size_t>(b)];
          // block(a, b) = J_a^T Lambda J_b = W_a^T J_b
          Eigen::Matrix<double, 6, 6> h;
          h.topLeftCorner(sa.dim, sb.dim).noalias() =
              wa.topRows(rd).leftCols(sa.dim).transpose() *
              jb.topRows(rd).leftCols(sb.dim);
          const auto& blk = blocks_[static_cast<std::size_t>(bi)];
          const bool diag = blk.row_slot == blk.col_slot;
          for (int c = 0; c < sb.dim; ++c) {
            double* dst = val + blk.col_start[static_cast<std::size_t>(c)];
            const int rows = diag ? c + 1 : sa.dim;
            for (int r = 0; r < rows; ++r) dst[r] += h(r, c);
          }
        }
      }
    }
  }

  struct Block {
    int row_slot;
    int col_slot;
    std::vector<int> col_start;
  };

  VariableLayout layout_;
  std::vector<Value> state_;
  std::vector<CompiledFactor> factors_;
  std::vector<Block> blocks_;
  std::vector<Linearization> lin_;
  Eigen::SparseMatrix<double> hessian_;
  Eigen::VectorXd gradient_;
  std::vector<int> diag_index_;
};

}  // namespace detail

/// Normal equations at `values`, in the order given by VariableLayout(graph).
[[nodiscard]] inline NormalEquations build_normal_equations(
    const FactorGraph& graph, const Values& values) {
  detail::Problem problem(graph, values);
  problem.linearize(problem.state(), 1, nullptr);
  return problem.normal_equations();
}

struct SolveResult {
  Values values;
  SolveReport report;
};

/// Minimizes cost(graph, .) starting from `initial`. Requires a held-constant
/// camera pose; throws PreconditionError otherwise.
[[nodiscard]] inline SolveResult solve(const FactorGraph& graph,
                                       const Values& initial,
                                       const SolverConfig& config = {}) {
  using Clock = std::chrono::steady_clock;
  config.validate();
  if (!graph.has_gauge_anchor()) {
    throw PreconditionError(
        "solve: no held-constant camera pose (gauge is not fixed)");
  }
  const auto t_start = Clock::now();
  const auto micros_since = [](Clock::time_point t0) {
    return std::chrono::duration_cast<std::chrono::microseconds>(Clock::now() -
                                                                 t0)
        .count();
  };

  detail::Problem problem(graph, initial);
  SolveReport report;
  std::vector<Value> state = problem.state();
  double current = problem.cost(state);
  report.initial_cost = current;
  report.final_cost = current;

  const auto finish = [&](SolveStatus status) {
    report.status = status;
    report.final_cost = current;
    report.total_micros = micros_since(t_start);
    Values out = problem.to_values(state);
    for (const auto& [id, v] : initial) {
      if (!out.contains(id)) out.insert(id, v);
    }
    return SolveResult{std::move(out), std::move(report)};
  };

  const int n = problem.layout().total_dim();
  if (n == 0 || current == 0.0) return finish(SolveStatus::kConverged);

  problem.linearize(state, config.threads, &report.warnings);

  // Dimensions with no information at all make the problem under-constrained.
  {
    std::set<VariableId> missing;
    const double* val = problem.hessian().valuePtr();
    for (const auto& s : problem.layout().slots()) {
      if (s.offset < 0) continue;
      for (int d = 0; d < s.dim; ++d) {
        if (val[problem.diagonal_index()[static_cast<std::size_t>(s.offset + d)]] <= 0.0) {
          missing.insert(s.id);
        }
      }
    }
    if (!missing.empty()) {
      report.underconstrained.assign(missing.begin(), missing.end());
      report.warnings.push_back(
          "normal equations singular: " + std::to_string(missing.size()) +
          " under-constrained variable(s)");
      return finish(SolveStatus::kDegenerate);
    }
  }

  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>, Eigen::Upper> ldlt;
  ldlt.analyzePattern(problem.hessian());
  Eigen::SparseMatrix<double> damped = problem.hessian();
  std::vector<double> diag(static_cast<std::size_t>(n));

  const auto refresh_diag = [&] {
    const double* val = problem.hessian().valuePtr();
    for (int d = 0; d < n; ++d) {
      diag[static_cast<std::size_t>(d)] =
          val[problem.diagonal_index()[static_cast<std::size_t>(d)]];
    }
  };
  refresh_diag();

  constexpr double kMaxLambda = 1e16;
  double lambda = config.initial_lambda;
  for (int it = 0; it < config.max_iterations; ++it) {
    const auto t_iter = Clock::now();
    IterationRecord rec;
    rec.index = it;
    rec.lambda = lambda;

    std::copy(problem.hessian().valuePtr(),
              problem.hessian().valuePtr() + problem.hessian().nonZeros(),
              damped.valuePtr());
    double* dv = damped.valuePtr();
    for (int d = 0; d < n; ++d) {
      dv[problem.diagonal_index()[static_cast<std::size_t>(d)]] +=
          lambda * diag[static_cast<std::size_t>(d)];
    }
    ldlt.factorize(damped);
    if (ldlt.info() != Eigen::Success) {
      rec.cost = current;
      rec.micros = micros_since(t_iter);
      report.iterations.push_back(rec);
      lambda *= config.lambda_up;
      if (lambda > kMaxLambda) {
        report.warnings.push_back("damped normal equations not factorizable");
        return finish(SolveStatus::kDegenerate);
      }
      continue;
    }
    const Eigen::VectorXd delta = ldlt.solve(-problem.gradient());
    rec.step_norm = delta.norm();
    if (!delta.allFinite()) {
      rec.cost = current;
      rec.micros = micros_since(t_iter);
      report.iterations.push_back(rec);
      report.warnings.push_back("non-finite update");
      return finish(SolveStatus::kDegenerate);
    }
    if (rec.step_norm < config.step_tolerance) {
      rec.cost = current;
      rec.micros = micros_since(t_iter);
      report.iterations.push_back(rec);
      return finish(SolveStatus::kConverged);
    }
    std::vector<Value> candidate = problem.retracted(state, delta);
    const double next = problem.cost(candidate);
    rec.cost = next;
    if (std::isfinite(next) && next < current) {
      rec.accepted = true;
      const double decrease = (current - next) / current;
      state = std::move(candidate);
      current = next;
      lambda = std::max(lambda * config.lambda_down, 1e-15);
      const bool done = decrease < config.relative_tolerance || current == 0.0;
      if (!done) {
        problem.linearize(state, config.threads, &report.warnings);
        refresh_diag();
      }
      rec.micros = micros_since(t_iter);
      report.iterations.push_back(rec);
      if (done) return finish(SolveStatus::kConverged);
    } else {
      lambda *= config.lambda_up;
      rec.micros = micros_since(t_iter);
      report.iterations.push_back(rec);
      if (lambda > kMaxLambda) {
        // No descent direction left at working precision.
        return finish(SolveStatus::kConverged);
      }
    }
  }
  return finish(SolveStatus::kMaxIterations);
}

struct PruneResult {
  FactorGraph graph;
  std::vector<FactorId> removed;
  std::vector<VariableId> excluded;
};

/// Removes rigidity/motion factors whose chi-square exceeds the per-kind
/// threshold and is the largest (relative to threshold) among flagged
/// factors sharing a dynamic point. Observation factors are never removed. A free variable left
/// without factors is excluded from the reduced graph.
[[nodiscard]] inline PruneResult prune_outliers(const FactorGraph& graph,
                                                const Values& values,
                                                const PruneConfig& config) {
  PruneResult out;
  // Factors over their threshold, scored by chi2 / threshold.
  std::map<FactorId, double> over;
  std::map<VariableId, std::vector<FactorId>> by_point;
  for (const auto& e : graph.factors()) {
    const FactorKind kind = factor_kind(e.factor);
    if (kind == FactorKind::kObservation) continue;
    const double threshold = kind == FactorKind::kMotion
                                 ? config.motion_threshold
                                 : config.rigidity_threshold;
    const double c = chi2(e, values);
    if (!(c > threshold)) continue;
    over.emplace(e.id, c / threshold);
    for (const auto& v : factor_variables(e.factor)) {
      if (v.kind == VariableKind::kDynamicPoint) by_point[v].push_back(e.id);
    }
  }
  // An outlier drags the points it touches, so its clean neighbours can
  // cross the threshold too. Keep only factors that score highest on every
  // point they share with another flagged factor; ties go to the lower id.
  std::set<FactorId> drop;
  for (const auto& e : graph.factors()) {
    auto it = over.find(e.id);
    if (it == over.end()) continue;
    bool local_max = true;
    for (const auto& v : factor_variables(e.factor)) {
      if (v.kind != VariableKind::kDynamicPoint) continue;
      for (FactorId other : by_point[v]) {
        const double s = over.at(other);
        if (s > it->second || (s == it->second && other < e.id)) local_max = false;
      }
    }
    if (local_max) drop.insert(e.id);
  }
  std::set<VariableId> referenced_before;
  std::set<VariableId> referenced_after;
  for (const auto& e : graph.factors()) {
    for (const auto& v : factor_variables(e.factor)) {
      referenced_before.insert(v);
      if (!drop.count(e.id)) referenced_after.insert(v);
    }
  }
  // Only variables disconnected by this pruning; isolated variables that
  // were already present are left for the solver to diagnose.
  std::set<VariableId> exclude;
  for (const auto& v : referenced_before) {
    if (!graph.is_constant(v) && !referenced_after.count(v)) exclude.insert(v);
  }
  out.graph = graph.without(drop, exclude);
  out.removed.assign(drop.begin(), drop.end());
  out.excluded.assign(exclude.begin(), exclude.end());
  return out;
}

struct PrunedSolveResult {
  Values values;
  SolveReport report;
  FactorGraph graph;  // the last (pruned) graph
};

/// Alternates solve and prune for config.prune->rounds rounds, then returns
/// the solve on the last pruned graph. Without prune settings (or rounds = 0)
/// this is a plain solve.
[[nodiscard]] inline PrunedSolveResult solve_with_pruning(
    const FactorGraph& graph, const Values& initial,
    const SolverConfig& config) {
  SolveResult first = solve(graph, initial, config);
  PrunedSolveResult out{std::move(first.values), std::move(first.report),
                        graph};
  const int rounds = config.prune ? config.prune->rounds : 0;
  for (int round = 1; round <= rounds; ++round) {
    if (out.report.status == SolveStatus::kDegenerate) break;
    PruneResult pr = prune_outliers(out.graph, out.values, *config.prune);
    PruneRound pr_rec{round, pr.removed, pr.excluded};
    out.report.pruning.push_back(pr_rec);
    if (pr.removed.empty()) break;
    Values start;
    for (const auto& v : pr.graph.variables()) start.insert(v, out.values.at(v));
    SolveResult next = solve(pr.graph, start, config);
    for (auto rec : next.report.iterations) {
      rec.round = round;
      out.report.iterations.push_back(rec);
    }
    out.report.status = next.report.status;
    out.report.final_cost = next.report.final_cost;
    out.report.total_micros += next.report.total_micros;
    out.report.underconstrained = next.report.underconstrained;
    for (auto& w : next.report.warnings) out.report.warnings.push_back(w);
    out.values = std::move(next.values);
    out.graph = std::move(pr.graph);
  }
  return out;
}

}  // namespace dynba
