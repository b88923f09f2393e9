#pragma once

// Compositional keypoint constraints as a closed s-expression language.
//
//   scalar := FLOAT | (add s s) | (sub s s) | (mul s s) | (div s s) | (neg s)
//           | (abs s) | (min s s) | (max s s) | (sq s) | (norm v) | (dot v v)
//           | (x v) | (y v) | (z v)
//   vec    := (kp INT) | (kpprev INT) | (vsub v v) | (vadd v v) | (vscale s v)
//           | (const3 FLOAT FLOAT FLOAT)
//
// A constraint c is satisfied at a keypoint configuration k when c(k) <= 0.

#include <cstddef>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "emboalign/geometry.hpp"

namespace emboalign {

struct SceneDoc;

/// K x 3 keypoint configuration, meters.
using KeypointConfig = Points3;
/// T configurations, all with the same K.
using KeypointTrajectory = std::vector<KeypointConfig>;

enum class Op : std::uint8_t {
  literal, add, sub, mul, div, neg, abs, min, max, sq, norm, dot, x, y, z,
  kp, kpprev, vsub, vadd, vscale, const3,
};

class ConstraintExpr {
 public:
  struct Node {
    Op op = Op::literal;
    double value = 0;        // literal
    std::size_t index = 0;   // kp / kpprev
    std::vector<std::size_t> args;
    double c3[3] = {0, 0, 0};  // const3
  };

  static ConstraintExpr parse(std::string_view text);

  double eval(const KeypointConfig& current, const KeypointConfig& previous) const;

  /// Canonical text; parse(to_string()) is structurally identical.
  std::string to_string() const;

  /// Largest keypoint index referenced, or -1 for none.
  long max_keypoint_index() const;
  bool uses_previous() const;

  const std::vector<Node>& nodes() const noexcept { return nodes_; }
  std::size_t root() const noexcept { return root_; }

  friend bool operator==(const ConstraintExpr& a, const ConstraintExpr& b);

 private:
  friend class ExprParser;
  std::vector<Node> nodes_;
  std::size_t root_ = 0;
};

struct Constraint {
  std::string name;
  ConstraintExpr expr;
  /// Active fraction of the horizon; [0, 1] covers every timestep.
  double window_begin = 0;
  double window_end = 1;
};

class ConstraintSet {
 public:
  /// Throws Error(invalid_argument) on duplicate name or bad window.
  void add(Constraint c);
  const std::vector<Constraint>& constraints() const noexcept { return items_; }
  std::size_t size() const noexcept { return items_.size(); }
  bool empty() const noexcept { return items_.empty(); }

 private:
  std::vector<Constraint> items_;
};

/// A constraint set checked against a keypoint count.
class BoundConstraintSet {
 public:
  BoundConstraintSet() = default;
  const ConstraintSet& set() const noexcept { return set_; }
  std::size_t keypoint_count() const noexcept { return k_; }
  bool uses_previous() const noexcept { return uses_previous_; }

 private:
  friend BoundConstraintSet bind(const ConstraintSet&, std::size_t);
  ConstraintSet set_;
  std::size_t k_ = 0;
  bool uses_previous_ = false;
};

/// Throws ConstraintError(index_out_of_range) naming the offending constraint.
BoundConstraintSet bind(const ConstraintSet& cs, std::size_t keypoint_count);
BoundConstraintSet bind(const ConstraintSet& cs, const SceneDoc& scene);

/// Inclusive 1-based timestep range [first, last] of a window over T steps:
/// [ceil(a (T-1)) + 1, floor(b (T-1)) + 1]. Empty when first > last.
std::pair<std::size_t, std::size_t> window_steps(double begin, double end, std::size_t steps);

inline double squared_hinge(double v) { return v > 0 ? v * v : 0.0; }

/// Aggregate violation: sum over constraints and in-window timesteps of
/// max(0, c(k_t))^2.
double aggregate_cost(const BoundConstraintSet& cs, const KeypointTrajectory& traj);

/// Contribution of timestep t (1-based) out of `steps`.
double timestep_cost(const BoundConstraintSet& cs, std::size_t t, std::size_t steps,
                     const KeypointConfig& current, const KeypointConfig& previous);

/// Largest single in-window max(0, c(k_t)).
double max_violation(const BoundConstraintSet& cs, const KeypointTrajectory& traj);

/// Raw constraint values at timestep t (1-based), in set order.
std::vector<double> evaluate_at(const BoundConstraintSet& cs, const KeypointTrajectory& traj,
                                std::size_t t);

}  // namespace emboalign
