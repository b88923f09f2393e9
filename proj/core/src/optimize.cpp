#include "emboalign/optimize.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <random>

#include "emboalign/errors.hpp"
#include "emboalign/seeding.hpp"

namespace emboalign {
namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;
constexpr double kOutsideTolerance = 0.01;

Vec3 box_width(const VariableBounds& b) { return b.translation.max - b.translation.min; }

void check_bounds(const VariableBounds& b) {
  const Vec3 w = box_width(b);
  if (!(w.array() > 0).all() || !w.allFinite() || !b.translation.min.allFinite()) {
    throw Error(Errc::invalid_argument, "variable bounds must be finite with min < max");
  }
}

}  // namespace

Eigen::VectorXd encode_variables(const std::vector<Pose>& traj, const VariableBounds& b, EncodeReport* report) {
  check_bounds(b);
  const Vec3 w = box_width(b);
  Eigen::VectorXd x(static_cast<Eigen::Index>(6 * traj.size()));
  std::size_t clamped = 0;
  for (std::size_t t = 0; t < traj.size(); ++t) {
    const Vec3 tn = (traj[t].translation() - b.translation.min).cwiseQuotient(w);
    const Vec3 r = traj[t].rotation_vector();
    for (int i = 0; i < 3; ++i) {
      double v = tn[i];
      if (v < -kOutsideTolerance || v > 1 + kOutsideTolerance || !std::isfinite(v)) {
        throw Error(Errc::pose_out_of_bounds, "pose " + std::to_string(t + 1) + " lies outside the workspace");
      }
      if (v < 0 || v > 1) {
        v = std::clamp(v, 0.0, 1.0);
        ++clamped;
      }
      x[static_cast<Eigen::Index>(6 * t + i)] = v;
      x[static_cast<Eigen::Index>(6 * t + 3 + i)] = std::clamp((r[i] + std::numbers::pi) / kTwoPi, 0.0, 1.0);
    }
  }
  if (report) report->clamped = clamped;
  return x;
}

std::vector<Pose> decode_variables(const Eigen::VectorXd& x, const VariableBounds& b) {
  check_bounds(b);
  if (x.size() % 6 != 0) throw Error(Errc::invalid_argument, "variable vector length is not a multiple of 6");
  const Vec3 w = box_width(b);
  std::vector<Pose> out;
  out.reserve(static_cast<std::size_t>(x.size() / 6));
  for (Eigen::Index t = 0; t < x.size() / 6; ++t) {
    const Vec3 tn = x.segment<3>(6 * t);
    const Vec3 rn = x.segment<3>(6 * t + 3);
    out.push_back(Pose::from_rotation_vector(rn * kTwoPi - Vec3::Constant(std::numbers::pi),
                                             b.translation.min + tn.cwiseProduct(w)));
  }
  return out;
}

GripperModel GripperModel::from_scene(const SceneDoc& scene) {
  GripperModel g;
  g.base = scene.initial_keypoints();
  g.grasped = scene.grasped().keypoints;
  g.offset = static_cast<Eigen::Index>(scene.entity_offset(scene.grasped_entity));
  g.grasp_inverse = invert(scene.grasp_transform);
  return g;
}

KeypointConfig GripperModel::keypoints(const Pose& xi) const {
  KeypointConfig k = base;
  k.middleRows(offset, grasped.rows()) = apply(compose(xi, grasp_inverse), grasped);
  return k;
}

OptProblem OptProblem::make(const std::vector<Pose>& initial, const BoundConstraintSet& cs, const SceneDoc& scene) {
  OptProblem p;
  p.initial = initial;
  p.constraints = cs;
  p.gripper = GripperModel::from_scene(scene);
  p.bounds.translation = scene.workspace;
  return p;
}

namespace {

// Evaluates the objective piecewise. Fidelity is measured against the encoded
// start so it is exactly zero there.
class Evaluator {
 public:
  Evaluator(const OptProblem& p, const Eigen::VectorXd& reference)
      : p_(p), steps_(static_cast<std::size_t>(reference.size() / 6)), width_(box_width(p.bounds)) {
    ref_t_.reserve(steps_);
    ref_r_.reserve(steps_);
    for (std::size_t t = 0; t < steps_; ++t) {
      ref_t_.push_back(translation(reference.data() + 6 * t));
      ref_r_.push_back(rotvec(reference.data() + 6 * t));
    }
  }

  std::size_t steps() const { return steps_; }

  Vec3 translation(const double* v) const {
    return p_.bounds.translation.min + Vec3(v[0], v[1], v[2]).cwiseProduct(width_);
  }
  static Vec3 rotvec(const double* v) {
    return Vec3(v[3], v[4], v[5]) * kTwoPi - Vec3::Constant(std::numbers::pi);
  }

  KeypointConfig keypoints(const double* v) const {
    return p_.gripper.keypoints(Pose::from_rotation_vector(rotvec(v), translation(v)));
  }

  double fidelity(std::size_t t, const double* v) const {
    return (translation(v) - ref_t_[t]).squaredNorm() + p_.rot_weight * (rotvec(v) - ref_r_[t]).squaredNorm();
  }

  // Objective restricted to timesteps [lo, hi). Valid as a block function
  // only when constraints do not couple neighbouring frames, or when the
  // block spans the whole trajectory.
  double block(const Eigen::VectorXd& x, std::size_t lo, std::size_t hi) const {
    double c = 0, f = 0;
    KeypointConfig prev;
    for (std::size_t t = lo; t < hi; ++t) {
      KeypointConfig k = keypoints(x.data() + 6 * t);
      if (t == lo) prev = (t > 0 && p_.constraints.uses_previous()) ? keypoints(x.data() + 6 * (t - 1)) : k;
      c += timestep_cost(p_.constraints, t + 1, steps_, k, prev);
      f += fidelity(t, x.data() + 6 * t);
      prev = std::move(k);
    }
    return c + p_.lambda * f;
  }

  // Terms of a coupled trajectory that depend on timestep t.
  double local(const Eigen::VectorXd& x, std::size_t t) const {
    const KeypointConfig k = keypoints(x.data() + 6 * t);
    double c = timestep_cost(p_.constraints, t + 1, steps_, k, t > 0 ? keypoints(x.data() + 6 * (t - 1)) : k);
    if (t + 1 < steps_) c += timestep_cost(p_.constraints, t + 2, steps_, keypoints(x.data() + 6 * (t + 1)), k);
    return c + p_.lambda * fidelity(t, x.data() + 6 * t);
  }

  ObjectiveTerms terms(const Eigen::VectorXd& x) const {
    ObjectiveTerms out;
    KeypointTrajectory traj;
    traj.reserve(steps_);
    for (std::size_t t = 0; t < steps_; ++t) {
      traj.push_back(keypoints(x.data() + 6 * t));
      out.fidelity += fidelity(t, x.data() + 6 * t);
    }
    for (std::size_t t = 0; t < steps_; ++t) {
      out.constraint += timestep_cost(p_.constraints, t + 1, steps_, traj[t], traj[t > 0 ? t - 1 : 0]);
    }
    out.max_violation = max_violation(p_.constraints, traj);
    out.total = out.constraint + p_.lambda * out.fidelity;
    return out;
  }

 private:
  const OptProblem& p_;
  std::size_t steps_;
  Vec3 width_;
  std::vector<Vec3> ref_t_, ref_r_;
};

Eigen::VectorXd block_gradient(const Evaluator& ev, Eigen::VectorXd& x, std::size_t lo, std::size_t hi, double h) {
  const auto first = static_cast<Eigen::Index>(6 * lo);
  const auto n = static_cast<Eigen::Index>(6 * (hi - lo));
  Eigen::VectorXd g(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double keep = x[first + i];
    const std::size_t t = lo + static_cast<std::size_t>(i / 6);
    const auto eval = [&] { return hi - lo > 1 ? ev.local(x, t) : ev.block(x, lo, hi); };
    x[first + i] = keep + h;
    const double fp = eval();
    x[first + i] = keep - h;
    const double fm = eval();
    x[first + i] = keep;
    g[i] = (fp - fm) / (2 * h);
  }
  return g;
}

struct Block {
  std::size_t lo = 0, hi = 0;
  double f = 0;
  Eigen::VectorXd g;
  Eigen::MatrixXd H;
  bool fresh = true;
  bool active = true;
  bool converged = true;
  bool moved = false;
};

Eigen::VectorXd projected(const Eigen::VectorXd& g, const Eigen::VectorXd& x, Eigen::Index first) {
  Eigen::VectorXd pg = g;
  for (Eigen::Index i = 0; i < g.size(); ++i) {
    const double v = x[first + i];
    if ((v <= 0 && g[i] > 0) || (v >= 1 && g[i] < 0)) pg[i] = 0;
  }
  return pg;
}

void step_block(const Evaluator& ev, const SolverParams& sp, Eigen::VectorXd& x, Block& b) {
  const auto first = static_cast<Eigen::Index>(6 * b.lo);
  const auto n = b.g.size();
  const Eigen::VectorXd pg = projected(b.g, x, first);
  if (pg.lpNorm<Eigen::Infinity>() <= sp.tol_grad) {
    b.active = false;
    return;
  }
  Eigen::VectorXd d = -b.H * b.g;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double v = x[first + i];
    if ((v <= 0 && d[i] < 0) || (v >= 1 && d[i] > 0)) d[i] = 0;
  }
  if (!(b.g.dot(d) < 0)) {
    b.H.setIdentity();
    b.fresh = true;
    d = -pg;
  }
  double alpha = b.fresh ? std::min(1.0, 0.1 / d.lpNorm<Eigen::Infinity>()) : 1.0;
  const Eigen::VectorXd xb = x.segment(first, n);
  bool accepted = false;
  double fn = b.f;
  for (std::size_t k = 0; k < sp.line_search_budget; ++k, alpha *= 0.5) {
    x.segment(first, n) = (xb + alpha * d).cwiseMax(0.0).cwiseMin(1.0);
    fn = ev.block(x, b.lo, b.hi);
    if (fn <= b.f + 1e-4 * b.g.dot(x.segment(first, n) - xb) && fn < b.f) {
      accepted = true;
      break;
    }
  }
  if (!accepted) {
    x.segment(first, n) = xb;
    if (!b.fresh) {
      b.H.setIdentity();
      b.fresh = true;
      return;
    }
    b.active = false;
    b.converged = pg.lpNorm<Eigen::Infinity>() <= 1e-6;
    return;
  }
  b.moved = true;
  const Eigen::VectorXd gn = block_gradient(ev, x, b.lo, b.hi, sp.grad_step);
  const Eigen::VectorXd s = x.segment(first, n) - xb;
  const Eigen::VectorXd y = gn - b.g;
  const double sy = s.dot(y);
  if (sy > 1e-12 * s.norm() * y.norm() && sy > 0) {
    if (b.fresh) b.H *= sy / y.squaredNorm();
    const double rho = 1.0 / sy;
    const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(n, n);
    b.H = (I - rho * s * y.transpose()) * b.H * (I - rho * y * s.transpose()) + rho * s * s.transpose();
    b.fresh = false;
  }
  const double improvement = b.f - fn;
  b.f = fn;
  b.g = gn;
  if (improvement < sp.tol_obj) b.active = false;
}

struct Run {
  Eigen::VectorXd x;
  std::vector<TraceEntry> trace;
  std::vector<bool> moved;  ///< per timestep
  bool converged = true;
  std::size_t iterations = 0;
  double final_objective = 0;
};

TraceEntry entry(std::size_t it, const ObjectiveTerms& t) {
  return {it, t.total, t.constraint, t.fidelity, t.max_violation};
}

Run run_from(const OptProblem& p, const Evaluator& ev, Eigen::VectorXd x) {
  const SolverParams& sp = p.solver;
  const std::size_t T = ev.steps();
  std::vector<Block> blocks;
  if (p.constraints.uses_previous()) {
    blocks.push_back(Block{0, T, 0, {}, {}});
  } else {
    for (std::size_t t = 0; t < T; ++t) blocks.push_back(Block{t, t + 1, 0, {}, {}});
  }
  for (auto& b : blocks) {
    b.f = ev.block(x, b.lo, b.hi);
    if (b.f == 0) {
      b.active = false;
      continue;
    }
    const auto n = static_cast<Eigen::Index>(6 * (b.hi - b.lo));
    b.H = Eigen::MatrixXd::Identity(n, n);
    b.g = block_gradient(ev, x, b.lo, b.hi, sp.grad_step);
  }

  Run run;
  run.trace.push_back(entry(0, ev.terms(x)));
  std::size_t it = 0;
  const auto any_active = [&] {
    return std::any_of(blocks.begin(), blocks.end(), [](const Block& b) { return b.active; });
  };
  while (any_active() && it < sp.max_iters) {
    ++it;
    for (auto& b : blocks) {
      if (b.active) step_block(ev, sp, x, b);
    }
    run.trace.push_back(entry(it, ev.terms(x)));
  }
  run.iterations = it;
  run.converged = !any_active() &&
                  std::all_of(blocks.begin(), blocks.end(), [](const Block& b) { return b.converged; });
  run.moved.assign(T, false);
  for (const auto& b : blocks) {
    for (std::size_t t = b.lo; t < b.hi; ++t) run.moved[t] = b.moved;
  }
  run.final_objective = run.trace.back().objective;
  run.x = std::move(x);
  return run;
}

}  // namespace

ObjectiveTerms objective_terms(const Eigen::VectorXd& x, const OptProblem& p) {
  const Evaluator ev(p, encode_variables(p.initial, p.bounds));
  if (x.size() != static_cast<Eigen::Index>(6 * ev.steps())) {
    throw Error(Errc::invalid_argument, "variable vector does not match the trajectory length");
  }
  return ev.terms(x);
}

double objective(const Eigen::VectorXd& x, const OptProblem& p) { return objective_terms(x, p).total; }

Eigen::VectorXd objective_gradient(const Eigen::VectorXd& x, const OptProblem& p) {
  const Evaluator ev(p, encode_variables(p.initial, p.bounds));
  Eigen::VectorXd xc = x;
  return block_gradient(ev, xc, 0, ev.steps(), p.solver.grad_step);
}

OptResult solve(const OptProblem& p) {
  if (p.initial.empty()) throw Error(Errc::invalid_argument, "empty initial trajectory");
  if (!(p.lambda >= 0) || !(p.rot_weight >= 0)) throw Error(Errc::invalid_argument, "lambda and rot_weight must be >= 0");
  if (!(p.solver.grad_step > 0)) throw Error(Errc::invalid_argument, "grad_step must be positive");
  if (p.constraints.keypoint_count() != static_cast<std::size_t>(p.gripper.base.rows())) {
    throw Error(Errc::invalid_argument, "constraint set is bound to a different keypoint count");
  }
  EncodeReport rep;
  const Eigen::VectorXd x0 = encode_variables(p.initial, p.bounds, &rep);
  const Evaluator ev(p, x0);

  Run best = run_from(p, ev, x0);
  std::mt19937_64 rng(derive_seed(p.solver.restart_seed, "restart"));
  std::uniform_real_distribution<double> jitter(-kOutsideTolerance, kOutsideTolerance);
  for (std::size_t r = 0; r < p.solver.restarts; ++r) {
    Eigen::VectorXd xs = x0;
    for (Eigen::Index i = 0; i < xs.size(); ++i) xs[i] = std::clamp(xs[i] + jitter(rng), 0.0, 1.0);
    Run cand = run_from(p, ev, xs);
    std::fill(cand.moved.begin(), cand.moved.end(), true);
    if (cand.final_objective < best.final_objective) best = std::move(cand);
  }

  OptResult out;
  const auto decoded = decode_variables(best.x, p.bounds);
  out.trajectory.reserve(decoded.size());
  for (std::size_t t = 0; t < decoded.size(); ++t) {
    out.trajectory.push_back(best.moved[t] ? decoded[t] : p.initial[t]);
  }
  out.trace = std::move(best.trace);
  out.converged = best.converged;
  out.iterations = best.iterations;
  out.clamped = rep.clamped;
  return out;
}

void write_trace_csv(const std::vector<TraceEntry>& trace, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error(Errc::io_failure, "cannot open " + path.string());
  os << "iteration,objective,constraint_term,fidelity_term,max_violation\n";
  char buf[160];
  for (const auto& e : trace) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g,%.17g\n", e.iteration, e.objective, e.constraint_term,
                  e.fidelity_term, e.max_violation);
    os << buf;
  }
  if (!os) throw Error(Errc::io_failure, "write failed for " + path.string());
}

}  // namespace emboalign
