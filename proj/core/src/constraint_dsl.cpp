#include "emboalign/constraint_dsl.hpp"

#include <charconv>
#include <cmath>
#include <cstring>
#include <optional>
#include <unordered_set>

#include "emboalign/documents.hpp"
#include "emboalign/errors.hpp"

namespace emboalign {
namespace {

enum class Kind { scalar, vec };

struct Signature {
  std::string_view name;
  Op op;
  Kind result;
  std::vector<Kind> args;
};

const std::vector<Signature>& signatures() {
  static const std::vector<Signature> table = {
      {"add", Op::add, Kind::scalar, {Kind::scalar, Kind::scalar}},
      {"sub", Op::sub, Kind::scalar, {Kind::scalar, Kind::scalar}},
      {"mul", Op::mul, Kind::scalar, {Kind::scalar, Kind::scalar}},
      {"div", Op::div, Kind::scalar, {Kind::scalar, Kind::scalar}},
      {"neg", Op::neg, Kind::scalar, {Kind::scalar}},
      {"abs", Op::abs, Kind::scalar, {Kind::scalar}},
      {"min", Op::min, Kind::scalar, {Kind::scalar, Kind::scalar}},
      {"max", Op::max, Kind::scalar, {Kind::scalar, Kind::scalar}},
      {"sq", Op::sq, Kind::scalar, {Kind::scalar}},
      {"norm", Op::norm, Kind::scalar, {Kind::vec}},
      {"dot", Op::dot, Kind::scalar, {Kind::vec, Kind::vec}},
      {"x", Op::x, Kind::scalar, {Kind::vec}},
      {"y", Op::y, Kind::scalar, {Kind::vec}},
      {"z", Op::z, Kind::scalar, {Kind::vec}},
      {"vsub", Op::vsub, Kind::vec, {Kind::vec, Kind::vec}},
      {"vadd", Op::vadd, Kind::vec, {Kind::vec, Kind::vec}},
      {"vscale", Op::vscale, Kind::vec, {Kind::scalar, Kind::vec}},
  };
  return table;
}

const Signature* find_signature(Op op) {
  for (const auto& s : signatures()) {
    if (s.op == op) return &s;
  }
  return nullptr;
}

Kind kind_of(Op op) {
  switch (op) {
    case Op::kp: case Op::kpprev: case Op::vsub: case Op::vadd: case Op::vscale: case Op::const3:
      return Kind::vec;
    default:
      return Kind::scalar;
  }
}

std::string_view name_of(Op op) {
  switch (op) {
    case Op::literal: return "literal";
    case Op::kp: return "kp";
    case Op::kpprev: return "kpprev";
    case Op::const3: return "const3";
    default: return find_signature(op)->name;
  }
}

struct Token {
  enum Type { open, close, atom, end } type;
  std::string_view text;
  std::size_t offset;
};

std::optional<double> parse_number(std::string_view s) {
  if (s.empty()) return std::nullopt;
  std::string_view body = s;
  if (body.front() == '+') body.remove_prefix(1);
  double v = 0;
  const auto [ptr, ec] = std::from_chars(body.data(), body.data() + body.size(), v);
  if (ec != std::errc() || ptr != body.data() + body.size() || !std::isfinite(v)) return std::nullopt;
  return v;
}

std::string format_number(double v) {
  char buf[64];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  std::string s(buf, ptr);
  // Keep literals visibly numeric (and distinct from kp indices) after printing.
  if (s.find_first_of(".eEn") == std::string::npos) s += ".0";
  return s;
}

}  // namespace

class ExprParser {
 public:
  explicit ExprParser(std::string_view text) : text_(text) {}

  ConstraintExpr run() {
    advance();
    if (tok_.type == Token::end) throw ParseError(Errc::lexer_error, tok_.offset, "empty expression");
    const std::size_t start = tok_.offset;
    const auto [root, kind] = parse_node(0);
    if (tok_.type != Token::end) {
      throw ParseError(Errc::lexer_error, tok_.offset, "unexpected input after expression");
    }
    if (kind != Kind::scalar) {
      throw ParseError(Errc::non_scalar_top_level, start, "top-level expression must be scalar");
    }
    out_.root_ = root;
    return std::move(out_);
  }

 private:
  static constexpr std::size_t kMaxDepth = 200;

  void advance() {
    while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_]))) ++pos_;
    if (pos_ >= text_.size()) {
      tok_ = {Token::end, {}, pos_};
      return;
    }
    const char c = text_[pos_];
    if (c == '(' || c == ')') {
      tok_ = {c == '(' ? Token::open : Token::close, text_.substr(pos_, 1), pos_};
      ++pos_;
      return;
    }
    const std::size_t start = pos_;
    while (pos_ < text_.size()) {
      const char d = text_[pos_];
      if (std::isspace(static_cast<unsigned char>(d)) || d == '(' || d == ')') break;
      if (!(std::isalnum(static_cast<unsigned char>(d)) || d == '.' || d == '-' || d == '+' || d == '_')) {
        throw ParseError(Errc::lexer_error, pos_, std::string("unexpected character '") + d + "'");
      }
      ++pos_;
    }
    tok_ = {Token::atom, text_.substr(start, pos_ - start), start};
  }

  std::size_t push(ConstraintExpr::Node n) {
    out_.nodes_.push_back(std::move(n));
    return out_.nodes_.size() - 1;
  }

  double expect_literal(std::string_view op_name) {
    if (tok_.type != Token::atom) {
      throw ParseError(tok_.type == Token::open ? Errc::non_literal_argument : Errc::arity_mismatch,
                       tok_.offset, std::string(op_name) + " expects numeric literals");
    }
    const auto v = parse_number(tok_.text);
    if (!v) {
      throw ParseError(Errc::non_literal_argument, tok_.offset,
                       std::string(op_name) + " expects numeric literals");
    }
    advance();
    return *v;
  }

  std::pair<std::size_t, Kind> parse_node(std::size_t depth) {
    if (depth > kMaxDepth) throw ParseError(Errc::lexer_error, tok_.offset, "expression nested too deeply");
    if (tok_.type == Token::end) throw ParseError(Errc::lexer_error, tok_.offset, "unexpected end of input");
    if (tok_.type == Token::close) throw ParseError(Errc::lexer_error, tok_.offset, "unexpected ')'");
    if (tok_.type == Token::atom) {
      const auto v = parse_number(tok_.text);
      if (!v) {
        throw ParseError(Errc::lexer_error, tok_.offset,
                         "expected a number or '(' but got '" + std::string(tok_.text) + "'");
      }
      advance();
      ConstraintExpr::Node n;
      n.value = *v;
      return {push(std::move(n)), Kind::scalar};
    }

    const std::size_t open_at = tok_.offset;
    advance();
    if (tok_.type != Token::atom) throw ParseError(Errc::lexer_error, tok_.offset, "expected operator name");
    const std::string_view name = tok_.text;
    const std::size_t name_at = tok_.offset;
    advance();

    ConstraintExpr::Node node;
    if (name == "kp" || name == "kpprev") {
      node.op = name == "kp" ? Op::kp : Op::kpprev;
      if (tok_.type == Token::close) throw ParseError(Errc::arity_mismatch, tok_.offset, "kp takes one index");
      if (tok_.type != Token::atom) {
        throw ParseError(Errc::non_literal_argument, tok_.offset, "kp index must be an integer literal");
      }
      std::size_t idx = 0;
      const auto t = tok_.text;
      const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), idx);
      if (ec != std::errc() || ptr != t.data() + t.size()) {
        throw ParseError(Errc::non_literal_argument, tok_.offset,
                         "kp index must be a non-negative integer literal");
      }
      node.index = idx;
      advance();
    } else if (name == "const3") {
      node.op = Op::const3;
      for (double& c : node.c3) {
        if (tok_.type == Token::close) throw ParseError(Errc::arity_mismatch, tok_.offset, "const3 takes 3 arguments");
        c = expect_literal("const3");
      }
    } else {
      const Signature* sig = nullptr;
      for (const auto& s : signatures()) {
        if (s.name == name) sig = &s;
      }
      if (!sig) throw ParseError(Errc::unknown_operator, name_at, "unknown operator '" + std::string(name) + "'");
      node.op = sig->op;
      for (Kind want : sig->args) {
        if (tok_.type == Token::close || tok_.type == Token::end) {
          throw ParseError(Errc::arity_mismatch, tok_.offset,
                           std::string(name) + " takes " + std::to_string(sig->args.size()) + " arguments");
        }
        const std::size_t arg_at = tok_.offset;
        const auto [child, got] = parse_node(depth + 1);
        if (got != want) {
          throw ParseError(Errc::type_mismatch, arg_at,
                           std::string(name) + " expects a " + (want == Kind::vec ? "vector" : "scalar") +
                               " argument");
        }
        node.args.push_back(child);
      }
    }
    if (tok_.type == Token::end) throw ParseError(Errc::lexer_error, open_at, "unbalanced '('");
    if (tok_.type != Token::close) {
      throw ParseError(Errc::arity_mismatch, tok_.offset, "too many arguments to " + std::string(name));
    }
    advance();
    const Kind k = kind_of(node.op);
    return {push(std::move(node)), k};
  }

  std::string_view text_;
  std::size_t pos_ = 0;
  Token tok_{Token::end, {}, 0};
  ConstraintExpr out_;
};

ConstraintExpr ConstraintExpr::parse(std::string_view text) { return ExprParser(text).run(); }

namespace {

struct Evaluator {
  const std::vector<ConstraintExpr::Node>& nodes;
  const KeypointConfig& cur;
  const KeypointConfig& prev;

  Vec3 row(const KeypointConfig& k, std::size_t i) const {
    if (i >= static_cast<std::size_t>(k.rows())) {
      throw Error(Errc::index_out_of_range, "keypoint index " + std::to_string(i) + " out of range");
    }
    return k.row(static_cast<Eigen::Index>(i)).transpose();
  }

  Vec3 vec(std::size_t id) const {
    const auto& n = nodes[id];
    switch (n.op) {
      case Op::kp: return row(cur, n.index);
      case Op::kpprev: return row(prev, n.index);
      case Op::const3: return {n.c3[0], n.c3[1], n.c3[2]};
      case Op::vsub: return vec(n.args[0]) - vec(n.args[1]);
      case Op::vadd: return vec(n.args[0]) + vec(n.args[1]);
      case Op::vscale: return scalar(n.args[0]) * vec(n.args[1]);
      default: throw Error(Errc::type_mismatch, "scalar node in vector position");
    }
  }

  double scalar(std::size_t id) const {
    const auto& n = nodes[id];
    switch (n.op) {
      case Op::literal: return n.value;
      case Op::add: return scalar(n.args[0]) + scalar(n.args[1]);
      case Op::sub: return scalar(n.args[0]) - scalar(n.args[1]);
      case Op::mul: return scalar(n.args[0]) * scalar(n.args[1]);
      case Op::div: {
        const double num = scalar(n.args[0]);
        const double den = scalar(n.args[1]);
        if (den == 0.0) throw Error(Errc::division_by_zero, "division by zero");
        return num / den;
      }
      case Op::neg: return -scalar(n.args[0]);
      case Op::abs: return std::abs(scalar(n.args[0]));
      case Op::min: return std::min(scalar(n.args[0]), scalar(n.args[1]));
      case Op::max: return std::max(scalar(n.args[0]), scalar(n.args[1]));
      case Op::sq: {
        const double v = scalar(n.args[0]);
        return v * v;
      }
      case Op::norm: return vec(n.args[0]).norm();
      case Op::dot: return vec(n.args[0]).dot(vec(n.args[1]));
      case Op::x: return vec(n.args[0]).x();
      case Op::y: return vec(n.args[0]).y();
      case Op::z: return vec(n.args[0]).z();
      default: throw Error(Errc::type_mismatch, "vector node in scalar position");
    }
  }
};

void print(const std::vector<ConstraintExpr::Node>& nodes, std::size_t id, std::string& out) {
  const auto& n = nodes[id];
  switch (n.op) {
    case Op::literal:
      out += format_number(n.value);
      return;
    case Op::kp:
    case Op::kpprev:
      out += '(';
      out += name_of(n.op);
      out += ' ';
      out += std::to_string(n.index);
      out += ')';
      return;
    case Op::const3:
      out += "(const3";
      for (double c : n.c3) {
        out += ' ';
        out += format_number(c);
      }
      out += ')';
      return;
    default:
      out += '(';
      out += name_of(n.op);
      for (auto a : n.args) {
        out += ' ';
        print(nodes, a, out);
      }
      out += ')';
  }
}

bool same_tree(const ConstraintExpr& a, std::size_t ia, const ConstraintExpr& b, std::size_t ib) {
  const auto& na = a.nodes()[ia];
  const auto& nb = b.nodes()[ib];
  if (na.op != nb.op || na.args.size() != nb.args.size()) return false;
  if (na.op == Op::literal && std::memcmp(&na.value, &nb.value, sizeof(double)) != 0) return false;
  if ((na.op == Op::kp || na.op == Op::kpprev) && na.index != nb.index) return false;
  if (na.op == Op::const3 && std::memcmp(na.c3, nb.c3, sizeof(na.c3)) != 0) return false;
  for (std::size_t i = 0; i < na.args.size(); ++i) {
    if (!same_tree(a, na.args[i], b, nb.args[i])) return false;
  }
  return true;
}

}  // namespace

double ConstraintExpr::eval(const KeypointConfig& current, const KeypointConfig& previous) const {
  if (nodes_.empty()) throw Error(Errc::invalid_argument, "evaluating an empty expression");
  const double v = Evaluator{nodes_, current, previous}.scalar(root_);
  if (!std::isfinite(v)) throw Error(Errc::non_finite_result, "expression produced a non-finite value");
  return v;
}

std::string ConstraintExpr::to_string() const {
  std::string out;
  if (!nodes_.empty()) print(nodes_, root_, out);
  return out;
}

long ConstraintExpr::max_keypoint_index() const {
  long m = -1;
  for (const auto& n : nodes_) {
    if (n.op == Op::kp || n.op == Op::kpprev) m = std::max(m, static_cast<long>(n.index));
  }
  return m;
}

bool ConstraintExpr::uses_previous() const {
  for (const auto& n : nodes_) {
    if (n.op == Op::kpprev) return true;
  }
  return false;
}

bool operator==(const ConstraintExpr& a, const ConstraintExpr& b) {
  if (a.nodes_.empty() || b.nodes_.empty()) return a.nodes_.empty() && b.nodes_.empty();
  return same_tree(a, a.root_, b, b.root_);
}

void ConstraintSet::add(Constraint c) {
  if (c.name.empty()) throw Error(Errc::invalid_argument, "constraint name must be non-empty");
  for (const auto& existing : items_) {
    if (existing.name == c.name) {
      throw Error(Errc::invalid_argument, "duplicate constraint name '" + c.name + "'");
    }
  }
  if (!(c.window_begin >= 0 && c.window_begin <= c.window_end && c.window_end <= 1)) {
    throw Error(Errc::invalid_argument, "constraint '" + c.name + "': window must satisfy 0 <= a <= b <= 1");
  }
  items_.push_back(std::move(c));
}

BoundConstraintSet bind(const ConstraintSet& cs, std::size_t keypoint_count) {
  BoundConstraintSet out;
  for (const auto& c : cs.constraints()) {
    const long m = c.expr.max_keypoint_index();
    if (m >= static_cast<long>(keypoint_count)) {
      throw ConstraintError(Errc::index_out_of_range, c.name, 0,
                            "keypoint index " + std::to_string(m) + " out of range for K=" +
                                std::to_string(keypoint_count));
    }
    out.uses_previous_ = out.uses_previous_ || c.expr.uses_previous();
  }
  out.set_ = cs;
  out.k_ = keypoint_count;
  return out;
}

BoundConstraintSet bind(const ConstraintSet& cs, const SceneDoc& scene) {
  return bind(cs, scene.keypoint_count());
}

std::pair<std::size_t, std::size_t> window_steps(double begin, double end, std::size_t steps) {
  if (steps == 0) return {1, 0};
  const double span = static_cast<double>(steps - 1);
  // The slack absorbs products like 0.1 * 10 landing just above an integer.
  const double lo = std::ceil(begin * span - 1e-9);
  const double hi = std::floor(end * span + 1e-9);
  return {static_cast<std::size_t>(std::max(0.0, lo)) + 1,
          static_cast<std::size_t>(std::max(-1.0, hi) + 1)};
}

namespace {

void check_trajectory(const BoundConstraintSet& cs, const KeypointTrajectory& traj) {
  if (traj.empty()) throw Error(Errc::invalid_argument, "trajectory has no timesteps");
  for (std::size_t t = 0; t < traj.size(); ++t) {
    if (static_cast<std::size_t>(traj[t].rows()) != cs.keypoint_count()) {
      throw Error(Errc::invalid_argument, "trajectory keypoint count does not match the bound set");
    }
    if (!traj[t].allFinite()) {
      throw Error(Errc::invalid_argument, "trajectory has non-finite keypoints at t=" + std::to_string(t + 1));
    }
  }
}

double eval_named(const Constraint& c, std::size_t t, const KeypointConfig& cur, const KeypointConfig& prev) {
  try {
    return c.expr.eval(cur, prev);
  } catch (const Error& e) {
    throw ConstraintError(e.code(), c.name, t, e.what());
  }
}

}  // namespace

double timestep_cost(const BoundConstraintSet& cs, std::size_t t, std::size_t steps,
                     const KeypointConfig& current, const KeypointConfig& previous) {
  double sum = 0;
  for (const auto& c : cs.set().constraints()) {
    const auto [first, last] = window_steps(c.window_begin, c.window_end, steps);
    if (t < first || t > last) continue;
    sum += squared_hinge(eval_named(c, t, current, previous));
  }
  return sum;
}

double aggregate_cost(const BoundConstraintSet& cs, const KeypointTrajectory& traj) {
  check_trajectory(cs, traj);
  const std::size_t steps = traj.size();
  double sum = 0;
  for (std::size_t t = 1; t <= steps; ++t) {
    sum += timestep_cost(cs, t, steps, traj[t - 1], traj[t > 1 ? t - 2 : 0]);
  }
  return sum;
}

double max_violation(const BoundConstraintSet& cs, const KeypointTrajectory& traj) {
  check_trajectory(cs, traj);
  const std::size_t steps = traj.size();
  double worst = 0;
  for (const auto& c : cs.set().constraints()) {
    const auto [first, last] = window_steps(c.window_begin, c.window_end, steps);
    for (std::size_t t = first; t <= last; ++t) {
      worst = std::max(worst, eval_named(c, t, traj[t - 1], traj[t > 1 ? t - 2 : 0]));
    }
  }
  return worst;
}

std::vector<double> evaluate_at(const BoundConstraintSet& cs, const KeypointTrajectory& traj, std::size_t t) {
  check_trajectory(cs, traj);
  if (t < 1 || t > traj.size()) throw Error(Errc::invalid_argument, "timestep out of range");
  std::vector<double> out;
  for (const auto& c : cs.set().constraints()) {
    out.push_back(eval_named(c, t, traj[t - 1], traj[t > 1 ? t - 2 : 0]));
  }
  return out;
}

}  // namespace emboalign
