#include "emboalign/documents.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "emboalign/errors.hpp"

namespace emboalign {

using nlohmann::json;

namespace {

[[noreturn]] void fail(const std::string& path, const std::string& msg,
                       Errc code = Errc::schema_violation) {
  throw SchemaError(code, path.empty() ? std::string("$") : path, msg);
}

std::string join(const std::string& path, const std::string& key) {
  return path.empty() ? key : path + "." + key;
}

std::string at_index(const std::string& path, std::size_t i) {
  return path + "[" + std::to_string(i) + "]";
}

const json& require(const json& obj, const std::string& key, const std::string& path) {
  if (!obj.is_object()) fail(path, "expected an object");
  const auto it = obj.find(key);
  if (it == obj.end()) fail(join(path, key), "missing required field");
  return *it;
}

const json* optional_field(const json& obj, const std::string& key, const std::string& path) {
  if (!obj.is_object()) fail(path, "expected an object");
  const auto it = obj.find(key);
  return it == obj.end() || it->is_null() ? nullptr : &*it;
}

double number(const json& j, const std::string& path) {
  if (!j.is_number()) fail(path, "expected a number");
  const double v = j.get<double>();
  if (!std::isfinite(v)) fail(path, "expected a finite number");
  return v;
}

std::size_t count(const json& j, const std::string& path) {
  if (!j.is_number_unsigned() && !(j.is_number_integer() && j.get<long long>() >= 0)) {
    fail(path, "expected a non-negative integer");
  }
  return j.get<std::size_t>();
}

int positive_int(const json& j, const std::string& path) {
  if (!j.is_number_integer() || j.get<long long>() <= 0 || j.get<long long>() > 1'000'000) {
    fail(path, "expected a positive integer");
  }
  return j.get<int>();
}

std::string text(const json& j, const std::string& path) {
  if (!j.is_string()) fail(path, "expected a string");
  return j.get<std::string>();
}

bool boolean(const json& j, const std::string& path) {
  if (!j.is_boolean()) fail(path, "expected a boolean");
  return j.get<bool>();
}

const json& array(const json& j, const std::string& path, std::optional<std::size_t> size = {}) {
  if (!j.is_array()) fail(path, "expected an array");
  if (size && j.size() != *size) fail(path, "expected an array of length " + std::to_string(*size));
  return j;
}

Vec3 vec3(const json& j, const std::string& path) {
  array(j, path, 3);
  return {number(j[0], at_index(path, 0)), number(j[1], at_index(path, 1)), number(j[2], at_index(path, 2))};
}

json vec_json(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }

}  // namespace

json pose_to_json(const Pose& p) {
  json rot = json::array();
  for (int r = 0; r < 3; ++r) {
    rot.push_back(json::array({p.rotation()(r, 0), p.rotation()(r, 1), p.rotation()(r, 2)}));
  }
  return json{{"rotation", rot}, {"translation", vec_json(p.translation())}};
}

Pose pose_from_json(const json& j, const std::string& path) {
  if (!j.is_object()) fail(path, "expected a pose object");
  const Vec3 t = vec3(require(j, "translation", path), join(path, "translation"));
  const json* rot = optional_field(j, "rotation", path);
  const json* quat = optional_field(j, "quaternion_wxyz", path);
  if ((rot == nullptr) == (quat == nullptr)) {
    fail(path, "pose needs exactly one of 'rotation' or 'quaternion_wxyz'");
  }
  try {
    if (quat) {
      const std::string qp = join(path, "quaternion_wxyz");
      array(*quat, qp, 4);
      return Pose::from_quaternion(number((*quat)[0], at_index(qp, 0)), number((*quat)[1], at_index(qp, 1)),
                                   number((*quat)[2], at_index(qp, 2)), number((*quat)[3], at_index(qp, 3)), t);
    }
    const std::string rp = join(path, "rotation");
    array(*rot, rp, 3);
    Mat3 r;
    for (int i = 0; i < 3; ++i) {
      const Vec3 row = vec3((*rot)[static_cast<std::size_t>(i)], at_index(rp, static_cast<std::size_t>(i)));
      r.row(i) = row.transpose();
    }
    return Pose(r, t);
  } catch (const SchemaError&) {
    throw;
  } catch (const Error& e) {
    fail(path, e.what());
  }
}

Image image_from_tensor(const Tensor& t) {
  if (t.rank() != 2) throw Error(Errc::invalid_argument, "expected a 2-D tensor for an image");
  Image img(t.dim(0), t.dim(1));
  for (std::size_t i = 0; i < t.size(); ++i) img.data()[i] = static_cast<double>(t[i]);
  return img;
}

Tensor tensor_from_image(const Image& img) {
  Tensor t({static_cast<std::uint32_t>(img.rows()), static_cast<std::uint32_t>(img.cols())});
  for (Eigen::Index i = 0; i < img.size(); ++i) t[static_cast<std::size_t>(i)] = static_cast<float>(img.data()[i]);
  return t;
}

Tensor trajectory_to_tensor(const std::vector<Pose>& traj) {
  if (traj.empty()) throw Error(Errc::invalid_argument, "empty trajectory");
  Tensor t({static_cast<std::uint32_t>(traj.size()), 7});
  for (std::size_t i = 0; i < traj.size(); ++i) {
    const Vec3& p = traj[i].translation();
    const Eigen::Vector4d q = traj[i].quaternion_wxyz();
    const double row[7] = {p.x(), p.y(), p.z(), q[0], q[1], q[2], q[3]};
    for (std::size_t c = 0; c < 7; ++c) t[7 * i + c] = static_cast<float>(row[c]);
  }
  return t;
}

std::vector<Pose> trajectory_from_tensor(const Tensor& t) {
  if (t.rank() != 2 || t.dim(1) != 7) throw Error(Errc::invalid_argument, "trajectory tensor must be T x 7");
  std::vector<Pose> out;
  for (std::size_t i = 0; i < t.dim(0); ++i) {
    const auto r = [&](std::size_t c) { return static_cast<double>(t[7 * i + c]); };
    out.push_back(Pose::from_quaternion(r(3), r(4), r(5), r(6), Vec3(r(0), r(1), r(2))));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Scene

std::size_t SceneDoc::keypoint_count() const {
  std::size_t k = 0;
  for (const auto& e : entities) k += static_cast<std::size_t>(e.keypoints.rows());
  return k;
}

std::size_t SceneDoc::entity_offset(const std::string& id) const {
  std::size_t k = 0;
  for (const auto& e : entities) {
    if (e.id == id) return k;
    k += static_cast<std::size_t>(e.keypoints.rows());
  }
  throw Error(Errc::dangling_reference, "no entity '" + id + "'");
}

const Entity& SceneDoc::entity(const std::string& id) const {
  for (const auto& e : entities) {
    if (e.id == id) return e;
  }
  throw Error(Errc::dangling_reference, "no entity '" + id + "'");
}

std::vector<std::size_t> SceneDoc::grasped_indices() const {
  const std::size_t first = entity_offset(grasped_entity);
  std::vector<std::size_t> out(static_cast<std::size_t>(grasped().keypoints.rows()));
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = first + i;
  return out;
}

KeypointConfig SceneDoc::initial_keypoints() const {
  KeypointConfig k(static_cast<Eigen::Index>(keypoint_count()), 3);
  Eigen::Index row = 0;
  for (const auto& e : entities) {
    k.middleRows(row, e.keypoints.rows()) = e.keypoints;
    row += e.keypoints.rows();
  }
  return k;
}

void SceneDoc::validate() const {
  try {
    intrinsics.validate();
  } catch (const Error& e) {
    fail("intrinsics", e.what());
  }
  if (entities.empty()) fail("entities", "scene needs at least one entity");
  std::set<std::string> ids;
  for (std::size_t i = 0; i < entities.size(); ++i) {
    const auto& e = entities[i];
    const std::string p = at_index("entities", i);
    if (e.id.empty()) fail(join(p, "id"), "entity id must be non-empty");
    if (!ids.insert(e.id).second) fail(join(p, "id"), "duplicate entity id '" + e.id + "'", Errc::duplicate_id);
    if (e.keypoints.rows() == 0) fail(join(p, "keypoints_3d"), "entity needs at least one keypoint");
    if (!e.keypoints.allFinite()) fail(join(p, "keypoints_3d"), "non-finite keypoint");
  }
  if (!ids.count(grasped_entity)) {
    fail("grasped_entity", "references unknown entity '" + grasped_entity + "'", Errc::dangling_reference);
  }
  if (grasped().keypoints.rows() < 3) {
    fail("grasped_entity", "grasped entity needs at least 3 keypoints");
  }
  for (int i = 0; i < 3; ++i) {
    if (!(workspace.min[i] < workspace.max[i])) fail("workspace_aabb", "min must be < max componentwise");
  }
  if (depth.size() > 0 && (depth.rows() != intrinsics.height || depth.cols() != intrinsics.width)) {
    fail("depth_path", "depth map shape does not match intrinsics");
  }
}

json scene_to_json(const SceneDoc& s) {
  json entities = json::array();
  for (const auto& e : s.entities) {
    json kps = json::array();
    for (Eigen::Index r = 0; r < e.keypoints.rows(); ++r) kps.push_back(vec_json(e.keypoints.row(r).transpose()));
    json je{{"id", e.id}, {"keypoints_3d", kps}};
    if (e.mask_path) je["mask_path"] = *e.mask_path;
    entities.push_back(std::move(je));
  }
  json j{
      {"intrinsics",
       {{"fx", s.intrinsics.fx}, {"fy", s.intrinsics.fy}, {"cx", s.intrinsics.cx}, {"cy", s.intrinsics.cy},
        {"width", s.intrinsics.width}, {"height", s.intrinsics.height}}},
      {"camera_pose", pose_to_json(s.camera_pose)},
      {"entities", entities},
      {"grasped_entity", s.grasped_entity},
      {"grasp_transform", pose_to_json(s.grasp_transform)},
      {"workspace_aabb", json::array({vec_json(s.workspace.min), vec_json(s.workspace.max)})},
      {"depth_path", s.depth_path},
  };
  if (!s.task.empty()) j["task"] = s.task;
  return j;
}

SceneDoc scene_from_json(const json& j, const std::filesystem::path& base_dir, bool load_depth) {
  if (!j.is_object()) fail("", "scene document must be an object");
  SceneDoc s;
  if (const json* t = optional_field(j, "task", "")) s.task = text(*t, "task");

  const json& in = require(j, "intrinsics", "");
  s.intrinsics.fx = number(require(in, "fx", "intrinsics"), "intrinsics.fx");
  s.intrinsics.fy = number(require(in, "fy", "intrinsics"), "intrinsics.fy");
  s.intrinsics.cx = number(require(in, "cx", "intrinsics"), "intrinsics.cx");
  s.intrinsics.cy = number(require(in, "cy", "intrinsics"), "intrinsics.cy");
  s.intrinsics.width = positive_int(require(in, "width", "intrinsics"), "intrinsics.width");
  s.intrinsics.height = positive_int(require(in, "height", "intrinsics"), "intrinsics.height");

  if (const json* cp = optional_field(j, "camera_pose", "")) s.camera_pose = pose_from_json(*cp, "camera_pose");

  const json& ents = array(require(j, "entities", ""), "entities");
  for (std::size_t i = 0; i < ents.size(); ++i) {
    const std::string p = at_index("entities", i);
    Entity e;
    e.id = text(require(ents[i], "id", p), join(p, "id"));
    const std::string kp_path = join(p, "keypoints_3d");
    const json& kps = array(require(ents[i], "keypoints_3d", p), kp_path);
    e.keypoints.resize(static_cast<Eigen::Index>(kps.size()), 3);
    for (std::size_t r = 0; r < kps.size(); ++r) {
      e.keypoints.row(static_cast<Eigen::Index>(r)) = vec3(kps[r], at_index(kp_path, r)).transpose();
    }
    if (const json* m = optional_field(ents[i], "mask_path", p)) e.mask_path = text(*m, join(p, "mask_path"));
    s.entities.push_back(std::move(e));
  }
  s.grasped_entity = text(require(j, "grasped_entity", ""), "grasped_entity");
  s.grasp_transform = pose_from_json(require(j, "grasp_transform", ""), "grasp_transform");

  const json& box = array(require(j, "workspace_aabb", ""), "workspace_aabb", 2);
  s.workspace.min = vec3(box[0], "workspace_aabb[0]");
  s.workspace.max = vec3(box[1], "workspace_aabb[1]");
  s.depth_path = text(require(j, "depth_path", ""), "depth_path");

  s.validate();
  if (load_depth) {
    const std::filesystem::path dp =
        std::filesystem::path(s.depth_path).is_absolute() ? std::filesystem::path(s.depth_path) : base_dir / s.depth_path;
    try {
      s.depth = image_from_tensor(load_tensor(dp));
    } catch (const SchemaError&) {
      throw;
    } catch (const Error& e) {
      throw SchemaError(e.code(), "depth_path", e.what());
    }
    s.validate();
  }
  return s;
}

json read_json_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error(Errc::io_failure, "cannot open " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  json j = json::parse(ss.str(), nullptr, false);
  if (j.is_discarded()) throw SchemaError(Errc::json_parse, path.string(), "malformed JSON");
  return j;
}

void write_json_file(const json& j, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw Error(Errc::io_failure, "cannot open " + path.string() + " for writing");
  os << j.dump(2) << '\n';
  if (!os) throw Error(Errc::io_failure, "write failed for " + path.string());
}

SceneDoc load_scene(const std::filesystem::path& path) {
  return scene_from_json(read_json_file(path), path.parent_path());
}

void save_scene(const SceneDoc& scene, const std::filesystem::path& path) {
  scene.validate();
  write_json_file(scene_to_json(scene), path);
  if (scene.depth.size() > 0) {
    const std::filesystem::path dp = std::filesystem::path(scene.depth_path).is_absolute()
                                         ? std::filesystem::path(scene.depth_path)
                                         : path.parent_path() / scene.depth_path;
    save_tensor(tensor_from_image(scene.depth), dp);
  }
}

// ---------------------------------------------------------------------------
// Constraints

json constraints_to_json(const ConstraintSet& cs) {
  json items = json::array();
  for (const auto& c : cs.constraints()) {
    json jc{{"name", c.name}, {"expr", c.expr.to_string()}};
    if (c.window_begin != 0.0 || c.window_end != 1.0) jc["window"] = json::array({c.window_begin, c.window_end});
    items.push_back(std::move(jc));
  }
  return json{{"constraints", items}};
}

ConstraintSet constraints_from_json(const json& j) {
  const json& items = array(require(j, "constraints", ""), "constraints");
  ConstraintSet cs;
  for (std::size_t i = 0; i < items.size(); ++i) {
    const std::string p = at_index("constraints", i);
    Constraint c;
    c.name = text(require(items[i], "name", p), join(p, "name"));
    if (c.name.empty()) fail(join(p, "name"), "constraint name must be non-empty");
    for (const auto& prior : cs.constraints()) {
      if (prior.name == c.name) fail(join(p, "name"), "duplicate constraint name '" + c.name + "'", Errc::duplicate_id);
    }
    const std::string src = text(require(items[i], "expr", p), join(p, "expr"));
    try {
      c.expr = ConstraintExpr::parse(src);
    } catch (const ParseError& e) {
      throw SchemaError(e.code(), join(p, "expr"), e.what());
    }
    if (const json* w = optional_field(items[i], "window", p)) {
      const std::string wp = join(p, "window");
      array(*w, wp, 2);
      c.window_begin = number((*w)[0], at_index(wp, 0));
      c.window_end = number((*w)[1], at_index(wp, 1));
      if (!(c.window_begin >= 0 && c.window_begin <= c.window_end && c.window_end <= 1)) {
        fail(wp, "window must satisfy 0 <= begin <= end <= 1");
      }
    }
    cs.add(std::move(c));
  }
  return cs;
}

ConstraintSet load_constraints(const std::filesystem::path& path) {
  return constraints_from_json(read_json_file(path));
}

void save_constraints(const ConstraintSet& cs, const std::filesystem::path& path) {
  write_json_file(constraints_to_json(cs), path);
}

// ---------------------------------------------------------------------------
// Report

void ReportDoc::validate() const {
  std::size_t accepted = 0;
  for (std::size_t i = 0; i < rollouts.size(); ++i) {
    if (rollouts[i].accepted) ++accepted;
    if (rollouts[i].index != i) fail(at_index("rollouts", i) + ".index", "records must be ordered by index");
  }
  if (!rollouts.empty() && !fallback && accepted != 1) {
    fail("rollouts", "exactly one record must be accepted unless fallback is set");
  }
  if (fallback && accepted != 0) fail("rollouts", "fallback reports cannot mark a record accepted");
  if (selected_index && *selected_index >= rollouts.size()) {
    fail("selected_index", "selected index out of range", Errc::dangling_reference);
  }
  if (!retarget_residuals.empty() && retarget_residuals.size() != initial_trajectory.size()) {
    fail("retarget.residuals", "residual count must equal trajectory length");
  }
}

namespace {

json trajectory_json(const std::vector<Pose>& traj) {
  json a = json::array();
  for (const auto& p : traj) a.push_back(pose_to_json(p));
  return a;
}

std::vector<Pose> trajectory_of(const json& j, const std::string& path) {
  array(j, path);
  std::vector<Pose> out;
  for (std::size_t i = 0; i < j.size(); ++i) out.push_back(pose_from_json(j[i], at_index(path, i)));
  return out;
}

}  // namespace

json report_to_json(const ReportDoc& r) {
  json rollouts = json::array();
  for (const auto& rec : r.rollouts) {
    json jr{{"index", rec.index}, {"s_vis", rec.s_vis}, {"accepted", rec.accepted}};
    jr["s_spatial"] = rec.s_spatial ? json(*rec.s_spatial) : json(nullptr);
    if (!rec.injected_mode.empty()) jr["injected_mode"] = rec.injected_mode;
    if (rec.error) jr["error"] = *rec.error;
    rollouts.push_back(std::move(jr));
  }
  json j{{"kind", "report"},
         {"rollouts", rollouts},
         {"selected_index", r.selected_index ? json(*r.selected_index) : json(nullptr)},
         {"fallback", r.fallback}};
  if (!r.initial_trajectory.empty()) {
    json rt{{"residuals", r.retarget_residuals}, {"initial_trajectory", trajectory_json(r.initial_trajectory)}};
    if (r.calibration_alpha && r.calibration_beta) {
      rt["calibration"] = {{"alpha", *r.calibration_alpha}, {"beta", *r.calibration_beta}};
    }
    j["retarget"] = std::move(rt);
  }
  if (r.converged) {
    json trace = json::array();
    for (const auto& t : r.trace) {
      trace.push_back({{"iteration", t.iteration},
                       {"objective", t.objective},
                       {"constraint_term", t.constraint_term},
                       {"fidelity_term", t.fidelity_term},
                       {"max_violation", t.max_violation}});
    }
    j["optimization"] = {{"converged", *r.converged},
                         {"iterations", r.iterations},
                         {"trace", trace},
                         {"final_trajectory", trajectory_json(r.final_trajectory)}};
  }
  if (r.outcome) {
    j["outcome"] = {{"success", r.outcome->success},
                    {"final_violation", r.outcome->final_violation},
                    {"failure_category", r.outcome->failure_category}};
  }
  return j;
}

ReportDoc report_from_json(const json& j) {
  if (!j.is_object()) fail("", "report document must be an object");
  if (const json* k = optional_field(j, "kind", ""); k && text(*k, "kind") != "report") {
    fail("kind", "not a report document");
  }
  ReportDoc r;
  const json& recs = array(require(j, "rollouts", ""), "rollouts");
  for (std::size_t i = 0; i < recs.size(); ++i) {
    const std::string p = at_index("rollouts", i);
    RolloutRecord rec;
    rec.index = count(require(recs[i], "index", p), join(p, "index"));
    rec.s_vis = number(require(recs[i], "s_vis", p), join(p, "s_vis"));
    rec.accepted = boolean(require(recs[i], "accepted", p), join(p, "accepted"));
    if (const json* s = optional_field(recs[i], "s_spatial", p)) rec.s_spatial = number(*s, join(p, "s_spatial"));
    if (const json* m = optional_field(recs[i], "injected_mode", p)) rec.injected_mode = text(*m, join(p, "injected_mode"));
    if (const json* e = optional_field(recs[i], "error", p)) rec.error = text(*e, join(p, "error"));
    r.rollouts.push_back(std::move(rec));
  }
  if (const json* s = optional_field(j, "selected_index", "")) r.selected_index = count(*s, "selected_index");
  r.fallback = boolean(require(j, "fallback", ""), "fallback");

  if (const json* rt = optional_field(j, "retarget", "")) {
    const json& res = array(require(*rt, "residuals", "retarget"), "retarget.residuals");
    for (std::size_t i = 0; i < res.size(); ++i) r.retarget_residuals.push_back(number(res[i], at_index("retarget.residuals", i)));
    r.initial_trajectory = trajectory_of(require(*rt, "initial_trajectory", "retarget"), "retarget.initial_trajectory");
    if (const json* cal = optional_field(*rt, "calibration", "retarget")) {
      r.calibration_alpha = number(require(*cal, "alpha", "retarget.calibration"), "retarget.calibration.alpha");
      r.calibration_beta = number(require(*cal, "beta", "retarget.calibration"), "retarget.calibration.beta");
    }
  }
  if (const json* opt = optional_field(j, "optimization", "")) {
    r.converged = boolean(require(*opt, "converged", "optimization"), "optimization.converged");
    r.iterations = count(require(*opt, "iterations", "optimization"), "optimization.iterations");
    const json& trace = array(require(*opt, "trace", "optimization"), "optimization.trace");
    for (std::size_t i = 0; i < trace.size(); ++i) {
      const std::string p = at_index("optimization.trace", i);
      TraceEntry t;
      t.iteration = count(require(trace[i], "iteration", p), join(p, "iteration"));
      t.objective = number(require(trace[i], "objective", p), join(p, "objective"));
      t.constraint_term = number(require(trace[i], "constraint_term", p), join(p, "constraint_term"));
      t.fidelity_term = number(require(trace[i], "fidelity_term", p), join(p, "fidelity_term"));
      t.max_violation = number(require(trace[i], "max_violation", p), join(p, "max_violation"));
      r.trace.push_back(t);
    }
    r.final_trajectory = trajectory_of(require(*opt, "final_trajectory", "optimization"), "optimization.final_trajectory");
  }
  if (const json* o = optional_field(j, "outcome", "")) {
    EpisodeSummary s;
    s.success = boolean(require(*o, "success", "outcome"), "outcome.success");
    s.final_violation = number(require(*o, "final_violation", "outcome"), "outcome.final_violation");
    s.failure_category = text(require(*o, "failure_category", "outcome"), "outcome.failure_category");
    r.outcome = s;
  }
  r.validate();
  return r;
}

ReportDoc load_report(const std::filesystem::path& path) { return report_from_json(read_json_file(path)); }

void save_report(const ReportDoc& r, const std::filesystem::path& path) {
  r.validate();
  write_json_file(report_to_json(r), path);
}

}  // namespace emboalign
