#include <doctest.h>

#include <filesystem>
#include <functional>
#include <fstream>
#include <sstream>

#include "emboalign/documents.hpp"
#include "emboalign/errors.hpp"
#include "emboalign/tasks.hpp"

using namespace emboalign;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const fs::path kData = EMBOALIGN_TEST_DATA;

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("emboalign_docs_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string schema_path(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const SchemaError& e) {
    return e.path();
  }
  FAIL("no SchemaError");
  return {};
}

}  // namespace

TEST_SUITE("documents") {
  TEST_CASE("golden documents round trip byte for byte") {
    const fs::path out = scratch("golden");
    const SceneDoc scene = scene_from_json(read_json_file(kData / "golden/scene.json"), kData / "golden", false);
    write_json_file(scene_to_json(scene), out / "scene.json");
    CHECK(slurp(out / "scene.json") == slurp(kData / "golden/scene.json"));

    save_constraints(load_constraints(kData / "golden/constraints.json"), out / "constraints.json");
    CHECK(slurp(out / "constraints.json") == slurp(kData / "golden/constraints.json"));

    save_report(load_report(kData / "golden/report.json"), out / "report.json");
    CHECK(slurp(out / "report.json") == slurp(kData / "golden/report.json"));
  }

  TEST_CASE("scene save and load keeps depth") {
    const fs::path out = scratch("scene");
    const SceneDoc scene = build_task_scene(TaskTemplate::pour);
    save_scene(scene, out / "scene.json");
    REQUIRE(fs::exists(out / "depth.eatn"));
    const SceneDoc back = load_scene(out / "scene.json");
    CHECK(back.depth.rows() == scene.depth.rows());
    CHECK((back.depth == scene.depth.cast<float>().cast<double>()).all());
    CHECK(back.keypoint_count() == scene.keypoint_count());
    CHECK(back.grasped_entity == scene.grasped_entity);
    CHECK(back.initial_keypoints().isApprox(scene.initial_keypoints(), 0));
  }

  TEST_CASE("scene accessors") {
    const SceneDoc scene = build_task_scene(TaskTemplate::place);
    std::size_t offset = 0;
    for (const auto& e : scene.entities) {
      CHECK(scene.entity_offset(e.id) == offset);
      offset += static_cast<std::size_t>(e.keypoints.rows());
    }
    CHECK(scene.keypoint_count() == offset);
    const auto idx = scene.grasped_indices();
    CHECK(idx.size() == static_cast<std::size_t>(scene.grasped().keypoints.rows()));
    CHECK(idx.front() == scene.entity_offset(scene.grasped_entity));
    CHECK_THROWS_AS(scene.entity("nope"), Error);
  }

  TEST_CASE("scene schema errors carry paths") {
    const json valid = read_json_file(kData / "golden/scene.json");
    auto broken = [&](auto mutate) {
      json j = valid;
      mutate(j);
      return schema_path([&] { scene_from_json(j, kData / "golden", false); });
    };
    CHECK(broken([](json& j) { j["entities"][1]["keypoints_3d"][0][2] = "x"; }) == "entities[1].keypoints_3d[0][2]");
    CHECK(broken([](json& j) { j.erase("grasped_entity"); }) == "grasped_entity");
    CHECK(broken([](json& j) { j["intrinsics"]["fx"] = -3; }).rfind("intrinsics", 0) == 0);
    CHECK(broken([](json& j) { j["entities"][1]["id"] = j["entities"][0]["id"]; }).rfind("entities", 0) == 0);
    CHECK(broken([](json& j) { j["grasped_entity"] = "ghost"; }) == "grasped_entity");
  }

  TEST_CASE("constraints schema") {
    const json ok = json::parse(R"j({"constraints": [{"name": "a", "expr": "(z (kp 0))", "window": [0.2, 0.9]}]})j");
    const ConstraintSet cs = constraints_from_json(ok);
    REQUIRE(cs.size() == 1);
    CHECK(cs.constraints()[0].window_begin == 0.2);
    CHECK(constraints_to_json(cs) == ok);
    // the default window is omitted when writing
    const json plain = json::parse(R"j({"constraints": [{"name": "a", "expr": "(z (kp 0))"}]})j");
    CHECK(constraints_to_json(constraints_from_json(plain)) == plain);

    try {
      constraints_from_json(json::parse(R"j({"constraints": [{"name": "a", "expr": "(norm 3)"}]})j"));
      FAIL("no error");
    } catch (const SchemaError& e) {
      CHECK(e.code() == Errc::type_mismatch);
      CHECK(e.path() == "constraints[0].expr");
    }
    CHECK(schema_path([] {
            constraints_from_json(json::parse(R"j({"constraints": [{"name": "a", "expr": "1", "window": [0.9, 0.1]}]})j"));
          }) == "constraints[0].window");
  }

  TEST_CASE("report validation") {
    ReportDoc r;
    r.rollouts = {{0, 0.1, 0.0, true, "none", {}}, {1, 0.2, {}, false, "none", {}}};
    r.selected_index = 0;
    CHECK_NOTHROW(r.validate());
    const ReportDoc back = report_from_json(report_to_json(r));
    CHECK(report_to_json(back) == report_to_json(r));
    CHECK_FALSE(back.rollouts[1].s_spatial.has_value());

    ReportDoc two = r;
    two.rollouts[1].accepted = true;
    CHECK_THROWS_AS(two.validate(), SchemaError);
    ReportDoc fb = r;
    fb.fallback = true;
    CHECK_THROWS_AS(fb.validate(), SchemaError);
    fb.rollouts[0].accepted = false;
    CHECK_NOTHROW(fb.validate());
    ReportDoc range = r;
    range.selected_index = 2;
    try {
      range.validate();
      FAIL("no error");
    } catch (const SchemaError& e) {
      CHECK(e.code() == Errc::dangling_reference);
    }
  }

  TEST_CASE("trajectory tensor layout") {
    const std::vector<Pose> traj{Pose::from_rotation_vector(Vec3(0, 0, 0.5), Vec3(0.1, 0.2, 0.3)),
                                 Pose::from_translation(Vec3(-0.25, 0, 1))};
    const Tensor t = trajectory_to_tensor(traj);
    CHECK(t.dims() == std::vector<std::uint32_t>{2, 7});
    CHECK(t[7] == -0.25f);
    CHECK(t[10] == 1.0f);  // identity quaternion w
    const auto back = trajectory_from_tensor(t);
    REQUIRE(back.size() == 2);
    CHECK((back[0].translation() - traj[0].translation()).norm() < 1e-7);
    CHECK(rotation_distance(back[0].rotation(), traj[0].rotation()) < 1e-6);
    CHECK_THROWS_AS(trajectory_from_tensor(Tensor({2, 6})), Error);
  }

  TEST_CASE("malformed JSON is a typed error") {
    const fs::path out = scratch("bad");
    std::ofstream(out / "bad.json") << "{\"a\": ";
    try {
      read_json_file(out / "bad.json");
      FAIL("no error");
    } catch (const SchemaError& e) {
      CHECK(e.code() == Errc::json_parse);
    }
    CHECK_THROWS_AS(read_json_file(out / "missing.json"), Error);
  }
}
