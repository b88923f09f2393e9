#include "emboalign/rollout.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include <Eigen/QR>

#include "emboalign/errors.hpp"
#include "emboalign/seeding.hpp"

namespace emboalign {

using nlohmann::json;

std::string_view to_string(HallucinationMode m) {
  switch (m) {
    case HallucinationMode::none: return "none";
    case HallucinationMode::deformation: return "deformation";
    case HallucinationMode::disappearance: return "disappearance";
    case HallucinationMode::misplacement: return "misplacement";
    case HallucinationMode::wrong_object: return "wrong_object";
  }
  return "none";
}

HallucinationMode parse_hallucination_mode(std::string_view name) {
  if (name == "none") return HallucinationMode::none;
  for (auto m : kHallucinationModes) {
    if (to_string(m) == name) return m;
  }
  throw Error(Errc::invalid_argument, "unknown hallucination mode '" + std::string(name) + "'");
}

double default_magnitude(HallucinationMode m) {
  switch (m) {
    case HallucinationMode::deformation: return 0.02;
    case HallucinationMode::misplacement: return 0.08;
    default: return 0.0;
  }
}

HallucinationSpec sample_hallucination(const HallucinationMix& mix, std::uint64_t seed) {
  if (!(mix.rate >= 0 && mix.rate <= 1)) throw Error(Errc::invalid_argument, "hallucination rate must lie in [0, 1]");
  std::mt19937_64 rng(derive_seed(seed, "hallucination"));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  HallucinationSpec spec;
  spec.seed = seed;
  const double draw = unit(rng);
  const double pick = unit(rng);
  spec.onset_frac = 0.2 + 0.3 * unit(rng);
  if (draw < mix.rate && !mix.modes.empty()) {
    const auto i = std::min(mix.modes.size() - 1, static_cast<std::size_t>(pick * static_cast<double>(mix.modes.size())));
    spec.mode = mix.modes[i];
    spec.magnitude = spec.mode == HallucinationMode::deformation    ? mix.deformation_magnitude
                     : spec.mode == HallucinationMode::misplacement ? mix.misplacement_magnitude
                                                                    : 0.0;
  }
  return spec;
}

void Rollout::validate(const Intrinsics& intr) const {
  const auto T = frames.rows();
  const auto K = visibility.cols();
  if (T < 1 || K < 1) throw Error(Errc::invalid_argument, "rollout has no frames or keypoints");
  if (visibility.rows() != T || depth.rows() != T || depth.cols() != K ||
      tracks.size() != static_cast<std::size_t>(T)) {
    throw Error(Errc::invalid_argument, "rollout arrays disagree on T or K");
  }
  if (depth_frame1.rows() != intr.height || depth_frame1.cols() != intr.width) {
    throw Error(Errc::invalid_argument, "frame-1 depth does not match the image size");
  }
  for (Eigen::Index t = 0; t < T; ++t) {
    if (tracks[t].rows() != K) throw Error(Errc::invalid_argument, "track frame has wrong keypoint count");
    for (Eigen::Index k = 0; k < K; ++k) {
      if (visibility(t, k) && !intr.contains(tracks[t].row(k).transpose())) {
        throw Error(Errc::invalid_argument, "visible track outside the image at frame " + std::to_string(t + 1));
      }
    }
  }
}

GeneratedRollout generate_rollout(const SceneDoc& scene, TaskTemplate task, const HallucinationSpec& spec,
                                  const NoiseParams& noise, std::size_t steps) {
  if (steps < 8) throw Error(Errc::invalid_argument, "rollouts need at least 8 frames");
  if (!(spec.magnitude >= 0) || !std::isfinite(spec.magnitude)) {
    throw Error(Errc::invalid_argument, "hallucination magnitude must be finite and >= 0");
  }
  if (!(spec.onset_frac >= 0 && spec.onset_frac <= 1)) {
    throw Error(Errc::invalid_argument, "onset_frac must lie in [0, 1]");
  }
  if (!(noise.depth_alpha > 0)) throw Error(Errc::invalid_argument, "depth_alpha must be positive");

  const TaskMotion motion = task_motion(task, scene);
  const std::size_t K = scene.keypoint_count();
  const std::size_t g0 = scene.entity_offset(scene.grasped_entity);
  const Points3& grasped0 = scene.grasped().keypoints;
  const std::size_t gK = static_cast<std::size_t>(grasped0.rows());
  const KeypointConfig initial = scene.initial_keypoints();
  const double T = static_cast<double>(steps);
  const double settle = motion.settle_u();

  std::mt19937_64 rng_place(derive_seed(spec.seed, "placement"));
  std::mt19937_64 rng_mode(derive_seed(spec.seed, "mode"));
  std::mt19937_64 rng_track(derive_seed(spec.seed, "track"));
  std::mt19937_64 rng_depth(derive_seed(spec.seed, "depth"));
  std::mt19937_64 rng_map(derive_seed(spec.seed, "depth_map"));
  std::normal_distribution<double> n01(0.0, 1.0);

  const Vec3 jitter(noise.placement_sigma * n01(rng_place), noise.placement_sigma * n01(rng_place), 0.0);
  const auto affected = [&](std::size_t t) {
    return spec.mode != HallucinationMode::none && static_cast<double>(t) > spec.onset_frac * T;
  };
  const double u_onset = std::max(0.0, (spec.onset_frac * T - 1.0) / (T - 1.0));
  const std::size_t frozen_t = std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(spec.onset_frac * T)));

  Vec3 misplace = Vec3::Zero();
  if (spec.mode == HallucinationMode::misplacement) {
    const double theta = std::uniform_real_distribution<double>(0.0, 2.0 * std::numbers::pi)(rng_mode);
    misplace = spec.magnitude * Vec3(std::cos(theta), std::sin(theta), 0.0);
  }
  std::size_t other = 0;
  if (spec.mode == HallucinationMode::wrong_object) {
    if (scene.entities.size() < 2) throw Error(Errc::invalid_argument, "wrong_object needs a second entity");
    std::vector<std::size_t> candidates;
    for (std::size_t e = 0; e < scene.entities.size(); ++e) {
      if (scene.entities[e].id != scene.grasped_entity) candidates.push_back(e);
    }
    other = candidates[std::uniform_int_distribution<std::size_t>(0, candidates.size() - 1)(rng_mode)];
  }

  const auto nominal_pose = [&](std::size_t t) {
    const double u = (static_cast<double>(t) - 1.0) / (T - 1.0);
    const Pose d = object_pose_at(motion, u);
    Vec3 shift = jitter * ease(u / settle);
    if (spec.mode == HallucinationMode::misplacement && static_cast<double>(t) > spec.onset_frac * T) {
      const double span = settle - u_onset;
      shift += misplace * (span > 0 ? ease((u - u_onset) / span) : 1.0);
    }
    return Pose(d.rotation(), d.translation() + shift);
  };

  GeneratedRollout out;
  out.truth.reserve(steps);
  const Pose frozen_pose = nominal_pose(frozen_t);
  for (std::size_t t = 1; t <= steps; ++t) {
    KeypointConfig k = initial;
    Pose obj = nominal_pose(t);
    if (spec.mode == HallucinationMode::wrong_object && affected(t)) {
      const Points3& pts = scene.entities[other].keypoints;
      const Vec3 c = pts.colwise().mean().transpose();
      const Mat3 r = obj.rotation() * frozen_pose.rotation().transpose();
      const Vec3 moved = apply(obj, motion.pivot) - apply(frozen_pose, motion.pivot);
      const std::size_t o0 = scene.entity_offset(scene.entities[other].id);
      for (Eigen::Index j = 0; j < pts.rows(); ++j) {
        const Vec3 p = pts.row(j).transpose();
        k.row(static_cast<Eigen::Index>(o0) + j) = (c + moved + r * (p - c)).transpose();
      }
      obj = frozen_pose;
    }
    k.middleRows(static_cast<Eigen::Index>(g0), static_cast<Eigen::Index>(gK)) = apply(obj, grasped0);
    if (spec.mode == HallucinationMode::deformation && affected(t)) {
      for (std::size_t j = 0; j < gK; ++j) {
        for (int c = 0; c < 3; ++c) k(static_cast<Eigen::Index>(g0 + j), c) += spec.magnitude * n01(rng_mode);
      }
    }
    out.truth.push_back(std::move(k));
    out.object_poses.push_back(obj);
    out.ee_path.push_back(compose(obj, scene.grasp_transform));
  }

  Rollout& r = out.rollout;
  const Intrinsics& intr = scene.intrinsics;
  const Pose cam_from_world = invert(scene.camera_pose);
  r.frames = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(steps), static_cast<Eigen::Index>(3 * K + 1));
  r.depth = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(steps), static_cast<Eigen::Index>(K));
  r.visibility = VisibilityMatrix::Constant(static_cast<Eigen::Index>(steps), static_cast<Eigen::Index>(K), false);
  r.tracks.assign(steps, Tracks::Zero(static_cast<Eigen::Index>(K), 2));
  std::vector<std::optional<std::pair<Vec2, double>>> last(K);

  for (std::size_t t = 0; t < steps; ++t) {
    const auto ti = static_cast<Eigen::Index>(t);
    double depth_sum = 0;
    std::size_t depicted = 0;
    for (std::size_t j = 0; j < K; ++j) {
      const auto ji = static_cast<Eigen::Index>(j);
      const Vec3 pw = out.truth[t].row(ji).transpose();
      const Vec3 pc = apply(cam_from_world, pw);
      if (pc.z() < 0.05) {
        throw Error(Errc::behind_camera, "keypoint " + std::to_string(j) + " within 5 cm of the camera plane at frame " +
                                             std::to_string(t + 1));
      }
      const double nx = n01(rng_track), ny = n01(rng_track), nd = n01(rng_depth);
      const bool hidden = spec.mode == HallucinationMode::disappearance && affected(t + 1) && j >= g0 && j < g0 + gK;
      const Vec2 px = project(pc, intr) + noise.track_sigma_px * Vec2(nx, ny);
      const double est = (pc.z() - noise.depth_beta) / noise.depth_alpha + noise.depth_sigma * nd;
      const bool visible = !hidden && intr.contains(px);
      if (visible) {
        r.tracks[t].row(ji) = px.transpose();
        r.depth(ti, ji) = est;
        last[j] = std::make_pair(px, est);
      } else if (last[j]) {
        r.tracks[t].row(ji) = last[j]->first.transpose();
        r.depth(ti, ji) = last[j]->second;
      } else {
        r.tracks[t](ji, 0) = std::clamp(px.x(), 0.0, intr.width - 1.0);
        r.tracks[t](ji, 1) = std::clamp(px.y(), 0.0, intr.height - 1.0);
        r.depth(ti, ji) = (pc.z() - noise.depth_beta) / noise.depth_alpha;
      }
      r.visibility(ti, ji) = visible;
      if (!hidden) {
        r.frames.block<1, 3>(ti, static_cast<Eigen::Index>(3 * j)) = pw.transpose();
        depth_sum += pc.z();
        ++depicted;
      }
    }
    r.frames(ti, static_cast<Eigen::Index>(3 * K)) = depicted ? depth_sum / static_cast<double>(depicted) : 0.0;
  }

  const Mask valid = default_depth_validity(scene.depth);
  r.depth_frame1 = Image::Zero(scene.depth.rows(), scene.depth.cols());
  for (Eigen::Index i = 0; i < scene.depth.size(); ++i) {
    const double nd = n01(rng_map);
    if (valid.data()[i]) {
      r.depth_frame1.data()[i] = (scene.depth.data()[i] - noise.depth_beta) / noise.depth_alpha + noise.depth_sigma * nd;
    }
  }

  r.meta.seed = spec.seed;
  r.meta.task = std::string(to_string(task));
  r.meta.injected_mode = std::string(to_string(spec.mode));
  r.meta.magnitude = spec.magnitude;
  r.meta.onset_frac = spec.onset_frac;
  return out;
}

namespace {

Tensor matrix_tensor(const Eigen::MatrixXd& m) {
  Tensor t({static_cast<std::uint32_t>(m.rows()), static_cast<std::uint32_t>(m.cols())});
  std::size_t i = 0;
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) t[i++] = static_cast<float>(m(r, c));
  }
  return t;
}

Eigen::MatrixXd tensor_matrix(const Tensor& t) {
  Eigen::MatrixXd m(t.dim(0), t.dim(1));
  std::size_t i = 0;
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = t[i++];
  }
  return m;
}

Tensor load_shaped(const std::filesystem::path& path, std::size_t rank) {
  Tensor t;
  try {
    t = load_tensor(path);
  } catch (const Error& e) {
    throw SchemaError(e.code(), path.filename().string(), e.what());
  }
  if (t.rank() != rank) {
    throw SchemaError(Errc::schema_violation, path.filename().string(),
                      "expected a rank-" + std::to_string(rank) + " tensor");
  }
  return t;
}

}  // namespace

void save_rollout(const Rollout& r, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const auto T = static_cast<std::uint32_t>(r.steps());
  const auto K = static_cast<std::uint32_t>(r.keypoints());
  save_tensor(matrix_tensor(r.frames), dir / "frames.eatn");
  Tensor tracks({T, K, 2});
  Tensor vis({T, K});
  std::size_t i = 0;
  for (std::uint32_t t = 0; t < T; ++t) {
    for (std::uint32_t k = 0; k < K; ++k) {
      tracks[2 * i] = static_cast<float>(r.tracks[t](k, 0));
      tracks[2 * i + 1] = static_cast<float>(r.tracks[t](k, 1));
      vis[i] = r.visibility(t, k) ? 1.0f : 0.0f;
      ++i;
    }
  }
  save_tensor(tracks, dir / "tracks.eatn");
  save_tensor(matrix_tensor(r.depth), dir / "depth.eatn");
  save_tensor(tensor_from_image(r.depth_frame1), dir / "depth_frame1.eatn");
  save_tensor(vis, dir / "visibility.eatn");
  const json meta{{"seed", r.meta.seed},
                  {"task", r.meta.task},
                  {"injected_mode", r.meta.injected_mode},
                  {"magnitude", r.meta.magnitude},
                  {"onset_frac", r.meta.onset_frac}};
  write_json_file(meta, dir / "meta.json");
}

Rollout load_rollout(const std::filesystem::path& dir) {
  Rollout r;
  const Tensor frames = load_shaped(dir / "frames.eatn", 2);
  const Tensor tracks = load_shaped(dir / "tracks.eatn", 3);
  const Tensor depth = load_shaped(dir / "depth.eatn", 2);
  const Tensor vis = load_shaped(dir / "visibility.eatn", 2);
  const std::uint32_t T = frames.dim(0);
  const std::uint32_t K = vis.dim(1);
  if (vis.dim(0) != T || tracks.dim(0) != T || tracks.dim(1) != K || tracks.dim(2) != 2 || depth.dim(0) != T ||
      depth.dim(1) != K) {
    throw SchemaError(Errc::schema_violation, dir.filename().string(), "rollout arrays disagree on T or K");
  }
  r.frames = tensor_matrix(frames);
  r.depth = tensor_matrix(depth);
  r.depth_frame1 = image_from_tensor(load_shaped(dir / "depth_frame1.eatn", 2));
  r.visibility.resize(T, K);
  r.tracks.assign(T, Tracks(K, 2));
  std::size_t i = 0;
  for (std::uint32_t t = 0; t < T; ++t) {
    for (std::uint32_t k = 0; k < K; ++k) {
      if (vis[i] != 0.0f && vis[i] != 1.0f) {
        throw SchemaError(Errc::schema_violation, "visibility.eatn", "entries must be 0 or 1");
      }
      r.visibility(t, k) = vis[i] == 1.0f;
      r.tracks[t](k, 0) = tracks[2 * i];
      r.tracks[t](k, 1) = tracks[2 * i + 1];
      ++i;
    }
  }
  const json meta = read_json_file(dir / "meta.json");
  try {
    if (!meta.is_object()) throw SchemaError(Errc::schema_violation, "meta", "expected an object");
    r.meta.seed = meta.at("seed").get<std::uint64_t>();
    r.meta.task = meta.at("task").get<std::string>();
    r.meta.injected_mode = meta.at("injected_mode").get<std::string>();
    r.meta.magnitude = meta.at("magnitude").get<double>();
    r.meta.onset_frac = meta.at("onset_frac").get<double>();
  } catch (const json::exception& e) {
    throw SchemaError(Errc::schema_violation, "meta", e.what());
  }
  return r;
}

ToyWorldModel::ToyWorldModel(std::size_t feature_dim, const WorldModelParams& params, std::uint64_t seed)
    : params_(params) {
  if (params.latent_dim < 4) throw Error(Errc::invalid_argument, "latent dimension must be at least 4");
  if (params.context < 2) throw Error(Errc::window_too_short, "context must hold at least 2 frames");
  if (params.horizon < 1 || params.stride < 1) throw Error(Errc::invalid_argument, "horizon and stride must be >= 1");
  if (feature_dim < 1) throw Error(Errc::invalid_argument, "feature dimension must be positive");
  const auto F = static_cast<Eigen::Index>(feature_dim);
  const auto d = static_cast<Eigen::Index>(params.latent_dim);
  const Eigen::Index rows = std::max(F, d), cols = std::min(F, d);
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n01(0.0, 1.0);
  Eigen::MatrixXd g(rows, cols);
  for (Eigen::Index i = 0; i < g.size(); ++i) g.data()[i] = n01(rng);
  const Eigen::MatrixXd q = Eigen::HouseholderQR<Eigen::MatrixXd>(g).householderQ() * Eigen::MatrixXd::Identity(rows, cols);
  // Orthonormal columns when F >= d, orthonormal rows (an isometry) when F < d.
  map_ = F >= d ? q : Eigen::MatrixXd(q.transpose());
}

Eigen::VectorXd ToyWorldModel::encode(const Eigen::MatrixXd& window) const {
  if (window.rows() < 1 || window.cols() != map_.rows()) {
    throw Error(Errc::invalid_argument, "window does not match the model's feature dimension");
  }
  return map_.transpose() * window.colwise().mean().transpose();
}

Eigen::VectorXd ToyWorldModel::predict(const Eigen::MatrixXd& context, std::size_t horizon) const {
  if (context.rows() < 2) throw Error(Errc::window_too_short, "prediction needs at least 2 context frames");
  if (context.cols() != map_.rows()) throw Error(Errc::invalid_argument, "context does not match the model's feature dimension");
  const Eigen::Index n = context.rows();
  const Eigen::VectorXd last = map_.transpose() * context.row(n - 1).transpose();
  const Eigen::VectorXd vel = last - map_.transpose() * context.row(n - 2).transpose();
  Eigen::VectorXd sum = map_.transpose() * context.colwise().sum().transpose();
  for (std::size_t m = 1; m <= horizon; ++m) sum += last + static_cast<double>(m) * vel;
  return sum / static_cast<double>(n + static_cast<Eigen::Index>(horizon));
}

double visual_plausibility(const Eigen::MatrixXd& frames, const LatentWorldModel& wm) {
  const auto& p = wm.params();
  const auto T = static_cast<std::size_t>(frames.rows());
  if (T < p.context + p.horizon) {
    throw Error(Errc::window_too_short, "rollout of " + std::to_string(T) + " frames is shorter than C + M");
  }
  double total = 0;
  std::size_t anchors = 0;
  for (std::size_t s = p.context; s + p.horizon <= T; s += p.stride) {
    const auto start = static_cast<Eigen::Index>(s - p.context);
    const Eigen::VectorXd predicted = wm.predict(frames.middleRows(start, static_cast<Eigen::Index>(p.context)), p.horizon);
    const Eigen::VectorXd observed =
        wm.encode(frames.middleRows(start, static_cast<Eigen::Index>(p.context + p.horizon)));
    const double denom = predicted.norm() * observed.norm();
    const double discrepancy = denom > 0 ? 1.0 - predicted.dot(observed) / denom : 1.0;
    total += std::clamp(discrepancy, 0.0, 2.0);
    ++anchors;
  }
  return total / static_cast<double>(anchors);
}

}  // namespace emboalign
