#include "anatpose/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>

#include "anatpose/anatomy.hpp"
#include "anatpose/io.hpp"

namespace anatpose {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

Vec3 row(const Mat3& m, int i) { return m.row(i).transpose(); }

// Unit vector orthogonal to axis, biased towards the (normalized) projection
// of prefer onto the plane, with isotropic jitter.
Vec3 biased_perpendicular(const Vec3& axis, const Vec3& prefer, double jitter, Rng& rng) {
  Vec3 p = prefer - prefer.dot(axis) * axis;
  if (p.norm() < 1e-9) p = Vec3::Zero();
  Vec3 noise = rng.unit_vector();
  noise -= noise.dot(axis) * axis;
  Vec3 v = p + jitter * noise;
  double n = v.norm();
  while (n < 1e-9) {
    v = rng.unit_vector();
    v -= v.dot(axis) * axis;
    n = v.norm();
  }
  return v / n;
}

int parse_split_index(const std::string& name) {
  for (int i = 0; i < 4; ++i) {
    if (name == kSplitNames[i]) return i;
  }
  throw std::invalid_argument("unknown split '" + name + "'");
}

}  // namespace

BodyTemplate default_body_template() {
  BodyTemplate t;
  SkeletonSpec& s = t.skeleton;
  s.joint_names = {"pelvis",        "spine",       "neck",       "head",
                   "left_hip",      "left_knee",   "left_foot",  "right_hip",
                   "right_knee",    "right_foot",  "left_shoulder", "left_elbow",
                   "left_hand",     "right_shoulder", "right_elbow", "right_hand"};
  s.bones = {{0, 1}, {1, 2}, {2, 3},  {0, 4},  {4, 5},   {5, 6},   {0, 7},  {7, 8},
             {8, 9}, {2, 10}, {10, 11}, {11, 12}, {2, 13}, {13, 14}, {14, 15}};
  s.symmetric_pairs = {{3, 6}, {4, 7}, {5, 8}, {9, 12}, {10, 13}, {11, 14}};
  s.connected_pairs = {{0, 1}, {1, 2}, {1, 9}, {1, 12}, {3, 4},   {4, 5},
                       {6, 7}, {7, 8}, {9, 10}, {10, 11}, {12, 13}, {13, 14}};
  s.root_joint_index = 0;
  s.joint_groups = {{"feet", {6, 9}},     {"knees", {5, 8}},     {"hips", {4, 7}},
                    {"core", {0, 1}},     {"head", {2, 3}},      {"shoulders", {10, 13}},
                    {"elbows", {11, 14}}, {"hands", {12, 15}}};

  t.bone_lengths = Vec(15);
  t.bone_lengths << 0.25, 0.25, 0.15, 0.11, 0.42, 0.44, 0.11, 0.42, 0.44, 0.18, 0.30, 0.27, 0.18,
      0.30, 0.27;

  t.capsule_radii = Vec(15);
  t.capsule_radii << 0.11, 0.10, 0.09, 0.07, 0.06, 0.045, 0.07, 0.06, 0.045, 0.055, 0.042, 0.035,
      0.055, 0.042, 0.035;

  // Sampling ranges for the normalized dot of each connected pair, ordered as
  // in connected_pairs.
  t.angle_lo = Vec(12);
  t.angle_hi = Vec(12);
  t.angle_lo << 0.88, 0.75, -0.45, -0.45, -0.20, 0.10, -0.20, 0.10, -0.30, 0.10, -0.30, 0.10;
  t.angle_hi << 1.00, 1.00, 0.30, 0.30, 0.70, 1.00, 0.70, 1.00, 0.80, 1.00, 0.80, 1.00;

  t.canonical_directions = Mat3(15, 3);
  t.canonical_directions << 0.0, 1.0, 0.0,    // pelvis -> spine
      0.0, 1.0, 0.0,                          // spine -> neck
      0.0, 1.0, 0.15,                         // neck -> head
      0.95, -0.2, 0.0,                        // pelvis -> left_hip
      0.1, -1.0, 0.0,                         // left_hip -> left_knee
      0.0, -1.0, 0.1,                         // left_knee -> left_foot
      -0.95, -0.2, 0.0,                       // pelvis -> right_hip
      -0.1, -1.0, 0.0,                        // right_hip -> right_knee
      0.0, -1.0, 0.1,                         // right_knee -> right_foot
      0.95, -0.1, 0.0,                        // neck -> left_shoulder
      0.25, -1.0, 0.0,                        // left_shoulder -> left_elbow
      0.1, -1.0, 0.1,                         // left_elbow -> left_hand
      -0.95, -0.1, 0.0,                       // neck -> right_shoulder
      -0.25, -1.0, 0.0,                       // right_shoulder -> right_elbow
      -0.1, -1.0, 0.1;                        // right_elbow -> right_hand
  for (Eigen::Index i = 0; i < t.canonical_directions.rows(); ++i) {
    t.canonical_directions.row(i).normalize();
  }
  return t;
}

void save_body_template(const fs::path& path, const BodyTemplate& tmpl) {
  const fs::path skel_path = path.parent_path() / (path.stem().string() + "_skeleton.json");
  io::save_skeleton(skel_path, tmpl.skeleton);
  json j;
  j["skeleton"] = skel_path.filename().string();
  auto vec = [](const Vec& v) {
    json a = json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
    return a;
  };
  j["bone_lengths"] = vec(tmpl.bone_lengths);
  j["angle_lo"] = vec(tmpl.angle_lo);
  j["angle_hi"] = vec(tmpl.angle_hi);
  j["capsule_radii"] = vec(tmpl.capsule_radii);
  json dirs = json::array();
  for (Eigen::Index i = 0; i < tmpl.canonical_directions.rows(); ++i) {
    dirs.push_back(json::array({tmpl.canonical_directions(i, 0), tmpl.canonical_directions(i, 1),
                                tmpl.canonical_directions(i, 2)}));
  }
  j["canonical_directions"] = dirs;
  io::write_text_file(path, j.dump(2) + "\n");
}

BodyTemplate load_body_template(const fs::path& path) {
  json j;
  {
    std::istringstream in(io::read_text_file(path));
    in >> j;
  }
  BodyTemplate t;
  t.skeleton = io::load_skeleton(path.parent_path() / j.at("skeleton").get<std::string>());
  auto vec = [](const json& a) {
    Vec v(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) v[static_cast<Eigen::Index>(i)] = a[i].get<double>();
    return v;
  };
  t.bone_lengths = vec(j.at("bone_lengths"));
  t.angle_lo = vec(j.at("angle_lo"));
  t.angle_hi = vec(j.at("angle_hi"));
  t.capsule_radii = vec(j.at("capsule_radii"));
  const json& dirs = j.at("canonical_directions");
  t.canonical_directions = Mat3(dirs.size(), 3);
  for (std::size_t i = 0; i < dirs.size(); ++i) {
    for (int c = 0; c < 3; ++c) {
      t.canonical_directions(static_cast<Eigen::Index>(i), c) = dirs[i][c].get<double>();
    }
  }
  return t;
}

ShiftMode parse_shift_mode(const std::string& name) {
  if (name == "cover") return ShiftMode::Cover;
  if (name == "sensor") return ShiftMode::Sensor;
  if (name == "environment") return ShiftMode::Environment;
  throw std::invalid_argument("unknown shift mode '" + name + "'");
}

std::string to_string(ShiftMode mode) {
  switch (mode) {
    case ShiftMode::Cover: return "cover";
    case ShiftMode::Sensor: return "sensor";
    case ShiftMode::Environment: return "environment";
  }
  throw std::invalid_argument("unknown shift mode");
}

Pose sample_pose(const BodyTemplate& tmpl, double subject_scale, Rng& rng) {
  const SkeletonSpec& spec = tmpl.skeleton;
  const int nb = spec.num_bones();
  for (int p = 0; p < spec.num_connected_pairs(); ++p) {
    if (tmpl.angle_lo[p] > tmpl.angle_hi[p]) {
      throw std::invalid_argument("sample_pose: empty angle range for pair " + std::to_string(p));
    }
  }

  // Per-bone length jitter, one draw per symmetric pair so left and right
  // lengths are equal.
  Vec jitter = Vec::Ones(nb);
  std::vector<char> assigned(nb, 0);
  for (const auto& [l, r] : spec.symmetric_pairs) {
    const double f = 1.0 + rng.uniform(-0.03, 0.03);
    jitter[l] = f;
    jitter[r] = f;
    assigned[l] = assigned[r] = 1;
  }
  for (int i = 0; i < nb; ++i) {
    if (!assigned[i]) jitter[i] = 1.0 + rng.uniform(-0.03, 0.03);
  }
  Vec lengths(nb);
  const Vec canonical = [&] {
    Vec c = tmpl.bone_lengths;
    for (const auto& [l, r] : spec.symmetric_pairs) c[r] = c[l];
    return c;
  }();
  for (int i = 0; i < nb; ++i) lengths[i] = canonical[i] * subject_scale * jitter[i];

  // Constraint lookup: at most one predecessor pair per bone in a tree.
  std::vector<int> pair_of_bone(nb, -1);
  for (int p = 0; p < spec.num_connected_pairs(); ++p) {
    pair_of_bone[spec.connected_pairs[p].second] = p;
  }
  // Bone ending at each joint (unique in a tree).
  std::vector<int> bone_into_joint(spec.num_joints(), -1);
  for (int i = 0; i < nb; ++i) bone_into_joint[spec.bones[i].second] = i;

  Mat3 joints = Mat3::Zero(spec.num_joints(), 3);
  const Vec3 root(rng.uniform(-0.10, 0.10), rng.uniform(-0.15, 0.15),
                  0.12 * subject_scale + rng.uniform(-0.01, 0.01));
  joints.row(spec.root_joint_index) = root.transpose();

  Mat3 directions = Mat3::Zero(nb, 3);
  std::vector<char> placed(spec.num_joints(), 0);
  placed[spec.root_joint_index] = 1;
  std::vector<char> bone_done(nb, 0);

  // Place bones in tree order: a bone is ready once its parent joint is.
  int remaining = nb;
  while (remaining > 0) {
    bool progress = false;
    for (int i = 0; i < nb; ++i) {
      if (bone_done[i]) continue;
      const auto [parent, child] = spec.bones[i];
      if (!placed[parent]) continue;

      Vec3 dir;
      const int pair = pair_of_bone[i];
      const int pred = bone_into_joint[parent];
      if (pair >= 0 && pred >= 0 && spec.connected_pairs[pair].first == pred) {
        // Draw the normalized dot inside the template range, then pick the
        // perpendicular component biased towards the canonical direction.
        const Vec3 axis = row(directions, pred);
        const double c = rng.uniform(tmpl.angle_lo[pair], tmpl.angle_hi[pair]);
        const Vec3 perp = biased_perpendicular(axis, row(tmpl.canonical_directions, i), 0.6, rng);
        dir = c * axis + std::sqrt(std::max(0.0, 1.0 - c * c)) * perp;
      } else {
        Vec3 noise = 0.25 * rng.unit_vector();
        noise.z() *= 0.4;  // keep the body roughly in the bed plane
        dir = (row(tmpl.canonical_directions, i) + noise).normalized();
      }
      directions.row(i) = dir.transpose();
      joints.row(child) = joints.row(parent) + (lengths[i] * dir).transpose();
      placed[child] = 1;
      bone_done[i] = 1;
      --remaining;
      progress = true;
    }
    if (!progress) throw std::logic_error("sample_pose: skeleton bones do not form a tree");
  }
  return Pose(std::move(joints));
}

PointCloud render_cloud(const Pose& pose, const BodyTemplate& tmpl, int points_per_bone,
                        double noise_sigma, Rng& rng) {
  if (points_per_bone < 1) throw std::invalid_argument("render_cloud: points_per_bone must be >= 1");
  const SkeletonSpec& spec = tmpl.skeleton;
  std::vector<Vec3> pts;
  pts.reserve(static_cast<std::size_t>(spec.num_bones()) * points_per_bone);
  for (int i = 0; i < spec.num_bones(); ++i) {
    const auto [parent, child] = spec.bones[i];
    const Vec3 a = pose.joints.row(parent).transpose();
    const Vec3 b = pose.joints.row(child).transpose();
    const Vec3 axis = b - a;
    const bool degenerate = axis.norm() <= 1e-12;
    for (int s = 0; s < points_per_bone; ++s) {
      // Degenerate bones sample the sphere around the joint instead.
      const Vec3 center = degenerate ? a : Vec3(a + rng.uniform() * axis);
      Vec3 p = center + tmpl.capsule_radii[i] * rng.unit_vector();
      if (noise_sigma > 0.0) {
        p += noise_sigma * Vec3(rng.normal(), rng.normal(), rng.normal());
      }
      if (p.z() >= 0.0) pts.push_back(p);  // camera-above-bed visibility proxy
    }
  }
  Mat3 points(pts.size(), 3);
  for (std::size_t i = 0; i < pts.size(); ++i) {
    points.row(static_cast<Eigen::Index>(i)) = pts[i].transpose();
  }
  return PointCloud(std::move(points));
}

PointCloud apply_domain_shift(const PointCloud& cloud, const ShiftConfig& shift, Rng& rng) {
  switch (shift.mode) {
    case ShiftMode::Cover: {
      Mat3 pts = cloud.points;
      if (shift.cover_smoothing > 0.0) {
        // Per-cell upper envelope with 3x3 grid-max smoothing.
        const double edge = shift.cover_smoothing;
        std::map<std::pair<long, long>, double> cell_max;
        std::vector<std::pair<long, long>> keys(pts.rows());
        for (Eigen::Index i = 0; i < pts.rows(); ++i) {
          const std::pair<long, long> key{static_cast<long>(std::floor(pts(i, 0) / edge)),
                                          static_cast<long>(std::floor(pts(i, 1) / edge))};
          keys[i] = key;
          auto [it, inserted] = cell_max.try_emplace(key, pts(i, 2));
          if (!inserted) it->second = std::max(it->second, pts(i, 2));
        }
        for (Eigen::Index i = 0; i < pts.rows(); ++i) {
          double env = pts(i, 2);
          for (long dx = -1; dx <= 1; ++dx) {
            for (long dy = -1; dy <= 1; ++dy) {
              const auto it = cell_max.find({keys[i].first + dx, keys[i].second + dy});
              if (it != cell_max.end()) env = std::max(env, it->second);
            }
          }
          pts(i, 2) = env;
        }
      }
      for (Eigen::Index i = 0; i < pts.rows(); ++i) {
        pts(i, 2) += shift.cover_offset + shift.cover_noise * rng.normal();
      }
      return PointCloud(std::move(pts));
    }
    case ShiftMode::Sensor: {
      Mat3 pts = cloud.points;
      for (Eigen::Index i = 0; i < pts.rows(); ++i) {
        for (int c = 0; c < 3; ++c) pts(i, c) += shift.sensor_noise * rng.normal();
      }
      std::vector<Eigen::Index> keep;
      for (Eigen::Index i = 0; i < pts.rows(); ++i) {
        if (shift.sensor_plane_normal.dot(pts.row(i).transpose()) >= shift.sensor_plane_offset) {
          keep.push_back(i);
        }
      }
      Mat3 out(keep.size(), 3);
      for (std::size_t i = 0; i < keep.size(); ++i) {
        out.row(static_cast<Eigen::Index>(i)) = pts.row(keep[i]);
      }
      return PointCloud(std::move(out));
    }
    case ShiftMode::Environment: {
      const Eigen::Index n = cloud.points.rows();
      Mat3 out(n + shift.clutter_count + shift.headboard_count, 3);
      out.topRows(n) = cloud.points;
      auto fill_box = [&rng](Mat3& m, Eigen::Index start, int count, const Vec3& lo, const Vec3& hi) {
        for (int i = 0; i < count; ++i) {
          for (int c = 0; c < 3; ++c) m(start + i, c) = rng.uniform(lo[c], hi[c]);
        }
      };
      fill_box(out, n, shift.clutter_count, shift.clutter_min, shift.clutter_max);
      fill_box(out, n + shift.clutter_count, shift.headboard_count, shift.headboard_min,
               shift.headboard_max);
      return PointCloud(std::move(out));
    }
  }
  throw std::invalid_argument("apply_domain_shift: unknown mode");
}

PointCloud crop_box(const PointCloud& cloud, const Vec3& lo, const Vec3& hi) {
  for (int c = 0; c < 3; ++c) {
    if (lo[c] > hi[c]) throw std::invalid_argument("crop_box: inverted box");
  }
  std::vector<Eigen::Index> keep;
  for (Eigen::Index i = 0; i < cloud.points.rows(); ++i) {
    bool inside = true;
    for (int c = 0; c < 3; ++c) {
      inside = inside && cloud.points(i, c) >= lo[c] && cloud.points(i, c) <= hi[c];
    }
    if (inside) keep.push_back(i);
  }
  Mat3 out(keep.size(), 3);
  for (std::size_t i = 0; i < keep.size(); ++i) {
    out.row(static_cast<Eigen::Index>(i)) = cloud.points.row(keep[i]);
  }
  return PointCloud(std::move(out));
}

PointCloud voxel_downsample(const PointCloud& cloud, double edge) {
  if (edge <= 0.0) throw std::invalid_argument("voxel_downsample: edge must be positive");
  struct Acc {
    Vec3 sum = Vec3::Zero();
    long count = 0;
  };
  std::map<std::array<long, 3>, Acc> voxels;
  for (Eigen::Index i = 0; i < cloud.points.rows(); ++i) {
    std::array<long, 3> key;
    for (int c = 0; c < 3; ++c) key[c] = static_cast<long>(std::floor(cloud.points(i, c) / edge));
    Acc& acc = voxels[key];
    acc.sum += cloud.points.row(i).transpose();
    acc.count += 1;
  }
  Mat3 out(voxels.size(), 3);
  Eigen::Index i = 0;
  for (const auto& [key, acc] : voxels) {
    out.row(i++) = (acc.sum / static_cast<double>(acc.count)).transpose();
  }
  return PointCloud(std::move(out));
}

std::vector<int> dedup_frames(const std::vector<Pose>& poses, double threshold) {
  if (poses.empty()) throw std::invalid_argument("dedup_frames: empty pose list");
  if (threshold < 0.0) throw std::invalid_argument("dedup_frames: negative threshold");
  std::vector<int> kept{0};
  for (std::size_t t = 1; t < poses.size(); ++t) {
    const Mat3 diff = poses[t].joints - poses[kept.back()].joints;
    const double max_move = diff.rowwise().norm().maxCoeff();
    if (max_move > threshold) kept.push_back(static_cast<int>(t));
  }
  return kept;
}

void generate_dataset(const fs::path& out_dir, const BodyTemplate& tmpl, const GenConfig& config,
                      int threads) {
  require_valid(tmpl.skeleton);
  if (config.counts.source_train < 1 || config.counts.target_train < 1 ||
      config.counts.target_val < 1 || config.counts.target_test < 1) {
    throw std::invalid_argument("generate_dataset: all split counts must be >= 1");
  }
  fs::create_directories(out_dir);

  const int counts[4] = {config.counts.source_train, config.counts.target_train,
                         config.counts.target_val, config.counts.target_test};

  // Disjoint per-split subject scales stand in for subject-level splitting.
  std::vector<std::vector<double>> subject_scales(4);
  for (int s = 0; s < 4; ++s) {
    Rng rng(mix_seed(config.seed, 0x500 + s));
    for (int j = 0; j < config.subjects_per_split; ++j) {
      subject_scales[s].push_back(rng.uniform(config.scale_lo, config.scale_hi));
    }
  }

  std::vector<Pose> source_poses(config.counts.source_train);
  for (int split = 0; split < 4; ++split) {
    const fs::path dir = out_dir / kSplitNames[split];
    fs::create_directories(dir);
    const bool shifted = split != 0;  // target splits carry the domain shift

    auto make_sample = [&, split](int i) {
      Rng rng(mix_seed(config.seed, (static_cast<std::uint64_t>(split) << 32) | static_cast<std::uint64_t>(i)));
      const double scale = subject_scales[split][i % config.subjects_per_split];
      Pose pose = sample_pose(tmpl, scale, rng);
      PointCloud cloud = render_cloud(pose, tmpl, config.points_per_bone, config.surface_noise, rng);
      if (shifted) cloud = apply_domain_shift(cloud, config.shift, rng);
      io::save_sample(dir, i, cloud, pose);
      if (split == 0) source_poses[i] = std::move(pose);
    };

    if (threads <= 1) {
      for (int i = 0; i < counts[split]; ++i) make_sample(i);
    } else {
      std::vector<std::thread> pool;
      std::atomic<int> next{0};
      for (int w = 0; w < threads; ++w) {
        pool.emplace_back([&] {
          for (int i = next.fetch_add(1); i < counts[split]; i = next.fetch_add(1)) make_sample(i);
        });
      }
      for (auto& th : pool) th.join();
    }
  }

  io::save_skeleton(out_dir / "skeleton.json", tmpl.skeleton);
  AnatomicalBounds bounds = derive_bounds(source_poses, tmpl.skeleton, config.sym_tol);
  if (config.bounds_margin > 0.0) bounds = widen_bounds(bounds, config.bounds_margin);
  io::save_bounds(out_dir / "bounds.json", bounds);

  json manifest;
  manifest["seed"] = config.seed;
  manifest["skeleton"] = "skeleton.json";
  manifest["bounds"] = "bounds.json";
  manifest["sym_tol"] = config.sym_tol;
  manifest["bounds_margin"] = config.bounds_margin;
  manifest["shift"] = {{"mode", to_string(config.shift.mode)},
                       {"cover_offset", config.shift.cover_offset},
                       {"cover_smoothing", config.shift.cover_smoothing},
                       {"cover_noise", config.shift.cover_noise},
                       {"sensor_noise", config.shift.sensor_noise},
                       {"clutter_count", config.shift.clutter_count},
                       {"headboard_count", config.shift.headboard_count}};
  json split_info;
  for (int split = 0; split < 4; ++split) {
    // Combined hash over the per-file hashes keeps the manifest small.
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (int i = 0; i < counts[split]; ++i) {
      for (const auto& p : {io::cloud_path(out_dir / kSplitNames[split], i),
                            io::pose_path(out_dir / kSplitNames[split], i)}) {
        for (char c : io::content_hash(p)) {
          h ^= static_cast<unsigned char>(c);
          h *= 0x100000001b3ULL;
        }
      }
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    split_info[kSplitNames[split]] = {{"count", counts[split]}, {"hash", buf}};
  }
  manifest["splits"] = split_info;
  io::write_text_file(out_dir / "manifest.json", manifest.dump(2) + "\n");
}

}  // namespace anatpose
