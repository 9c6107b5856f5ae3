#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "anatpose/rng.hpp"
#include "anatpose/skeleton.hpp"
#include "anatpose/types.hpp"

namespace anatpose {

// Parametric body used for synthesis. Bed plane is z = 0, bed long axis is y
// (head towards +y); all quantities in meters.
struct BodyTemplate {
  SkeletonSpec skeleton;
  Vec bone_lengths;             // canonical, per bone
  Vec angle_lo, angle_hi;       // normalized-dot sampling range per connected pair
  Vec capsule_radii;            // per bone, surface synthesis
  Mat3 canonical_directions;    // per bone, rest direction of the lying body
};

// 16-joint human-like template (pelvis root, spine/neck/head chain, two legs,
// two arms).
BodyTemplate default_body_template();

void save_body_template(const std::filesystem::path& path, const BodyTemplate& tmpl);
BodyTemplate load_body_template(const std::filesystem::path& path);

enum class ShiftMode { Cover, Sensor, Environment };

ShiftMode parse_shift_mode(const std::string& name);
std::string to_string(ShiftMode mode);

struct ShiftConfig {
  ShiftMode mode = ShiftMode::Cover;
  // cover: points are lifted to a smoothed per-(x,y) upper envelope
  double cover_offset = 0.04;
  double cover_smoothing = 0.08;  // grid cell edge; 0 disables pooling
  double cover_noise = 0.005;
  // sensor: additive noise plus a half-space crop (keep normal . p >= offset)
  double sensor_noise = 0.01;
  Vec3 sensor_plane_normal = Vec3(0, 0, 1);
  double sensor_plane_offset = -1.0;
  // environment: clutter points in a box plus a headboard slab
  int clutter_count = 0;
  Vec3 clutter_min = Vec3(-0.6, -1.0, 0.0);
  Vec3 clutter_max = Vec3(0.6, 1.0, 0.6);
  int headboard_count = 0;
  Vec3 headboard_min = Vec3(-0.5, 0.80, 0.0);
  Vec3 headboard_max = Vec3(0.5, 0.88, 0.5);
};

struct GenCounts {
  int source_train = 400;
  int target_train = 400;
  int target_val = 120;
  int target_test = 100;
};

struct GenConfig {
  GenCounts counts;
  int points_per_bone = 40;
  double surface_noise = 0.004;
  double scale_lo = 0.8, scale_hi = 1.2;
  double bone_jitter = 0.03;           // per-bone, shared inside a symmetric pair
  int subjects_per_split = 10;
  double sym_tol = 1e-9;               // absorbs rounding in the derived bounds
  double bounds_margin = 0.0;
  ShiftConfig shift;
  std::uint64_t seed = 1;
};

// Forward-kinematics sample: canonical lengths scaled per subject with
// per-bone jitter (shared inside symmetric pairs so left/right lengths are
// equal), directions drawn so every connected pair's normalized dot lies in
// the template range.
Pose sample_pose(const BodyTemplate& tmpl, double subject_scale, Rng& rng);

// Points on capsule surfaces around each bone plus isotropic noise; only the
// upper half-space z >= 0 is kept (camera above the bed).
PointCloud render_cloud(const Pose& pose, const BodyTemplate& tmpl, int points_per_bone,
                        double noise_sigma, Rng& rng);

PointCloud apply_domain_shift(const PointCloud& cloud, const ShiftConfig& shift, Rng& rng);

// Retains points in the closed box.
PointCloud crop_box(const PointCloud& cloud, const Vec3& lo, const Vec3& hi);

// One point per occupied voxel (centroid), voxels anchored at the origin.
// Output ordered by voxel index.
PointCloud voxel_downsample(const PointCloud& cloud, double edge);

// Greedy scan keeping frame t iff some joint moved more than threshold since
// the last kept frame; frame 0 is always kept.
std::vector<int> dedup_frames(const std::vector<Pose>& poses, double threshold);

// Writes source_train/target_train/target_val/target_test splits plus
// skeleton, derived bounds, and a manifest with content hashes.
void generate_dataset(const std::filesystem::path& out_dir, const BodyTemplate& tmpl,
                      const GenConfig& config, int threads = 1);

inline const char* kSplitNames[] = {"source_train", "target_train", "target_val", "target_test"};

}  // namespace anatpose
