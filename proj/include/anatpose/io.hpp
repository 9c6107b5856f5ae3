#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "anatpose/model.hpp"
#include "anatpose/skeleton.hpp"
#include "anatpose/types.hpp"

namespace anatpose::io {

// ASCII PLY, properties x y z, doubles printed with %.17g so values
// round-trip bit-exactly.
void save_ply(const std::filesystem::path& path, const PointCloud& cloud);
PointCloud load_ply(const std::filesystem::path& path);

// One "x y z" line per joint, %.17g.
void save_pose(const std::filesystem::path& path, const Pose& pose);
Pose load_pose(const std::filesystem::path& path);

void save_skeleton(const std::filesystem::path& path, const SkeletonSpec& spec);
SkeletonSpec load_skeleton(const std::filesystem::path& path);

void save_bounds(const std::filesystem::path& path, const AnatomicalBounds& bounds);
AnatomicalBounds load_bounds(const std::filesystem::path& path);

// Self-describing JSON checkpoint: architecture, student/teacher tensors and
// running buffers, optimizer state, seed. Serialization is round-trip exact
// for doubles, so save -> load -> save reproduces the bytes.
void save_checkpoint(const std::filesystem::path& path, const ModelState& state);
ModelState load_checkpoint(const std::filesystem::path& path);

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, const std::string& content);

// FNV-1a 64-bit content hash, reported as 16 hex digits.
std::string content_hash(const std::filesystem::path& path);

// Labeled split: clouds plus poses with matching indices.
struct SplitData {
  std::vector<PointCloud> clouds;
  std::vector<Pose> poses;
};

// Loads cloud_%05d.ply / pose_%05d.txt pairs from a split directory in index
// order. Poses are required unless require_poses is false.
SplitData load_split(const std::filesystem::path& dir, bool require_poses = true);

void save_sample(const std::filesystem::path& dir, int index, const PointCloud& cloud,
                 const Pose& pose);

std::filesystem::path cloud_path(const std::filesystem::path& dir, int index);
std::filesystem::path pose_path(const std::filesystem::path& dir, int index);

}  // namespace anatpose::io
