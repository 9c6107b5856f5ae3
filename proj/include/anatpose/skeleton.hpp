#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "anatpose/types.hpp"

namespace anatpose {

// Skeleton graph: joints are nodes, bones are directed parent->child edges of
// a tree rooted at root_joint_index. A connected pair (i, j) means bone j
// starts at the joint where bone i ends, so the pair shares that joint and
// both vectors are tree-directed.
struct SkeletonSpec {
  std::vector<std::string> joint_names;
  std::vector<std::pair<int, int>> bones;            // (parent, child)
  std::vector<std::pair<int, int>> symmetric_pairs;  // (left bone, right bone)
  std::vector<std::pair<int, int>> connected_pairs;  // (bone i, bone j)
  int root_joint_index = 0;
  // Optional named joint groups for per-group evaluation breakdowns.
  std::map<std::string, std::vector<int>> joint_groups;

  int num_joints() const { return static_cast<int>(joint_names.size()); }
  int num_bones() const { return static_cast<int>(bones.size()); }
  int num_symmetric_pairs() const { return static_cast<int>(symmetric_pairs.size()); }
  int num_connected_pairs() const { return static_cast<int>(connected_pairs.size()); }
};

// Per-bone and per-pair limits. Lengths in meters, angle bounds are bounds on
// the normalized dot product of connected bone vectors, so dimensionless.
struct AnatomicalBounds {
  Vec sym_tol;    // N_lambda, >= 0
  Vec length_lo;  // N_beta
  Vec length_hi;  // N_beta
  Vec angle_lo;   // N_zeta, in [-1, 1]
  Vec angle_hi;   // N_zeta, in [-1, 1]
};

// Row i = joints[child_i] - joints[parent_i]. Throws on K mismatch.
Mat3 bone_vectors(const Pose& pose, const SkeletonSpec& spec);

// Empirical bounds: per-bone min/max length and per-connected-pair min/max
// normalized dot over the given poses. sym_tol is constant sym_tol_default.
// Throws on an empty pose list or a zero-length bone in a connected pair.
AnatomicalBounds derive_bounds(const std::vector<Pose>& poses, const SkeletonSpec& spec,
                               double sym_tol_default = 0.0);

// Returns a description per violated SkeletonSpec invariant; empty when the
// spec is well-formed. Violations are reported, never thrown.
std::vector<std::string> validate_spec(const SkeletonSpec& spec);

// Throws std::invalid_argument listing all violations if the spec is invalid.
void require_valid(const SkeletonSpec& spec);

// Widens length bounds by a relative margin and angle bounds by an absolute
// one (clamped to [-1, 1]). margin = 0 is the identity.
AnatomicalBounds widen_bounds(const AnatomicalBounds& bounds, double margin);

}  // namespace anatpose
