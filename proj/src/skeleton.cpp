#include "anatpose/skeleton.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

namespace anatpose {

namespace {
constexpr double kDegenerateBoneNorm = 1e-8;
}

Mat3 bone_vectors(const Pose& pose, const SkeletonSpec& spec) {
  if (pose.num_joints() != spec.num_joints()) {
    std::ostringstream msg;
    msg << "pose has " << pose.num_joints() << " joints, skeleton expects " << spec.num_joints();
    throw std::invalid_argument(msg.str());
  }
  Mat3 out(spec.num_bones(), 3);
  for (int i = 0; i < spec.num_bones(); ++i) {
    const auto [parent, child] = spec.bones[i];
    out.row(i) = pose.joints.row(child) - pose.joints.row(parent);
  }
  return out;
}

AnatomicalBounds derive_bounds(const std::vector<Pose>& poses, const SkeletonSpec& spec,
                               double sym_tol_default) {
  if (poses.empty()) throw std::invalid_argument("derive_bounds: empty pose list");
  if (sym_tol_default < 0.0) throw std::invalid_argument("derive_bounds: negative sym_tol");

  const int nb = spec.num_bones();
  const int nz = spec.num_connected_pairs();
  AnatomicalBounds b;
  b.sym_tol = Vec::Constant(spec.num_symmetric_pairs(), sym_tol_default);
  b.length_lo = Vec::Constant(nb, std::numeric_limits<double>::infinity());
  b.length_hi = Vec::Constant(nb, -std::numeric_limits<double>::infinity());
  b.angle_lo = Vec::Constant(nz, std::numeric_limits<double>::infinity());
  b.angle_hi = Vec::Constant(nz, -std::numeric_limits<double>::infinity());

  for (std::size_t t = 0; t < poses.size(); ++t) {
    const Mat3 bv = bone_vectors(poses[t], spec);
    Vec norms(nb);
    for (int i = 0; i < nb; ++i) norms[i] = bv.row(i).norm();

    for (int i = 0; i < nb; ++i) {
      b.length_lo[i] = std::min(b.length_lo[i], norms[i]);
      b.length_hi[i] = std::max(b.length_hi[i], norms[i]);
    }
    for (int p = 0; p < nz; ++p) {
      const auto [i, j] = spec.connected_pairs[p];
      if (norms[i] <= kDegenerateBoneNorm || norms[j] <= kDegenerateBoneNorm) {
        std::ostringstream msg;
        msg << "derive_bounds: pose " << t << " has a zero-length bone in connected pair (" << i
            << ", " << j << ")";
        throw std::invalid_argument(msg.str());
      }
      const double dot = bv.row(i).dot(bv.row(j)) / (norms[i] * norms[j]);
      b.angle_lo[p] = std::min(b.angle_lo[p], dot);
      b.angle_hi[p] = std::max(b.angle_hi[p], dot);
    }
  }
  return b;
}

std::vector<std::string> validate_spec(const SkeletonSpec& spec) {
  std::vector<std::string> violations;
  auto report = [&violations](const std::string& msg) { violations.push_back(msg); };

  const int k = spec.num_joints();
  const int nb = spec.num_bones();
  if (k == 0) report("skeleton has no joints");
  if (spec.root_joint_index < 0 || spec.root_joint_index >= k) {
    report("root_joint_index " + std::to_string(spec.root_joint_index) + " out of range");
  }

  bool edges_ok = true;
  std::set<std::pair<int, int>> seen;
  for (int i = 0; i < nb; ++i) {
    const auto [p, c] = spec.bones[i];
    if (p < 0 || p >= k || c < 0 || c >= k) {
      report("bone " + std::to_string(i) + " references a joint out of range");
      edges_ok = false;
      continue;
    }
    if (p == c) {
      report("bone " + std::to_string(i) + " is a self-loop");
      edges_ok = false;
    }
    auto key = std::minmax(p, c);
    if (!seen.insert({key.first, key.second}).second) {
      report("bone " + std::to_string(i) + " duplicates an existing edge");
      edges_ok = false;
    }
  }
  if (edges_ok && k > 0) {
    if (nb != k - 1) {
      report("bone count " + std::to_string(nb) + " != K-1 = " + std::to_string(k - 1));
    } else {
      // K-1 distinct edges form a tree iff the graph is connected.
      std::vector<std::vector<int>> adj(k);
      for (const auto& [p, c] : spec.bones) {
        adj[p].push_back(c);
        adj[c].push_back(p);
      }
      std::vector<char> visited(k, 0);
      std::vector<int> stack{0};
      visited[0] = 1;
      int count = 1;
      while (!stack.empty()) {
        const int u = stack.back();
        stack.pop_back();
        for (int v : adj[u]) {
          if (!visited[v]) {
            visited[v] = 1;
            ++count;
            stack.push_back(v);
          }
        }
      }
      if (count != k) report("bone edges do not connect all joints");
    }
  }

  std::set<int> used_left, used_right;
  for (int i = 0; i < spec.num_symmetric_pairs(); ++i) {
    const auto [l, r] = spec.symmetric_pairs[i];
    if (l < 0 || l >= nb || r < 0 || r >= nb) {
      report("symmetric pair " + std::to_string(i) + " references a bone out of range");
      continue;
    }
    if (l == r) report("symmetric pair " + std::to_string(i) + " references identical bone " + std::to_string(l));
    if (!used_left.insert(l).second) {
      report("symmetric pair " + std::to_string(i) + ": left bone " + std::to_string(l) + " used twice");
    }
    if (!used_right.insert(r).second) {
      report("symmetric pair " + std::to_string(i) + ": right bone " + std::to_string(r) + " used twice");
    }
  }
  for (int l : used_left) {
    if (used_right.count(l)) {
      report("bone " + std::to_string(l) + " appears on both sides of the symmetry map");
    }
  }

  for (int p = 0; p < spec.num_connected_pairs(); ++p) {
    const auto [i, j] = spec.connected_pairs[p];
    if (i < 0 || i >= nb || j < 0 || j >= nb) {
      report("connected pair " + std::to_string(p) + " references a bone out of range");
      continue;
    }
    if (spec.bones[j].first != spec.bones[i].second) {
      report("connected pair " + std::to_string(p) + " (" + std::to_string(i) + ", " +
             std::to_string(j) + "): bone " + std::to_string(j) +
             " does not start at the end joint of bone " + std::to_string(i));
    }
  }

  for (const auto& [name, indices] : spec.joint_groups) {
    for (int idx : indices) {
      if (idx < 0 || idx >= k) report("joint group '" + name + "' references joint out of range");
    }
  }
  return violations;
}

void require_valid(const SkeletonSpec& spec) {
  const auto violations = validate_spec(spec);
  if (violations.empty()) return;
  std::ostringstream msg;
  msg << "invalid skeleton spec:";
  for (const auto& v : violations) msg << "\n  - " << v;
  throw std::invalid_argument(msg.str());
}

AnatomicalBounds widen_bounds(const AnatomicalBounds& bounds, double margin) {
  if (margin < 0.0) throw std::invalid_argument("widen_bounds: negative margin");
  AnatomicalBounds out = bounds;
  out.length_lo *= (1.0 - margin);
  out.length_hi *= (1.0 + margin);
  for (Eigen::Index p = 0; p < out.angle_lo.size(); ++p) {
    out.angle_lo[p] = std::max(-1.0, out.angle_lo[p] - margin);
    out.angle_hi[p] = std::min(1.0, out.angle_hi[p] + margin);
  }
  return out;
}

}  // namespace anatpose
