#include "anatpose/anatomy.hpp"

#include <cmath>
#include <sstream>

namespace anatpose {

namespace {

constexpr double kDegenerateBoneNorm = 1e-8;

void check_interval(double lo, double hi) {
  if (lo > hi) {
    std::ostringstream msg;
    msg << "penalty: lo " << lo << " > hi " << hi;
    throw std::invalid_argument(msg.str());
  }
}

[[noreturn]] void throw_degenerate(const char* loss, int bone) {
  std::ostringstream msg;
  msg << loss << ": bone " << bone << " is shorter than " << kDegenerateBoneNorm
      << " m, gradient undefined (use the value-only path for filtering)";
  throw std::domain_error(msg.str());
}

Vec bone_norms(const Mat3& bv) {
  Vec norms(bv.rows());
  for (Eigen::Index i = 0; i < bv.rows(); ++i) norms[i] = bv.row(i).norm();
  return norms;
}

// Adds g * d||b_i||/d joints for bone i into grad.
void add_norm_grad(Mat3& grad, const SkeletonSpec& spec, const Mat3& bv, const Vec& norms, int i,
                   double g) {
  const Vec3 unit = bv.row(i).transpose() / norms[i];
  const auto [parent, child] = spec.bones[i];
  grad.row(child) += g * unit.transpose();
  grad.row(parent) -= g * unit.transpose();
}

}  // namespace

FilterMode parse_filter_mode(const std::string& name) {
  if (name == "none") return FilterMode::None;
  if (name == "sym") return FilterMode::Sym;
  if (name == "length") return FilterMode::Length;
  if (name == "angle") return FilterMode::Angle;
  if (name == "anat_sum") return FilterMode::AnatSum;
  if (name == "two_of_three") return FilterMode::TwoOfThree;
  if (name == "consistency") return FilterMode::Consistency;
  throw std::invalid_argument("unknown filter mode '" + name + "'");
}

std::string to_string(FilterMode mode) {
  switch (mode) {
    case FilterMode::None: return "none";
    case FilterMode::Sym: return "sym";
    case FilterMode::Length: return "length";
    case FilterMode::Angle: return "angle";
    case FilterMode::AnatSum: return "anat_sum";
    case FilterMode::TwoOfThree: return "two_of_three";
    case FilterMode::Consistency: return "consistency";
  }
  throw std::invalid_argument("unknown filter mode");
}

double penalty(double x, double lo, double hi, PenaltyKind kind) {
  check_interval(lo, hi);
  double excess = 0.0;
  if (x < lo) {
    excess = lo - x;
  } else if (x > hi) {
    excess = x - hi;
  } else {
    return 0.0;
  }
  return kind == PenaltyKind::L1 ? excess : excess * excess;
}

double penalty_grad(double x, double lo, double hi, PenaltyKind kind) {
  check_interval(lo, hi);
  if (x < lo) return kind == PenaltyKind::L1 ? -1.0 : -2.0 * (lo - x);
  if (x > hi) return kind == PenaltyKind::L1 ? 1.0 : 2.0 * (x - hi);
  return 0.0;
}

LossValueWithGrad sym_loss(const Pose& pose, const SkeletonSpec& spec,
                           const AnatomicalBounds& bounds, PenaltyKind kind) {
  const Mat3 bv = bone_vectors(pose, spec);
  const Vec norms = bone_norms(bv);
  const int n = spec.num_symmetric_pairs();
  LossValueWithGrad out;
  out.grad = Mat3::Zero(pose.num_joints(), 3);
  if (n == 0) return out;

  for (int i = 0; i < n; ++i) {
    const auto [l, r] = spec.symmetric_pairs[i];
    const double diff = norms[l] - norms[r];
    const double tol = bounds.sym_tol[i];
    out.value += penalty(diff, -tol, tol, kind) / n;
    const double g = penalty_grad(diff, -tol, tol, kind) / n;
    if (g != 0.0) {
      if (norms[l] <= kDegenerateBoneNorm) throw_degenerate("sym_loss", l);
      if (norms[r] <= kDegenerateBoneNorm) throw_degenerate("sym_loss", r);
      add_norm_grad(out.grad, spec, bv, norms, l, g);
      add_norm_grad(out.grad, spec, bv, norms, r, -g);
    }
  }
  return out;
}

double sym_loss_value(const Pose& pose, const SkeletonSpec& spec, const AnatomicalBounds& bounds,
                      PenaltyKind kind) {
  const Mat3 bv = bone_vectors(pose, spec);
  const Vec norms = bone_norms(bv);
  const int n = spec.num_symmetric_pairs();
  if (n == 0) return 0.0;
  double value = 0.0;
  for (int i = 0; i < n; ++i) {
    const auto [l, r] = spec.symmetric_pairs[i];
    value += penalty(norms[l] - norms[r], -bounds.sym_tol[i], bounds.sym_tol[i], kind) / n;
  }
  return value;
}

LossValueWithGrad length_loss(const Pose& pose, const SkeletonSpec& spec,
                              const AnatomicalBounds& bounds, PenaltyKind kind) {
  const Mat3 bv = bone_vectors(pose, spec);
  const Vec norms = bone_norms(bv);
  const int n = spec.num_bones();
  LossValueWithGrad out;
  out.grad = Mat3::Zero(pose.num_joints(), 3);
  if (n == 0) return out;

  for (int i = 0; i < n; ++i) {
    out.value += penalty(norms[i], bounds.length_lo[i], bounds.length_hi[i], kind) / n;
    const double g = penalty_grad(norms[i], bounds.length_lo[i], bounds.length_hi[i], kind) / n;
    if (g != 0.0) {
      if (norms[i] <= kDegenerateBoneNorm) throw_degenerate("length_loss", i);
      add_norm_grad(out.grad, spec, bv, norms, i, g);
    }
  }
  return out;
}

double length_loss_value(const Pose& pose, const SkeletonSpec& spec,
                         const AnatomicalBounds& bounds, PenaltyKind kind) {
  const Mat3 bv = bone_vectors(pose, spec);
  const Vec norms = bone_norms(bv);
  const int n = spec.num_bones();
  if (n == 0) return 0.0;
  double value = 0.0;
  for (int i = 0; i < n; ++i) {
    value += penalty(norms[i], bounds.length_lo[i], bounds.length_hi[i], kind) / n;
  }
  return value;
}

LossValueWithGrad angle_loss(const Pose& pose, const SkeletonSpec& spec,
                             const AnatomicalBounds& bounds, PenaltyKind kind) {
  const Mat3 bv = bone_vectors(pose, spec);
  const Vec norms = bone_norms(bv);
  const int n = spec.num_connected_pairs();
  LossValueWithGrad out;
  out.grad = Mat3::Zero(pose.num_joints(), 3);
  if (n == 0) return out;

  for (int p = 0; p < n; ++p) {
    const auto [i, j] = spec.connected_pairs[p];
    if (norms[i] <= kDegenerateBoneNorm) throw_degenerate("angle_loss", i);
    if (norms[j] <= kDegenerateBoneNorm) throw_degenerate("angle_loss", j);
    const Vec3 u = bv.row(i).transpose() / norms[i];
    const Vec3 v = bv.row(j).transpose() / norms[j];
    const double dot = u.dot(v);
    out.value += penalty(dot, bounds.angle_lo[p], bounds.angle_hi[p], kind) / n;
    const double g = penalty_grad(dot, bounds.angle_lo[p], bounds.angle_hi[p], kind) / n;
    if (g != 0.0) {
      // d dot / d b_i = (v - dot u) / ||b_i||, d dot / d b_j = (u - dot v) / ||b_j||.
      const Vec3 dbi = (v - dot * u) / norms[i];
      const Vec3 dbj = (u - dot * v) / norms[j];
      const auto [pi, ci] = spec.bones[i];
      const auto [pj, cj] = spec.bones[j];
      out.grad.row(ci) += g * dbi.transpose();
      out.grad.row(pi) -= g * dbi.transpose();
      out.grad.row(cj) += g * dbj.transpose();
      out.grad.row(pj) -= g * dbj.transpose();
    }
  }
  return out;
}

double angle_loss_value(const Pose& pose, const SkeletonSpec& spec, const AnatomicalBounds& bounds,
                        PenaltyKind kind) {
  const Mat3 bv = bone_vectors(pose, spec);
  const Vec norms = bone_norms(bv);
  const int n = spec.num_connected_pairs();
  if (n == 0) return 0.0;
  double value = 0.0;
  for (int p = 0; p < n; ++p) {
    const auto [i, j] = spec.connected_pairs[p];
    // Degenerate bones fall back to dot = 0 so filtering stays total.
    double dot = 0.0;
    if (norms[i] > kDegenerateBoneNorm && norms[j] > kDegenerateBoneNorm) {
      dot = bv.row(i).dot(bv.row(j)) / (norms[i] * norms[j]);
    }
    value += penalty(dot, bounds.angle_lo[p], bounds.angle_hi[p], kind) / n;
  }
  return value;
}

LossValueWithGrad anat_loss(const Pose& pose, const SkeletonSpec& spec,
                            const AnatomicalBounds& bounds, PenaltyKind kind) {
  const LossValueWithGrad sym = sym_loss(pose, spec, bounds, kind);
  const LossValueWithGrad len = length_loss(pose, spec, bounds, kind);
  const LossValueWithGrad ang = angle_loss(pose, spec, bounds, kind);
  LossValueWithGrad out;
  out.value = sym.value + len.value + ang.value;
  out.grad = sym.grad + len.grad + ang.grad;
  return out;
}

double anat_loss_value(const Pose& pose, const SkeletonSpec& spec, const AnatomicalBounds& bounds,
                       PenaltyKind kind) {
  return sym_loss_value(pose, spec, bounds, kind) + length_loss_value(pose, spec, bounds, kind) +
         angle_loss_value(pose, spec, bounds, kind);
}

PlausibilityTriple plausibility_triple(const Pose& pose, const SkeletonSpec& spec,
                                       const AnatomicalBounds& bounds, PenaltyKind kind) {
  return {sym_loss_value(pose, spec, bounds, kind), length_loss_value(pose, spec, bounds, kind),
          angle_loss_value(pose, spec, bounds, kind)};
}

bool two_of_three(const PlausibilityTriple& teacher, const PlausibilityTriple& student) {
  const int wins = static_cast<int>(teacher.sym < student.sym) +
                   static_cast<int>(teacher.length < student.length) +
                   static_cast<int>(teacher.angle < student.angle);
  return wins >= 2;
}

bool filter_pseudo_label(const Pose& teacher_pose, const Pose& student_pose,
                         const SkeletonSpec& spec, const AnatomicalBounds& bounds,
                         PenaltyKind kind) {
  return two_of_three(plausibility_triple(teacher_pose, spec, bounds, kind),
                      plausibility_triple(student_pose, spec, bounds, kind));
}

bool filter_variant(const Pose& teacher_pose, const Pose& student_pose, const SkeletonSpec& spec,
                    const AnatomicalBounds& bounds, FilterMode mode, PenaltyKind kind) {
  if (mode == FilterMode::None) return true;
  if (mode == FilterMode::Consistency) {
    throw std::invalid_argument(
        "filter_variant: the consistency filter needs augmented forward passes and is evaluated "
        "by the trainer");
  }
  const PlausibilityTriple t = plausibility_triple(teacher_pose, spec, bounds, kind);
  const PlausibilityTriple s = plausibility_triple(student_pose, spec, bounds, kind);
  switch (mode) {
    case FilterMode::Sym: return t.sym < s.sym;
    case FilterMode::Length: return t.length < s.length;
    case FilterMode::Angle: return t.angle < s.angle;
    case FilterMode::AnatSum: return t.sum() < s.sum();
    case FilterMode::TwoOfThree: return two_of_three(t, s);
    default: throw std::invalid_argument("filter_variant: unknown mode");
  }
}

}  // namespace anatpose
