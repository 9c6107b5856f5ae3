#pragma once

#include "anatpose/skeleton.hpp"
#include "anatpose/types.hpp"

namespace anatpose {

enum class PenaltyKind { L1, L2 };

struct LossValueWithGrad {
  double value = 0.0;
  Mat3 grad;  // K x 3, d value / d joints
};

struct PlausibilityTriple {
  double sym = 0.0;
  double length = 0.0;
  double angle = 0.0;

  double sum() const { return sym + length + angle; }
};

enum class FilterMode { None, Sym, Length, Angle, AnatSum, TwoOfThree, Consistency };

FilterMode parse_filter_mode(const std::string& name);
std::string to_string(FilterMode mode);

// Interval penalty: 0 on [lo, hi] (boundaries included), linear outside for
// L1, quadratic for L2. Throws if lo > hi.
double penalty(double x, double lo, double hi, PenaltyKind kind = PenaltyKind::L1);

// d penalty / d x. Zero at the kinks x = lo and x = hi.
double penalty_grad(double x, double lo, double hi, PenaltyKind kind = PenaltyKind::L1);

// Mean penalty on the signed length difference of each symmetric bone pair,
// tolerance band [-sym_tol, sym_tol]. Gradient mode throws when a
// participating bone is shorter than 1e-8 m.
LossValueWithGrad sym_loss(const Pose& pose, const SkeletonSpec& spec,
                           const AnatomicalBounds& bounds, PenaltyKind kind = PenaltyKind::L1);
double sym_loss_value(const Pose& pose, const SkeletonSpec& spec, const AnatomicalBounds& bounds,
                      PenaltyKind kind = PenaltyKind::L1);

// Mean penalty on each bone length against [length_lo, length_hi].
LossValueWithGrad length_loss(const Pose& pose, const SkeletonSpec& spec,
                              const AnatomicalBounds& bounds, PenaltyKind kind = PenaltyKind::L1);
double length_loss_value(const Pose& pose, const SkeletonSpec& spec,
                         const AnatomicalBounds& bounds, PenaltyKind kind = PenaltyKind::L1);

// Mean penalty on the normalized dot product of each connected bone pair
// against [angle_lo, angle_hi]. Gradient mode throws on degenerate bones; the
// value-only path substitutes dot = 0 for a degenerate pair.
LossValueWithGrad angle_loss(const Pose& pose, const SkeletonSpec& spec,
                             const AnatomicalBounds& bounds, PenaltyKind kind = PenaltyKind::L1);
double angle_loss_value(const Pose& pose, const SkeletonSpec& spec, const AnatomicalBounds& bounds,
                        PenaltyKind kind = PenaltyKind::L1);

// sym + length + angle, gradients summed.
LossValueWithGrad anat_loss(const Pose& pose, const SkeletonSpec& spec,
                            const AnatomicalBounds& bounds, PenaltyKind kind = PenaltyKind::L1);
double anat_loss_value(const Pose& pose, const SkeletonSpec& spec, const AnatomicalBounds& bounds,
                       PenaltyKind kind = PenaltyKind::L1);

// Value-only evaluation of all three losses.
PlausibilityTriple plausibility_triple(const Pose& pose, const SkeletonSpec& spec,
                                       const AnatomicalBounds& bounds,
                                       PenaltyKind kind = PenaltyKind::L1);

// True iff the teacher wins at least 2 of the 3 strict comparisons. Ties are
// losses for the teacher.
bool two_of_three(const PlausibilityTriple& teacher, const PlausibilityTriple& student);

// Decides whether the teacher pose may supervise the student pose.
bool filter_pseudo_label(const Pose& teacher_pose, const Pose& student_pose,
                         const SkeletonSpec& spec, const AnatomicalBounds& bounds,
                         PenaltyKind kind = PenaltyKind::L1);

// Ablation filters: single-loss strict comparison, sum comparison, or no
// filtering. FilterMode::Consistency needs augmented forward passes and is
// resolved in the trainer; passing it here throws.
bool filter_variant(const Pose& teacher_pose, const Pose& student_pose, const SkeletonSpec& spec,
                    const AnatomicalBounds& bounds, FilterMode mode,
                    PenaltyKind kind = PenaltyKind::L1);

}  // namespace anatpose
