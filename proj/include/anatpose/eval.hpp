#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "anatpose/anatomy.hpp"
#include "anatpose/model.hpp"
#include "anatpose/skeleton.hpp"
#include "anatpose/types.hpp"

namespace anatpose {

struct JointErrors {
  Vec per_joint;  // mean Euclidean distance per joint, meters
  double mean = 0.0;
  int sample_count = 0;
};

// Per-joint mean Euclidean error over matched pose lists.
JointErrors mpjpe(const std::vector<Pose>& pred, const std::vector<Pose>& gt);

// Mean over a joint subset (the shared-joints protocol). Subset must be
// non-empty and in range.
double mpjpe_subset(const JointErrors& errors, const std::vector<int>& subset);

struct PlausibilityReport {
  double rate_sym = 0.0, rate_length = 0.0, rate_angle = 0.0;  // fraction with loss > 0
  double mean_sym = 0.0, mean_length = 0.0, mean_angle = 0.0, mean_anat = 0.0;
  int sample_count = 0;
};

PlausibilityReport plausibility_report(const std::vector<Pose>& poses, const SkeletonSpec& spec,
                                       const AnatomicalBounds& bounds);

struct EvalReport {
  JointErrors errors;
  std::map<std::string, double> group_means;
  std::optional<PlausibilityReport> plausibility;
};

// Errors + group breakdown (+ plausibility when bounds are given).
EvalReport evaluate_poses(const std::vector<Pose>& pred, const std::vector<Pose>& gt,
                          const SkeletonSpec& spec, const AnatomicalBounds* bounds = nullptr);

// Mean of root-centered training poses, compared against root-centered test
// poses. Uses the ground-truth root location at evaluation time by
// construction, so the root error is exactly zero.
EvalReport mean_pose_baseline(const std::vector<Pose>& train, const std::vector<Pose>& test,
                              int root_index, const SkeletonSpec& spec);

struct PearsonResult {
  double r = 0.0;
  double p = 1.0;  // two-sided, from the t statistic with n-2 dof
};

// Sample Pearson correlation; throws for n < 3 or zero variance.
PearsonResult pearson(const std::vector<double>& x, const std::vector<double>& y);

// Regularized incomplete beta I_x(a, b) by continued fraction.
double incomplete_beta(double a, double b, double x);

struct CorrelationRow {
  std::string loss_name;  // sym, length, angle, anat
  double r = 0.0;
  double p = 1.0;
};

// Per-sample pose error vs each anatomical loss on the predictions.
std::vector<CorrelationRow> correlation_from_poses(const std::vector<Pose>& pred,
                                                   const std::vector<Pose>& gt,
                                                   const SkeletonSpec& spec,
                                                   const AnatomicalBounds& bounds);

// Runs student inference over the clouds, then correlates.
std::vector<CorrelationRow> correlation_study(const ModelParams& params,
                                              const std::vector<PointCloud>& clouds,
                                              const std::vector<Pose>& gt,
                                              const SkeletonSpec& spec,
                                              const AnatomicalBounds& bounds);

// Student inference (inference-mode normalization) over a list of clouds.
std::vector<Pose> run_inference(const ModelParams& params, const std::vector<PointCloud>& clouds,
                                int threads = 1);

// Human-readable aligned table of an evaluation report.
std::string format_report_table(const EvalReport& report, const SkeletonSpec& spec);

}  // namespace anatpose
