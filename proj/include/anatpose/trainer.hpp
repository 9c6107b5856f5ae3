#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "anatpose/anatomy.hpp"
#include "anatpose/model.hpp"
#include "anatpose/rng.hpp"
#include "anatpose/skeleton.hpp"
#include "anatpose/types.hpp"

namespace anatpose {

enum class RampKind {
  AsPrinted,   // exp(-5 * (1 - min(t/T, 1)^2))
  MeanTeacher  // exp(-5 * (1 - min(t/T, 1))^2), the common sigmoid ramp
};

RampKind parse_ramp_kind(const std::string& name);
std::string to_string(RampKind kind);

struct AugmentConfig {
  double max_rotation_deg = 15.0;  // about z
  double max_translation = 0.05;   // per axis, meters
};

struct TrainConfig {
  double lambda1 = 0.1;  // anatomical loss weight
  double lambda2 = 1.0;  // consistency loss weight
  int ramp_epochs = 40;
  double ema_momentum = 0.99;
  int epochs = 100;
  double lr = 1e-3;
  double weight_decay = 1e-5;
  int batch_source = 8;
  int batch_target = 8;
  int subsample_points = 2048;
  FilterMode filter_mode = FilterMode::TwoOfThree;
  MaskMode mask_mode = MaskMode::FeatureExtractorOnly;
  std::uint64_t seed = 1;
  PenaltyKind penalty = PenaltyKind::L1;
  RampKind ramp_kind = RampKind::AsPrinted;
  AugmentConfig augment;
  ModelConfig model;
  // When set, a replay file describing the offending batch is written here
  // before a non-finite loss aborts training.
  std::string diagnostics_dir;

  static TrainConfig uda_defaults();
  static TrainConfig sfda_defaults();  // momentum 0.9996, 80 epochs, frozen heads
};

struct AugmentationRecord {
  double angle = 0.0;
  Vec3 translation = Vec3::Zero();
  std::vector<int> indices;
};

struct ScalarWithGrad {
  double value = 0.0;
  Mat3 grad;
};

// Per-sample L1 task loss, (1/K) * ||gt - pred||_1 over all coordinates.
// Gradient is the sign pattern / K, zero at exact equality.
ScalarWithGrad task_loss(const Pose& pred, const Pose& gt);

// Filtered consistency loss; the teacher side is a constant, gradient flows
// to the student only.
ScalarWithGrad consistency_loss(const Pose& student, const Pose& teacher, bool accepted);

// Ramp-up weight for epoch tau with length T.
double ramp_weight(int tau, int ramp_epochs, RampKind kind = RampKind::AsPrinted);

// Random z-rotation, translation, and subsampling to target_points (with
// replacement when the cloud is smaller). target_points <= 0 keeps all points.
std::pair<PointCloud, AugmentationRecord> augment(const PointCloud& cloud,
                                                  const AugmentConfig& config, int target_points,
                                                  Rng& rng);

// Undoes the rigid part of an augmentation in output space.
Pose reverse_pose(const Pose& pose, const AugmentationRecord& record);

// Pulls a gradient wrt the reversed pose back to the raw prediction frame.
Mat3 reverse_pose_backward(const Mat3& grad, const AugmentationRecord& record);

// Accept iff the teacher is strictly more self-consistent than the student
// under the two shared augmentations (all poses already reversed).
bool consistency_filter_baseline(const Pose& student_a, const Pose& student_b,
                                 const Pose& teacher_a, const Pose& teacher_b);

struct Dataset {
  std::vector<PointCloud> clouds;
  std::vector<Pose> poses;  // may be empty for unlabeled target data

  std::size_t size() const { return clouds.size(); }
  bool labeled() const { return poses.size() == clouds.size(); }
};

struct EpochStats {
  int epoch = 0;
  double task = 0.0;
  double anat = 0.0;
  double con = 0.0;
  double acceptance_rate = 0.0;
  double ramp = 0.0;
  double wall_seconds = 0.0;
};

using EpochCallback = std::function<void(const EpochStats&)>;

// Supervised training on labeled data. The teacher starts from distinct
// random weights and tracks the student by EMA. Passing resume continues
// from that state (epoch numbering included) up to config.epochs.
ModelState train_source(const Dataset& source, const TrainConfig& config,
                        const EpochCallback& on_epoch = {}, const ModelState* resume = nullptr);

// Joint training: task loss on source batches plus ramped anatomical and
// filtered consistency losses on target batches. Anatomical gradients are
// routed through config.mask_mode; task and consistency update all
// parameters.
ModelState adapt_uda(const Dataset& source, const Dataset& target, const SkeletonSpec& spec,
                     const AnatomicalBounds& bounds, const TrainConfig& config,
                     const EpochCallback& on_epoch = {});

// Source-free adaptation: student and teacher start from the pretrained
// student weights; the whole objective is masked by config.mask_mode
// (freeze_heads by default) and no ramp is applied.
ModelState adapt_sfda(const ModelState& pretrained, const Dataset& target,
                      const SkeletonSpec& spec, const AnatomicalBounds& bounds,
                      const TrainConfig& config, const EpochCallback& on_epoch = {});

// Formats one epoch as a single structured log line.
std::string format_epoch_line(const EpochStats& stats);

}  // namespace anatpose
