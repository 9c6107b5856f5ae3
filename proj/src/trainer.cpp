#include "anatpose/trainer.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace anatpose {

namespace {

constexpr std::uint64_t kStudentStream = 0x01;
constexpr std::uint64_t kTeacherStream = 0x02;
constexpr std::uint64_t kShuffleStream = 0x03;
constexpr std::uint64_t kAugmentStream = 0x04;

ParamSubsetMask mask_all() { return select_mask(MaskMode::All); }

// Cycles a shuffled index list, reshuffling on wrap so the smaller dataset is
// revisited in a fresh order.
class IndexSampler {
 public:
  IndexSampler(std::size_t n, std::uint64_t seed) : rng_(seed), order_(n) {
    for (std::size_t i = 0; i < n; ++i) order_[i] = static_cast<int>(i);
    rng_.shuffle(order_);
  }

  int next() {
    if (pos_ == order_.size()) {
      rng_.shuffle(order_);
      pos_ = 0;
    }
    return order_[pos_++];
  }

 private:
  Rng rng_;
  std::vector<int> order_;
  std::size_t pos_ = 0;
};

// One RNG per augmentation call, derived from (seed, epoch, iter, slot), so
// the draws for one sample never shift those of another.
Rng augment_rng(std::uint64_t seed, int epoch, int iter, int slot) {
  const std::uint64_t call =
      (static_cast<std::uint64_t>(epoch) << 40) ^ (static_cast<std::uint64_t>(iter) << 8) ^
      static_cast<std::uint64_t>(slot);
  return Rng(mix_seed(mix_seed(seed, kAugmentStream), call));
}

void add_to(TensorSet& dst, const TensorSet& src) {
  auto d = tensor_views(dst);
  auto s = tensor_views(src);
  for (int i = 0; i < kNumTensors; ++i) d[i] += s[i];
}

Pose transform_pose(const Pose& pose, const AugmentationRecord& rec) {
  return Pose(translate(rotate_z(pose.joints, rec.angle), rec.translation));
}

double pose_l1(const Pose& a, const Pose& b) {
  return (a.joints - b.joints).cwiseAbs().sum() / static_cast<double>(a.num_joints());
}

struct BatchDiagnostics {
  int epoch = 0;
  int iter = 0;
  std::vector<int> source_indices;
  std::vector<int> target_indices;
  double task = 0.0, anat = 0.0, con = 0.0;
};

[[noreturn]] void abort_non_finite(const TrainConfig& config, const BatchDiagnostics& diag) {
  std::ostringstream msg;
  msg << "non-finite loss at epoch " << diag.epoch << " iteration " << diag.iter
      << " (task=" << diag.task << " anat=" << diag.anat << " con=" << diag.con << ")";
  if (!config.diagnostics_dir.empty()) {
    namespace fs = std::filesystem;
    fs::create_directories(config.diagnostics_dir);
    const fs::path path = fs::path(config.diagnostics_dir) / "nonfinite_batch.txt";
    std::ofstream out(path);
    out << "epoch " << diag.epoch << "\niteration " << diag.iter << "\nseed " << config.seed
        << "\ntask " << diag.task << "\nanat " << diag.anat << "\ncon " << diag.con
        << "\nsource_indices";
    for (int i : diag.source_indices) out << ' ' << i;
    out << "\ntarget_indices";
    for (int i : diag.target_indices) out << ' ' << i;
    out << '\n';
    msg << "; batch replay written to " << path.string();
  }
  throw std::runtime_error(msg.str());
}

void validate_config(const TrainConfig& c) {
  if (c.lambda1 < 0 || c.lambda2 < 0) throw std::invalid_argument("loss weights must be >= 0");
  if (c.ema_momentum < 0 || c.ema_momentum >= 1) {
    throw std::invalid_argument("ema_momentum must be in [0, 1)");
  }
  if (c.epochs < 0 || c.ramp_epochs < 1) throw std::invalid_argument("bad epoch counts");
  if (c.batch_source < 1 || c.batch_target < 1) throw std::invalid_argument("bad batch sizes");
  if (c.lr <= 0) throw std::invalid_argument("lr must be positive");
}

}  // namespace

RampKind parse_ramp_kind(const std::string& name) {
  if (name == "as_printed") return RampKind::AsPrinted;
  if (name == "mean_teacher") return RampKind::MeanTeacher;
  throw std::invalid_argument("unknown ramp kind '" + name + "'");
}

std::string to_string(RampKind kind) {
  return kind == RampKind::AsPrinted ? "as_printed" : "mean_teacher";
}

TrainConfig TrainConfig::uda_defaults() { return TrainConfig{}; }

TrainConfig TrainConfig::sfda_defaults() {
  TrainConfig c;
  c.ema_momentum = 0.9996;
  c.epochs = 80;
  c.mask_mode = MaskMode::FreezeHeads;
  return c;
}

ScalarWithGrad task_loss(const Pose& pred, const Pose& gt) {
  if (pred.num_joints() != gt.num_joints()) {
    throw std::invalid_argument("task_loss: joint count mismatch");
  }
  const double k = static_cast<double>(pred.num_joints());
  ScalarWithGrad out;
  const Mat3 diff = pred.joints - gt.joints;
  out.value = diff.cwiseAbs().sum() / k;
  out.grad = diff.unaryExpr([](double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }) / k;
  return out;
}

ScalarWithGrad consistency_loss(const Pose& student, const Pose& teacher, bool accepted) {
  if (student.num_joints() != teacher.num_joints()) {
    throw std::invalid_argument("consistency_loss: joint count mismatch");
  }
  ScalarWithGrad out;
  out.grad = Mat3::Zero(student.num_joints(), 3);
  if (!accepted) return out;
  ScalarWithGrad base = task_loss(student, teacher);
  return base;
}

double ramp_weight(int tau, int ramp_epochs, RampKind kind) {
  if (tau < 0) throw std::invalid_argument("ramp_weight: negative epoch");
  if (ramp_epochs < 1) throw std::invalid_argument("ramp_weight: ramp length must be >= 1");
  const double x = std::min(static_cast<double>(tau) / static_cast<double>(ramp_epochs), 1.0);
  if (kind == RampKind::AsPrinted) return std::exp(-5.0 * (1.0 - x * x));
  return std::exp(-5.0 * (1.0 - x) * (1.0 - x));
}

std::pair<PointCloud, AugmentationRecord> augment(const PointCloud& cloud,
                                                  const AugmentConfig& config, int target_points,
                                                  Rng& rng) {
  AugmentationRecord rec;
  const double max_rad = config.max_rotation_deg * M_PI / 180.0;
  rec.angle = rng.uniform(-max_rad, max_rad);
  rec.translation =
      Vec3(rng.uniform(-config.max_translation, config.max_translation),
           rng.uniform(-config.max_translation, config.max_translation),
           rng.uniform(-config.max_translation, config.max_translation));

  const int n = cloud.size();
  if (target_points <= 0 || target_points == n) {
    rec.indices.resize(n);
    for (int i = 0; i < n; ++i) rec.indices[i] = i;
  } else if (target_points < n) {
    // Sample without replacement via a partial Fisher-Yates.
    std::vector<int> pool(n);
    for (int i = 0; i < n; ++i) pool[i] = i;
    rec.indices.resize(target_points);
    for (int i = 0; i < target_points; ++i) {
      const int j = i + rng.uniform_int(n - i);
      std::swap(pool[i], pool[j]);
      rec.indices[i] = pool[i];
    }
  } else {
    // Cloud smaller than the target: subsample with replacement.
    rec.indices.resize(target_points);
    for (int i = 0; i < target_points; ++i) rec.indices[i] = rng.uniform_int(n);
  }

  Mat3 selected(rec.indices.size(), 3);
  for (std::size_t i = 0; i < rec.indices.size(); ++i) {
    selected.row(static_cast<Eigen::Index>(i)) = cloud.points.row(rec.indices[i]);
  }
  return {PointCloud(translate(rotate_z(selected, rec.angle), rec.translation)), rec};
}

Pose reverse_pose(const Pose& pose, const AugmentationRecord& record) {
  Mat3 shifted = pose.joints;
  shifted.rowwise() -= record.translation.transpose();
  return Pose(rotate_z(shifted, -record.angle));
}

Mat3 reverse_pose_backward(const Mat3& grad, const AugmentationRecord& record) {
  // reverse_pose applies Rz(-angle) after the shift; its transpose is
  // Rz(+angle), and the translation has no gradient.
  return rotate_z(grad, record.angle);
}

bool consistency_filter_baseline(const Pose& student_a, const Pose& student_b,
                                 const Pose& teacher_a, const Pose& teacher_b) {
  return pose_l1(teacher_a, teacher_b) < pose_l1(student_a, student_b);
}

std::string format_epoch_line(const EpochStats& s) {
  std::ostringstream out;
  out.precision(6);
  out << "epoch=" << s.epoch << " task=" << s.task << " anat=" << s.anat << " con=" << s.con
      << " accept=" << s.acceptance_rate << " ramp=" << s.ramp << " wall=" << s.wall_seconds;
  return out.str();
}

ModelState train_source(const Dataset& source, const TrainConfig& config,
                        const EpochCallback& on_epoch, const ModelState* resume) {
  validate_config(config);
  if (source.size() == 0) throw std::invalid_argument("train_source: empty dataset");
  if (!source.labeled()) throw std::invalid_argument("train_source: dataset has no labels");

  ModelState state;
  int start_epoch = 0;
  if (resume != nullptr) {
    if (!(resume->student.cfg == config.model)) {
      throw std::invalid_argument("train_source: resume checkpoint architecture mismatch");
    }
    state = *resume;
    start_epoch = resume->epoch;
  } else {
    state.seed = config.seed;
    state.student = init_params(config.model, mix_seed(config.seed, kStudentStream));
    state.teacher = init_params(config.model, mix_seed(config.seed, kTeacherStream));
    state.opt = init_adam(config.model);
  }

  const ParamSubsetMask full = mask_all();
  const AdamOptions opts{config.lr, config.weight_decay};
  IndexSampler sampler(source.size(), mix_seed(config.seed, kShuffleStream));
  const int iters =
      static_cast<int>((source.size() + config.batch_source - 1) / config.batch_source);

  for (int epoch = start_epoch; epoch < config.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    double task_sum = 0.0;
    long task_count = 0;
    for (int iter = 0; iter < iters; ++iter) {
      ModelGrads accum = zeros_like(config.model);
      BatchDiagnostics diag{epoch, iter};
      for (int b = 0; b < config.batch_source; ++b) {
        const int idx = sampler.next();
        diag.source_indices.push_back(idx);
        Rng rng = augment_rng(config.seed, epoch, iter, b);
        auto [cloud, rec] = augment(source.clouds[idx], config.augment, config.subsample_points, rng);
        const Pose gt = transform_pose(source.poses[idx], rec);

        ForwardCache cache;
        const ForwardResult fwd = forward_and_update(state.student, cloud, true, &cache);
        const ScalarWithGrad task = task_loss(fwd.pose, gt);
        diag.task += task.value;
        task_sum += task.value;
        ++task_count;
        const Mat3 scaled = task.grad / static_cast<double>(config.batch_source);
        add_to(accum, backward(state.student, cache, scaled, full));
      }
      if (!std::isfinite(diag.task)) abort_non_finite(config, diag);
      adam_step(state.student, accum, state.opt, opts, full);
      ema_update(state.teacher, state.student, config.ema_momentum);
    }
    state.epoch = epoch + 1;
    if (on_epoch) {
      EpochStats stats;
      stats.epoch = epoch;
      stats.task = task_sum / static_cast<double>(std::max(task_count, 1L));
      stats.wall_seconds =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      on_epoch(stats);
    }
  }
  return state;
}

namespace {

struct TargetStepResult {
  double anat = 0.0;
  double con = 0.0;
  bool accepted = false;
};

// Shared target-sample step for UDA and SFDA: augments student and teacher
// views, filters the pseudo label, and accumulates gradients of
// anat_weight * L_anat + con_weight * L_con for one sample.
TargetStepResult target_step(ModelState& state, const PointCloud& cloud, const SkeletonSpec& spec,
                             const AnatomicalBounds& bounds, const TrainConfig& config,
                             double anat_weight, double con_weight,
                             const ParamSubsetMask& main_mask, const ParamSubsetMask& anat_mask,
                             int epoch, int iter, int slot, ModelGrads& accum) {
  Rng rng_s = augment_rng(config.seed, epoch, iter, 1000 + slot * 8);
  Rng rng_t = augment_rng(config.seed, epoch, iter, 1000 + slot * 8 + 1);
  auto [cloud_s, rec_s] = augment(cloud, config.augment, config.subsample_points, rng_s);
  auto [cloud_t, rec_t] = augment(cloud, config.augment, config.subsample_points, rng_t);

  ForwardCache cache;
  const ForwardResult fwd_s = forward_and_update(state.student, cloud_s, true, &cache);
  // The teacher predicts under the same batch-statistics semantics as the
  // student (its running buffers are left untouched), so the plausibility
  // comparison below is apples to apples.
  const ForwardResult fwd_t = forward(state.teacher, cloud_t, true);
  const Pose pose_s = reverse_pose(fwd_s.pose, rec_s);
  const Pose pose_t = reverse_pose(fwd_t.pose, rec_t);

  TargetStepResult out;
  if (config.filter_mode == FilterMode::Consistency) {
    // Two shared augmented views through both models; accept when the teacher
    // is the more self-consistent one.
    Rng rng_a = augment_rng(config.seed, epoch, iter, 1000 + slot * 8 + 2);
    Rng rng_b = augment_rng(config.seed, epoch, iter, 1000 + slot * 8 + 3);
    auto [cloud_a, rec_a] = augment(cloud, config.augment, config.subsample_points, rng_a);
    auto [cloud_b, rec_b] = augment(cloud, config.augment, config.subsample_points, rng_b);
    const Pose s_a = reverse_pose(forward(state.student, cloud_a, true).pose, rec_a);
    const Pose s_b = reverse_pose(forward(state.student, cloud_b, true).pose, rec_b);
    const Pose t_a = reverse_pose(forward(state.teacher, cloud_a, true).pose, rec_a);
    const Pose t_b = reverse_pose(forward(state.teacher, cloud_b, true).pose, rec_b);
    out.accepted = consistency_filter_baseline(s_a, s_b, t_a, t_b);
  } else {
    out.accepted = filter_variant(pose_t, pose_s, spec, bounds, config.filter_mode, config.penalty);
  }

  const ScalarWithGrad con = consistency_loss(pose_s, pose_t, out.accepted);
  const LossValueWithGrad anat = anat_loss(pose_s, spec, bounds, config.penalty);
  out.con = con.value;
  out.anat = anat.value;

  if (con_weight > 0.0 && con.grad.squaredNorm() > 0.0) {
    const Mat3 g = reverse_pose_backward(con_weight * con.grad, rec_s);
    add_to(accum, backward(state.student, cache, g, main_mask));
  }
  if (anat_weight > 0.0 && anat.grad.squaredNorm() > 0.0) {
    const Mat3 g = reverse_pose_backward(anat_weight * anat.grad, rec_s);
    add_to(accum, backward(state.student, cache, g, anat_mask));
  }
  return out;
}

}  // namespace

ModelState adapt_uda(const Dataset& source, const Dataset& target, const SkeletonSpec& spec,
                     const AnatomicalBounds& bounds, const TrainConfig& config,
                     const EpochCallback& on_epoch) {
  validate_config(config);
  if (source.size() == 0 || target.size() == 0) {
    throw std::invalid_argument("adapt_uda: empty dataset");
  }
  if (!source.labeled()) throw std::invalid_argument("adapt_uda: source dataset has no labels");
  require_valid(spec);

  ModelState state;
  state.seed = config.seed;
  state.student = init_params(config.model, mix_seed(config.seed, kStudentStream));
  state.teacher = init_params(config.model, mix_seed(config.seed, kTeacherStream));
  state.opt = init_adam(config.model);

  const ParamSubsetMask full = mask_all();
  const ParamSubsetMask anat_mask = select_mask(config.mask_mode);
  const AdamOptions opts{config.lr, config.weight_decay};
  IndexSampler source_sampler(source.size(), mix_seed(config.seed, kShuffleStream));
  IndexSampler target_sampler(target.size(), mix_seed(config.seed, kShuffleStream + 1));
  const long source_iters = (source.size() + config.batch_source - 1) / config.batch_source;
  const long target_iters = (target.size() + config.batch_target - 1) / config.batch_target;
  const int iters = static_cast<int>(std::max(source_iters, target_iters));

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const double lam = ramp_weight(epoch, config.ramp_epochs, config.ramp_kind);
    EpochStats stats;
    stats.epoch = epoch;
    stats.ramp = lam;
    long accepted = 0, target_count = 0, source_count = 0;

    for (int iter = 0; iter < iters; ++iter) {
      ModelGrads accum = zeros_like(config.model);
      BatchDiagnostics diag{epoch, iter};

      for (int b = 0; b < config.batch_source; ++b) {
        const int idx = source_sampler.next();
        diag.source_indices.push_back(idx);
        Rng rng = augment_rng(config.seed, epoch, iter, b);
        auto [cloud, rec] = augment(source.clouds[idx], config.augment, config.subsample_points, rng);
        const Pose gt = transform_pose(source.poses[idx], rec);
        ForwardCache cache;
        const ForwardResult fwd = forward_and_update(state.student, cloud, true, &cache);
        const ScalarWithGrad task = task_loss(fwd.pose, gt);
        diag.task += task.value;
        stats.task += task.value;
        ++source_count;
        add_to(accum, backward(state.student, cache,
                               Mat3(task.grad / static_cast<double>(config.batch_source)), full));
      }

      const double anat_w = lam * config.lambda1 / static_cast<double>(config.batch_target);
      const double con_w = lam * config.lambda2 / static_cast<double>(config.batch_target);
      for (int b = 0; b < config.batch_target; ++b) {
        const int idx = target_sampler.next();
        diag.target_indices.push_back(idx);
        const TargetStepResult r = target_step(state, target.clouds[idx], spec, bounds, config,
                                               anat_w, con_w, full, anat_mask, epoch, iter, b, accum);
        diag.anat += r.anat;
        diag.con += r.con;
        stats.anat += r.anat;
        stats.con += r.con;
        accepted += r.accepted ? 1 : 0;
        ++target_count;
      }

      if (!std::isfinite(diag.task) || !std::isfinite(diag.anat) || !std::isfinite(diag.con)) {
        abort_non_finite(config, diag);
      }
      adam_step(state.student, accum, state.opt, opts, full);
      ema_update(state.teacher, state.student, config.ema_momentum);
    }

    state.epoch = epoch + 1;
    if (on_epoch) {
      stats.task /= static_cast<double>(std::max(source_count, 1L));
      stats.anat /= static_cast<double>(std::max(target_count, 1L));
      stats.con /= static_cast<double>(std::max(target_count, 1L));
      stats.acceptance_rate =
          static_cast<double>(accepted) / static_cast<double>(std::max(target_count, 1L));
      stats.wall_seconds =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      on_epoch(stats);
    }
  }
  return state;
}

ModelState adapt_sfda(const ModelState& pretrained, const Dataset& target,
                      const SkeletonSpec& spec, const AnatomicalBounds& bounds,
                      const TrainConfig& config, const EpochCallback& on_epoch) {
  validate_config(config);
  if (target.size() == 0) throw std::invalid_argument("adapt_sfda: empty target dataset");
  if (!(pretrained.student.cfg == config.model)) {
    throw std::invalid_argument("adapt_sfda: checkpoint architecture differs from config.model");
  }
  require_valid(spec);

  ModelState state;
  state.seed = config.seed;
  // Student and teacher both start from the pretrained source model.
  state.student = pretrained.student;
  state.teacher = pretrained.student;
  state.opt = init_adam(config.model);

  const ParamSubsetMask mask = select_mask(config.mask_mode);
  const AdamOptions opts{config.lr, config.weight_decay};
  IndexSampler sampler(target.size(), mix_seed(config.seed, kShuffleStream));
  const int iters =
      static_cast<int>((target.size() + config.batch_target - 1) / config.batch_target);

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    EpochStats stats;
    stats.epoch = epoch;
    stats.ramp = 1.0;  // no ramp: pre-training avoids the noisy early gradients
    long accepted = 0, target_count = 0;

    for (int iter = 0; iter < iters; ++iter) {
      ModelGrads accum = zeros_like(config.model);
      BatchDiagnostics diag{epoch, iter};
      const double anat_w = config.lambda1 / static_cast<double>(config.batch_target);
      const double con_w = config.lambda2 / static_cast<double>(config.batch_target);
      for (int b = 0; b < config.batch_target; ++b) {
        const int idx = sampler.next();
        diag.target_indices.push_back(idx);
        const TargetStepResult r = target_step(state, target.clouds[idx], spec, bounds, config,
                                               anat_w, con_w, mask, mask, epoch, iter, b, accum);
        diag.anat += r.anat;
        diag.con += r.con;
        stats.anat += r.anat;
        stats.con += r.con;
        accepted += r.accepted ? 1 : 0;
        ++target_count;
      }
      if (!std::isfinite(diag.anat) || !std::isfinite(diag.con)) abort_non_finite(config, diag);
      adam_step(state.student, accum, state.opt, opts, mask);
      ema_update(state.teacher, state.student, config.ema_momentum);
    }

    state.epoch = epoch + 1;
    if (on_epoch) {
      stats.anat /= static_cast<double>(std::max(target_count, 1L));
      stats.con /= static_cast<double>(std::max(target_count, 1L));
      stats.acceptance_rate =
          static_cast<double>(accepted) / static_cast<double>(std::max(target_count, 1L));
      stats.wall_seconds =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      on_epoch(stats);
    }
  }
  return state;
}

}  // namespace anatpose
