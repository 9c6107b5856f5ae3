#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "anatpose/types.hpp"

namespace anatpose {

// Per-point encoder MLP with feature normalization, global max-pool context,
// and a per-point decoder that scores each point per joint. The pose head is
// the softmax-weighted mean of the input points per joint.
struct ModelConfig {
  int joints = 16;
  int enc_hidden = 64;
  int enc_feat = 128;
  int dec_hidden = 128;
  double leak = 0.01;
  double norm_eps = 1e-5;
  double norm_momentum = 0.1;

  bool operator==(const ModelConfig&) const = default;
};

// All trainable arrays. Layout is fixed; tensor_views() enumerates them in a
// stable order shared by gradients, optimizer moments, masks, and EMA.
struct TensorSet {
  Mat enc1_W;  // 3 x enc_hidden
  Vec enc1_b;
  Vec norm1_gamma, norm1_beta;
  Mat enc2_W;  // enc_hidden x enc_feat
  Vec enc2_b;
  Vec norm2_gamma, norm2_beta;
  Mat dec1_W;  // 2*enc_feat x dec_hidden
  Vec dec1_b;
  Mat dec2_W;  // dec_hidden x joints
  Vec dec2_b;
};

using ModelGrads = TensorSet;

enum class ParamGroup { Encoder, EncoderNorm, Decoder };

struct TensorInfo {
  const char* name;
  ParamGroup group;
  bool decay_exempt;  // normalization scale/shift are excluded from weight decay
};

inline constexpr int kNumTensors = 12;
const std::array<TensorInfo, kNumTensors>& tensor_infos();

// Flat views over the 12 tensors, in tensor_infos() order.
std::array<Eigen::Map<Vec>, kNumTensors> tensor_views(TensorSet& t);
std::array<Eigen::Map<const Vec>, kNumTensors> tensor_views(const TensorSet& t);

TensorSet zeros_like(const ModelConfig& cfg);

struct ModelParams {
  ModelConfig cfg;
  TensorSet t;
  // Running statistics of the two normalization layers (inference mode).
  Vec run_mean1, run_var1, run_mean2, run_var2;
};

// Seeded initialization: uniform fan-in weights, zero biases, unit
// normalization scales, final-layer weights scaled by 0.1 so the initial
// weight maps are near uniform.
ModelParams init_params(const ModelConfig& cfg, std::uint64_t seed);

enum class MaskMode { All, FeatureExtractorOnly, NormLayersOnly, FreezeHeads };

MaskMode parse_mask_mode(const std::string& name);
std::string to_string(MaskMode mode);

struct ParamSubsetMask {
  std::array<bool, kNumTensors> trainable{};
};

ParamSubsetMask select_mask(MaskMode mode);

struct WeightMap {
  Mat weights;  // N x K, each column sums to 1
};

struct ForwardCache {
  bool training = false;
  Mat3 input;                 // N x 3
  Mat z1, xhat1, a1;          // N x enc_hidden
  Vec mean1, inv1;            // enc_hidden; inv = 1/sqrt(var + eps)
  Mat z2, xhat2, a2;          // N x enc_feat
  Vec mean2, inv2;
  std::vector<int> pool_idx;  // argmax row per feature channel
  Vec global_feat;            // enc_feat
  Mat dec_in;                 // N x 2*enc_feat
  Mat a_d1;                   // N x dec_hidden
  Mat logits;                 // N x joints
  Mat weights;                // N x joints
};

struct ForwardResult {
  WeightMap weight_map;
  Pose pose;
};

// Pure forward pass. In training mode the normalization layers use batch
// statistics over the point axis and the per-batch statistics needed to
// update the running buffers are left in the cache; apply_running_update()
// commits them. Inference mode reads the running buffers.
ForwardResult forward(const ModelParams& params, const PointCloud& cloud, bool training,
                      ForwardCache* cache = nullptr);

// Convenience wrapper matching the training contract: runs forward and, in
// training mode, updates the running buffers in place.
ForwardResult forward_and_update(ModelParams& params, const PointCloud& cloud, bool training,
                                 ForwardCache* cache = nullptr);

void apply_running_update(ModelParams& params, const ForwardCache& cache);

// Exact reverse-mode gradients of <grad_wrt_pose, pose> wrt all parameters,
// zeroed where the mask marks an array frozen. Requires a training-mode cache.
ModelGrads backward(const ModelParams& params, const ForwardCache& cache, const Mat3& grad_wrt_pose,
                    const ParamSubsetMask& mask);

struct AdamState {
  TensorSet m, v;
  long step = 0;
};

AdamState init_adam(const ModelConfig& cfg);

struct AdamOptions {
  double lr = 1e-3;
  double weight_decay = 0.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Classic Adam with L2 decay added to the gradient (normalization parameters
// are decay-exempt). Arrays frozen by the mask are left untouched, including
// their moments.
void adam_step(ModelParams& params, const ModelGrads& grads, AdamState& state,
               const AdamOptions& opts, const ParamSubsetMask& mask);

// Full training state: student, EMA teacher, optimizer.
struct ModelState {
  ModelParams student;
  ModelParams teacher;
  AdamState opt;
  int epoch = 0;
  std::uint64_t seed = 0;
};

// theta' <- mu * theta' + (1 - mu) * theta over all tensors; running buffers
// are EMA-updated with the same momentum.
void ema_update(ModelParams& teacher, const ModelParams& student, double mu);

bool same_architecture(const ModelParams& a, const ModelParams& b);

}  // namespace anatpose
