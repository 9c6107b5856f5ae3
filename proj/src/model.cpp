#include "anatpose/model.hpp"

#include <cmath>
#include <sstream>

#include "anatpose/rng.hpp"

namespace anatpose {

namespace {

void check_finite(const Mat& m, const char* layer) {
  if (!m.allFinite()) {
    throw std::runtime_error(std::string("forward: non-finite activations in layer ") + layer);
  }
}

Mat leaky(const Mat& x, double slope) {
  return x.unaryExpr([slope](double v) { return v > 0.0 ? v : slope * v; });
}

// Derivative selector from the activation output; leaky relu with positive
// slope preserves sign, so the output sign identifies the branch.
Mat leaky_grad_from_output(const Mat& y, double slope) {
  return y.unaryExpr([slope](double v) { return v > 0.0 ? 1.0 : slope; });
}

struct NormOut {
  Mat xhat;
  Vec mean, var, inv;
};

// Normalization over the point axis (rows), biased variance.
NormOut normalize_batch(const Mat& z, double eps) {
  NormOut out;
  const double n = static_cast<double>(z.rows());
  out.mean = z.colwise().mean();
  Mat centered = z.rowwise() - out.mean.transpose();
  out.var = centered.array().square().colwise().sum().transpose() / n;
  out.inv = (out.var.array() + eps).rsqrt().matrix();
  out.xhat = (centered.array().rowwise() * out.inv.transpose().array()).matrix();
  return out;
}

Mat normalize_running(const Mat& z, const Vec& run_mean, const Vec& run_var, double eps) {
  const Vec inv = (run_var.array() + eps).rsqrt();
  Mat centered = z.rowwise() - run_mean.transpose();
  return (centered.array().rowwise() * inv.transpose().array()).matrix();
}

Mat affine(const Mat& xhat, const Vec& gamma, const Vec& beta) {
  Mat y = (xhat.array().rowwise() * gamma.transpose().array()).matrix();
  y.rowwise() += beta.transpose();
  return y;
}

// Standard normalization backward for batch statistics (biased variance):
// dz = inv/N * (N*dxhat - sum(dxhat) - xhat * sum(dxhat .* xhat)).
Mat norm_backward(const Mat& dy, const Mat& xhat, const Vec& inv, const Vec& gamma, Vec& dgamma,
                  Vec& dbeta) {
  const double n = static_cast<double>(dy.rows());
  dgamma = (dy.array() * xhat.array()).colwise().sum().transpose();
  dbeta = dy.colwise().sum().transpose();
  Mat dxhat = (dy.array().rowwise() * gamma.transpose().array()).matrix();
  const Vec sum_dxhat = dxhat.colwise().sum().transpose();
  const Vec sum_dxhat_xhat = (dxhat.array() * xhat.array()).colwise().sum().transpose();
  Mat dz = n * dxhat;
  dz.rowwise() -= sum_dxhat.transpose();
  dz -= (xhat.array().rowwise() * sum_dxhat_xhat.transpose().array()).matrix();
  dz.array().rowwise() *= (inv / n).transpose().array();
  return dz;
}

}  // namespace

const std::array<TensorInfo, kNumTensors>& tensor_infos() {
  static const std::array<TensorInfo, kNumTensors> infos = {{
      {"enc1_W", ParamGroup::Encoder, false},
      {"enc1_b", ParamGroup::Encoder, false},
      {"norm1_gamma", ParamGroup::EncoderNorm, true},
      {"norm1_beta", ParamGroup::EncoderNorm, true},
      {"enc2_W", ParamGroup::Encoder, false},
      {"enc2_b", ParamGroup::Encoder, false},
      {"norm2_gamma", ParamGroup::EncoderNorm, true},
      {"norm2_beta", ParamGroup::EncoderNorm, true},
      {"dec1_W", ParamGroup::Decoder, false},
      {"dec1_b", ParamGroup::Decoder, false},
      {"dec2_W", ParamGroup::Decoder, false},
      {"dec2_b", ParamGroup::Decoder, false},
  }};
  return infos;
}

std::array<Eigen::Map<Vec>, kNumTensors> tensor_views(TensorSet& t) {
  return {Eigen::Map<Vec>(t.enc1_W.data(), t.enc1_W.size()),
          Eigen::Map<Vec>(t.enc1_b.data(), t.enc1_b.size()),
          Eigen::Map<Vec>(t.norm1_gamma.data(), t.norm1_gamma.size()),
          Eigen::Map<Vec>(t.norm1_beta.data(), t.norm1_beta.size()),
          Eigen::Map<Vec>(t.enc2_W.data(), t.enc2_W.size()),
          Eigen::Map<Vec>(t.enc2_b.data(), t.enc2_b.size()),
          Eigen::Map<Vec>(t.norm2_gamma.data(), t.norm2_gamma.size()),
          Eigen::Map<Vec>(t.norm2_beta.data(), t.norm2_beta.size()),
          Eigen::Map<Vec>(t.dec1_W.data(), t.dec1_W.size()),
          Eigen::Map<Vec>(t.dec1_b.data(), t.dec1_b.size()),
          Eigen::Map<Vec>(t.dec2_W.data(), t.dec2_W.size()),
          Eigen::Map<Vec>(t.dec2_b.data(), t.dec2_b.size())};
}

std::array<Eigen::Map<const Vec>, kNumTensors> tensor_views(const TensorSet& t) {
  return {Eigen::Map<const Vec>(t.enc1_W.data(), t.enc1_W.size()),
          Eigen::Map<const Vec>(t.enc1_b.data(), t.enc1_b.size()),
          Eigen::Map<const Vec>(t.norm1_gamma.data(), t.norm1_gamma.size()),
          Eigen::Map<const Vec>(t.norm1_beta.data(), t.norm1_beta.size()),
          Eigen::Map<const Vec>(t.enc2_W.data(), t.enc2_W.size()),
          Eigen::Map<const Vec>(t.enc2_b.data(), t.enc2_b.size()),
          Eigen::Map<const Vec>(t.norm2_gamma.data(), t.norm2_gamma.size()),
          Eigen::Map<const Vec>(t.norm2_beta.data(), t.norm2_beta.size()),
          Eigen::Map<const Vec>(t.dec1_W.data(), t.dec1_W.size()),
          Eigen::Map<const Vec>(t.dec1_b.data(), t.dec1_b.size()),
          Eigen::Map<const Vec>(t.dec2_W.data(), t.dec2_W.size()),
          Eigen::Map<const Vec>(t.dec2_b.data(), t.dec2_b.size())};
}

TensorSet zeros_like(const ModelConfig& cfg) {
  TensorSet t;
  t.enc1_W = Mat::Zero(3, cfg.enc_hidden);
  t.enc1_b = Vec::Zero(cfg.enc_hidden);
  t.norm1_gamma = Vec::Zero(cfg.enc_hidden);
  t.norm1_beta = Vec::Zero(cfg.enc_hidden);
  t.enc2_W = Mat::Zero(cfg.enc_hidden, cfg.enc_feat);
  t.enc2_b = Vec::Zero(cfg.enc_feat);
  t.norm2_gamma = Vec::Zero(cfg.enc_feat);
  t.norm2_beta = Vec::Zero(cfg.enc_feat);
  t.dec1_W = Mat::Zero(2 * cfg.enc_feat, cfg.dec_hidden);
  t.dec1_b = Vec::Zero(cfg.dec_hidden);
  t.dec2_W = Mat::Zero(cfg.dec_hidden, cfg.joints);
  t.dec2_b = Vec::Zero(cfg.joints);
  return t;
}

ModelParams init_params(const ModelConfig& cfg, std::uint64_t seed) {
  if (cfg.joints < 1 || cfg.enc_hidden < 1 || cfg.enc_feat < 1 || cfg.dec_hidden < 1) {
    throw std::invalid_argument("init_params: layer sizes must be positive");
  }
  Rng rng(seed);
  ModelParams p;
  p.cfg = cfg;
  p.t = zeros_like(cfg);

  auto fill_uniform = [&rng](Mat& w, int fan_in) {
    const double s = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (Eigen::Index i = 0; i < w.rows(); ++i) {
      for (Eigen::Index j = 0; j < w.cols(); ++j) w(i, j) = rng.uniform(-s, s);
    }
  };
  fill_uniform(p.t.enc1_W, 3);
  fill_uniform(p.t.enc2_W, cfg.enc_hidden);
  fill_uniform(p.t.dec1_W, 2 * cfg.enc_feat);
  fill_uniform(p.t.dec2_W, cfg.dec_hidden);
  p.t.dec2_W *= 0.1;
  p.t.norm1_gamma.setOnes();
  p.t.norm2_gamma.setOnes();

  p.run_mean1 = Vec::Zero(cfg.enc_hidden);
  p.run_var1 = Vec::Ones(cfg.enc_hidden);
  p.run_mean2 = Vec::Zero(cfg.enc_feat);
  p.run_var2 = Vec::Ones(cfg.enc_feat);
  return p;
}

MaskMode parse_mask_mode(const std::string& name) {
  if (name == "all") return MaskMode::All;
  if (name == "feature_extractor_only") return MaskMode::FeatureExtractorOnly;
  if (name == "norm_layers_only") return MaskMode::NormLayersOnly;
  if (name == "freeze_heads") return MaskMode::FreezeHeads;
  throw std::invalid_argument("unknown mask mode '" + name + "'");
}

std::string to_string(MaskMode mode) {
  switch (mode) {
    case MaskMode::All: return "all";
    case MaskMode::FeatureExtractorOnly: return "feature_extractor_only";
    case MaskMode::NormLayersOnly: return "norm_layers_only";
    case MaskMode::FreezeHeads: return "freeze_heads";
  }
  throw std::invalid_argument("unknown mask mode");
}

ParamSubsetMask select_mask(MaskMode mode) {
  ParamSubsetMask mask;
  for (int i = 0; i < kNumTensors; ++i) {
    const ParamGroup g = tensor_infos()[i].group;
    switch (mode) {
      case MaskMode::All: mask.trainable[i] = true; break;
      case MaskMode::FeatureExtractorOnly:
      case MaskMode::FreezeHeads:
        mask.trainable[i] = g == ParamGroup::Encoder || g == ParamGroup::EncoderNorm;
        break;
      case MaskMode::NormLayersOnly: mask.trainable[i] = g == ParamGroup::EncoderNorm; break;
    }
  }
  return mask;
}

ForwardResult forward(const ModelParams& params, const PointCloud& cloud, bool training,
                      ForwardCache* cache) {
  const ModelConfig& cfg = params.cfg;
  const int n = cloud.size();
  if (n < 1) throw std::invalid_argument("forward: empty point cloud");
  if (!all_finite(cloud.points)) throw std::invalid_argument("forward: non-finite input points");

  ForwardCache local;
  ForwardCache& c = cache ? *cache : local;
  c.training = training;
  c.input = cloud.points;

  c.z1.noalias() = cloud.points * params.t.enc1_W;
  c.z1.rowwise() += params.t.enc1_b.transpose();
  check_finite(c.z1, "enc1");
  if (training) {
    NormOut no = normalize_batch(c.z1, cfg.norm_eps);
    c.xhat1 = std::move(no.xhat);
    c.mean1 = std::move(no.mean);
    c.inv1 = std::move(no.inv);
  } else {
    c.xhat1 = normalize_running(c.z1, params.run_mean1, params.run_var1, cfg.norm_eps);
  }
  c.a1 = leaky(affine(c.xhat1, params.t.norm1_gamma, params.t.norm1_beta), cfg.leak);
  check_finite(c.a1, "norm1");

  c.z2.noalias() = c.a1 * params.t.enc2_W;
  c.z2.rowwise() += params.t.enc2_b.transpose();
  check_finite(c.z2, "enc2");
  if (training) {
    NormOut no = normalize_batch(c.z2, cfg.norm_eps);
    c.xhat2 = std::move(no.xhat);
    c.mean2 = std::move(no.mean);
    c.inv2 = std::move(no.inv);
  } else {
    c.xhat2 = normalize_running(c.z2, params.run_mean2, params.run_var2, cfg.norm_eps);
  }
  c.a2 = leaky(affine(c.xhat2, params.t.norm2_gamma, params.t.norm2_beta), cfg.leak);
  check_finite(c.a2, "norm2");

  // Global max-pool over points, ties broken by the lowest row index.
  c.pool_idx.assign(cfg.enc_feat, 0);
  c.global_feat = Vec(cfg.enc_feat);
  for (int f = 0; f < cfg.enc_feat; ++f) {
    int best = 0;
    double best_val = c.a2(0, f);
    for (int i = 1; i < n; ++i) {
      if (c.a2(i, f) > best_val) {
        best_val = c.a2(i, f);
        best = i;
      }
    }
    c.pool_idx[f] = best;
    c.global_feat[f] = best_val;
  }

  c.dec_in.resize(n, 2 * cfg.enc_feat);
  c.dec_in.leftCols(cfg.enc_feat) = c.a2;
  c.dec_in.rightCols(cfg.enc_feat).rowwise() = c.global_feat.transpose();

  Mat z_d1 = c.dec_in * params.t.dec1_W;
  z_d1.rowwise() += params.t.dec1_b.transpose();
  check_finite(z_d1, "dec1");
  c.a_d1 = leaky(z_d1, cfg.leak);

  c.logits.noalias() = c.a_d1 * params.t.dec2_W;
  c.logits.rowwise() += params.t.dec2_b.transpose();
  check_finite(c.logits, "dec2");

  // Column-wise softmax over points.
  c.weights.resize(n, cfg.joints);
  for (int k = 0; k < cfg.joints; ++k) {
    const double m = c.logits.col(k).maxCoeff();
    c.weights.col(k) = (c.logits.col(k).array() - m).exp().matrix();
    c.weights.col(k) /= c.weights.col(k).sum();
  }
  check_finite(c.weights, "softmax");

  ForwardResult out;
  out.weight_map.weights = c.weights;
  out.pose.joints.noalias() = c.weights.transpose() * cloud.points;
  return out;
}

ForwardResult forward_and_update(ModelParams& params, const PointCloud& cloud, bool training,
                                 ForwardCache* cache) {
  ForwardCache local;
  ForwardCache& c = cache ? *cache : local;
  ForwardResult out = forward(params, cloud, training, &c);
  if (training) apply_running_update(params, c);
  return out;
}

void apply_running_update(ModelParams& params, const ForwardCache& cache) {
  if (!cache.training) throw std::logic_error("apply_running_update: inference-mode cache");
  const double m = params.cfg.norm_momentum;
  const double eps = params.cfg.norm_eps;
  const auto var_from_inv = [eps](const Vec& inv) -> Vec {
    return (inv.array().square().inverse() - eps).max(0.0).matrix();
  };
  params.run_mean1 = (1.0 - m) * params.run_mean1 + m * cache.mean1;
  params.run_var1 = (1.0 - m) * params.run_var1 + m * var_from_inv(cache.inv1);
  params.run_mean2 = (1.0 - m) * params.run_mean2 + m * cache.mean2;
  params.run_var2 = (1.0 - m) * params.run_var2 + m * var_from_inv(cache.inv2);
}

ModelGrads backward(const ModelParams& params, const ForwardCache& cache, const Mat3& grad_wrt_pose,
                    const ParamSubsetMask& mask) {
  const ModelConfig& cfg = params.cfg;
  if (!cache.training) {
    throw std::logic_error("backward: cache must come from a training-mode forward");
  }
  const int n = static_cast<int>(cache.input.rows());
  if (grad_wrt_pose.rows() != cfg.joints) {
    throw std::invalid_argument("backward: grad_wrt_pose has wrong joint count");
  }
  ModelGrads g = zeros_like(cfg);

  // Pose head: y_k = sum_i w_ik x_i  =>  dL/dw_ik = g_k . x_i.
  Mat dweights(n, cfg.joints);
  dweights.noalias() = cache.input * grad_wrt_pose.transpose();

  // Softmax backward per joint column.
  Mat dlogits(n, cfg.joints);
  for (int k = 0; k < cfg.joints; ++k) {
    const double dot = cache.weights.col(k).dot(dweights.col(k));
    dlogits.col(k) = (cache.weights.col(k).array() * (dweights.col(k).array() - dot)).matrix();
  }

  g.dec2_W.noalias() = cache.a_d1.transpose() * dlogits;
  g.dec2_b = dlogits.colwise().sum().transpose();
  Mat da_d1 = dlogits * params.t.dec2_W.transpose();

  Mat dz_d1 = (da_d1.array() * leaky_grad_from_output(cache.a_d1, cfg.leak).array()).matrix();
  g.dec1_W.noalias() = cache.dec_in.transpose() * dz_d1;
  g.dec1_b = dz_d1.colwise().sum().transpose();
  Mat ddec_in = dz_d1 * params.t.dec1_W.transpose();

  Mat da2 = ddec_in.leftCols(cfg.enc_feat);
  const Vec dglobal = ddec_in.rightCols(cfg.enc_feat).colwise().sum().transpose();
  for (int f = 0; f < cfg.enc_feat; ++f) da2(cache.pool_idx[f], f) += dglobal[f];

  Mat dy2 = (da2.array() * leaky_grad_from_output(cache.a2, cfg.leak).array()).matrix();
  Mat dz2 = norm_backward(dy2, cache.xhat2, cache.inv2, params.t.norm2_gamma, g.norm2_gamma,
                          g.norm2_beta);

  g.enc2_W.noalias() = cache.a1.transpose() * dz2;
  g.enc2_b = dz2.colwise().sum().transpose();
  Mat da1 = dz2 * params.t.enc2_W.transpose();

  Mat dy1 = (da1.array() * leaky_grad_from_output(cache.a1, cfg.leak).array()).matrix();
  Mat dz1 = norm_backward(dy1, cache.xhat1, cache.inv1, params.t.norm1_gamma, g.norm1_gamma,
                          g.norm1_beta);

  g.enc1_W.noalias() = cache.input.transpose() * dz1;
  g.enc1_b = dz1.colwise().sum().transpose();

  auto views = tensor_views(g);
  for (int i = 0; i < kNumTensors; ++i) {
    if (!mask.trainable[i]) views[i].setZero();
  }
  return g;
}

AdamState init_adam(const ModelConfig& cfg) {
  AdamState s;
  s.m = zeros_like(cfg);
  s.v = zeros_like(cfg);
  return s;
}

void adam_step(ModelParams& params, const ModelGrads& grads, AdamState& state,
               const AdamOptions& opts, const ParamSubsetMask& mask) {
  state.step += 1;
  const double bc1 = 1.0 - std::pow(opts.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(opts.beta2, static_cast<double>(state.step));

  auto p = tensor_views(params.t);
  auto gv = tensor_views(grads);
  auto mv = tensor_views(state.m);
  auto vv = tensor_views(state.v);
  for (int i = 0; i < kNumTensors; ++i) {
    if (!mask.trainable[i]) continue;
    Vec g = gv[i];
    if (opts.weight_decay != 0.0 && !tensor_infos()[i].decay_exempt) {
      g += opts.weight_decay * p[i];
    }
    mv[i] = opts.beta1 * mv[i] + (1.0 - opts.beta1) * g;
    vv[i] = opts.beta2 * vv[i].eval() + (1.0 - opts.beta2) * g.array().square().matrix();
    const Vec m_hat = mv[i] / bc1;
    const Vec v_hat = vv[i] / bc2;
    p[i] -= opts.lr * (m_hat.array() / (v_hat.array().sqrt() + opts.eps)).matrix();
  }
}

void ema_update(ModelParams& teacher, const ModelParams& student, double mu) {
  if (!same_architecture(teacher, student)) {
    throw std::invalid_argument("ema_update: architecture mismatch");
  }
  auto tv = tensor_views(teacher.t);
  auto sv = tensor_views(student.t);
  for (int i = 0; i < kNumTensors; ++i) tv[i] = mu * tv[i].eval() + (1.0 - mu) * sv[i];
  teacher.run_mean1 = mu * teacher.run_mean1 + (1.0 - mu) * student.run_mean1;
  teacher.run_var1 = mu * teacher.run_var1 + (1.0 - mu) * student.run_var1;
  teacher.run_mean2 = mu * teacher.run_mean2 + (1.0 - mu) * student.run_mean2;
  teacher.run_var2 = mu * teacher.run_var2 + (1.0 - mu) * student.run_var2;
}

bool same_architecture(const ModelParams& a, const ModelParams& b) { return a.cfg == b.cfg; }

}  // namespace anatpose
