#include "anatpose/eval.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <sstream>
#include <thread>

namespace anatpose {

JointErrors mpjpe(const std::vector<Pose>& pred, const std::vector<Pose>& gt) {
  if (pred.size() != gt.size() || pred.empty()) {
    throw std::invalid_argument("mpjpe: prediction/ground-truth counts differ or are empty");
  }
  const int k = gt[0].num_joints();
  JointErrors out;
  out.per_joint = Vec::Zero(k);
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (pred[i].num_joints() != k || gt[i].num_joints() != k) {
      throw std::invalid_argument("mpjpe: joint count mismatch at sample " + std::to_string(i));
    }
    out.per_joint += (pred[i].joints - gt[i].joints).rowwise().norm();
  }
  out.per_joint /= static_cast<double>(pred.size());
  out.mean = out.per_joint.mean();
  out.sample_count = static_cast<int>(pred.size());
  return out;
}

double mpjpe_subset(const JointErrors& errors, const std::vector<int>& subset) {
  if (subset.empty()) throw std::invalid_argument("mpjpe_subset: empty subset");
  double sum = 0.0;
  for (int j : subset) {
    if (j < 0 || j >= errors.per_joint.size()) {
      throw std::invalid_argument("mpjpe_subset: joint index out of range");
    }
    sum += errors.per_joint[j];
  }
  return sum / static_cast<double>(subset.size());
}

PlausibilityReport plausibility_report(const std::vector<Pose>& poses, const SkeletonSpec& spec,
                                       const AnatomicalBounds& bounds) {
  if (poses.empty()) throw std::invalid_argument("plausibility_report: empty pose list");
  PlausibilityReport rep;
  for (const Pose& pose : poses) {
    const PlausibilityTriple t = plausibility_triple(pose, spec, bounds);
    rep.rate_sym += t.sym > 0.0 ? 1.0 : 0.0;
    rep.rate_length += t.length > 0.0 ? 1.0 : 0.0;
    rep.rate_angle += t.angle > 0.0 ? 1.0 : 0.0;
    rep.mean_sym += t.sym;
    rep.mean_length += t.length;
    rep.mean_angle += t.angle;
    rep.mean_anat += t.sum();
  }
  const double n = static_cast<double>(poses.size());
  rep.rate_sym /= n;
  rep.rate_length /= n;
  rep.rate_angle /= n;
  rep.mean_sym /= n;
  rep.mean_length /= n;
  rep.mean_angle /= n;
  rep.mean_anat /= n;
  rep.sample_count = static_cast<int>(poses.size());
  return rep;
}

EvalReport evaluate_poses(const std::vector<Pose>& pred, const std::vector<Pose>& gt,
                          const SkeletonSpec& spec, const AnatomicalBounds* bounds) {
  EvalReport rep;
  rep.errors = mpjpe(pred, gt);
  for (const auto& [name, indices] : spec.joint_groups) {
    rep.group_means[name] = mpjpe_subset(rep.errors, indices);
  }
  if (bounds != nullptr) rep.plausibility = plausibility_report(pred, spec, *bounds);
  return rep;
}

EvalReport mean_pose_baseline(const std::vector<Pose>& train, const std::vector<Pose>& test,
                              int root_index, const SkeletonSpec& spec) {
  if (train.empty() || test.empty()) throw std::invalid_argument("mean_pose_baseline: empty split");
  const int k = train[0].num_joints();
  if (root_index < 0 || root_index >= k) {
    throw std::invalid_argument("mean_pose_baseline: root index out of range");
  }
  Mat3 mean = Mat3::Zero(k, 3);
  for (const Pose& p : train) {
    Mat3 centered = p.joints;
    centered.rowwise() -= p.joints.row(root_index);
    mean += centered;
  }
  mean /= static_cast<double>(train.size());

  std::vector<Pose> preds, gts;
  preds.reserve(test.size());
  gts.reserve(test.size());
  for (const Pose& p : test) {
    Mat3 centered = p.joints;
    centered.rowwise() -= p.joints.row(root_index);
    gts.push_back(Pose(std::move(centered)));
    preds.push_back(Pose(mean));
  }
  return evaluate_poses(preds, gts, spec, nullptr);
}

double incomplete_beta(double a, double b, double x) {
  if (x < 0.0 || x > 1.0) throw std::invalid_argument("incomplete_beta: x outside [0, 1]");
  if (x == 0.0) return 0.0;
  if (x == 1.0) return 1.0;

  // Continued fraction (modified Lentz), using the symmetry relation when x
  // is past the bulk of the distribution.
  const double ln_front =
      std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) + b * std::log1p(-x);
  const bool swap = x >= (a + 1.0) / (a + b + 2.0);
  const double aa = swap ? b : a;
  const double bb = swap ? a : b;
  const double xx = swap ? 1.0 - x : x;

  constexpr double tiny = 1e-300;
  constexpr double eps = 1e-15;
  double c = 1.0;
  double d = 1.0 - (aa + bb) * xx / (aa + 1.0);
  if (std::fabs(d) < tiny) d = tiny;
  d = 1.0 / d;
  double f = d;
  for (int m = 1; m <= 300; ++m) {
    const double dm = static_cast<double>(m);
    double num = dm * (bb - dm) * xx / ((aa + 2.0 * dm - 1.0) * (aa + 2.0 * dm));
    d = 1.0 + num * d;
    if (std::fabs(d) < tiny) d = tiny;
    c = 1.0 + num / c;
    if (std::fabs(c) < tiny) c = tiny;
    d = 1.0 / d;
    f *= d * c;
    num = -(aa + dm) * (aa + bb + dm) * xx / ((aa + 2.0 * dm) * (aa + 2.0 * dm + 1.0));
    d = 1.0 + num * d;
    if (std::fabs(d) < tiny) d = tiny;
    c = 1.0 + num / c;
    if (std::fabs(c) < tiny) c = tiny;
    d = 1.0 / d;
    const double delta = d * c;
    f *= delta;
    if (std::fabs(delta - 1.0) < eps) break;
  }
  const double front = std::exp(ln_front + (swap ? b * 0.0 : 0.0));
  const double result = front * f / aa;
  return swap ? 1.0 - result : result;
}

PearsonResult pearson(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size()) throw std::invalid_argument("pearson: length mismatch");
  const std::size_t n = x.size();
  if (n < 3) throw std::invalid_argument("pearson: need at least 3 samples");

  const double nx = static_cast<double>(n);
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= nx;
  my /= nx;
  double sxx = 0.0, syy = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dx = x[i] - mx;
    const double dy = y[i] - my;
    sxx += dx * dx;
    syy += dy * dy;
    sxy += dx * dy;
  }
  if (sxx == 0.0 || syy == 0.0) throw std::invalid_argument("pearson: zero variance");

  PearsonResult out;
  out.r = sxy / std::sqrt(sxx * syy);
  const double r2 = std::min(out.r * out.r, 1.0);
  if (r2 >= 1.0) {
    out.p = 0.0;
    return out;
  }
  const double dof = nx - 2.0;
  const double t2 = r2 * dof / (1.0 - r2);
  // Two-sided p for Student's t: I_{dof/(dof+t^2)}(dof/2, 1/2).
  out.p = incomplete_beta(dof / 2.0, 0.5, dof / (dof + t2));
  return out;
}

std::vector<CorrelationRow> correlation_from_poses(const std::vector<Pose>& pred,
                                                   const std::vector<Pose>& gt,
                                                   const SkeletonSpec& spec,
                                                   const AnatomicalBounds& bounds) {
  if (pred.size() != gt.size() || pred.empty()) {
    throw std::invalid_argument("correlation_from_poses: size mismatch");
  }
  std::vector<double> err(pred.size());
  std::vector<double> sym(pred.size()), length(pred.size()), angle(pred.size()), anat(pred.size());
  for (std::size_t i = 0; i < pred.size(); ++i) {
    err[i] = (pred[i].joints - gt[i].joints).rowwise().norm().mean();
    const PlausibilityTriple t = plausibility_triple(pred[i], spec, bounds);
    sym[i] = t.sym;
    length[i] = t.length;
    angle[i] = t.angle;
    anat[i] = t.sum();
  }
  std::vector<CorrelationRow> rows;
  for (const auto& [name, values] :
       std::initializer_list<std::pair<const char*, const std::vector<double>*>>{
           {"sym", &sym}, {"length", &length}, {"angle", &angle}, {"anat", &anat}}) {
    const PearsonResult pr = pearson(*values, err);
    rows.push_back({name, pr.r, pr.p});
  }
  return rows;
}

std::vector<Pose> run_inference(const ModelParams& params, const std::vector<PointCloud>& clouds,
                                int threads) {
  std::vector<Pose> out(clouds.size());
  auto work = [&](std::size_t i) { out[i] = forward(params, clouds[i], false).pose; };
  if (threads <= 1) {
    for (std::size_t i = 0; i < clouds.size(); ++i) work(i);
  } else {
    std::vector<std::thread> pool;
    std::atomic<std::size_t> next{0};
    for (int w = 0; w < threads; ++w) {
      pool.emplace_back([&] {
        for (std::size_t i = next.fetch_add(1); i < clouds.size(); i = next.fetch_add(1)) work(i);
      });
    }
    for (auto& th : pool) th.join();
  }
  return out;
}

std::vector<CorrelationRow> correlation_study(const ModelParams& params,
                                              const std::vector<PointCloud>& clouds,
                                              const std::vector<Pose>& gt,
                                              const SkeletonSpec& spec,
                                              const AnatomicalBounds& bounds) {
  return correlation_from_poses(run_inference(params, clouds), gt, spec, bounds);
}

std::string format_report_table(const EvalReport& report, const SkeletonSpec& spec) {
  std::ostringstream out;
  out << std::fixed << std::setprecision(4);
  out << "joint                     mpjpe_m\n";
  for (Eigen::Index j = 0; j < report.errors.per_joint.size(); ++j) {
    const std::string name =
        j < static_cast<Eigen::Index>(spec.joint_names.size()) ? spec.joint_names[j] : "?";
    out << std::left << std::setw(26) << name << report.errors.per_joint[j] << '\n';
  }
  for (const auto& [name, value] : report.group_means) {
    out << std::left << std::setw(26) << ("group:" + name) << value << '\n';
  }
  out << std::left << std::setw(26) << "mean" << report.errors.mean << '\n';
  if (report.plausibility) {
    const PlausibilityReport& p = *report.plausibility;
    out << std::left << std::setw(26) << "violation_rate_sym" << p.rate_sym << '\n'
        << std::left << std::setw(26) << "violation_rate_length" << p.rate_length << '\n'
        << std::left << std::setw(26) << "violation_rate_angle" << p.rate_angle << '\n'
        << std::left << std::setw(26) << "mean_anat_loss" << p.mean_anat << '\n';
  }
  return out.str();
}

}  // namespace anatpose
