#include "anatpose/io.hpp"

#include <cinttypes>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

namespace anatpose::io {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

double parse_double(const std::string& s) {
  std::size_t pos = 0;
  const double v = std::stod(s, &pos);
  if (pos != s.size()) throw std::runtime_error("malformed number '" + s + "'");
  return v;
}

json mat3_to_json(const Mat3& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    rows.push_back(json::array({m(i, 0), m(i, 1), m(i, 2)}));
  }
  return rows;
}

json vec_to_json(const Vec& v) {
  json out = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v[i]);
  return out;
}

Vec vec_from_json(const json& j) {
  Vec v(j.size());
  for (std::size_t i = 0; i < j.size(); ++i) v[static_cast<Eigen::Index>(i)] = j[i].get<double>();
  return v;
}

json mat_to_json(const Mat& m) {
  json out;
  out["rows"] = m.rows();
  out["cols"] = m.cols();
  json data = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) data.push_back(m(i, j));
  }
  out["data"] = std::move(data);
  return out;
}

Mat mat_from_json(const json& j) {
  const auto rows = j.at("rows").get<Eigen::Index>();
  const auto cols = j.at("cols").get<Eigen::Index>();
  const json& data = j.at("data");
  if (static_cast<Eigen::Index>(data.size()) != rows * cols) {
    throw std::runtime_error("matrix payload size mismatch");
  }
  Mat m(rows, cols);
  std::size_t k = 0;
  for (Eigen::Index i = 0; i < rows; ++i) {
    for (Eigen::Index jj = 0; jj < cols; ++jj) m(i, jj) = data[k++].get<double>();
  }
  return m;
}

json tensor_set_to_json(const TensorSet& t) {
  json out;
  out["enc1_W"] = mat_to_json(t.enc1_W);
  out["enc1_b"] = vec_to_json(t.enc1_b);
  out["norm1_gamma"] = vec_to_json(t.norm1_gamma);
  out["norm1_beta"] = vec_to_json(t.norm1_beta);
  out["enc2_W"] = mat_to_json(t.enc2_W);
  out["enc2_b"] = vec_to_json(t.enc2_b);
  out["norm2_gamma"] = vec_to_json(t.norm2_gamma);
  out["norm2_beta"] = vec_to_json(t.norm2_beta);
  out["dec1_W"] = mat_to_json(t.dec1_W);
  out["dec1_b"] = vec_to_json(t.dec1_b);
  out["dec2_W"] = mat_to_json(t.dec2_W);
  out["dec2_b"] = vec_to_json(t.dec2_b);
  return out;
}

TensorSet tensor_set_from_json(const json& j) {
  TensorSet t;
  t.enc1_W = mat_from_json(j.at("enc1_W"));
  t.enc1_b = vec_from_json(j.at("enc1_b"));
  t.norm1_gamma = vec_from_json(j.at("norm1_gamma"));
  t.norm1_beta = vec_from_json(j.at("norm1_beta"));
  t.enc2_W = mat_from_json(j.at("enc2_W"));
  t.enc2_b = vec_from_json(j.at("enc2_b"));
  t.norm2_gamma = vec_from_json(j.at("norm2_gamma"));
  t.norm2_beta = vec_from_json(j.at("norm2_beta"));
  t.dec1_W = mat_from_json(j.at("dec1_W"));
  t.dec1_b = vec_from_json(j.at("dec1_b"));
  t.dec2_W = mat_from_json(j.at("dec2_W"));
  t.dec2_b = vec_from_json(j.at("dec2_b"));
  return t;
}

json params_to_json(const ModelParams& p) {
  json out;
  out["tensors"] = tensor_set_to_json(p.t);
  out["run_mean1"] = vec_to_json(p.run_mean1);
  out["run_var1"] = vec_to_json(p.run_var1);
  out["run_mean2"] = vec_to_json(p.run_mean2);
  out["run_var2"] = vec_to_json(p.run_var2);
  return out;
}

void params_from_json(const json& j, ModelParams& p) {
  p.t = tensor_set_from_json(j.at("tensors"));
  p.run_mean1 = vec_from_json(j.at("run_mean1"));
  p.run_var1 = vec_from_json(j.at("run_var1"));
  p.run_mean2 = vec_from_json(j.at("run_mean2"));
  p.run_var2 = vec_from_json(j.at("run_var2"));
}

json config_to_json(const ModelConfig& c) {
  return json{{"joints", c.joints},
              {"enc_hidden", c.enc_hidden},
              {"enc_feat", c.enc_feat},
              {"dec_hidden", c.dec_hidden},
              {"leak", c.leak},
              {"norm_eps", c.norm_eps},
              {"norm_momentum", c.norm_momentum}};
}

ModelConfig config_from_json(const json& j) {
  ModelConfig c;
  c.joints = j.at("joints").get<int>();
  c.enc_hidden = j.at("enc_hidden").get<int>();
  c.enc_feat = j.at("enc_feat").get<int>();
  c.dec_hidden = j.at("dec_hidden").get<int>();
  c.leak = j.at("leak").get<double>();
  c.norm_eps = j.at("norm_eps").get<double>();
  c.norm_momentum = j.at("norm_momentum").get<double>();
  return c;
}

json load_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw std::runtime_error("failed to parse " + path.string() + ": " + e.what());
  }
  return j;
}

void write_json_file(const fs::path& path, const json& j) {
  write_text_file(path, j.dump(2) + "\n");
}

std::vector<std::pair<int, int>> pairs_from_json(const json& j, const char* field) {
  std::vector<std::pair<int, int>> out;
  for (const auto& e : j) {
    if (!e.is_array() || e.size() != 2) {
      throw std::runtime_error(std::string(field) + ": expected [a, b] pairs");
    }
    out.emplace_back(e[0].get<int>(), e[1].get<int>());
  }
  return out;
}

json pairs_to_json(const std::vector<std::pair<int, int>>& pairs) {
  json out = json::array();
  for (const auto& [a, b] : pairs) out.push_back(json::array({a, b}));
  return out;
}

}  // namespace

void save_ply(const fs::path& path, const PointCloud& cloud) {
  std::ostringstream out;
  out << "ply\nformat ascii 1.0\nelement vertex " << cloud.size()
      << "\nproperty double x\nproperty double y\nproperty double z\nend_header\n";
  for (Eigen::Index i = 0; i < cloud.points.rows(); ++i) {
    out << format_double(cloud.points(i, 0)) << ' ' << format_double(cloud.points(i, 1)) << ' '
        << format_double(cloud.points(i, 2)) << '\n';
  }
  write_text_file(path, out.str());
}

PointCloud load_ply(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::string line;
  long n = -1;
  bool header_done = false;
  while (std::getline(in, line)) {
    if (line.rfind("element vertex", 0) == 0) {
      n = std::stol(line.substr(15));
    } else if (line == "end_header") {
      header_done = true;
      break;
    }
  }
  if (!header_done || n < 0) throw std::runtime_error("malformed PLY header in " + path.string());
  Mat3 pts(n, 3);
  for (long i = 0; i < n; ++i) {
    if (!(in >> pts(i, 0) >> pts(i, 1) >> pts(i, 2))) {
      throw std::runtime_error("truncated PLY body in " + path.string());
    }
  }
  return PointCloud(std::move(pts));
}

void save_pose(const fs::path& path, const Pose& pose) {
  std::ostringstream out;
  for (Eigen::Index i = 0; i < pose.joints.rows(); ++i) {
    out << format_double(pose.joints(i, 0)) << ' ' << format_double(pose.joints(i, 1)) << ' '
        << format_double(pose.joints(i, 2)) << '\n';
  }
  write_text_file(path, out.str());
}

Pose load_pose(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::vector<std::array<double, 3>> rows;
  double x, y, z;
  while (in >> x >> y >> z) rows.push_back({x, y, z});
  if (rows.empty()) throw std::runtime_error("empty pose file " + path.string());
  Mat3 joints(rows.size(), 3);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    joints(static_cast<Eigen::Index>(i), 0) = rows[i][0];
    joints(static_cast<Eigen::Index>(i), 1) = rows[i][1];
    joints(static_cast<Eigen::Index>(i), 2) = rows[i][2];
  }
  return Pose(std::move(joints));
}

void save_skeleton(const fs::path& path, const SkeletonSpec& spec) {
  json j;
  j["joint_names"] = spec.joint_names;
  j["bones"] = pairs_to_json(spec.bones);
  j["symmetric_pairs"] = pairs_to_json(spec.symmetric_pairs);
  j["connected_pairs"] = pairs_to_json(spec.connected_pairs);
  j["root_joint_index"] = spec.root_joint_index;
  if (!spec.joint_groups.empty()) j["joint_groups"] = spec.joint_groups;
  write_json_file(path, j);
}

SkeletonSpec load_skeleton(const fs::path& path) {
  const json j = load_json_file(path);
  SkeletonSpec spec;
  spec.joint_names = j.at("joint_names").get<std::vector<std::string>>();
  spec.bones = pairs_from_json(j.at("bones"), "bones");
  spec.symmetric_pairs = pairs_from_json(j.at("symmetric_pairs"), "symmetric_pairs");
  spec.connected_pairs = pairs_from_json(j.at("connected_pairs"), "connected_pairs");
  spec.root_joint_index = j.at("root_joint_index").get<int>();
  if (j.contains("joint_groups")) {
    spec.joint_groups = j.at("joint_groups").get<std::map<std::string, std::vector<int>>>();
  }
  return spec;
}

void save_bounds(const fs::path& path, const AnatomicalBounds& bounds) {
  json j;
  j["sym_tol"] = vec_to_json(bounds.sym_tol);
  j["length_lo"] = vec_to_json(bounds.length_lo);
  j["length_hi"] = vec_to_json(bounds.length_hi);
  j["angle_lo"] = vec_to_json(bounds.angle_lo);
  j["angle_hi"] = vec_to_json(bounds.angle_hi);
  write_json_file(path, j);
}

AnatomicalBounds load_bounds(const fs::path& path) {
  const json j = load_json_file(path);
  AnatomicalBounds b;
  b.sym_tol = vec_from_json(j.at("sym_tol"));
  b.length_lo = vec_from_json(j.at("length_lo"));
  b.length_hi = vec_from_json(j.at("length_hi"));
  b.angle_lo = vec_from_json(j.at("angle_lo"));
  b.angle_hi = vec_from_json(j.at("angle_hi"));
  return b;
}

void save_checkpoint(const fs::path& path, const ModelState& state) {
  json j;
  j["format"] = "anatpose-checkpoint-v1";
  j["model"] = config_to_json(state.student.cfg);
  j["epoch"] = state.epoch;
  j["seed"] = state.seed;
  j["student"] = params_to_json(state.student);
  j["teacher"] = params_to_json(state.teacher);
  j["optimizer"] = json{{"step", state.opt.step},
                        {"m", tensor_set_to_json(state.opt.m)},
                        {"v", tensor_set_to_json(state.opt.v)}};
  write_json_file(path, j);
}

ModelState load_checkpoint(const fs::path& path) {
  const json j = load_json_file(path);
  if (j.value("format", "") != "anatpose-checkpoint-v1") {
    throw std::runtime_error(path.string() + " is not an anatpose checkpoint");
  }
  ModelState state;
  const ModelConfig cfg = config_from_json(j.at("model"));
  state.student.cfg = cfg;
  state.teacher.cfg = cfg;
  params_from_json(j.at("student"), state.student);
  params_from_json(j.at("teacher"), state.teacher);
  state.opt.step = j.at("optimizer").at("step").get<long>();
  state.opt.m = tensor_set_from_json(j.at("optimizer").at("m"));
  state.opt.v = tensor_set_from_json(j.at("optimizer").at("v"));
  state.epoch = j.at("epoch").get<int>();
  state.seed = j.at("seed").get<std::uint64_t>();
  return state;
}

std::string read_text_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const fs::path& path, const std::string& content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << content;
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

std::string content_hash(const fs::path& path) {
  const std::string data = read_text_file(path);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : data) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016" PRIx64, h);
  return buf;
}

fs::path cloud_path(const fs::path& dir, int index) {
  char name[32];
  std::snprintf(name, sizeof(name), "cloud_%05d.ply", index);
  return dir / name;
}

fs::path pose_path(const fs::path& dir, int index) {
  char name[32];
  std::snprintf(name, sizeof(name), "pose_%05d.txt", index);
  return dir / name;
}

SplitData load_split(const fs::path& dir, bool require_poses) {
  if (!fs::is_directory(dir)) throw std::runtime_error("split directory not found: " + dir.string());
  SplitData data;
  for (int i = 0;; ++i) {
    const fs::path cp = cloud_path(dir, i);
    if (!fs::exists(cp)) break;
    data.clouds.push_back(load_ply(cp));
    const fs::path pp = pose_path(dir, i);
    if (fs::exists(pp)) {
      data.poses.push_back(load_pose(pp));
    } else if (require_poses) {
      throw std::runtime_error("missing pose file " + pp.string());
    }
  }
  if (data.clouds.empty()) throw std::runtime_error("no samples in split " + dir.string());
  return data;
}

void save_sample(const fs::path& dir, int index, const PointCloud& cloud, const Pose& pose) {
  save_ply(cloud_path(dir, index), cloud);
  save_pose(pose_path(dir, index), pose);
}

}  // namespace anatpose::io
