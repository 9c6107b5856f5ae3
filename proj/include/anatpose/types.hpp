#pragma once

#include <Eigen/Core>
#include <stdexcept>
#include <string>

namespace anatpose {

// Row-per-item 3D arrays: joints are rows of Pose::joints, points are rows
// of PointCloud::points. All coordinates in meters.
using Mat3 = Eigen::Matrix<double, Eigen::Dynamic, 3>;
using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;
using Vec3 = Eigen::Vector3d;

struct Pose {
  Mat3 joints;

  Pose() = default;
  explicit Pose(Mat3 j) : joints(std::move(j)) {}
  int num_joints() const { return static_cast<int>(joints.rows()); }
};

struct PointCloud {
  Mat3 points;

  PointCloud() = default;
  explicit PointCloud(Mat3 p) : points(std::move(p)) {}
  int size() const { return static_cast<int>(points.rows()); }
};

inline bool all_finite(const Mat3& m) { return m.allFinite(); }

// Rotation about the z-axis applied to each row.
inline Mat3 rotate_z(const Mat3& rows, double angle) {
  const double c = std::cos(angle);
  const double s = std::sin(angle);
  Mat3 out(rows.rows(), 3);
  for (Eigen::Index i = 0; i < rows.rows(); ++i) {
    const double x = rows(i, 0);
    const double y = rows(i, 1);
    out(i, 0) = c * x - s * y;
    out(i, 1) = s * x + c * y;
    out(i, 2) = rows(i, 2);
  }
  return out;
}

inline Mat3 translate(const Mat3& rows, const Vec3& t) {
  Mat3 out = rows;
  out.rowwise() += t.transpose();
  return out;
}

}  // namespace anatpose
