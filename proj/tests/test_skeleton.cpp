#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "anatpose/anatomy.hpp"
#include "anatpose/datagen.hpp"
#include "anatpose/skeleton.hpp"
#include "test_helpers.hpp"

using namespace anatpose;

TEST_CASE("bone_vectors follows child minus parent") {
  SkeletonSpec s;
  s.joint_names = {"A", "B"};
  s.bones = {{0, 1}};
  s.root_joint_index = 0;

  Mat3 joints(2, 3);
  joints << 0, 0, 0, 0, 0, 1;
  const Mat3 bv = bone_vectors(Pose(joints), s);
  CHECK(bv(0, 0) == 0.0);
  CHECK(bv(0, 1) == 0.0);
  CHECK(bv(0, 2) == 1.0);

  Mat3 j2(2, 3);
  j2 << 1, 2, 3, 4, 6, 3;
  const Mat3 bv2 = bone_vectors(Pose(j2), s);
  CHECK(bv2(0, 0) == 3.0);
  CHECK(bv2(0, 1) == 4.0);
  CHECK(bv2(0, 2) == 0.0);
  CHECK(bv2.row(0).norm() == doctest::Approx(5.0).epsilon(1e-15));
}

TEST_CASE("bone_vectors of coincident joints is zero") {
  const SkeletonSpec s = testing::chain_spec();
  Mat3 joints = Mat3::Constant(s.num_joints(), 3, 0.7);
  const Mat3 bv = bone_vectors(Pose(joints), s);
  CHECK(bv.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("bone_vectors rejects joint count mismatch") {
  const SkeletonSpec s = testing::chain_spec();
  CHECK_THROWS_AS(bone_vectors(Pose(Mat3::Zero(3, 3)), s), std::invalid_argument);
}

TEST_CASE("bone_vectors is translation invariant") {
  // Exact equality needs exact additions: quantize coordinates and the
  // translation to a common power-of-two grid.
  const SkeletonSpec s = testing::chain_spec();
  Rng rng(7);
  const double grid = 0x1.0p-20;
  auto quantize = [grid](double v) { return std::round(v / grid) * grid; };
  for (int trial = 0; trial < 20; ++trial) {
    Pose p = testing::random_pose(s, rng);
    p.joints = p.joints.unaryExpr(quantize);
    Mat3 shifted = p.joints;
    const Vec3 t(quantize(rng.uniform(-3, 3)), quantize(rng.uniform(-3, 3)),
                 quantize(rng.uniform(-3, 3)));
    shifted.rowwise() += t.transpose();
    CHECK(bone_vectors(p, s) == bone_vectors(Pose(shifted), s));
  }
}

TEST_CASE("derive_bounds takes min/max over poses") {
  SkeletonSpec s;
  s.joint_names = {"A", "B"};
  s.bones = {{0, 1}};
  s.root_joint_index = 0;

  Mat3 j1(2, 3);
  j1 << 0, 0, 0, 0.4, 0, 0;
  SUBCASE("singleton") {
    const AnatomicalBounds b = derive_bounds({Pose(j1)}, s);
    CHECK(b.length_lo[0] == doctest::Approx(0.4).epsilon(1e-15));
    CHECK(b.length_lo[0] == b.length_hi[0]);
  }
  SUBCASE("two poses") {
    Mat3 j2(2, 3);
    j2 << 0, 0, 0, 0, 0.3, 0;
    Mat3 j3(2, 3);
    j3 << 0, 0, 0, 0, 0, 0.5;
    const AnatomicalBounds b = derive_bounds({Pose(j2), Pose(j3)}, s);
    CHECK(b.length_lo[0] == doctest::Approx(0.3).epsilon(1e-15));
    CHECK(b.length_hi[0] == doctest::Approx(0.5).epsilon(1e-15));
  }
}

TEST_CASE("derive_bounds: collinear chain gives angle bounds (1, 1)") {
  const SkeletonSpec s = testing::chain_spec();
  Mat3 joints = Mat3::Zero(5, 3);
  joints.row(1) << 1, 0, 0;
  joints.row(2) << 2, 0, 0;
  joints.row(3) << 0, 1, 0;
  joints.row(4) << 0, -1, 0;
  const AnatomicalBounds b = derive_bounds({Pose(joints), Pose(joints)}, s);
  CHECK(b.angle_lo[0] == 1.0);
  CHECK(b.angle_hi[0] == 1.0);
}

TEST_CASE("derive_bounds rejects empty list and degenerate connected bones") {
  const SkeletonSpec s = testing::chain_spec();
  CHECK_THROWS_AS(derive_bounds({}, s), std::invalid_argument);
  Mat3 joints = Mat3::Zero(5, 3);  // bone 0 and 1 both zero length
  joints.row(3) << 0, 1, 0;
  joints.row(4) << 0, -1, 0;
  CHECK_THROWS_AS(derive_bounds({Pose(joints)}, s), std::invalid_argument);
}

TEST_CASE("derive_bounds is permutation invariant") {
  const SkeletonSpec s = testing::chain_spec();
  Rng rng(11);
  std::vector<Pose> poses;
  for (int i = 0; i < 8; ++i) poses.push_back(testing::random_pose(s, rng));
  const AnatomicalBounds a = derive_bounds(poses, s, 0.01);
  std::reverse(poses.begin(), poses.end());
  const AnatomicalBounds b = derive_bounds(poses, s, 0.01);
  CHECK(a.length_lo == b.length_lo);
  CHECK(a.length_hi == b.length_hi);
  CHECK(a.angle_lo == b.angle_lo);
  CHECK(a.angle_hi == b.angle_hi);
}

TEST_CASE("anatomical losses vanish on the training poses") {
  const BodyTemplate tmpl = default_body_template();
  Rng rng(3);
  std::vector<Pose> poses;
  for (int i = 0; i < 40; ++i) poses.push_back(sample_pose(tmpl, rng.uniform(0.8, 1.2), rng));
  const AnatomicalBounds bounds = derive_bounds(poses, tmpl.skeleton, 1e-9);
  for (const Pose& p : poses) {
    CHECK(anat_loss_value(p, tmpl.skeleton, bounds) == 0.0);
  }
}

TEST_CASE("validate_spec accepts the default skeleton") {
  CHECK(validate_spec(default_body_template().skeleton).empty());
}

TEST_CASE("validate_spec reports violations") {
  SkeletonSpec s = testing::chain_spec();
  SUBCASE("identical bones in a symmetric pair") {
    s.symmetric_pairs = {{3, 3}};
    const auto v = validate_spec(s);
    REQUIRE(!v.empty());
    bool found = false;
    for (const auto& msg : v) found = found || msg.find("identical bone") != std::string::npos;
    CHECK(found);
  }
  SUBCASE("connected pair without a shared joint") {
    s.connected_pairs = {{2, 1}};  // bone 1 starts at joint 1, bone 2 ends at joint 3
    const auto v = validate_spec(s);
    REQUIRE(!v.empty());
    CHECK(v[0].find("(2, 1)") != std::string::npos);
  }
  SUBCASE("duplicate edge") {
    s.bones.push_back({1, 0});
    const auto v = validate_spec(s);
    CHECK(!v.empty());
  }
  SUBCASE("root out of range") {
    s.root_joint_index = 99;
    CHECK(!validate_spec(s).empty());
  }
  SUBCASE("disconnected forest") {
    s.joint_names.push_back("x");
    s.joint_names.push_back("y");
    s.bones.push_back({5, 6});
    const auto v = validate_spec(s);
    CHECK(!v.empty());
  }
}

TEST_CASE("widen_bounds widens and clamps") {
  const SkeletonSpec s = testing::chain_spec();
  Rng rng(5);
  std::vector<Pose> poses;
  for (int i = 0; i < 5; ++i) poses.push_back(testing::random_pose(s, rng));
  const AnatomicalBounds b = derive_bounds(poses, s);
  const AnatomicalBounds w = widen_bounds(b, 0.1);
  for (Eigen::Index i = 0; i < b.length_lo.size(); ++i) {
    CHECK(w.length_lo[i] == doctest::Approx(b.length_lo[i] * 0.9));
    CHECK(w.length_hi[i] == doctest::Approx(b.length_hi[i] * 1.1));
  }
  for (Eigen::Index i = 0; i < b.angle_lo.size(); ++i) {
    CHECK(w.angle_lo[i] >= -1.0);
    CHECK(w.angle_hi[i] <= 1.0);
  }
}
