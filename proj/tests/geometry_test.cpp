#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include <widecam/errors.hpp>
#include <widecam/geometry.hpp>

namespace widecam {
namespace {

using Mat4l = Eigen::Matrix<long double, 4, 4>;

// exp of the 4x4 twist matrix by summing the first 20 series terms.
Mat4 series_exp(const Twist& t) {
  Mat4l a = Mat4l::Zero();
  const Eigen::Matrix<long double, 3, 1> w = t.tail<3>().cast<long double>();
  a(0, 1) = -w.z();
  a(0, 2) = w.y();
  a(1, 0) = w.z();
  a(1, 2) = -w.x();
  a(2, 0) = -w.y();
  a(2, 1) = w.x();
  a.topRightCorner<3, 1>() = t.head<3>().cast<long double>();
  Mat4l sum = Mat4l::Identity();
  Mat4l term = Mat4l::Identity();
  for (int k = 1; k < 20; ++k) {
    term = term * a / static_cast<long double>(k);
    sum += term;
  }
  return sum.cast<double>();
}

Twist random_twist(std::mt19937_64& rng, double scale) {
  std::uniform_real_distribution<double> u(-scale, scale);
  Twist t;
  for (int i = 0; i < 6; ++i) t[i] = u(rng);
  return t;
}

Pose random_pose(std::mt19937_64& rng) {
  Twist t = random_twist(rng, 1.0);
  t.tail<3>() *= 2.5;  // rotations up to a bit over pi / 2 per axis
  return se3_exp(t);
}

TEST(Se3Exp, ZeroIsIdentity) {
  const Pose p = se3_exp(Twist::Zero());
  EXPECT_TRUE(p.rotation.isIdentity(0.0));
  EXPECT_TRUE(p.translation.isZero(0.0));
}

TEST(Se3Exp, HalfTurnAboutZ) {
  Twist t = Twist::Zero();
  t[5] = std::numbers::pi;
  const Pose p = se3_exp(t);
  Mat3 expected;
  expected << -1, 0, 0, 0, -1, 0, 0, 0, 1;
  EXPECT_LT((p.rotation - expected).norm(), 1e-15);
  EXPECT_LT(p.translation.norm(), 1e-15);
}

TEST(Se3Exp, MatchesSeriesForSmallTwists) {
  std::mt19937_64 rng(7);
  for (int i = 0; i < 200; ++i) {
    const Twist t = random_twist(rng, 0.5);
    const Mat4 diff = se3_exp(t).matrix() - series_exp(t);
    EXPECT_LT(diff.cwiseAbs().maxCoeff(), 1e-12) << t.transpose();
  }
}

TEST(Se3Exp, MatchesSeriesNearZeroRotation) {
  for (double a : {0.0, 1e-12, 1e-9, 1e-7, 1e-5, 1e-3}) {
    Twist t;
    t << 0.3, -0.2, 0.1, a, -a, 0.5 * a;
    const Mat4 diff = se3_exp(t).matrix() - series_exp(t);
    EXPECT_LT(diff.cwiseAbs().maxCoeff(), 1e-15) << a;
  }
}

TEST(Se3Exp, ProducesValidRotations) {
  std::mt19937_64 rng(3);
  for (int i = 0; i < 200; ++i) {
    const Pose p = se3_exp(random_twist(rng, 3.0));
    EXPECT_LT((p.rotation.transpose() * p.rotation - Mat3::Identity()).norm(), 1e-12);
    EXPECT_NEAR(p.rotation.determinant(), 1.0, 1e-12);
  }
}

TEST(Se3Log, IdentityIsZero) { EXPECT_TRUE(se3_log(Pose::identity()).isZero(0.0)); }

TEST(Se3Log, PureRotationAboutX) {
  Pose p;
  p.rotation = Eigen::AngleAxisd(0.5, Vec3::UnitX()).toRotationMatrix();
  Twist expected;
  expected << 0, 0, 0, 0.5, 0, 0;
  EXPECT_LT((se3_log(p) - expected).norm(), 1e-15);
}

TEST(Se3Log, InvertsExpInsideUnitBall) {
  std::mt19937_64 rng(11);
  for (int i = 0; i < 500; ++i) {
    Twist t = random_twist(rng, 1.0);
    if (t.norm() > 1.0) t.normalize();
    EXPECT_LT((se3_log(se3_exp(t)) - t).cwiseAbs().maxCoeff(), 1e-10) << t.transpose();
  }
}

TEST(Se3Log, ExpInvertsLog) {
  std::mt19937_64 rng(5);
  for (int i = 0; i < 500; ++i) {
    const Pose p = random_pose(rng);
    const Mat4 diff = se3_exp(se3_log(p)).matrix() - p.matrix();
    EXPECT_LT(diff.cwiseAbs().maxCoeff(), 1e-10);
  }
}

TEST(Se3Log, NearHalfTurnIsOutOfDomain) {
  Pose p;
  p.rotation = Eigen::AngleAxisd(std::numbers::pi - 1e-8, Vec3::UnitY()).toRotationMatrix();
  EXPECT_THROW(se3_log(p), DomainError);
  p.rotation = Eigen::AngleAxisd(std::numbers::pi - 1e-4, Vec3::UnitY()).toRotationMatrix();
  EXPECT_NO_THROW(se3_log(p));
}

TEST(TransformPoint, IdentityAndTranslation) {
  const Vec3 x(0.3, -1.0, 2.0);
  EXPECT_EQ(transform_point(Pose::identity(), x), x);
  const Vec3 t0(1.0, 2.0, 3.0);
  EXPECT_EQ(transform_point(Pose(Mat3::Identity(), t0), Vec3::Zero()), t0);
}

TEST(TransformPoint, MatchesHomogeneousMultiply) {
  std::mt19937_64 rng(13);
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  for (int i = 0; i < 200; ++i) {
    const Pose p = random_pose(rng);
    const Vec3 x(u(rng), u(rng), u(rng));
    Eigen::Matrix<long double, 4, 1> xh(x.x(), x.y(), x.z(), 1.0L);
    const Eigen::Matrix<long double, 4, 1> yh = p.matrix().cast<long double>() * xh;
    const Vec3 expected = yh.head<3>().cast<double>();
    EXPECT_LT((transform_point(p, x) - expected).cwiseAbs().maxCoeff(), 1e-14);
  }
}

TEST(TransformPoint, PreservesDistances) {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int i = 0; i < 200; ++i) {
    const Pose p = random_pose(rng);
    const Vec3 a(u(rng), u(rng), u(rng)), b(u(rng), u(rng), u(rng));
    EXPECT_NEAR((transform_point(p, a) - transform_point(p, b)).norm(), (a - b).norm(), 1e-12);
  }
}

TEST(RightPerturbation, MatchesFiniteDifferences) {
  std::mt19937_64 rng(19);
  for (int i = 0; i < 50; ++i) {
    const Pose p = random_pose(rng);
    const Vec3 x(0.2, -0.1, 0.4);
    const Eigen::Matrix<double, 3, 6> j = right_perturbation_jacobian(p, x);
    for (int c = 0; c < 6; ++c) {
      Twist d = Twist::Zero();
      d[c] = 1e-6;
      const Vec3 fd = ((p * se3_exp(d)) * x - (p * se3_exp(-d)) * x) / 2e-6;
      EXPECT_LT((j.col(c) - fd).norm(), 1e-8);
    }
  }
}

TEST(PoseAlgebra, InverseComposesToIdentity) {
  std::mt19937_64 rng(23);
  const Pose p = random_pose(rng);
  const Mat4 m = (p * p.inverse()).matrix();
  EXPECT_LT((m - Mat4::Identity()).norm(), 1e-14);
}

}  // namespace
}  // namespace widecam
