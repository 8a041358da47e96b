#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <type_traits>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Core>
#include <Eigen/Eigenvalues>
#include <Eigen/LU>
#include <Eigen/SVD>
#include <Eigen/SparseCore>

#include <widecam/camera_model.hpp>
#include <widecam/dataset.hpp>
#include <widecam/errors.hpp>
#include <widecam/geometry.hpp>
#include <widecam/io.hpp>

namespace widecam {

struct SolverConfig {
  double huber_delta = 1.0;  // pixels; infinity gives plain least squares
  int max_iterations = 100;
  double gradient_tolerance = 1e-8;  // on |J^T W r|_inf
  double step_tolerance = 1e-10;     // on |ds|
  double backtrack_factor = 0.5;
  int max_halvings = 8;
  double damping_floor = 1e-12;
  double initial_damping = 1e-4;
  double max_damping = 1e16;
  int pose_refine_iterations = 10;
  int focal_grid_size = 20;
  int golden_iterations = 12;

  std::optional<std::string> check() const {
    if (!(huber_delta > 0.0)) return "huber_delta must be positive";
    if (max_iterations <= 0) return "max_iterations must be positive";
    if (!(gradient_tolerance > 0.0 && step_tolerance > 0.0)) return "tolerances must be positive";
    if (!(backtrack_factor > 0.0 && backtrack_factor < 1.0)) return "backtrack_factor must be in (0, 1)";
    if (max_halvings <= 0) return "max_halvings must be positive";
    if (!(damping_floor > 0.0 && initial_damping > 0.0 && max_damping > initial_damping)) {
      return "damping settings must be positive and ordered";
    }
    if (pose_refine_iterations <= 0 || focal_grid_size < 3 || golden_iterations <= 0) {
      return "initialization settings must be positive";
    }
    return std::nullopt;
  }
};

/// Intrinsics plus one board-to-camera pose per image, in detection order.
struct CalibState {
  CameraModel camera;
  std::vector<Pose> poses;

  int dimension() const { return camera.num_params() + 6 * static_cast<int>(poses.size()); }
};

/// Huber weight of one observation with residual norm e.
inline double huber_weight(double e, double delta) { return e <= delta ? 1.0 : delta / e; }

/// Huber cost of one observation: e^2 inside the threshold, linear outside.
inline double huber_cost(double e, double delta) {
  return e <= delta ? e * e : 2.0 * delta * e - delta * delta;
}

struct ObservationRef {
  int image = 0;   // index into detections.images
  int corner = 0;  // index into that image's corners
};

/// Stacked residuals r = pi(T x) - u, two rows per used observation, with the
/// Jacobian columns ordered [intrinsics | twist_1 | ... | twist_N].
struct ResidualSystem {
  Eigen::VectorXd r;
  Eigen::SparseMatrix<double> jacobian;
  Eigen::VectorXd weights;  // per row; both rows of an observation share one
  std::vector<ObservationRef> used;
  std::size_t dropped = 0;
  double cost = 0.0;  // robust cost over used observations
};

inline ResidualSystem residuals_and_jacobian(const CalibState& state, const DetectionSet& det,
                                             double huber_delta, bool with_jacobian = true) {
  const int n_int = state.camera.num_params();
  const std::size_t total = det.num_observations();
  ResidualSystem sys;
  std::vector<double> r;
  std::vector<double> w;
  std::vector<Eigen::Triplet<double>> triplets;
  r.reserve(2 * total);
  w.reserve(2 * total);
  if (with_jacobian) triplets.reserve(2 * total * (n_int + 6));

  for (std::size_t i = 0; i < det.images.size(); ++i) {
    const Pose& pose = state.poses[i];
    const auto& corners = det.images[i].corners;
    for (std::size_t c = 0; c < corners.size(); ++c) {
      const Vec3 x = det.board.corner(corners[c].id);
      const Vec3 pc = pose * x;
      if (!state.camera.in_omega(pc)) {
        ++sys.dropped;
        continue;
      }
      Vec2 pixel;
      ProjectJacobians jac;
      if (with_jacobian) {
        try {
          jac = state.camera.project_jacobians(pc);
        } catch (const Error&) {
          ++sys.dropped;
          continue;
        }
        pixel = jac.pixel;
      } else if (state.camera.try_project(pc, pixel) != Status::kOk) {
        ++sys.dropped;
        continue;
      }
      const Vec2 res = pixel - corners[c].pixel;
      const double e = res.norm();
      const double wt = huber_weight(e, huber_delta);
      const int row = static_cast<int>(r.size());
      r.push_back(res.x());
      r.push_back(res.y());
      w.push_back(wt);
      w.push_back(wt);
      sys.cost += huber_cost(e, huber_delta);
      sys.used.push_back({static_cast<int>(i), static_cast<int>(c)});

      if (with_jacobian) {
        const Eigen::Matrix<double, 2, 6> d_twist =
            jac.d_point * right_perturbation_jacobian(pose, x);
        const int col0 = n_int + 6 * static_cast<int>(i);
        for (int k = 0; k < 2; ++k) {
          for (int p = 0; p < n_int; ++p) triplets.emplace_back(row + k, p, jac.d_param(k, p));
          for (int p = 0; p < 6; ++p) triplets.emplace_back(row + k, col0 + p, d_twist(k, p));
        }
      }
    }
  }
  if (total > 0 && 2 * sys.dropped > total) {
    throw DivergenceError("more than half of the observations left the model domain (" +
                          std::to_string(sys.dropped) + " of " + std::to_string(total) + ")");
  }
  sys.r = Eigen::Map<Eigen::VectorXd>(r.data(), static_cast<Eigen::Index>(r.size()));
  sys.weights = Eigen::Map<Eigen::VectorXd>(w.data(), static_cast<Eigen::Index>(w.size()));
  if (with_jacobian) {
    sys.jacobian.resize(static_cast<Eigen::Index>(r.size()), state.dimension());
    sys.jacobian.setFromTriplets(triplets.begin(), triplets.end());
  }
  return sys;
}

/// J^T W J and J^T W r as dense matrices.
struct NormalEquations {
  Eigen::MatrixXd hessian;
  Eigen::VectorXd gradient;
};

inline NormalEquations normal_equations(const Eigen::VectorXd& r,
                                        const Eigen::SparseMatrix<double>& jacobian,
                                        const Eigen::VectorXd& weights) {
  const Eigen::SparseMatrix<double> wj = weights.asDiagonal() * jacobian;
  NormalEquations ne;
  ne.hessian = Eigen::MatrixXd(jacobian.transpose() * wj);
  ne.gradient = wj.transpose() * r;
  return ne;
}

/// Descent step ds = -(J^T W J + lambda D)^{-1} J^T W r with D = I, or the
/// given diagonal.
inline Eigen::VectorXd gauss_newton_step(const NormalEquations& ne, double lambda,
                                         const Eigen::VectorXd* damping_diagonal = nullptr) {
  Eigen::MatrixXd a = ne.hessian;
  if (damping_diagonal) {
    a.diagonal() += lambda * *damping_diagonal;
  } else {
    a.diagonal().array() += lambda;
  }
  const Eigen::LDLT<Eigen::MatrixXd> ldlt(a);
  if (ldlt.info() != Eigen::Success || !ldlt.isPositive()) {
    throw LinearSolveError("normal equations are not positive definite");
  }
  Eigen::VectorXd ds = ldlt.solve(-ne.gradient);
  if (!ds.allFinite()) throw LinearSolveError("normal equations solve produced non-finite values");
  return ds;
}

inline Eigen::VectorXd gauss_newton_step(const Eigen::VectorXd& r,
                                         const Eigen::SparseMatrix<double>& jacobian,
                                         const Eigen::VectorXd& weights, double lambda) {
  return gauss_newton_step(normal_equations(r, jacobian, weights), lambda);
}

namespace detail {

// Smallest d'(theta) over the samples of the KB monotonicity check, and the
// gradient of that sample's slope with respect to the coefficients.
inline double worst_slope(const Eigen::VectorXd& k, Eigen::VectorXd& normal) {
  using Kb = KannalaBrandt8Camera<>;
  double worst = std::numeric_limits<double>::infinity();
  Eigen::VectorXd n(k.size());
  for (int j = 0; j < Kb::kMonotonicSamples; ++j) {
    const double theta = Kb::kThetaMax * j / (Kb::kMonotonicSamples - 1);
    double slope = 1.0;
    for (Eigen::Index i = 0; i < k.size(); ++i) {
      n[i] = double(2 * i + 3) * std::pow(theta, double(2 * i + 2));
      slope += k[i] * n[i];
    }
    if (slope < worst) {
      worst = slope;
      normal = n;
    }
  }
  return worst;
}

inline constexpr double kSlopeMargin = 1e-3;

}  // namespace detail

/// Moves KB coefficients onto the set where d'(theta) >= margin at every
/// sample of the monotonicity check. d' is linear in k, so each violated
/// sample is a half-space and cyclic projection onto the worst one converges.
inline void project_monotone(Eigen::VectorXd& p, double margin = detail::kSlopeMargin) {
  const auto nk = p.size() - 4;
  Eigen::VectorXd normal(nk);
  for (int sweep = 0; sweep < 200; ++sweep) {
    const double worst = detail::worst_slope(p.tail(nk), normal);
    if (worst >= margin || normal.squaredNorm() == 0.0) return;
    p.tail(nk) += (margin - worst) / normal.squaredNorm() * normal;
  }
}

/// Pulls intrinsics back into the model domain where a simple box suffices.
inline void clamp_intrinsics(ModelKind kind, Eigen::VectorXd& p) {
  const double alpha_max = 1.0 - kAlphaEpsilon;
  switch (kind) {
    case ModelKind::kUcm: p[4] = std::clamp(p[4], 0.0, alpha_max); break;
    case ModelKind::kUcmXi: p[4] = std::max(p[4], 0.0); break;
    case ModelKind::kEucm:
      p[4] = std::clamp(p[4], 0.0, alpha_max);
      p[5] = std::clamp(p[5], 1e-3, 1e3);
      break;
    case ModelKind::kDs: p[5] = std::clamp(p[5], 0.0, alpha_max); break;
    case ModelKind::kFov: p[4] = std::clamp(p[4], 1e-3, std::numbers::pi - 1e-3); break;
    case ModelKind::kKb6:
    case ModelKind::kKb8: project_monotone(p); break;
    default: break;
  }
}

/// s (+) ds: intrinsics add and are clamped, poses update as T exp(dt).
/// Throws InvalidParameters if the clamped intrinsics are still invalid (for
/// example a KB polynomial that stops being monotonic).
inline CalibState apply_update(const CalibState& state, const Eigen::VectorXd& ds) {
  const int n_int = state.camera.num_params();
  if (ds.size() != state.dimension()) throw InvalidParameters("update has the wrong dimension");
  Eigen::VectorXd p = state.camera.params() + ds.head(n_int);
  clamp_intrinsics(state.camera.kind(), p);
  CalibState out{state.camera.with_params(p), state.poses};
  for (std::size_t i = 0; i < out.poses.size(); ++i) {
    const Twist dt = ds.segment<6>(n_int + 6 * static_cast<Eigen::Index>(i));
    out.poses[i] = out.poses[i] * se3_exp(dt);
  }
  return out;
}

namespace detail {

// DLT homography from board plane points to normalized image points, with
// isotropic (Hartley) normalization of both sides.
inline std::optional<Mat3> planar_homography(const std::vector<Vec2>& board,
                                             const std::vector<Vec2>& image) {
  const auto normalizer = [](const std::vector<Vec2>& pts) {
    Vec2 mean = Vec2::Zero();
    for (const auto& p : pts) mean += p;
    mean /= static_cast<double>(pts.size());
    double spread = 0.0;
    for (const auto& p : pts) spread += (p - mean).norm();
    spread /= static_cast<double>(pts.size());
    const double s = spread > 0.0 ? std::sqrt(2.0) / spread : 1.0;
    Mat3 t;
    t << s, 0, -s * mean.x(), 0, s, -s * mean.y(), 0, 0, 1;
    return t;
  };
  const Mat3 tb = normalizer(board);
  const Mat3 ti = normalizer(image);
  Eigen::MatrixXd a(2 * board.size(), 9);
  for (std::size_t k = 0; k < board.size(); ++k) {
    const Vec3 x = tb * board[k].homogeneous();
    const Vec3 y = ti * image[k].homogeneous();
    const auto row = static_cast<Eigen::Index>(2 * k);
    a.row(row) << 0, 0, 0, -x.x(), -x.y(), -1, y.y() * x.x(), y.y() * x.y(), y.y();
    a.row(row + 1) << x.x(), x.y(), 1, 0, 0, 0, -y.x() * x.x(), -y.x() * x.y(), -y.x();
  }
  const Eigen::SelfAdjointEigenSolver<Eigen::Matrix<double, 9, 9>> es(a.transpose() * a);
  const Eigen::Matrix<double, 9, 1> h = es.eigenvectors().col(0);
  Mat3 hn;
  hn << h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], h[8];
  const Mat3 out = ti.inverse() * hn * tb;
  if (!out.allFinite() || std::abs(out.determinant()) < 1e-12 * std::pow(out.norm(), 3)) {
    return std::nullopt;
  }
  return out;
}

// Exact homography through four correspondences with h33 = 1.
inline std::optional<Mat3> minimal_homography(const std::vector<Vec2>& board,
                                              const std::vector<Vec2>& image) {
  Eigen::Matrix<double, 8, 8> a;
  Eigen::Matrix<double, 8, 1> b;
  for (int k = 0; k < 4; ++k) {
    const double x = board[k].x(), y = board[k].y(), u = image[k].x(), v = image[k].y();
    a.row(2 * k) << x, y, 1, 0, 0, 0, -u * x, -u * y;
    a.row(2 * k + 1) << 0, 0, 0, x, y, 1, -v * x, -v * y;
    b[2 * k] = u;
    b[2 * k + 1] = v;
  }
  const Eigen::FullPivLU<Eigen::Matrix<double, 8, 8>> lu(a);
  if (!lu.isInvertible()) return std::nullopt;
  const Eigen::Matrix<double, 8, 1> h = lu.solve(b);
  Mat3 out;
  out << h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], 1.0;
  if (!out.allFinite()) return std::nullopt;
  return out;
}

// Angle between each bearing and the direction of the mapped board point.
inline std::vector<double> homography_angles(const Mat3& h, const std::vector<Vec2>& board,
                                             const std::vector<Vec3>& bearings) {
  std::vector<double> out(board.size());
  for (std::size_t k = 0; k < board.size(); ++k) {
    const Vec3 q = h * board[k].homogeneous();
    out[k] = std::atan2(q.cross(bearings[k]).norm(), std::abs(q.dot(bearings[k])));
  }
  return out;
}

inline double median_of(std::vector<double> v) {
  const auto mid = v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2);
  std::nth_element(v.begin(), mid, v.end());
  return *mid;
}

// Homography that tolerates gross mismatches: least median of squares over
// random 4-point samples, then a refit on the points within 2.5 robust sigmas.
// The sample stream is seeded from the point count, so results are repeatable.
inline std::optional<Mat3> robust_homography(const std::vector<Vec2>& board,
                                             const std::vector<Vec3>& bearings) {
  std::vector<Vec2> lifted;
  for (const auto& b : bearings) lifted.push_back(b.head<2>() / b.z());
  std::optional<Mat3> best = planar_homography(board, lifted);
  if (!best) return best;
  double best_med = median_of(homography_angles(*best, board, bearings));
  const std::size_t n = board.size();
  if (n < 6 || best_med < 1e-12) return best;

  std::mt19937_64 rng(n);
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::vector<Vec2> sb(4), si(4);
  for (int trial = 0; trial < 60; ++trial) {
    for (std::size_t k = 0; k < 4; ++k) {
      std::uniform_int_distribution<std::size_t> pick(k, n - 1);
      std::swap(idx[k], idx[pick(rng)]);
      sb[k] = board[idx[k]];
      si[k] = lifted[idx[k]];
    }
    const auto h = minimal_homography(sb, si);
    if (!h) continue;
    const double med = median_of(homography_angles(*h, board, bearings));
    if (med < best_med) {
      best_med = med;
      best = h;
    }
  }
  const double sigma = 1.4826 * (1.0 + 5.0 / static_cast<double>(n - 4)) * best_med;
  const auto angles = homography_angles(*best, board, bearings);
  std::vector<Vec2> ib, ii;
  for (std::size_t k = 0; k < n; ++k) {
    if (angles[k] <= 2.5 * sigma) {
      ib.push_back(board[k]);
      ii.push_back(lifted[k]);
    }
  }
  if (ib.size() >= 4) {
    if (auto refit = planar_homography(ib, ii)) return refit;
  }
  return best;
}

// Robust cost of one image under a given pose; a corner that leaves Omega
// costs as much as a residual of 1e3 px.
inline double image_cost(const CameraModel& cam, const BoardGeometry& board,
                         const ImageDetections& im, const Pose& pose, double delta) {
  double cost = 0.0;
  for (const auto& c : im.corners) {
    const Vec3 x = pose * board.corner(c.id);
    Vec2 u;
    const bool ok = cam.in_omega(x) && cam.try_project(x, u) == Status::kOk;
    cost += huber_cost(ok ? (u - c.pixel).norm() : 1e3, delta);
  }
  return cost;
}

// Gauss-Newton on one image's pose with fixed intrinsics; keeps the best pose.
inline Pose refine_pose(const CameraModel& cam, const BoardGeometry& board,
                        const ImageDetections& im, Pose pose, int iterations, double delta) {
  const auto evaluate = [&](const Pose& p, Eigen::MatrixXd* jtj, Eigen::VectorXd* jtr) {
    double cost = 0.0;
    if (jtj) jtj->setZero(6, 6);
    if (jtr) jtr->setZero(6);
    for (const auto& c : im.corners) {
      const Vec3 x = board.corner(c.id);
      const Vec3 pc = p * x;
      if (!cam.in_omega(pc)) return std::numeric_limits<double>::infinity();
      ProjectJacobians j;
      Vec2 u;
      if (jtj) {
        try {
          j = cam.project_jacobians(pc);
        } catch (const Error&) {
          return std::numeric_limits<double>::infinity();
        }
        u = j.pixel;
      } else if (cam.try_project(pc, u) != Status::kOk) {
        return std::numeric_limits<double>::infinity();
      }
      const Vec2 res = u - c.pixel;
      const double e = res.norm();
      cost += huber_cost(e, delta);
      if (jtj) {
        const Eigen::Matrix<double, 2, 6> jp = j.d_point * right_perturbation_jacobian(p, x);
        const double wt = huber_weight(e, delta);
        *jtj += wt * jp.transpose() * jp;
        *jtr += wt * jp.transpose() * res;
      }
    }
    return cost;
  };
  Eigen::MatrixXd h;
  Eigen::VectorXd g;
  double cost = evaluate(pose, &h, &g);
  if (!std::isfinite(cost)) return pose;
  double lambda = 1e-6 * std::max(1.0, h.diagonal().maxCoeff());
  for (int it = 0; it < iterations; ++it) {
    bool accepted = false;
    while (!accepted && lambda < 1e16 * std::max(1.0, h.diagonal().maxCoeff())) {
      Eigen::MatrixXd a = h;
      a.diagonal().array() += lambda;
      const Twist dt = a.ldlt().solve(-g);
      if (!dt.allFinite()) break;
      const Pose cand = pose * se3_exp(dt);
      const double c2 = evaluate(cand, nullptr, nullptr);
      if (c2 < cost) {
        pose = cand;
        cost = evaluate(pose, &h, &g);
        lambda = std::max(lambda / 10.0, 1e-12);
        accepted = true;
      } else {
        lambda *= 10.0;
      }
    }
    if (!accepted) break;
  }
  return pose;
}

}  // namespace detail

namespace detail {

// Pose from a homography between board coordinates and bearings expressed in
// frame, with the board in front of the camera.
inline Pose frame_pose(const Mat3& h, const std::vector<Vec2>& plane, const Mat3& frame) {
  Vec3 h1 = h.col(0), h2 = h.col(1), h3 = h.col(2);
  const double scale = 2.0 / (h1.norm() + h2.norm());
  h1 *= scale;
  h2 *= scale;
  h3 *= scale;
  double depth = 0.0;
  for (const auto& p : plane) depth += (h1 * p.x() + h2 * p.y() + h3).z();
  if (depth < 0.0) {
    h1 = -h1;
    h2 = -h2;
    h3 = -h3;
  }
  Mat3 r;
  r << h1, h2, h1.cross(h2);
  const Eigen::JacobiSVD<Mat3> svd(r, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat3 rot = svd.matrixU() * svd.matrixV().transpose();
  if (rot.determinant() < 0.0) {
    Mat3 u = svd.matrixU();
    u.col(2) *= -1.0;
    rot = u * svd.matrixV().transpose();
  }
  return {frame.transpose() * rot, frame.transpose() * h3};
}

}  // namespace detail

/// Initial board-to-camera pose of one image: lift the corner bearings onto
/// the plane tangent to their mean direction, fit board homographies (plain
/// and robust), decompose each with positive depths, refine each and its
/// mirror image with pose-only Gauss-Newton and keep the cheapest.
/// Throws DegenerateViewError for fewer than 4 usable or collinear corners.
inline Pose init_pose(const CameraModel& cam, const BoardGeometry& board,
                      const ImageDetections& im, int refine_iterations = 10,
                      double huber_delta = 1.0) {
  std::vector<Vec2> plane;
  std::vector<Vec3> bearings;
  Vec3 mean_dir = Vec3::Zero();
  for (const auto& c : im.corners) {
    Vec3 b;
    if (cam.try_unproject(c.pixel, b) != Status::kOk) continue;
    plane.push_back(board.corner(c.id).head<2>());
    bearings.push_back(b);
    mean_dir += b;
  }
  // Work in a frame whose z axis is the mean bearing, so boards seen near or
  // beyond 90 degrees still lift to finite points.
  const Mat3 frame = mean_dir.norm() > 1e-9 ? detail::look_rotation(mean_dir.normalized(), 0.0)
                                            : Mat3::Identity();
  {
    std::size_t kept = 0;
    for (std::size_t k = 0; k < bearings.size(); ++k) {
      const Vec3 b = frame * bearings[k];
      if (!(b.z() > 0.1)) continue;  // lifting is unstable near 90 degrees off the mean
      plane[kept] = plane[k];
      bearings[kept++] = b;
    }
    plane.resize(kept);
    bearings.resize(kept);
  }
  const std::string where = "image " + std::to_string(im.id);
  if (plane.size() < 4) throw DegenerateViewError(where + ": fewer than 4 usable corners");
  {
    Vec2 mean = Vec2::Zero();
    for (const auto& p : plane) mean += p;
    mean /= static_cast<double>(plane.size());
    Eigen::Matrix2d cov = Eigen::Matrix2d::Zero();
    for (const auto& p : plane) cov += (p - mean) * (p - mean).transpose();
    const Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> es(cov);
    if (!(es.eigenvalues()[0] > 1e-6 * es.eigenvalues()[1])) {
      throw DegenerateViewError(where + ": corners are collinear");
    }
  }
  std::vector<Mat3> fits;
  if (auto h = detail::planar_homography(plane, [&] {
        std::vector<Vec2> lifted;
        for (const auto& b : bearings) lifted.push_back(b.head<2>() / b.z());
        return lifted;
      }())) {
    fits.push_back(*h);
  }
  if (auto h = detail::robust_homography(plane, bearings)) fits.push_back(*h);
  if (fits.empty()) throw DegenerateViewError(where + ": homography is singular");

  Vec2 center = Vec2::Zero();
  for (const auto& p : plane) center += p;
  center /= static_cast<double>(plane.size());

  // Each fit and its mirror: a board seen at a grazing angle is nearly
  // indistinguishable from the one with its depths reflected about the line
  // of sight through its centre.
  Pose best;
  double best_cost = std::numeric_limits<double>::infinity();
  for (const Mat3& fit : fits) {
    const Pose p = detail::frame_pose(fit, plane, frame);
    const Vec3 c = p * Vec3(center.x(), center.y(), 0.0);
    const Vec3 v = c.normalized();
    const Mat3 mirror = Mat3::Identity() - 2.0 * v * v.transpose();
    const Mat3 r = mirror * p.rotation * Vec3(1, 1, -1).asDiagonal();
    const Pose flipped(r, c - r * Vec3(center.x(), center.y(), 0.0));
    for (const Pose& start : {p, flipped}) {
      const Pose refined = detail::refine_pose(cam, board, im, start, refine_iterations, huber_delta);
      const double cost = detail::image_cost(cam, board, im, refined, huber_delta);
      if (cost < best_cost) {
        best_cost = cost;
        best = refined;
      }
    }
  }
  return best;
}

inline std::vector<Pose> init_poses(const DetectionSet& det, const CameraModel& cam,
                                    int refine_iterations = 10, double huber_delta = 1.0) {
  std::vector<Pose> poses;
  poses.reserve(det.images.size());
  for (const auto& im : det.images) {
    poses.push_back(init_pose(cam, det.board, im, refine_iterations, huber_delta));
  }
  return poses;
}

/// Image size used for initialization: the declared one, or the bounding box
/// of the detections when the file does not state it.
inline std::pair<double, double> effective_image_size(const DetectionSet& det) {
  if (det.width > 0 && det.height > 0) return {double(det.width), double(det.height)};
  double w = 1.0, h = 1.0;
  for (const auto& im : det.images) {
    for (const auto& c : im.corners) {
      w = std::max(w, c.pixel.x());
      h = std::max(h, c.pixel.y());
    }
  }
  return {std::ceil(w), std::ceil(h)};
}

/// Intrinsics of the given kind with focal f and every shape parameter at its
/// neutral value. The UCM mirror form is built from the alpha form.
inline Eigen::VectorXd neutral_intrinsics(ModelKind kind, double f, double cx, double cy) {
  Eigen::VectorXd p(num_params(kind));
  p.head<4>() << f, f, cx, cy;
  switch (kind) {
    case ModelKind::kPinhole: break;
    case ModelKind::kUcm: p[4] = 0.5; break;
    case ModelKind::kUcmXi:
      p.head<2>() *= 2.0;  // gamma = f / (1 - alpha), alpha = 0.5
      p[4] = 1.0;          // xi = alpha / (1 - alpha)
      break;
    case ModelKind::kEucm: p.tail<2>() << 0.5, 1.0; break;
    case ModelKind::kKb6:
    case ModelKind::kKb8: p.tail(p.size() - 4).setZero(); break;
    case ModelKind::kFov: p[4] = 1.0; break;
    case ModelKind::kDs: p.tail<2>() << 0.0, 0.5; break;
  }
  return p;
}

/// Median reprojection error after pose initialization with a trial camera;
/// corners that cannot be initialized or projected count as the penalty.
inline double focal_score(const DetectionSet& det, const CameraModel& cam, int refine_iterations,
                          double huber_delta, double penalty, bool& any_valid) {
  std::vector<double> errors;
  errors.reserve(det.num_observations());
  for (const auto& im : det.images) {
    Pose pose;
    try {
      pose = init_pose(cam, det.board, im, refine_iterations, huber_delta);
    } catch (const Error&) {
      errors.insert(errors.end(), im.corners.size(), penalty);
      continue;
    }
    any_valid = true;
    for (const auto& c : im.corners) {
      Vec2 u;
      const Vec3 pc = pose * det.board.corner(c.id);
      const bool ok = cam.in_omega(pc) && cam.try_project(pc, u) == Status::kOk;
      errors.push_back(ok ? std::min((u - c.pixel).norm(), penalty) : penalty);
    }
  }
  return errors.empty() ? penalty : detail::median_of(std::move(errors));
}

/// Principal point at the image center, shape parameters neutral, focal from
/// a log-spaced grid over [0.1, 2] max(width, height) refined by golden
/// section. Throws InitializationError if no trial focal gives valid poses.
inline Eigen::VectorXd init_intrinsics(const DetectionSet& det, ModelKind kind,
                                       const SolverConfig& cfg = {}) {
  if (det.images.size() < 3) throw InitializationError("need at least 3 images");
  const auto [w, h] = effective_image_size(det);
  const double cx = 0.5 * w, cy = 0.5 * h;
  const double size = std::max(w, h);
  const double penalty = std::hypot(w, h);
  const int iters = std::max(1, cfg.pose_refine_iterations / 2);

  bool any_valid = false;
  const auto score = [&](double f) {
    const CameraModel cam =
        CameraModel::create(kind, neutral_intrinsics(kind, f, cx, cy), int(w), int(h));
    return focal_score(det, cam, iters, cfg.huber_delta, penalty, any_valid);
  };

  const int n = cfg.focal_grid_size;
  const double lo = std::log(0.1 * size), hi = std::log(2.0 * size);
  std::vector<double> fs(n), scores(n);
  for (int i = 0; i < n; ++i) {
    fs[i] = std::exp(lo + (hi - lo) * i / (n - 1));
    scores[i] = score(fs[i]);
  }
  if (!any_valid) throw InitializationError("no trial focal length gives valid poses");
  const int best = static_cast<int>(std::min_element(scores.begin(), scores.end()) - scores.begin());

  double a = std::log(fs[std::max(best - 1, 0)]);
  double b = std::log(fs[std::min(best + 1, n - 1)]);
  const double phi = 0.5 * (std::sqrt(5.0) - 1.0);
  double x1 = b - phi * (b - a), x2 = a + phi * (b - a);
  double s1 = score(std::exp(x1)), s2 = score(std::exp(x2));
  for (int it = 0; it < cfg.golden_iterations; ++it) {
    if (s1 < s2) {
      b = x2;
      x2 = x1;
      s2 = s1;
      x1 = b - phi * (b - a);
      s1 = score(std::exp(x1));
    } else {
      a = x1;
      x1 = x2;
      s1 = s2;
      x2 = a + phi * (b - a);
      s2 = score(std::exp(x2));
    }
  }
  double f = std::exp(0.5 * (a + b));
  if (scores[best] < std::min(s1, s2)) f = fs[best];
  return neutral_intrinsics(kind, f, cx, cy);
}

struct ImageResidualStats {
  int image_id = 0;
  std::size_t count = 0;
  double mean_px = 0.0;
  double max_px = 0.0;
};

struct CalibResult {
  CalibState state;
  std::vector<double> cost_trace;  // robust cost after each accepted step
  double mean_px = 0.0;
  double median_px = 0.0;
  double max_px = 0.0;
  std::vector<ImageResidualStats> per_image;
  std::size_t dropped = 0;
  int iterations = 0;
  bool converged = false;
  std::string reason;
};

/// Reprojection error of every observation (NaN where the point left Omega).
inline std::vector<std::vector<double>> reprojection_errors(const CalibState& state,
                                                            const DetectionSet& det) {
  std::vector<std::vector<double>> out(det.images.size());
  for (std::size_t i = 0; i < det.images.size(); ++i) {
    for (const auto& c : det.images[i].corners) {
      const Vec3 pc = state.poses[i] * det.board.corner(c.id);
      Vec2 u;
      const bool ok = state.camera.in_omega(pc) && state.camera.try_project(pc, u) == Status::kOk;
      out[i].push_back(ok ? (u - c.pixel).norm() : std::numeric_limits<double>::quiet_NaN());
    }
  }
  return out;
}

inline void fill_statistics(CalibResult& res, const DetectionSet& det) {
  const auto errors = reprojection_errors(res.state, det);
  std::vector<double> all;
  res.per_image.clear();
  res.dropped = 0;
  for (std::size_t i = 0; i < errors.size(); ++i) {
    ImageResidualStats st;
    st.image_id = det.images[i].id;
    for (double e : errors[i]) {
      if (std::isnan(e)) {
        ++res.dropped;
        continue;
      }
      all.push_back(e);
      ++st.count;
      st.mean_px += e;
      st.max_px = std::max(st.max_px, e);
    }
    if (st.count) st.mean_px /= static_cast<double>(st.count);
    res.per_image.push_back(st);
  }
  if (all.empty()) return;
  double sum = 0.0;
  for (double e : all) sum += e;
  res.mean_px = sum / static_cast<double>(all.size());
  res.max_px = *std::max_element(all.begin(), all.end());
  const std::size_t mid = all.size() / 2;
  std::nth_element(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(mid), all.end());
  res.median_px = all[mid];
  if (all.size() % 2 == 0) {
    res.median_px = 0.5 * (res.median_px + *std::max_element(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(mid)));
  }
}

namespace detail {

// For KB models, turns the damped step into one that keeps d' above the
// margin at the check samples: the violated samples become linear equality
// constraints on the step, added one at a time and solved through the
// Schur complement of the KKT system.
inline Eigen::VectorXd monotone_step(const NormalEquations& ne, double lambda,
                                     const Eigen::VectorXd& damping_diagonal,
                                     const Eigen::VectorXd& params, Eigen::VectorXd ds) {
  const auto nk = params.size() - 4;
  Eigen::MatrixXd m = ne.hessian;
  m.diagonal() += lambda * damping_diagonal;
  const Eigen::LDLT<Eigen::MatrixXd> ldlt(m);
  std::vector<Eigen::VectorXd> rows;
  std::vector<double> rhs;
  Eigen::VectorXd normal(nk);
  for (int it = 0; it < 8; ++it) {
    const double worst = worst_slope(params.tail(nk) + ds.segment(4, nk), normal);
    if (worst >= 0.5 * kSlopeMargin) return ds;
    Eigen::VectorXd row = Eigen::VectorXd::Zero(ds.size());
    row.segment(4, nk) = normal;
    // slope(k + dk) = slope(k) + normal . dk, and slope(k) = 1 + normal . k
    rows.push_back(row);
    rhs.push_back(kSlopeMargin - 1.0 - normal.dot(params.tail(nk)));
    const auto na = static_cast<Eigen::Index>(rows.size());
    Eigen::MatrixXd a(na, ds.size());
    Eigen::VectorXd b(na);
    for (Eigen::Index r = 0; r < na; ++r) {
      a.row(r) = rows[static_cast<std::size_t>(r)].transpose();
      b[r] = rhs[static_cast<std::size_t>(r)];
    }
    const Eigen::VectorXd free_step = ldlt.solve(-ne.gradient);
    const Eigen::MatrixXd minv_at = ldlt.solve(a.transpose());
    const Eigen::VectorXd mu = (a * minv_at).ldlt().solve(a * free_step - b);
    ds = free_step - minv_at * mu;
    if (!ds.allFinite()) break;
  }
  return ds;
}

// Views seen at grazing angles with rough starting intrinsics can start in
// the wrong pose basin and stay there. Re-initializes each pose from the
// current intrinsics and keeps the new one when it at least halves the cost
// of its image. Returns whether any pose changed.
inline bool reseed_poses(CalibState& state, const DetectionSet& det, const SolverConfig& cfg) {
  bool changed = false;
  for (std::size_t i = 0; i < det.images.size(); ++i) {
    const auto& im = det.images[i];
    const double before = image_cost(state.camera, det.board, im, state.poses[i], cfg.huber_delta);
    if (!(before > 1e-12)) continue;
    Pose fresh;
    try {
      fresh = init_pose(state.camera, det.board, im, cfg.pose_refine_iterations, cfg.huber_delta);
    } catch (const Error&) {
      continue;
    }
    const double after = image_cost(state.camera, det.board, im, fresh, cfg.huber_delta);
    if (after < 0.5 * before) {
      state.poses[i] = fresh;
      changed = true;
    }
  }
  return changed;
}

// Damped Gauss-Newton from state. Appends to res.cost_trace and res.iterations;
// cfg.max_iterations bounds the total over repeated calls.
inline void optimize(CalibState& state, const DetectionSet& det, const SolverConfig& cfg,
                     CalibResult& res) {
  const double delta = cfg.huber_delta;
  ResidualSystem sys = residuals_and_jacobian(state, det, delta);
  if (res.cost_trace.empty()) res.cost_trace.push_back(sys.cost);
  NormalEquations ne = normal_equations(sys.r, sys.jacobian, sys.weights);
  // Damping acts on the column-scaled system, so focal lengths, shape
  // parameters and twists are damped alike whatever their units.
  Eigen::VectorXd scale;
  const auto update_scale = [&] {
    scale = ne.hessian.diagonal().cwiseMax(1e-12 * std::max(1.0, ne.hessian.diagonal().maxCoeff()));
  };
  update_scale();
  double lambda = std::max(cfg.damping_floor, cfg.initial_damping);
  const double lambda_max = cfg.max_damping;

  res.converged = false;
  res.reason = "max_iterations";
  while (res.iterations < cfg.max_iterations) {
    if (ne.gradient.lpNorm<Eigen::Infinity>() < cfg.gradient_tolerance) {
      res.converged = true;
      res.reason = "gradient";
      break;
    }
    bool accepted = false;
    bool small_step = false;
    // Heavy damping can point out of a constrained parameter set (for example
    // KB monotonicity) while the undamped step does not, so once per iteration
    // the damping is reset to the floor before giving up.
    bool retried = false;
    while (!accepted) {
      Eigen::VectorXd ds;
      try {
        ds = gauss_newton_step(ne, lambda, &scale);
      } catch (const LinearSolveError&) {
        if (lambda >= lambda_max) throw;
        lambda *= 10.0;
        continue;
      }
      const ModelKind kind = state.camera.kind();
      if (kind == ModelKind::kKb6 || kind == ModelKind::kKb8) {
        ds = monotone_step(ne, lambda, scale, state.camera.params(), std::move(ds));
      }
      if (ds.norm() < cfg.step_tolerance) {
        if (!retried && lambda > cfg.damping_floor) {
          retried = true;
          lambda = cfg.damping_floor;
          continue;
        }
        small_step = true;
        break;
      }
      double t = 1.0;
      for (int k = 0; k < cfg.max_halvings && !accepted; ++k, t *= cfg.backtrack_factor) {
        CalibState cand;
        try {
          cand = apply_update(state, t * ds);
        } catch (const InvalidParameters&) {
          continue;
        }
        ResidualSystem cs;
        try {
          cs = residuals_and_jacobian(cand, det, delta, false);
        } catch (const DivergenceError&) {
          continue;
        }
        if (cs.dropped > sys.dropped || !(cs.cost < sys.cost)) continue;
        state = std::move(cand);
        accepted = true;
      }
      if (accepted) {
        lambda = std::max(lambda / 10.0, cfg.damping_floor);
      } else {
        lambda *= 10.0;
        if (lambda > lambda_max) {
          if (retried) break;
          retried = true;
          lambda = cfg.damping_floor;
        }
      }
    }
    if (small_step) {
      res.converged = true;
      res.reason = "step";
      break;
    }
    if (!accepted) {
      res.reason = "no_decrease";
      break;
    }
    ++res.iterations;
    sys = residuals_and_jacobian(state, det, delta);
    res.cost_trace.push_back(sys.cost);
    ne = normal_equations(sys.r, sys.jacobian, sys.weights);
    update_scale();
  }
}

// Optimization plus pose re-seeding rounds from one starting state.
inline CalibResult solve_from(CalibState state, const DetectionSet& det, const SolverConfig& cfg) {
  CalibResult res;
  optimize(state, det, cfg, res);
  for (int round = 0; round < 3 && reseed_poses(state, det, cfg); ++round) {
    optimize(state, det, cfg, res);
  }
  res.state = std::move(state);
  return res;
}

// A second starting point for models with a known pair of competing minima.
// Near the axis DS behaves like a pinhole of focal f / (1 + xi), and fits of
// opposite xi with that focal matched are often both locally optimal.
inline std::optional<CameraModel> alternate_start(const CameraModel& cam) {
  if (cam.kind() != ModelKind::kDs) return std::nullopt;
  Eigen::VectorXd p = cam.params();
  const double xi = p[4];
  if (std::abs(xi) < 0.05 || std::abs(xi) > 0.9) return std::nullopt;
  p.head<2>() *= (1.0 - xi) / (1.0 + xi);
  p[4] = -xi;
  try {
    return cam.with_params(p);
  } catch (const InvalidParameters&) {
    return std::nullopt;
  }
}

}  // namespace detail

/// Damped Gauss-Newton with backtracking on the robust cost. Runs
/// initialization unless init is given. Throws InitializationError when the
/// input is too small or cannot be initialized and DivergenceError when most
/// observations leave the model domain.
inline CalibResult calibrate(const DetectionSet& det, ModelKind kind, const SolverConfig& cfg = {},
                             const std::optional<CalibState>& init = std::nullopt) {
  if (auto why = cfg.check()) throw InvalidParameters("solver config: " + *why);
  if (det.images.size() < 3) {
    throw InitializationError("calibration needs at least 3 images, got " +
                              std::to_string(det.images.size()));
  }
  for (const auto& im : det.images) {
    if (im.corners.size() < 8) {
      throw InitializationError("image " + std::to_string(im.id) + " has fewer than 8 corners");
    }
  }

  CalibState state;
  if (init) {
    state = *init;
    if (state.camera.kind() != kind || state.poses.size() != det.images.size()) {
      throw InitializationError("initial state does not match the model or the images");
    }
  } else {
    const auto [w, h] = effective_image_size(det);
    const Eigen::VectorXd p = init_intrinsics(det, kind, cfg);
    state.camera = CameraModel::create(kind, p, int(w), int(h));
    try {
      state.poses = init_poses(det, state.camera, cfg.pose_refine_iterations, cfg.huber_delta);
    } catch (const DegenerateViewError& e) {
      throw InitializationError(std::string("pose initialization failed: ") + e.what());
    }
  }

  CalibResult res = detail::solve_from(std::move(state), det, cfg);
  if (auto alt = detail::alternate_start(res.state.camera)) {
    CalibResult other = detail::solve_from({*alt, res.state.poses}, det, cfg);
    if (other.cost_trace.back() < res.cost_trace.back()) res = std::move(other);
  }
  fill_statistics(res, det);
  return res;
}

inline Json result_to_json(const CalibResult& res, const DetectionSet& det) {
  Json j = camera_to_json(res.state.camera);
  j["mean_reproj_px"] = res.mean_px;
  j["median_reproj_px"] = res.median_px;
  j["max_reproj_px"] = res.max_px;
  j["iterations"] = res.iterations;
  j["converged"] = res.converged;
  j["reason"] = res.reason;
  j["dropped"] = res.dropped;
  Json poses = Json::array();
  Json ids = Json::array();
  for (std::size_t i = 0; i < res.state.poses.size(); ++i) {
    const Mat4 m = res.state.poses[i].matrix();
    std::vector<double> flat;
    for (int r = 0; r < 4; ++r) {
      for (int c = 0; c < 4; ++c) flat.push_back(m(r, c));
    }
    poses.push_back(flat);
    ids.push_back(i < det.images.size() ? det.images[i].id : static_cast<int>(i));
  }
  j["poses"] = std::move(poses);
  j["image_ids"] = std::move(ids);
  j["cost_trace"] = res.cost_trace;
  return j;
}

/// Camera and poses from a result (or ground-truth) document, poses in file
/// order. result_pose() looks one up by image id.
inline CalibState state_from_json(const Json& j, const std::string& source = "result") {
  CalibState s;
  s.camera = camera_from_json(j, source);
  try {
    for (const auto& p : j.at("poses")) {
      const auto flat = p.get<std::vector<double>>();
      if (flat.size() != 16) throw ParseError(source + ".poses: expected 16 numbers per pose");
      Mat4 m;
      for (int r = 0; r < 4; ++r) {
        for (int c = 0; c < 4; ++c) m(r, c) = flat[static_cast<std::size_t>(4 * r + c)];
      }
      s.poses.push_back(Pose::from_matrix(m));
    }
  } catch (const Json::exception& e) {
    throw ParseError(source + ": " + e.what());
  }
  return s;
}

/// Pose of the image with the given id. "image_ids" names the image of each
/// pose; without it poses follow the image order of det.
inline Pose result_pose(const Json& result, const DetectionSet& det, int image_id,
                        const std::string& source = "result") {
  const CalibState s = state_from_json(result, source);
  std::vector<int> ids;
  try {
    if (result.contains("image_ids")) {
      ids = result.at("image_ids").get<std::vector<int>>();
    } else {
      for (const auto& im : det.images) ids.push_back(im.id);
    }
  } catch (const Json::exception& e) {
    throw ParseError(source + ".image_ids: " + e.what());
  }
  for (std::size_t i = 0; i < ids.size() && i < s.poses.size(); ++i) {
    if (ids[i] == image_id) return s.poses[i];
  }
  throw SchemaError(source + ": no pose for image id " + std::to_string(image_id));
}

namespace detail {

template <typename F>
inline void for_each_config_field(F&& f, SolverConfig& c) {
  f("huber_delta", c.huber_delta);
  f("max_iterations", c.max_iterations);
  f("gradient_tolerance", c.gradient_tolerance);
  f("step_tolerance", c.step_tolerance);
  f("backtrack_factor", c.backtrack_factor);
  f("max_halvings", c.max_halvings);
  f("damping_floor", c.damping_floor);
  f("initial_damping", c.initial_damping);
  f("max_damping", c.max_damping);
  f("pose_refine_iterations", c.pose_refine_iterations);
  f("focal_grid_size", c.focal_grid_size);
  f("golden_iterations", c.golden_iterations);
}

}  // namespace detail

/// Keys are SolverConfig field names; missing keys keep base values. An
/// unbounded huber_delta is written as the string "inf" or null.
inline SolverConfig solver_config_from_json(const Json& j, const std::string& source = "config",
                                            SolverConfig base = {}) {
  if (!j.is_object()) throw ParseError(source + ": expected an object");
  std::size_t known = 0;
  detail::for_each_config_field(
      [&](const char* key, auto& field) {
        const auto it = j.find(key);
        if (it == j.end()) return;
        ++known;
        const std::string path = source + "." + key;
        using T = std::decay_t<decltype(field)>;
        if constexpr (std::is_same_v<T, double>) {
          if (it->is_null() || (it->is_string() && it->get<std::string>() == "inf")) {
            field = std::numeric_limits<double>::infinity();
            return;
          }
          if (!it->is_number()) throw ParseError(path + ": expected a number");
          field = it->get<double>();
        } else {
          if (!it->is_number_integer()) throw ParseError(path + ": expected an integer");
          field = it->get<T>();
        }
      },
      base);
  if (known != j.size()) {
    for (const auto& [key, value] : j.items()) {
      bool found = false;
      detail::for_each_config_field([&](const char* k, auto&) { found = found || key == k; }, base);
      if (!found) throw SchemaError(source + ": unknown key '" + key + "'");
    }
  }
  if (const auto bad = base.check()) throw InvalidParameters(source + ": " + *bad);
  return base;
}

inline Json solver_config_to_json(SolverConfig c) {
  Json j = Json::object();
  detail::for_each_config_field(
      [&](const char* key, auto& field) {
        if constexpr (std::is_same_v<std::decay_t<decltype(field)>, double>) {
          if (std::isinf(field)) {
            j[key] = "inf";
            return;
          }
        }
        j[key] = field;
      },
      c);
  return j;
}

}  // namespace widecam
