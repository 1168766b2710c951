#pragma once

#include <Eigen/Dense>
#include <optional>

#include "core/tensor.hpp"

namespace pxs {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat2 = Eigen::Matrix2d;
using Mat3 = Eigen::Matrix3d;

// Pinhole camera: intrinsics in pixels, world-to-camera rigid transform
// x_cam = R x_world + t. Image origin top-left, v grows downward, pixel
// centers at half-integers.
struct Camera {
  double fx = 0, fy = 0, cx = 0, cy = 0;
  std::size_t width = 0, height = 0;
  Mat3 R = Mat3::Identity();
  Vec3 t = Vec3::Zero();
  int view_index = 0;

  // Throws if R is not a proper rotation (orthonormal, det +1, tol 1e-9) or
  // the intrinsics are out of range.
  void validate() const;

  Vec3 camera_center() const { return -R.transpose() * t; }
};

struct PixelCoord {
  double u = 0, v = 0;  // u along width, v along height
};

struct Projection {
  PixelCoord pixel;
  double z = 0;  // camera-frame depth
  bool culled = false;
};

inline constexpr double kDefaultZNear = 1e-4;
inline constexpr double kCovarianceFloor = 0.3;  // px^2, added to both diagonals

// Pixel ray through p: world point g(d,p) = dir*d + origin, linear in the
// planar (camera-z) depth d.
struct Ray {
  Vec3 dir;     // R^T K^{-1} [u,v,1]
  Vec3 origin;  // -R^T t
};

Ray pixel_ray(const Camera& cam, const PixelCoord& p);

// g(d, p): unprojects pixel p at planar depth d. d must be positive.
Vec3 unproject_g(const Camera& cam, const PixelCoord& p, double d);

Projection project(const Camera& cam, const Vec3& x, double z_near = kDefaultZNear);

// d(u,v,z)/d(x_cam): affine Jacobian of the perspective projection at a
// camera-space point.
Eigen::Matrix<double, 3, 3> projection_jacobian_cam(const Camera& cam, const Vec3& x_cam);

// EWA-style covariance projection: J W Sigma W^T J^T plus the anti-aliasing
// floor on the diagonal. Sigma must be symmetric.
Mat2 project_covariance(const Camera& cam, const Vec3& x, const Mat3& sigma,
                        double floor_px2 = kCovarianceFloor);

// Adjoint of project(): maps upstream gradients on (u, v, z) to a gradient on
// the world point. Only valid where the point was not culled.
Vec3 project_backward(const Camera& cam, const Vec3& x, double gu, double gv, double gz);

struct CovarianceGrads {
  Vec3 gx = Vec3::Zero();
  Mat3 gsigma = Mat3::Zero();
};

// Adjoint of project_covariance(): gout is the upstream gradient on the 2x2
// output (symmetrized internally). Accounts for the Jacobian's dependence on
// the point.
CovarianceGrads project_covariance_backward(const Camera& cam, const Vec3& x, const Mat3& sigma,
                                            const Mat2& gout);

}  // namespace pxs
