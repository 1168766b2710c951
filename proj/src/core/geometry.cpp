#include "core/geometry.hpp"

#include <cmath>
#include <sstream>

#include "core/error.hpp"

namespace pxs {

void Camera::validate() const {
  check(fx > 0 && fy > 0, ErrorKind::invalid_argument, "camera focal lengths must be positive");
  check(width > 0 && height > 0, ErrorKind::invalid_argument,
        "camera image size must be positive");
  check(std::isfinite(cx) && std::isfinite(cy), ErrorKind::invalid_argument,
        "camera principal point must be finite");
  const Mat3 rtr = R.transpose() * R;
  const double ortho_err = (rtr - Mat3::Identity()).cwiseAbs().maxCoeff();
  if (ortho_err > 1e-9 || std::abs(R.determinant() - 1.0) > 1e-9) {
    std::ostringstream os;
    os << "world_to_cam rotation is not a proper rotation (orthonormality error " << ortho_err
       << ", det " << R.determinant() << ")";
    fail(ErrorKind::invalid_argument, os.str());
  }
  check(t.allFinite(), ErrorKind::invalid_argument, "camera translation must be finite");
}

Ray pixel_ray(const Camera& cam, const PixelCoord& p) {
  // K^{-1} [u, v, 1] with the standard pinhole K.
  const Vec3 cam_dir((p.u - cam.cx) / cam.fx, (p.v - cam.cy) / cam.fy, 1.0);
  return Ray{cam.R.transpose() * cam_dir, -(cam.R.transpose() * cam.t)};
}

Vec3 unproject_g(const Camera& cam, const PixelCoord& p, double d) {
  check(d > 0, ErrorKind::invalid_argument, "unproject depth must be positive");
  const Ray ray = pixel_ray(cam, p);
  return ray.dir * d + ray.origin;
}

Projection project(const Camera& cam, const Vec3& x, double z_near) {
  const Vec3 x_cam = cam.R * x + cam.t;
  Projection out;
  out.z = x_cam.z();
  if (!(x_cam.z() >= z_near)) {  // also culls NaN z
    out.culled = true;
    out.pixel = PixelCoord{0, 0};
    return out;
  }
  out.pixel.u = cam.fx * x_cam.x() / x_cam.z() + cam.cx;
  out.pixel.v = cam.fy * x_cam.y() / x_cam.z() + cam.cy;
  return out;
}

Eigen::Matrix<double, 3, 3> projection_jacobian_cam(const Camera& cam, const Vec3& x_cam) {
  const double z = x_cam.z();
  check(z > 0, ErrorKind::invalid_argument, "projection jacobian needs positive depth");
  const double iz = 1.0 / z;
  const double iz2 = iz * iz;
  Eigen::Matrix<double, 3, 3> j = Eigen::Matrix<double, 3, 3>::Zero();
  j(0, 0) = cam.fx * iz;
  j(0, 2) = -cam.fx * x_cam.x() * iz2;
  j(1, 1) = cam.fy * iz;
  j(1, 2) = -cam.fy * x_cam.y() * iz2;
  j(2, 2) = 1.0;
  return j;
}

Vec3 project_backward(const Camera& cam, const Vec3& x, double gu, double gv, double gz) {
  const Vec3 x_cam = cam.R * x + cam.t;
  const double z = x_cam.z();
  const double iz = 1.0 / z;
  const double iz2 = iz * iz;
  Vec3 g_cam;
  g_cam.x() = gu * cam.fx * iz;
  g_cam.y() = gv * cam.fy * iz;
  g_cam.z() = -gu * cam.fx * x_cam.x() * iz2 - gv * cam.fy * x_cam.y() * iz2 + gz;
  return cam.R.transpose() * g_cam;
}

CovarianceGrads project_covariance_backward(const Camera& cam, const Vec3& x, const Mat3& sigma,
                                            const Mat2& gout) {
  const Vec3 x_cam = cam.R * x + cam.t;
  const double xc = x_cam.x(), yc = x_cam.y(), zc = x_cam.z();
  const double iz = 1.0 / zc, iz2 = iz * iz, iz3 = iz2 * iz;
  Eigen::Matrix<double, 2, 3> jt;
  jt << cam.fx * iz, 0, -cam.fx * xc * iz2,  //
      0, cam.fy * iz, -cam.fy * yc * iz2;
  const Mat2 g = 0.5 * (gout + gout.transpose());
  const Eigen::Matrix<double, 2, 3> jw = jt * cam.R;

  CovarianceGrads out;
  out.gsigma = jw.transpose() * g * jw;

  // Through the Jacobian itself: L = tr(g^T J M J^T) with M = W Sigma W^T.
  const Mat3 m = cam.R * sigma * cam.R.transpose();
  const Eigen::Matrix<double, 2, 3> gj = 2.0 * g * jt * m;
  Vec3 g_cam;
  g_cam.x() = gj(0, 2) * (-cam.fx * iz2);
  g_cam.y() = gj(1, 2) * (-cam.fy * iz2);
  g_cam.z() = gj(0, 0) * (-cam.fx * iz2) + gj(0, 2) * (2.0 * cam.fx * xc * iz3) +
              gj(1, 1) * (-cam.fy * iz2) + gj(1, 2) * (2.0 * cam.fy * yc * iz3);
  out.gx = cam.R.transpose() * g_cam;
  return out;
}

Mat2 project_covariance(const Camera& cam, const Vec3& x, const Mat3& sigma, double floor_px2) {
  const double sym_err = (sigma - sigma.transpose()).cwiseAbs().maxCoeff();
  check(sym_err <= 1e-9, ErrorKind::invalid_argument, "covariance must be symmetric");
  const Vec3 x_cam = cam.R * x + cam.t;
  const Eigen::Matrix<double, 3, 3> j = projection_jacobian_cam(cam, x_cam);
  const Eigen::Matrix<double, 2, 3> jw = j.topRows<2>() * cam.R;
  Mat2 out = jw * sigma * jw.transpose();
  out(0, 0) += floor_px2;
  out(1, 1) += floor_px2;
  // Exact symmetrization so downstream code can rely on it bitwise.
  const double off = 0.5 * (out(0, 1) + out(1, 0));
  out(0, 1) = off;
  out(1, 0) = off;
  return out;
}

}  // namespace pxs
