#include "core/scene.hpp"

#include <cmath>
#include <sstream>

#include "core/error.hpp"

namespace pxs {

using ad::Tensor;

namespace {

// 3D position of every pixel's Gaussian from its per-pixel planar depth:
// pos[p] = dir_p * d[p] + origin (the pixel-ray parameterization).
Tensor positions_from_depth(const Tensor& depth, const Camera& cam) {
  const std::size_t h = depth.dim(0), w = depth.dim(1), m = h * w;
  std::vector<double> dirs(m * 3);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const Ray r = pixel_ray(cam, {x + 0.5, y + 0.5});
      const std::size_t p = y * w + x;
      dirs[p * 3 + 0] = r.dir.x();
      dirs[p * 3 + 1] = r.dir.y();
      dirs[p * 3 + 2] = r.dir.z();
    }
  const Vec3 origin = -(cam.R.transpose() * cam.t);

  std::vector<double> out(m * 3);
  const auto d = depth.data();
  for (std::size_t p = 0; p < m; ++p)
    for (int k = 0; k < 3; ++k) out[p * 3 + k] = dirs[p * 3 + k] * d[p] + origin[k];

  return ad::make_op({depth}, {m, 3}, std::move(out),
                     [m, dirs = std::move(dirs)](std::span<const double> up,
                                                 const std::vector<double*>& sinks) {
                       if (!sinks[0]) return;
                       for (std::size_t p = 0; p < m; ++p)
                         sinks[0][p] += dirs[p * 3 + 0] * up[p * 3 + 0] +
                                        dirs[p * 3 + 1] * up[p * 3 + 1] +
                                        dirs[p * 3 + 2] * up[p * 3 + 2];
                     });
}

// Sigma = (k*d)^2 * I per pixel, k = fy/H (the one-pixel-footprint sphere).
Tensor isotropic_covariance(const Tensor& depth, double k) {
  const std::size_t m = depth.numel();
  std::vector<double> out(m * 9, 0.0);
  const auto d = depth.data();
  for (std::size_t p = 0; p < m; ++p) {
    const double r = k * d[p];
    out[p * 9 + 0] = out[p * 9 + 4] = out[p * 9 + 8] = r * r;
  }
  std::vector<double> dcopy(d.begin(), d.end());
  return ad::make_op({depth}, {m, 9}, std::move(out),
                     [m, k, dcopy = std::move(dcopy)](std::span<const double> up,
                                                      const std::vector<double*>& sinks) {
                       if (!sinks[0]) return;
                       for (std::size_t p = 0; p < m; ++p)
                         sinks[0][p] += 2.0 * k * k * dcopy[p] *
                                        (up[p * 9 + 0] + up[p * 9 + 4] + up[p * 9 + 8]);
                     });
}

// Sigma = R(q/|q|) diag(exp(ls))^2 R^T per row; quaternion normalization is
// differentiated here rather than maintained as a separate constraint.
Tensor covariance_from_rotation_scale(const Tensor& rot, const Tensor& ls) {
  const std::size_t m = rot.dim(0);
  check(rot.shape() == ad::Shape{m, 4} && ls.shape() == ad::Shape{m, 3},
        ErrorKind::invalid_argument, "covariance inputs must be {M,4} and {M,3}");

  auto rotation_of = [](const double* q4) {
    const double norm = std::sqrt(q4[0] * q4[0] + q4[1] * q4[1] + q4[2] * q4[2] + q4[3] * q4[3]);
    const double w = q4[0] / norm, x = q4[1] / norm, y = q4[2] / norm, z = q4[3] / norm;
    Mat3 r;
    r << 1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),  //
        2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),   //
        2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y);
    return r;
  };

  std::vector<double> out(m * 9);
  const auto qv = rot.data();
  const auto lv = ls.data();
  for (std::size_t p = 0; p < m; ++p) {
    const Mat3 r = rotation_of(&qv[p * 4]);
    const Vec3 s(std::exp(lv[p * 3]), std::exp(lv[p * 3 + 1]), std::exp(lv[p * 3 + 2]));
    const Mat3 ms = r * s.asDiagonal();
    const Mat3 sigma = ms * ms.transpose();
    for (int i = 0; i < 9; ++i) out[p * 9 + i] = sigma(i / 3, i % 3);
  }

  std::vector<double> qcopy(qv.begin(), qv.end());
  std::vector<double> lcopy(lv.begin(), lv.end());
  return ad::make_op(
      {rot, ls}, {m, 9}, std::move(out),
      [m, rotation_of, qcopy = std::move(qcopy), lcopy = std::move(lcopy)](
          std::span<const double> up, const std::vector<double*>& sinks) {
        for (std::size_t p = 0; p < m; ++p) {
          const double* q4 = &qcopy[p * 4];
          const double norm =
              std::sqrt(q4[0] * q4[0] + q4[1] * q4[1] + q4[2] * q4[2] + q4[3] * q4[3]);
          const double w = q4[0] / norm, x = q4[1] / norm, y = q4[2] / norm, z = q4[3] / norm;
          const Mat3 r = rotation_of(q4);
          const Vec3 s(std::exp(lcopy[p * 3]), std::exp(lcopy[p * 3 + 1]),
                       std::exp(lcopy[p * 3 + 2]));
          const Mat3 ms = r * s.asDiagonal();

          Mat3 gsigma;
          for (int i = 0; i < 9; ++i) gsigma(i / 3, i % 3) = up[p * 9 + i];
          // Sigma = A A^T with A = R S: dL/dA = (G + G^T) A.
          const Mat3 ga = (gsigma + gsigma.transpose()) * ms;
          // A = R S: dL/dR = gA S, dL/dS_jj = sum_i R_ij gA_ij.
          const Mat3 gr = ga * s.asDiagonal();
          if (sinks[1]) {
            for (int j = 0; j < 3; ++j) {
              const double gs = r.col(j).dot(ga.col(j));
              sinks[1][p * 3 + j] += gs * s[j];  // d exp
            }
          }
          if (sinks[0]) {
            // dR/d(unit quaternion), contracted with gr.
            const double gw = 2 * (-z * gr(0, 1) + y * gr(0, 2) + z * gr(1, 0) - x * gr(1, 2) -
                                   y * gr(2, 0) + x * gr(2, 1));
            const double gx = 2 * (y * gr(0, 1) + z * gr(0, 2) + y * gr(1, 0) -
                                   2 * x * gr(1, 1) - w * gr(1, 2) + z * gr(2, 0) +
                                   w * gr(2, 1) - 2 * x * gr(2, 2));
            const double gy = 2 * (-2 * y * gr(0, 0) + x * gr(0, 1) + w * gr(0, 2) +
                                   x * gr(1, 0) + z * gr(1, 2) - w * gr(2, 0) + z * gr(2, 1) -
                                   2 * y * gr(2, 2));
            const double gz = 2 * (-2 * z * gr(0, 0) - w * gr(0, 1) + x * gr(0, 2) +
                                   w * gr(1, 0) - 2 * z * gr(1, 1) + y * gr(1, 2) +
                                   x * gr(2, 0) + y * gr(2, 1));
            // Through q_hat = q / |q|: g_q = (g_qhat - q_hat (q_hat . g_qhat)) / |q|.
            const double dot = w * gw + x * gx + y * gy + z * gz;
            sinks[0][p * 4 + 0] += (gw - w * dot) / norm;
            sinks[0][p * 4 + 1] += (gx - x * dot) / norm;
            sinks[0][p * 4 + 2] += (gy - y * dot) / norm;
            sinks[0][p * 4 + 3] += (gz - z * dot) / norm;
          }
        }
      });
}

}  // namespace

void SegMask::validate() const {
  check(channels >= 1 && height >= 1 && width >= 1, ErrorKind::invalid_argument,
        "segmentation mask: empty dimensions");
  check(data.size() == channels * height * width, ErrorKind::invalid_argument,
        "segmentation mask: data size does not match (C,H,W)");
  const std::size_t plane = height * width;
  for (std::size_t p = 0; p < plane; ++p) {
    std::size_t set = 0;
    for (std::size_t c = 0; c < channels; ++c) {
      const std::uint8_t v = data[c * plane + p];
      check(v <= 1, ErrorKind::invalid_argument, "segmentation mask: entries must be 0 or 1");
      set += v;
    }
    check(set == 1, ErrorKind::invalid_argument,
          "segmentation mask: channels must set exactly one channel per pixel");
  }
}

std::vector<std::uint8_t> SegMask::channel_map() const {
  validate();
  const std::size_t plane = height * width;
  std::vector<std::uint8_t> map(plane, 0);
  for (std::size_t c = 0; c < channels; ++c)
    for (std::size_t p = 0; p < plane; ++p)
      if (data[c * plane + p]) map[p] = static_cast<std::uint8_t>(c);
  return map;
}

std::vector<double> radius_from_depth(const Camera& camera, const std::vector<double>& depth) {
  const double k = camera.fy / static_cast<double>(camera.height);
  std::vector<double> r(depth.size());
  for (std::size_t i = 0; i < depth.size(); ++i) {
    check(depth[i] > 0, ErrorKind::invalid_argument, "radius_from_depth: depth must be positive");
    r[i] = k * depth[i];
  }
  return r;
}

PixelGaussianGrid make_grid(const Camera& camera, const std::vector<double>& d_init,
                            const std::vector<double>& image_rgb, double alpha_init) {
  const std::size_t h = camera.height, w = camera.width, m = h * w;
  check(d_init.size() == m, ErrorKind::invalid_argument, "make_grid: depth size mismatch");
  check(image_rgb.size() == 3 * m, ErrorKind::invalid_argument, "make_grid: image size mismatch");
  for (double d : d_init)
    check(d > 0 && std::isfinite(d), ErrorKind::invalid_argument,
          "make_grid: initial depths must be positive finite");

  PixelGaussianGrid grid;
  grid.camera = camera;
  grid.height = h;
  grid.width = w;
  grid.d_init = d_init;
  grid.alpha_init = alpha_init;
  grid.color = ad::param({3, h, w}, image_rgb);

  std::vector<double> q(4 * m, 0.0);
  for (std::size_t p = 0; p < m; ++p) q[p] = 1.0;  // w-plane first: identity
  grid.rotation = ad::param({4, h, w}, std::move(q));

  const std::vector<double> r = radius_from_depth(camera, d_init);
  std::vector<double> ls(3 * m);
  for (std::size_t p = 0; p < m; ++p)
    ls[p] = ls[m + p] = ls[2 * m + p] = std::log(r[p]);
  grid.log_scale = ad::param({3, h, w}, std::move(ls));
  return grid;
}

CloudSlice materialize(const PixelGaussianGrid& grid, const Tensor& residual_depth,
                       const Tensor& residual_opacity, Tensor* depth_out) {
  const std::size_t h = grid.height, w = grid.width;
  check(residual_depth.shape() == ad::Shape{h, w} &&
            residual_opacity.shape() == ad::Shape{h, w},
        ErrorKind::invalid_argument, "materialize: residual maps must be H x W");
  for (std::size_t i = 0; i < residual_depth.numel(); ++i) {
    if (!std::isfinite(residual_depth.at(i)) || !std::isfinite(residual_opacity.at(i))) {
      std::ostringstream os;
      os << "view " << grid.camera.view_index << ": non-finite residual at pixel " << i;
      fail(ErrorKind::numeric, os.str());
    }
  }

  Tensor d_init = ad::constant({h, w}, grid.d_init);
  Tensor depth = ad::clamp(ad::add(d_init, residual_depth), kDepthFloor, 1e300);
  if (depth_out) *depth_out = depth;

  CloudSlice slice;
  slice.positions = positions_from_depth(depth, grid.camera);
  slice.colors = ad::interleave_channels(grid.color);
  Tensor alpha = ad::clamp(ad::add(residual_opacity, grid.alpha_init), kOpacityLo, kOpacityHi);
  slice.opacities = ad::interleave_channels(ad::reshape(alpha, {1, h, w}));
  if (grid.frozen_covariance) {
    slice.covariances =
        isotropic_covariance(depth, grid.camera.fy / static_cast<double>(grid.camera.height));
  } else {
    slice.covariances = covariance_from_rotation_scale(
        ad::interleave_channels(grid.rotation), ad::interleave_channels(grid.log_scale));
  }
  return slice;
}

GaussianCloud concat_slices(const std::vector<CloudSlice>& slices,
                            const std::vector<const PixelGaussianGrid*>& grids) {
  check(!slices.empty() && slices.size() == grids.size(), ErrorKind::invalid_argument,
        "concat_slices: need one grid per slice");
  GaussianCloud cloud;
  std::vector<Tensor> pos, col, opa, cov;
  for (std::size_t i = 0; i < slices.size(); ++i) {
    pos.push_back(slices[i].positions);
    col.push_back(slices[i].colors);
    opa.push_back(slices[i].opacities);
    cov.push_back(slices[i].covariances);
    const std::size_t m = grids[i]->pixel_count();
    for (std::size_t p = 0; p < m; ++p)
      cloud.sources.push_back({grids[i]->camera.view_index, static_cast<std::uint32_t>(p)});
  }
  cloud.tensors.positions = ad::concat_rows(pos);
  cloud.tensors.colors = ad::concat_rows(col);
  cloud.tensors.opacities = ad::concat_rows(opa);
  cloud.tensors.covariances = ad::concat_rows(cov);
  return cloud;
}

}  // namespace pxs
