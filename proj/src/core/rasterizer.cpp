#include "core/rasterizer.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

#include "core/error.hpp"
#include "core/parallel.hpp"

namespace pxs {

using ad::Tensor;

namespace {

constexpr std::size_t kTile = 16;
constexpr std::size_t kGradBlocks = 16;  // fixed partition of the pixel space

struct Splat {
  double u = 0, v = 0, z = 0;
  double ca = 0, cb = 0, cc = 0;  // conic = inverse projected covariance
  bool valid = false;
};

// Everything the backward pass needs to replay the forward compositing.
struct ForwardSaved {
  Camera cam;
  RenderConfig cfg;
  std::size_t m = 0, h = 0, w = 0;
  std::vector<double> pos, col, alpha, cov;  // copies of the input values
  std::vector<Splat> splats;
  std::vector<std::uint32_t> order;                // surviving indices, depth-sorted
  std::vector<std::vector<std::uint32_t>> tiles;   // per-tile indices in sorted order
  std::size_t tiles_x = 0, tiles_y = 0;
  std::vector<Vec2> offsets;
};

inline void composite_pixel(const ForwardSaved& fs, std::size_t px, std::size_t py,
                            double* out5) {
  const std::size_t tx = px / kTile, ty = py / kTile;
  const auto& list = fs.tiles[ty * fs.tiles_x + tx];
  const double cutoff2 = fs.cfg.cutoff_sigma * fs.cfg.cutoff_sigma;
  const double inv_ns = 1.0 / static_cast<double>(fs.offsets.size());
  double acc[5] = {0, 0, 0, 0, 0};
  for (const Vec2& off : fs.offsets) {
    const double sx = static_cast<double>(px) + off.x();
    const double sy = static_cast<double>(py) + off.y();
    double t = 1.0;
    double rgb[3] = {0, 0, 0}, dep = 0;
    for (const std::uint32_t g : list) {
      if (fs.cfg.early_termination && t < fs.cfg.early_stop_transmittance) break;
      const Splat& s = fs.splats[g];
      const double dx = sx - s.u, dy = sy - s.v;
      const double q = s.ca * dx * dx + 2.0 * s.cb * dx * dy + s.cc * dy * dy;
      if (q > cutoff2) continue;
      const double gamma = fs.alpha[g] * std::exp(-0.5 * q);
      const double wgt = gamma * t;
      rgb[0] += wgt * fs.col[g * 3 + 0];
      rgb[1] += wgt * fs.col[g * 3 + 1];
      rgb[2] += wgt * fs.col[g * 3 + 2];
      dep += wgt * s.z;
      t *= 1.0 - gamma;
    }
    acc[0] += rgb[0];
    acc[1] += rgb[1];
    acc[2] += rgb[2];
    acc[3] += dep;
    acc[4] += 1.0 - t;
  }
  for (int c = 0; c < 5; ++c) out5[c] = acc[c] * inv_ns;
}

// Per-Gaussian gradient slots inside a block-local buffer.
constexpr std::size_t kGSlots = 10;  // du,dv,dz, dSigma'(a,b,c), dcolor(3), dalpha

void backward_block(const ForwardSaved& fs, std::span<const double> up, std::size_t pix_begin,
                    std::size_t pix_end, double* gbuf) {
  const double cutoff2 = fs.cfg.cutoff_sigma * fs.cfg.cutoff_sigma;
  const double inv_ns = 1.0 / static_cast<double>(fs.offsets.size());
  const std::size_t plane = fs.h * fs.w;
  for (std::size_t pix = pix_begin; pix < pix_end; ++pix) {
    const std::size_t px = pix % fs.w, py = pix / fs.w;
    const double gc[3] = {up[0 * plane + pix] * inv_ns, up[1 * plane + pix] * inv_ns,
                          up[2 * plane + pix] * inv_ns};
    const double gd = up[3 * plane + pix] * inv_ns;
    const double ga = up[4 * plane + pix] * inv_ns;
    if (gc[0] == 0 && gc[1] == 0 && gc[2] == 0 && gd == 0 && ga == 0) continue;

    const std::size_t tx = px / kTile, ty = py / kTile;
    const auto& list = fs.tiles[ty * fs.tiles_x + tx];
    for (const Vec2& off : fs.offsets) {
      const double sx = static_cast<double>(px) + off.x();
      const double sy = static_cast<double>(py) + off.y();

      // Pass 1: totals of the composited sums and the final transmittance.
      double t = 1.0;
      double total[4] = {0, 0, 0, 0};  // rgb, depth
      for (const std::uint32_t g : list) {
        if (fs.cfg.early_termination && t < fs.cfg.early_stop_transmittance) break;
        const Splat& s = fs.splats[g];
        const double dx = sx - s.u, dy = sy - s.v;
        const double q = s.ca * dx * dx + 2.0 * s.cb * dx * dy + s.cc * dy * dy;
        if (q > cutoff2) continue;
        const double gamma = fs.alpha[g] * std::exp(-0.5 * q);
        const double wgt = gamma * t;
        total[0] += wgt * fs.col[g * 3 + 0];
        total[1] += wgt * fs.col[g * 3 + 1];
        total[2] += wgt * fs.col[g * 3 + 2];
        total[3] += wgt * s.z;
        t *= 1.0 - gamma;
      }
      const double t_final = t;

      // Pass 2: per-Gaussian adjoints via prefix/suffix split.
      t = 1.0;
      double pre[4] = {0, 0, 0, 0};
      for (const std::uint32_t g : list) {
        if (fs.cfg.early_termination && t < fs.cfg.early_stop_transmittance) break;
        const Splat& s = fs.splats[g];
        const double dx = sx - s.u, dy = sy - s.v;
        const double q = s.ca * dx * dx + 2.0 * s.cb * dx * dy + s.cc * dy * dy;
        if (q > cutoff2) continue;
        const double eq = std::exp(-0.5 * q);
        const double gamma = fs.alpha[g] * eq;
        const double wgt = gamma * t;
        const double t_k = t;  // transmittance in front of g
        pre[0] += wgt * fs.col[g * 3 + 0];
        pre[1] += wgt * fs.col[g * 3 + 1];
        pre[2] += wgt * fs.col[g * 3 + 2];
        pre[3] += wgt * s.z;
        t *= 1.0 - gamma;

        const double om = 1.0 - gamma;  // >= 0.005 because alpha <= 0.995
        double dgamma = ga * t_final / om;
        for (int c = 0; c < 3; ++c)
          dgamma += gc[c] * (fs.col[g * 3 + c] * t_k - (total[c] - pre[c]) / om);
        dgamma += gd * (s.z * t_k - (total[3] - pre[3]) / om);

        double* slot = gbuf + static_cast<std::size_t>(g) * kGSlots;
        // d/d(sample - center) of q, then flip sign for the center.
        const double qx = 2.0 * (s.ca * dx + s.cb * dy);   // dq/d(dx)
        const double qy = 2.0 * (s.cb * dx + s.cc * dy);
        const double dq = dgamma * gamma * (-0.5);
        slot[0] += -dq * qx;  // du
        slot[1] += -dq * qy;  // dv
        slot[2] += gd * wgt;  // dz (depth composite carries z directly)
        // dq/dSigma' in (a,b,c) form via u = conic * delta.
        const double ux = s.ca * dx + s.cb * dy;
        const double uy = s.cb * dx + s.cc * dy;
        slot[3] += dq * (-ux * ux);
        slot[4] += dq * (-2.0 * ux * uy);
        slot[5] += dq * (-uy * uy);
        slot[6] += gc[0] * wgt;
        slot[7] += gc[1] * wgt;
        slot[8] += gc[2] * wgt;
        slot[9] += dgamma * eq;
      }
    }
  }
}

}  // namespace

std::vector<Vec2> sample_offsets(int samples_per_pixel) {
  if (samples_per_pixel == 1) return {Vec2(0.5, 0.5)};
  if (samples_per_pixel == 4)
    return {Vec2(0.25, 0.25), Vec2(0.75, 0.25), Vec2(0.25, 0.75), Vec2(0.75, 0.75)};
  fail(ErrorKind::invalid_argument,
       "samples_per_pixel must be 1 or 4, got " + std::to_string(samples_per_pixel));
}

RenderOutput render(const CloudSlice& cloud, const Camera& cam, const RenderConfig& cfg) {
  cam.validate();
  const std::size_t h = cam.height, w = cam.width;

  auto finish = [&](Tensor packed) {
    RenderOutput out;
    out.packed = packed;
    out.color = ad::slice_channels(packed, 0, 3);
    out.depth = ad::slice_channel(packed, 3);
    out.accum = ad::slice_channel(packed, 4);
    return out;
  };

  const std::size_t m = cloud.positions.defined() ? cloud.positions.dim(0) : 0;
  if (m == 0) return finish(ad::zeros({5, h, w}));

  check(cloud.positions.shape() == ad::Shape{m, 3} && cloud.colors.shape() == ad::Shape{m, 3} &&
            cloud.opacities.numel() == m && cloud.covariances.shape() == ad::Shape{m, 9},
        ErrorKind::invalid_argument, "render: cloud arrays have inconsistent shapes");

  auto fs = std::make_shared<ForwardSaved>();
  fs->cam = cam;
  fs->cfg = cfg;
  fs->m = m;
  fs->h = h;
  fs->w = w;
  fs->offsets = sample_offsets(cfg.samples_per_pixel);
  fs->pos.assign(cloud.positions.data().begin(), cloud.positions.data().end());
  fs->col.assign(cloud.colors.data().begin(), cloud.colors.data().end());
  fs->alpha.assign(cloud.opacities.data().begin(), cloud.opacities.data().end());
  fs->cov.assign(cloud.covariances.data().begin(), cloud.covariances.data().end());

  for (double a : fs->alpha)
    check(a >= 0.0 && a <= kOpacityHi, ErrorKind::invalid_argument,
          "render: opacities must lie in [0, 0.995]");

  // Project every Gaussian; cull behind z_near, skip singular footprints.
  fs->splats.resize(m);
  std::vector<double> radius(m, 0.0);
  for (std::size_t g = 0; g < m; ++g) {
    const Vec3 x(fs->pos[g * 3], fs->pos[g * 3 + 1], fs->pos[g * 3 + 2]);
    const Projection pr = project(cam, x, cfg.z_near);
    if (pr.culled) continue;
    Mat3 sigma;
    for (int i = 0; i < 9; ++i) sigma(i / 3, i % 3) = fs->cov[g * 9 + i];
    const Mat2 s2 = project_covariance(cam, x, sigma, cfg.cov_floor_px2);
    const double a = s2(0, 0), b = s2(0, 1), c = s2(1, 1);
    const double det = a * c - b * b;
    if (!(det >= cfg.det_min)) continue;
    Splat& s = fs->splats[g];
    s.u = pr.pixel.u;
    s.v = pr.pixel.v;
    s.z = pr.z;
    s.ca = c / det;
    s.cb = -b / det;
    s.cc = a / det;
    s.valid = true;
    const double lam_max = 0.5 * (a + c) + std::sqrt(0.25 * (a - c) * (a - c) + b * b);
    radius[g] = cfg.cutoff_sigma * std::sqrt(lam_max);
  }

  // Global stable depth sort; ties keep cloud order.
  fs->order.reserve(m);
  for (std::size_t g = 0; g < m; ++g)
    if (fs->splats[g].valid) fs->order.push_back(static_cast<std::uint32_t>(g));
  std::stable_sort(fs->order.begin(), fs->order.end(),
                   [&](std::uint32_t a, std::uint32_t b) {
                     return fs->splats[a].z < fs->splats[b].z;
                   });

  // Tile binning in sorted order keeps every per-tile list depth-sorted.
  fs->tiles_x = (w + kTile - 1) / kTile;
  fs->tiles_y = (h + kTile - 1) / kTile;
  fs->tiles.assign(fs->tiles_x * fs->tiles_y, {});
  for (const std::uint32_t g : fs->order) {
    const Splat& s = fs->splats[g];
    const double r = radius[g];
    const double x0 = std::max(0.0, std::floor(s.u - r));
    const double y0 = std::max(0.0, std::floor(s.v - r));
    if (s.u + r < 0 || s.v + r < 0 || x0 >= static_cast<double>(w) ||
        y0 >= static_cast<double>(h))
      continue;
    const std::size_t tx0 = static_cast<std::size_t>(x0) / kTile;
    const std::size_t ty0 = static_cast<std::size_t>(y0) / kTile;
    const std::size_t tx1 =
        std::min(fs->tiles_x - 1, static_cast<std::size_t>(std::max(0.0, s.u + r)) / kTile);
    const std::size_t ty1 =
        std::min(fs->tiles_y - 1, static_cast<std::size_t>(std::max(0.0, s.v + r)) / kTile);
    for (std::size_t ty = ty0; ty <= ty1; ++ty)
      for (std::size_t tx = tx0; tx <= tx1; ++tx) fs->tiles[ty * fs->tiles_x + tx].push_back(g);
  }

  // Forward: disjoint per-pixel writes, safe under any partition.
  const std::size_t plane = h * w;
  std::vector<double> packed(5 * plane, 0.0);
  parallel_for(plane, [&](std::size_t begin, std::size_t end) {
    for (std::size_t pix = begin; pix < end; ++pix) {
      double out5[5];
      composite_pixel(*fs, pix % w, pix / w, out5);
      for (int c = 0; c < 5; ++c) packed[c * plane + pix] = out5[c];
    }
  });

  Tensor packed_t = ad::make_op(
      {cloud.positions, cloud.colors, cloud.opacities, cloud.covariances}, {5, h, w},
      std::move(packed),
      [fs](std::span<const double> up, const std::vector<double*>& sinks) {
        const std::size_t m = fs->m, plane = fs->h * fs->w;
        // Fixed 16-block partition of the pixels; per-block buffers merged in
        // block order make the result independent of the worker count.
        std::vector<std::vector<double>> buffers(kGradBlocks);
        parallel_for_blocks(kGradBlocks, [&](std::size_t b) {
          const std::size_t begin = b * plane / kGradBlocks;
          const std::size_t end = (b + 1) * plane / kGradBlocks;
          if (begin >= end) return;
          buffers[b].assign(m * kGSlots, 0.0);
          backward_block(*fs, up, begin, end, buffers[b].data());
        });
        std::vector<double> total(m * kGSlots, 0.0);
        for (std::size_t b = 0; b < kGradBlocks; ++b) {
          if (buffers[b].empty()) continue;
          for (std::size_t i = 0; i < total.size(); ++i) total[i] += buffers[b][i];
        }

        // Chain the per-splat image-space gradients back to the cloud arrays.
        parallel_for(m, [&](std::size_t gbegin, std::size_t gend) {
          for (std::size_t g = gbegin; g < gend; ++g) {
            if (!fs->splats[g].valid) continue;
            const double* slot = total.data() + g * kGSlots;
            if (sinks[1]) {
              sinks[1][g * 3 + 0] += slot[6];
              sinks[1][g * 3 + 1] += slot[7];
              sinks[1][g * 3 + 2] += slot[8];
            }
            if (sinks[2]) sinks[2][g] += slot[9];
            if (!sinks[0] && !sinks[3]) continue;

            const Vec3 x(fs->pos[g * 3], fs->pos[g * 3 + 1], fs->pos[g * 3 + 2]);
            Mat3 sigma;
            for (int i = 0; i < 9; ++i) sigma(i / 3, i % 3) = fs->cov[g * 9 + i];
            Mat2 gs2;
            gs2 << slot[3], 0.5 * slot[4], 0.5 * slot[4], slot[5];
            const CovarianceGrads cg =
                project_covariance_backward(fs->cam, x, sigma, gs2);
            if (sinks[3])
              for (int i = 0; i < 9; ++i) sinks[3][g * 9 + i] += cg.gsigma(i / 3, i % 3);
            if (sinks[0]) {
              const Vec3 gx =
                  project_backward(fs->cam, x, slot[0], slot[1], slot[2]) + cg.gx;
              sinks[0][g * 3 + 0] += gx.x();
              sinks[0][g * 3 + 1] += gx.y();
              sinks[0][g * 3 + 2] += gx.z();
            }
          }
        });
      });
  return finish(packed_t);
}

std::vector<std::uint8_t> occlusion_mask(const RenderOutput& out, double threshold) {
  check(threshold > 0.0 && threshold < 1.0, ErrorKind::invalid_argument,
        "occlusion threshold must lie in (0,1)");
  const auto accum = out.accum.data();
  std::vector<std::uint8_t> mask(accum.size());
  for (std::size_t i = 0; i < accum.size(); ++i) mask[i] = accum[i] >= threshold ? 1 : 0;
  return mask;
}

}  // namespace pxs
