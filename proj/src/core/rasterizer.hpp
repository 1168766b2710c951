#pragma once

#include <cstdint>
#include <vector>

#include "core/geometry.hpp"
#include "core/scene.hpp"
#include "core/tensor.hpp"

namespace pxs {

struct RenderConfig {
  int samples_per_pixel = 1;           // 1 or 4
  double z_near = kDefaultZNear;
  double early_stop_transmittance = 1e-4;
  bool early_termination = true;       // disabled for finite-difference checks
  double cutoff_sigma = 3.0;           // Gaussians contribute only inside this ellipse
  double det_min = 1e-12;              // singular projected covariances are skipped
  double cov_floor_px2 = kCovarianceFloor;
};

// Differentiable render products. `packed` is the underlying {5,H,W} op
// output (RGB, composited depth, accumulated opacity); the named fields are
// channel views of it.
struct RenderOutput {
  ad::Tensor color;  // {3,H,W}
  ad::Tensor depth;  // {H,W}, opacity-weighted composite of view-space z (unnormalized)
  ad::Tensor accum;  // {H,W}, 1 - prod(1 - gamma)
  ad::Tensor packed;
};

// Sub-pixel sample positions relative to the pixel origin.
// 1 -> center; 4 -> stratified 2x2. Other counts are rejected.
std::vector<Vec2> sample_offsets(int samples_per_pixel);

// Front-to-back alpha compositing of the cloud under `cam`. Gaussians behind
// z_near are culled; survivors are globally sorted by view-space depth
// (stable, ties keep cloud order). Backward is the exact adjoint of this
// forward with the sort order held fixed. Opacities must lie in
// [0, 0.995] so the compositing denominators stay bounded.
RenderOutput render(const CloudSlice& cloud, const Camera& cam, const RenderConfig& cfg = {});

// accum >= threshold per pixel (1 = reconstructed, 0 = occluded or empty).
std::vector<std::uint8_t> occlusion_mask(const RenderOutput& out, double threshold = 1e-3);

}  // namespace pxs
