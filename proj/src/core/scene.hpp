#pragma once

#include <cstdint>
#include <vector>

#include "core/geometry.hpp"
#include "core/tensor.hpp"

namespace pxs {

inline constexpr double kDepthFloor = 1e-3;
inline constexpr double kOpacityLo = 0.005;
inline constexpr double kOpacityHi = 0.995;

// One Gaussian per pixel of one input view. Position is derived from the
// initial depth plus a decoded residual at materialization time, so the
// Gaussian always stays on its pixel ray.
struct PixelGaussianGrid {
  Camera camera;
  std::size_t height = 0, width = 0;
  std::vector<double> d_init;  // H*W planar depths, > 0
  ad::Tensor color;            // {3,H,W} in [0,1], optimizable
  ad::Tensor rotation;         // {4,H,W} quaternions (w,x,y,z), phase-2 optimizable
  ad::Tensor log_scale;        // {3,H,W} log per-axis scales, phase-2 optimizable
  double alpha_init = 0.5;
  bool frozen_covariance = true;

  std::size_t pixel_count() const { return height * width; }
};

// One-hot depth-region segmentation, planar (C,H,W). Exactly one channel is
// set per pixel.
struct SegMask {
  std::size_t channels = 0, height = 0, width = 0;
  std::vector<std::uint8_t> data;

  void validate() const;
  // Channel owning each pixel (H*W entries).
  std::vector<std::uint8_t> channel_map() const;
};

// Flattened differentiable cloud arrays for one view (M = H*W rows, pixel
// raster order).
struct CloudSlice {
  ad::Tensor positions;    // {M,3} world
  ad::Tensor colors;       // {M,3}
  ad::Tensor opacities;    // {M,1}
  ad::Tensor covariances;  // {M,9} world-frame, row-major symmetric
};

// (view, pixel) provenance for each cloud row.
struct SourceRef {
  int view = 0;
  std::uint32_t pixel = 0;
};

struct GaussianCloud {
  CloudSlice tensors;
  std::vector<SourceRef> sources;
  std::size_t size() const { return sources.size(); }
};

// Allocates per-pixel parameters for one view: colors from the source image,
// identity rotations, log_scale = log(radius from the initial depth).
PixelGaussianGrid make_grid(const Camera& camera, const std::vector<double>& d_init,
                            const std::vector<double>& image_rgb /* 3*H*W planar */,
                            double alpha_init);

// r = fy * D / H elementwise (footprint of roughly one pixel when projected).
std::vector<double> radius_from_depth(const Camera& camera, const std::vector<double>& depth);

// depth = clamp(d_init + residual_depth, floor, inf), position = ray * depth,
// opacity = clamp(alpha_init + residual_opacity, 0.005, 0.995); covariance per
// the phase flag. Fully differentiable w.r.t. both residual maps and the grid
// parameters. `depth_out`, when given, receives the clamped {H,W} depth map
// (the same tape node the positions are built from).
CloudSlice materialize(const PixelGaussianGrid& grid, const ad::Tensor& residual_depth,
                       const ad::Tensor& residual_opacity, ad::Tensor* depth_out = nullptr);

// Concatenates per-view slices into one cloud (view order preserved).
GaussianCloud concat_slices(const std::vector<CloudSlice>& slices,
                            const std::vector<const PixelGaussianGrid*>& grids);

}  // namespace pxs
