#pragma once

#include <cstdint>
#include <vector>

#include "core/decoder.hpp"
#include "core/scene.hpp"

namespace pxs {

// Per-view scale/offset applied to monocular depth during alignment.
struct AlignParams {
  std::vector<double> scale;
  std::vector<double> offset;
};

// Everything optimization touches for one reconstruction: per-view Gaussian
// grids with their depth-region masks, the two residual decoders shared
// across views, and training progress. Serializable as a checkpoint.
struct SceneBundle {
  std::size_t channels = 5;  // depth regions per view
  double alpha_init = 0.35;
  std::vector<PixelGaussianGrid> grids;
  std::vector<SegMask> segs;
  Decoder depth_decoder;
  Decoder opacity_decoder;
  AlignParams align;  // transform already baked into each grid's d_init
  std::uint64_t iteration = 0;
  std::vector<double> loss_history;

  std::size_t view_count() const { return grids.size(); }
  void validate() const;
};

// Decoder conditioning coordinate for a view: evenly spaced over [0,1].
double view_coordinate(std::size_t view, std::size_t n_views);

// Runs both decoders for one view, selects each pixel's residual through the
// view's depth-region mask, and materializes that view's Gaussians.
// `depth_out`, when given, receives the view's clamped {H,W} depth map.
CloudSlice materialize_view(const SceneBundle& bundle, std::size_t view,
                            ad::Tensor* depth_out = nullptr);

// Differentiable cloud over all views, view-major pixel raster order.
// `depths_out`, when given, receives one clamped depth map per view.
GaussianCloud assemble_cloud(const SceneBundle& bundle,
                             std::vector<ad::Tensor>* depths_out = nullptr);

}  // namespace pxs
