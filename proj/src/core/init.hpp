#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "core/bundle.hpp"
#include "core/geometry.hpp"
#include "core/image_io.hpp"
#include "core/losses.hpp"

namespace pxs {

// Forward-backward flow consistency: pixel p survives when
// ||F_fwd(p) + F_bwd(p + F_fwd(p))|| <= tau, with the backward flow read
// bilinearly at the warped position. Warps leaving the image are masked 0.
std::vector<std::uint8_t> consistency_mask(const ImageF& forward, const ImageF& backward,
                                           double tau = 1.0);

struct AlignConfig {
  std::size_t iterations = 1000;
  double lr = 1e-2;
  double scale_floor = 1e-3;
  std::size_t min_pair_correspondences = 100;
};

struct AlignResult {
  AlignParams params;               // view 0 pinned at scale 1, offset 0
  std::vector<double> loss_history; // objective of the retained iterate, per iteration
  std::vector<std::string> warnings;
};

// Finds per-view scale/offset for the monocular depths by minimizing the
// masked flow-consistency loss of the transformed depths with Adam. View 0 is
// frozen at (1, 0) to pin the global gauge; scales are floored at
// config.scale_floor. Adam proposals that do not improve the objective are
// discarded, so the reported objective never increases.
AlignResult align_depths(const std::vector<Camera>& cameras,
                         const std::vector<std::vector<double>>& monodepths,
                         const std::vector<FlowObservation>& observations,
                         const AlignConfig& config = {});

// Equal-population quantile binning of disparity 1/(1+depth) into a one-hot
// C-channel mask. Ranking uses a stable (value, pixel-index) sort and ties
// share the bin of their first member, so a constant map lands entirely in
// channel 0 and any strictly increasing transform of the depths yields the
// identical mask.
SegMask segment_by_depth(const std::vector<double>& monodepth, std::size_t height,
                         std::size_t width, std::size_t channels = 5);

// Starting opacity by number of input views (2 -> 0.6, 3 -> 0.5, >= 4 -> 0.35).
double alpha_init_for_views(std::size_t n_views);

// Builds the optimization starting point: one Gaussian per pixel per view with
// colors from the images and depths from the aligned depth maps, depth-region
// masks, and freshly initialized residual decoders (seeded deterministically).
SceneBundle init_scene(const std::vector<Camera>& cameras, const std::vector<ImageF>& images,
                       const std::vector<std::vector<double>>& aligned_depths,
                       std::size_t channels, std::uint64_t seed);

}  // namespace pxs
