#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "core/dataset.hpp"
#include "core/geometry.hpp"
#include "core/image_io.hpp"

namespace pxs {

// Two textured fronto-parallel planes (a square slab in front of a backdrop)
// seen by a row of x-translated cameras. Everything is analytic: images,
// depths, and flows are exact, so the flows of co-visible pixels compose to
// zero identically and occluded pixels fail the consistency check by the
// plane disparity gap.
struct SynthConfig {
  std::size_t n_views = 3;
  std::size_t n_heldout = 2;
  std::size_t width = 64, height = 64;
  double focal = 10.0;
  double camera_spread = 0.5;  // distance between adjacent training cameras
  double fg_depth = 2.0;
  double bg_depth = 4.0;
  double fg_half_extent = 1.6;  // world half-size of the foreground square
  // Per training view: stored depth = (true - offset) / scale, so alignment
  // must recover (scale, offset). Empty means identity.
  std::vector<double> planted_scale;
  std::vector<double> planted_offset;
  double depth_noise = 0.0;  // relative sigma of multiplicative noise
  std::uint64_t seed = 0;

  void validate() const;
};

struct SynthScene {
  std::vector<Camera> cameras;  // training views
  std::vector<ImageF> images;
  std::vector<ImageF> true_depths;    // 1xHxW analytic depth
  std::vector<ImageF> stored_depths;  // corrupted (and noised) depth, what a
                                      // relative-depth predictor would hand us
  std::vector<FlowEdge> flows;        // every ordered pair of training views
  std::vector<Camera> heldout_cameras;
  std::vector<ImageF> heldout_images;
  std::vector<ImageF> heldout_depths;  // ground truth, for evaluation
};

SynthScene synth_scene(const SynthConfig& config);

// Writes the scene as a loadable dataset (PNG/PFM/.flo/JSON + manifest).
// Returns the manifest path.
std::string write_synth_dataset(const SynthScene& scene, const std::string& dir);

}  // namespace pxs
