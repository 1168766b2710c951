#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "core/bundle.hpp"
#include "core/dataset.hpp"
#include "core/rasterizer.hpp"
#include "core/train.hpp"

namespace pxs {

// Scores over the reconstructed-coverage mask only: pixels the model actually
// covers (accumulated opacity over the threshold). Image metrics exist when
// any pixel is covered; the depth metric additionally needs ground truth.
struct EvalMetrics {
  double coverage = 0.0;  // covered fraction of the frame
  std::size_t covered_pixels = 0;
  bool has_image_metrics = false;
  bool has_depth_metrics = false;
  double psnr = 0.0;       // dB, capped at 120 when the error underflows
  double ssim = 0.0;       // mean of the per-pixel similarity over the mask
  double depth_mae = 0.0;  // mean |composited depth / accum - truth| over the mask
};

struct ViewEvaluation {
  EvalMetrics metrics;
  ImageF color;  // rendered (3,H,W)
  ImageF depth;  // accumulation-normalized composite (1,H,W); zero where uncovered
  std::vector<std::uint8_t> mask;
};

// Renders the bundle from `camera` and scores against `gt_image` (3,H,W) and,
// when non-empty, `gt_depth` (1,H,W).
ViewEvaluation evaluate_view(const SceneBundle& bundle, const Camera& camera,
                             const ImageF& gt_image, const ImageF& gt_depth,
                             const RenderConfig& rcfg = {}, double mask_threshold = 1e-3);

// Evaluates every held-out view, writes eval_<k>.png / eval_<k>_depth.pfm and
// report.json into out_dir, and returns the report path. The report echoes the
// training configuration and the fixed pipeline constants next to the
// per-view and mean metrics, so a run is auditable from its artifacts alone.
std::string write_eval_report(const SceneBundle& bundle, const TrainConfig& config,
                              const std::vector<View>& heldout, const std::string& out_dir);

}  // namespace pxs
