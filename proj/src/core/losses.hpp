#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "core/geometry.hpp"
#include "core/image_io.hpp"
#include "core/scene.hpp"
#include "core/tensor.hpp"

namespace pxs {

struct LossWeights {
  double beta_m = 5.0;     // multiview (TV/masked-TV) weight
  double beta_f = 0.1;     // flow weight
  double lambda_ssim = 0.2;
  double lambda_s = 0.0;   // TV -> masked-TV schedule position in [0,1]

  void validate() const;
};

// Separable Gaussian filter with zero padding, spatial size preserved.
// Input (C,H,W) or (H,W). The operator is self-adjoint, which keeps the
// backward pass a second application of the same filter.
ad::Tensor gaussian_blur(const ad::Tensor& image, std::size_t window = 11, double sigma = 1.5);

// Per-element structural similarity over an 11x11 Gaussian window (sigma 1.5)
// with the standard stabilizers for unit dynamic range, same shape as the
// input. `target` is treated as a constant; the result is differentiable in
// `image`.
ad::Tensor ssim_map(const ad::Tensor& image, const ad::Tensor& target);

// Mean of ssim_map over all elements.
ad::Tensor ssim(const ad::Tensor& image, const ad::Tensor& target);

// (1 - lambda) * mean|image - target| + lambda * (1 - SSIM).
ad::Tensor photometric(const ad::Tensor& image, const ad::Tensor& target,
                       double lambda_ssim = 0.2);

// Total variation of the disparity 1/(1+depth) under forward differences,
// mean-normalized by pixel count. The second value is the same sum restricted
// to pixel pairs that share a segmentation channel, so region boundaries
// contribute nothing.
std::pair<ad::Tensor, ad::Tensor> tv_losses(const ad::Tensor& depth, const SegMask& seg);

// Linear ramp from 0 at iteration 0 to 1 at iteration == total.
double schedule_lambda_s(std::size_t iteration, std::size_t total);

// One directed flow edge: per-pixel displacement from view `from` into view
// `to`, with the pixels that passed the forward-backward consistency check.
struct FlowObservation {
  std::size_t from = 0, to = 0;
  const ImageF* flow = nullptr;                     // (2,H,W) pixel displacements
  const std::vector<std::uint8_t>* mask = nullptr;  // H*W, 1 = use this pixel
};

// L1 distance between the 3D points both views place at corresponding pixels,
// summed over every observation and normalized by the number of contributing
// pixels. Target-view depth is looked up bilinearly at the warped position;
// warps without full bilinear support are skipped. Differentiable into every
// view's depth map.
ad::Tensor flow_loss(const std::vector<Camera>& cameras, const std::vector<ad::Tensor>& depths,
                     const std::vector<FlowObservation>& observations);

// How many pixels of each observation contribute to flow_loss: mask-selected
// pixels whose warped position keeps full bilinear support in the target view.
std::vector<std::size_t> flow_correspondence_counts(
    const std::vector<Camera>& cameras, const std::vector<FlowObservation>& observations);

// photo + beta_m * ((1-lambda_s) * tv + lambda_s * mtv) + beta_f * flow.
ad::Tensor total_loss(const ad::Tensor& photo, const ad::Tensor& tv, const ad::Tensor& mtv,
                      const ad::Tensor& flow, const LossWeights& weights);

}  // namespace pxs
