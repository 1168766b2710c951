#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "core/tensor.hpp"

namespace pxs {

enum class DecoderHead { depth, opacity };

// Implicit convolutional decoder: a normalized view index (plus fixed
// coordinate planes) in, a C-channel full-resolution residual map out.
// Architecture is a pure function of (H, W, capacity, C).
struct Decoder {
  std::size_t height = 0, width = 0;
  std::size_t capacity = 0, out_channels = 0;
  DecoderHead head = DecoderHead::depth;
  double output_gain = 1.0;

  // Stage kernels {cout, cin, 3, 3} and biases {cout}; the last pair is the
  // linear output convolution.
  std::vector<ad::Tensor> kernels;
  std::vector<ad::Tensor> biases;

  std::vector<ad::Tensor> parameters() const;
  std::size_t parameter_count() const;
};

// Stage widths, widest first, scaled by the capacity factor.
std::vector<std::size_t> decoder_stage_widths(std::size_t capacity);

// Capacity presets by number of input views (clamped to the known range).
std::size_t decoder_capacity(DecoderHead head, std::size_t n_views);

// H and W must be divisible by 16 (four 2x upsample stages).
Decoder build_decoder(std::size_t height, std::size_t width, std::size_t capacity,
                      std::size_t out_channels, DecoderHead head, std::mt19937_64& rng);

// Runs the decoder for normalized view index n in [0,1]. Differentiable with
// respect to the parameters; n is a plain input.
ad::Tensor decode(const Decoder& dec, double n);

// Channel-sum against a one-hot C x H x W mask: out[p] = sum_c S[c,p] * residual[c,p].
// The mask must be an exact binary partition over channels.
ad::Tensor apply_mask(const ad::Tensor& residual, const std::vector<std::uint8_t>& mask,
                      std::size_t channels, std::size_t height, std::size_t width);

}  // namespace pxs
