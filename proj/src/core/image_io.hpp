#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "core/error.hpp"

namespace pxs {

// Planar float image, C x H x W, row-major within each plane.
struct ImageF {
  std::size_t channels = 0, height = 0, width = 0;
  std::vector<double> data;

  ImageF() = default;
  ImageF(std::size_t c, std::size_t h, std::size_t w)
      : channels(c), height(h), width(w), data(c * h * w, 0.0) {}

  std::size_t plane() const { return height * width; }
  double at(std::size_t c, std::size_t y, std::size_t x) const {
    return data[(c * height + y) * width + x];
  }
  double& at(std::size_t c, std::size_t y, std::size_t x) {
    return data[(c * height + y) * width + x];
  }
};

// 8-bit PNG -> 3xHxW in [0,1] (values divided by 255, no gamma handling).
// Palette/gray/alpha variants are normalized to RGB on load.
ImageF read_png_rgb(const std::string& path);
// Writes 8-bit RGB; values are clamped to [0,1] and rounded.
void write_png_rgb(const std::string& path, const ImageF& img);

// Grayscale PFM ("Pf"), scanlines stored bottom-up, scale-line sign gives
// endianness (negative = little-endian). Sample precision is float32.
ImageF read_pfm(const std::string& path);
void write_pfm(const std::string& path, const ImageF& img);

// Middlebury .flo: float magic 202021.25, int32 width/height, then
// interleaved (u,v) float32 pairs, rows top-down. Returned as 2xHxW.
ImageF read_flo(const std::string& path);
void write_flo(const std::string& path, const ImageF& flow);

}  // namespace pxs
