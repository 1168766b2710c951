#include "core/decoder.hpp"

#include <cmath>
#include <sstream>

#include "core/error.hpp"

namespace pxs {

using ad::Tensor;

std::vector<std::size_t> decoder_stage_widths(std::size_t capacity) {
  return {8 * capacity, 4 * capacity, 2 * capacity, capacity};
}

std::size_t decoder_capacity(DecoderHead head, std::size_t n_views) {
  static constexpr std::size_t depth_caps[] = {10, 15, 18};    // 2, 3, 4 views
  static constexpr std::size_t opacity_caps[] = {6, 10, 12};
  std::size_t idx = n_views <= 2 ? 0 : (n_views >= 4 ? 2 : n_views - 2);
  return head == DecoderHead::depth ? depth_caps[idx] : opacity_caps[idx];
}

std::vector<Tensor> Decoder::parameters() const {
  std::vector<Tensor> out;
  for (std::size_t i = 0; i < kernels.size(); ++i) {
    out.push_back(kernels[i]);
    out.push_back(biases[i]);
  }
  return out;
}

std::size_t Decoder::parameter_count() const {
  std::size_t n = 0;
  for (const Tensor& p : parameters()) n += p.numel();
  return n;
}

Decoder build_decoder(std::size_t height, std::size_t width, std::size_t capacity,
                      std::size_t out_channels, DecoderHead head, std::mt19937_64& rng) {
  if (height % 16 != 0 || width % 16 != 0) {
    std::ostringstream os;
    os << "decoder resolution " << width << "x" << height
       << " must be divisible by 16; pad the inputs to the next multiple";
    fail(ErrorKind::invalid_argument, os.str());
  }
  check(capacity >= 1 && out_channels >= 1, ErrorKind::invalid_argument,
        "decoder capacity and channel count must be positive");

  Decoder dec;
  dec.height = height;
  dec.width = width;
  dec.capacity = capacity;
  dec.out_channels = out_channels;
  dec.head = head;

  const std::vector<std::size_t> widths = decoder_stage_widths(capacity);
  std::size_t cin = 3;  // coordconv x, y + broadcast view index
  auto add_conv = [&](std::size_t cout) {
    const std::size_t fan_in = cin * 9;
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> u(-bound, bound);
    std::vector<double> k(cout * cin * 9);
    for (auto& v : k) v = u(rng);
    dec.kernels.push_back(ad::param({cout, cin, 3, 3}, std::move(k)));
    dec.biases.push_back(ad::zeros({cout}, /*requires_grad=*/true));
    cin = cout;
  };
  for (std::size_t w : widths) add_conv(w);
  add_conv(out_channels);
  return dec;
}

Tensor decode(const Decoder& dec, double n) {
  check(dec.kernels.size() == 5, ErrorKind::state, "decoder is not built");
  check(n >= 0.0 && n <= 1.0, ErrorKind::invalid_argument,
        "normalized view index must lie in [0,1]");
  const std::size_t hb = dec.height / 16, wb = dec.width / 16;
  std::vector<double> grid(3 * hb * wb);
  for (std::size_t y = 0; y < hb; ++y) {
    for (std::size_t x = 0; x < wb; ++x) {
      grid[0 * hb * wb + y * wb + x] = 2.0 * (x + 0.5) / wb - 1.0;
      grid[1 * hb * wb + y * wb + x] = 2.0 * (y + 0.5) / hb - 1.0;
      grid[2 * hb * wb + y * wb + x] = n;
    }
  }
  Tensor x = ad::constant({3, hb, wb}, std::move(grid));
  for (int stage = 0; stage < 4; ++stage) {
    x = ad::conv2d(x, dec.kernels[stage], dec.biases[stage]);
    x = ad::leaky_relu(x, 0.2);
    x = ad::upsample_bilinear2x(x);
  }
  x = ad::conv2d(x, dec.kernels[4], dec.biases[4]);
  if (dec.output_gain != 1.0) x = ad::mul(x, dec.output_gain);
  return x;
}

Tensor apply_mask(const Tensor& residual, const std::vector<std::uint8_t>& mask,
                  std::size_t channels, std::size_t height, std::size_t width) {
  check(residual.shape() == ad::Shape{channels, height, width}, ErrorKind::invalid_argument,
        "apply_mask: residual shape does not match the mask");
  check(mask.size() == channels * height * width, ErrorKind::invalid_argument,
        "apply_mask: mask size mismatch");
  const std::size_t plane = height * width;
  // The mask must be one-hot across channels at every pixel.
  std::vector<std::size_t> selected(plane);
  for (std::size_t p = 0; p < plane; ++p) {
    std::size_t ones = 0, which = 0;
    for (std::size_t c = 0; c < channels; ++c) {
      const std::uint8_t m = mask[c * plane + p];
      check(m == 0 || m == 1, ErrorKind::invalid_argument,
            "apply_mask: mask entries must be 0 or 1");
      if (m) {
        ones++;
        which = c;
      }
    }
    check(ones == 1, ErrorKind::invalid_argument,
          "apply_mask: mask must select exactly one channel per pixel");
    selected[p] = which;
  }

  std::vector<double> out(plane);
  const auto src = residual.data();
  for (std::size_t p = 0; p < plane; ++p) out[p] = src[selected[p] * plane + p];

  return ad::make_op(
      {residual}, {height, width}, std::move(out),
      [plane, selected = std::move(selected)](std::span<const double> upstream,
                                              const std::vector<double*>& adjoints) {
        if (!adjoints[0]) return;
        for (std::size_t p = 0; p < plane; ++p)
          adjoints[0][selected[p] * plane + p] += upstream[p];
      });
}

}  // namespace pxs
