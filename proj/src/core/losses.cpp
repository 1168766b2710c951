#include "core/losses.hpp"

#include <algorithm>
#include <cmath>

#include "core/error.hpp"

namespace pxs {

using ad::Tensor;

namespace {

constexpr double kSsimC1 = 0.01 * 0.01;
constexpr double kSsimC2 = 0.03 * 0.03;

std::vector<double> gaussian_kernel(std::size_t window, double sigma) {
  check(window >= 1 && window % 2 == 1, ErrorKind::invalid_argument,
        "gaussian_blur: window must be odd");
  check(sigma > 0, ErrorKind::invalid_argument, "gaussian_blur: sigma must be positive");
  std::vector<double> k(window);
  const double r = (window - 1) / 2.0;
  double sum = 0;
  for (std::size_t i = 0; i < window; ++i) {
    k[i] = std::exp(-0.5 * (i - r) * (i - r) / (sigma * sigma));
    sum += k[i];
  }
  for (auto& v : k) v /= sum;
  return k;
}

// Zero-padded separable filter over each (H,W) plane.
void blur_planes(const std::vector<double>& k, std::size_t c, std::size_t h, std::size_t w,
                 const double* in, double* out) {
  const std::ptrdiff_t radius = static_cast<std::ptrdiff_t>(k.size() / 2);
  std::vector<double> tmp(h * w);
  for (std::size_t ch = 0; ch < c; ++ch) {
    const double* src = in + ch * h * w;
    double* dst = out + ch * h * w;
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        double acc = 0;
        for (std::ptrdiff_t t = -radius; t <= radius; ++t) {
          const std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(x) + t;
          if (sx >= 0 && sx < static_cast<std::ptrdiff_t>(w))
            acc += k[t + radius] * src[y * w + sx];
        }
        tmp[y * w + x] = acc;
      }
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        double acc = 0;
        for (std::ptrdiff_t t = -radius; t <= radius; ++t) {
          const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y) + t;
          if (sy >= 0 && sy < static_cast<std::ptrdiff_t>(h))
            acc += k[t + radius] * tmp[sy * w + x];
        }
        dst[y * w + x] = acc;
      }
  }
}

// out[y][x] = in[y][x+1] - in[y][x], shrinking the row direction by one.
Tensor fdiff_x(const Tensor& a) {
  const std::size_t h = a.dim(0), w = a.dim(1);
  std::vector<double> out((w - 1) * h);
  const auto src = a.data();
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x + 1 < w; ++x) out[y * (w - 1) + x] = src[y * w + x + 1] - src[y * w + x];
  return ad::make_op({a}, {h, w - 1}, std::move(out),
                     [h, w](std::span<const double> up, const std::vector<double*>& sinks) {
                       if (!sinks[0]) return;
                       for (std::size_t y = 0; y < h; ++y)
                         for (std::size_t x = 0; x + 1 < w; ++x) {
                           const double g = up[y * (w - 1) + x];
                           sinks[0][y * w + x + 1] += g;
                           sinks[0][y * w + x] -= g;
                         }
                     });
}

Tensor fdiff_y(const Tensor& a) {
  const std::size_t h = a.dim(0), w = a.dim(1);
  std::vector<double> out((h - 1) * w);
  const auto src = a.data();
  for (std::size_t y = 0; y + 1 < h; ++y)
    for (std::size_t x = 0; x < w; ++x) out[y * w + x] = src[(y + 1) * w + x] - src[y * w + x];
  return ad::make_op({a}, {h - 1, w}, std::move(out),
                     [h, w](std::span<const double> up, const std::vector<double*>& sinks) {
                       if (!sinks[0]) return;
                       for (std::size_t y = 0; y + 1 < h; ++y)
                         for (std::size_t x = 0; x < w; ++x) {
                           const double g = up[y * w + x];
                           sinks[0][(y + 1) * w + x] += g;
                           sinks[0][y * w + x] -= g;
                         }
                     });
}

}  // namespace

void LossWeights::validate() const {
  check(beta_m >= 0 && beta_f >= 0, ErrorKind::invalid_argument,
        "loss weights: beta_m and beta_f must be non-negative");
  check(lambda_ssim >= 0 && lambda_ssim <= 1, ErrorKind::invalid_argument,
        "loss weights: lambda_ssim must lie in [0,1]");
  check(lambda_s >= 0 && lambda_s <= 1, ErrorKind::invalid_argument,
        "loss weights: lambda_s must lie in [0,1]");
}

Tensor gaussian_blur(const Tensor& image, std::size_t window, double sigma) {
  const auto& shape = image.shape();
  check(shape.size() == 2 || shape.size() == 3, ErrorKind::invalid_argument,
        "gaussian_blur: input must be (H,W) or (C,H,W)");
  const std::size_t c = shape.size() == 3 ? shape[0] : 1;
  const std::size_t h = shape[shape.size() - 2], w = shape[shape.size() - 1];
  auto kernel = gaussian_kernel(window, sigma);

  std::vector<double> out(image.numel());
  blur_planes(kernel, c, h, w, image.data().data(), out.data());
  return ad::make_op({image}, shape, std::move(out),
                     [kernel = std::move(kernel), c, h, w](std::span<const double> up,
                                                           const std::vector<double*>& sinks) {
                       if (!sinks[0]) return;
                       std::vector<double> g(up.size());
                       blur_planes(kernel, c, h, w, up.data(), g.data());
                       for (std::size_t i = 0; i < g.size(); ++i) sinks[0][i] += g[i];
                     });
}

Tensor ssim_map(const Tensor& image, const Tensor& target) {
  check(image.shape() == target.shape(), ErrorKind::invalid_argument,
        "ssim: image and target shapes must match");
  using namespace ad;
  const Tensor mu_x = gaussian_blur(image);
  const Tensor mu_y = gaussian_blur(target);
  const Tensor var_x = sub(gaussian_blur(mul(image, image)), mul(mu_x, mu_x));
  const Tensor var_y = sub(gaussian_blur(mul(target, target)), mul(mu_y, mu_y));
  const Tensor cov = sub(gaussian_blur(mul(image, target)), mul(mu_x, mu_y));
  const Tensor num = mul(add(mul(mul(mu_x, mu_y), 2.0), kSsimC1), add(mul(cov, 2.0), kSsimC2));
  const Tensor den =
      mul(add(add(mul(mu_x, mu_x), mul(mu_y, mu_y)), kSsimC1), add(add(var_x, var_y), kSsimC2));
  return div(num, den);
}

Tensor ssim(const Tensor& image, const Tensor& target) {
  return ad::reduce_mean(ssim_map(image, target));
}

Tensor photometric(const Tensor& image, const Tensor& target, double lambda_ssim) {
  check(image.shape() == target.shape(), ErrorKind::invalid_argument,
        "photometric: image and target shapes must match");
  check(lambda_ssim >= 0 && lambda_ssim <= 1, ErrorKind::invalid_argument,
        "photometric: lambda_ssim must lie in [0,1]");
  for (double v : target.data())
    check(v >= 0 && v <= 1, ErrorKind::invalid_argument,
          "photometric: target values must lie in [0,1]");
  using namespace ad;
  const Tensor l1 = reduce_mean(abs(sub(image, target)));
  if (lambda_ssim == 0) return l1;
  return add(mul(l1, 1.0 - lambda_ssim), mul(sub(1.0, ssim(image, target)), lambda_ssim));
}

std::pair<Tensor, Tensor> tv_losses(const Tensor& depth, const SegMask& seg) {
  check(depth.shape().size() == 2, ErrorKind::invalid_argument, "tv_losses: depth must be (H,W)");
  const std::size_t h = depth.dim(0), w = depth.dim(1);
  check(seg.height == h && seg.width == w, ErrorKind::invalid_argument,
        "tv_losses: segmentation mask resolution mismatch");
  for (double v : depth.data())
    check(v >= 0, ErrorKind::invalid_argument, "tv_losses: depth must be non-negative");

  using namespace ad;
  const Tensor disparity = reciprocal(add(depth, 1.0));
  const Tensor dx = abs(fdiff_x(disparity));
  const Tensor dy = abs(fdiff_y(disparity));
  const double norm = 1.0 / static_cast<double>(h * w);
  const Tensor tv = mul(add(reduce_sum(dx), reduce_sum(dy)), norm);

  // Keep only differences whose endpoints share a segmentation channel.
  const auto owner = seg.channel_map();
  std::vector<double> mx(h * (w - 1)), my((h - 1) * w);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x + 1 < w; ++x)
      mx[y * (w - 1) + x] = owner[y * w + x] == owner[y * w + x + 1] ? 1.0 : 0.0;
  for (std::size_t y = 0; y + 1 < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      my[y * w + x] = owner[y * w + x] == owner[(y + 1) * w + x] ? 1.0 : 0.0;
  const Tensor mtv =
      mul(add(reduce_sum(mul(dx, constant({h, w - 1}, std::move(mx)))),
              reduce_sum(mul(dy, constant({h - 1, w}, std::move(my))))),
          norm);
  return {tv, mtv};
}

double schedule_lambda_s(std::size_t iteration, std::size_t total) {
  check(total >= 1, ErrorKind::invalid_argument, "schedule: total iterations must be positive");
  check(iteration <= total, ErrorKind::invalid_argument,
        "schedule: iteration exceeds total iterations");
  return static_cast<double>(iteration) / static_cast<double>(total);
}

Tensor flow_loss(const std::vector<Camera>& cameras, const std::vector<Tensor>& depths,
                 const std::vector<FlowObservation>& observations) {
  check(cameras.size() == depths.size(), ErrorKind::invalid_argument,
        "flow_loss: need one depth map per camera");
  for (std::size_t i = 0; i < cameras.size(); ++i)
    check(depths[i].shape() == ad::Shape{cameras[i].height, cameras[i].width},
          ErrorKind::invalid_argument, "flow_loss: depth map shape mismatch");

  // Everything the backward pass needs about one contributing pixel.
  struct Record {
    std::uint32_t from, to, pixel, corner[4];
    double weight[4];
    Vec3 dir_from, dir_to, sign;
  };
  std::vector<Record> records;

  // Source-pixel rays are reused across observations that share a view.
  std::vector<std::vector<Ray>> rays(cameras.size());
  auto view_rays = [&](std::size_t v) -> const std::vector<Ray>& {
    auto& r = rays[v];
    if (r.empty()) {
      const Camera& cam = cameras[v];
      r.reserve(cam.height * cam.width);
      for (std::size_t y = 0; y < cam.height; ++y)
        for (std::size_t x = 0; x < cam.width; ++x)
          r.push_back(pixel_ray(cam, {x + 0.5, y + 0.5}));
    }
    return r;
  };

  double total = 0;
  for (const auto& obs : observations) {
    check(obs.from < cameras.size() && obs.to < cameras.size() && obs.from != obs.to,
          ErrorKind::invalid_argument, "flow_loss: observation view index out of range");
    check(obs.flow && obs.mask, ErrorKind::invalid_argument,
          "flow_loss: observation missing flow or mask");
    const Camera& cam_i = cameras[obs.from];
    const Camera& cam_j = cameras[obs.to];
    const std::size_t h = cam_i.height, w = cam_i.width;
    check(obs.flow->channels == 2 && obs.flow->height == h && obs.flow->width == w,
          ErrorKind::invalid_argument, "flow_loss: flow field resolution mismatch");
    check(obs.mask->size() == h * w, ErrorKind::invalid_argument,
          "flow_loss: mask resolution mismatch");
    const std::size_t hj = cam_j.height, wj = cam_j.width;
    const auto di = depths[obs.from].data();
    const auto dj = depths[obs.to].data();
    const auto& src_rays = view_rays(obs.from);

    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        const std::size_t p = y * w + x;
        if (!(*obs.mask)[p]) continue;
        const double u = x + 0.5 + obs.flow->at(0, y, x);
        const double v = y + 0.5 + obs.flow->at(1, y, x);
        // Bilinear support over depth samples at pixel centers.
        const double gx = u - 0.5, gy = v - 0.5;
        if (!(gx >= 0 && gx <= wj - 1 && gy >= 0 && gy <= hj - 1)) continue;
        std::size_t x0 = std::min(static_cast<std::size_t>(gx), wj - 2);
        std::size_t y0 = std::min(static_cast<std::size_t>(gy), hj - 2);
        const double fx = gx - x0, fy = gy - y0;

        Record rec;
        rec.from = static_cast<std::uint32_t>(obs.from);
        rec.to = static_cast<std::uint32_t>(obs.to);
        rec.pixel = static_cast<std::uint32_t>(p);
        rec.corner[0] = static_cast<std::uint32_t>(y0 * wj + x0);
        rec.corner[1] = static_cast<std::uint32_t>(y0 * wj + x0 + 1);
        rec.corner[2] = static_cast<std::uint32_t>((y0 + 1) * wj + x0);
        rec.corner[3] = static_cast<std::uint32_t>((y0 + 1) * wj + x0 + 1);
        rec.weight[0] = (1 - fx) * (1 - fy);
        rec.weight[1] = fx * (1 - fy);
        rec.weight[2] = (1 - fx) * fy;
        rec.weight[3] = fx * fy;

        double depth_j = 0;
        for (int k = 0; k < 4; ++k) depth_j += rec.weight[k] * dj[rec.corner[k]];

        const Ray ray_i = src_rays[p];
        const Ray ray_j = pixel_ray(cam_j, {u, v});
        rec.dir_from = ray_i.dir;
        rec.dir_to = ray_j.dir;
        const Vec3 diff =
            (ray_i.origin + ray_i.dir * di[p]) - (ray_j.origin + ray_j.dir * depth_j);
        for (int a = 0; a < 3; ++a) {
          total += std::abs(diff[a]);
          rec.sign[a] = diff[a] > 0 ? 1.0 : (diff[a] < 0 ? -1.0 : 0.0);
        }
        records.push_back(rec);
      }
  }

  if (records.empty()) return ad::zeros({1});
  const double norm = 1.0 / static_cast<double>(records.size());

  return ad::make_op(
      depths, {1}, {total * norm},
      [records = std::move(records), norm](std::span<const double> up,
                                           const std::vector<double*>& sinks) {
        const double g = up[0] * norm;
        for (const auto& rec : records) {
          // d|diff|/d(depth_i) = sign . dir_i; the target side enters through
          // the four bilinear taps with negative sign.
          const double along_i = rec.sign.dot(rec.dir_from);
          const double along_j = rec.sign.dot(rec.dir_to);
          if (sinks[rec.from]) sinks[rec.from][rec.pixel] += g * along_i;
          if (sinks[rec.to])
            for (int k = 0; k < 4; ++k) sinks[rec.to][rec.corner[k]] -= g * along_j * rec.weight[k];
        }
      });
}

std::vector<std::size_t> flow_correspondence_counts(
    const std::vector<Camera>& cameras, const std::vector<FlowObservation>& observations) {
  std::vector<std::size_t> counts(observations.size(), 0);
  for (std::size_t k = 0; k < observations.size(); ++k) {
    const auto& obs = observations[k];
    check(obs.from < cameras.size() && obs.to < cameras.size() && obs.from != obs.to,
          ErrorKind::invalid_argument, "flow observation view index out of range");
    check(obs.flow && obs.mask, ErrorKind::invalid_argument,
          "flow observation missing flow or mask");
    const Camera& cam_i = cameras[obs.from];
    const Camera& cam_j = cameras[obs.to];
    const std::size_t h = cam_i.height, w = cam_i.width;
    check(obs.flow->channels == 2 && obs.flow->height == h && obs.flow->width == w,
          ErrorKind::invalid_argument, "flow field resolution mismatch");
    check(obs.mask->size() == h * w, ErrorKind::invalid_argument, "mask resolution mismatch");
    const std::size_t hj = cam_j.height, wj = cam_j.width;
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        if (!(*obs.mask)[y * w + x]) continue;
        const double gx = x + obs.flow->at(0, y, x);
        const double gy = y + obs.flow->at(1, y, x);
        if (gx >= 0 && gx <= wj - 1 && gy >= 0 && gy <= hj - 1) ++counts[k];
      }
  }
  return counts;
}

Tensor total_loss(const Tensor& photo, const Tensor& tv, const Tensor& mtv, const Tensor& flow,
                  const LossWeights& weights) {
  weights.validate();
  using namespace ad;
  const Tensor multiview =
      add(mul(tv, 1.0 - weights.lambda_s), mul(mtv, weights.lambda_s));
  return add(add(photo, mul(multiview, weights.beta_m)), mul(flow, weights.beta_f));
}

}  // namespace pxs
