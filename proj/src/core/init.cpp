#include "core/init.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "core/optimizer.hpp"

namespace pxs {

std::vector<std::uint8_t> consistency_mask(const ImageF& forward, const ImageF& backward,
                                           double tau) {
  check(forward.channels == 2 && backward.channels == 2, ErrorKind::invalid_argument,
        "consistency_mask: flow fields need 2 channels");
  check(forward.height == backward.height && forward.width == backward.width,
        ErrorKind::invalid_argument, "consistency_mask: flow shapes differ");
  check(forward.height > 0 && forward.width > 0, ErrorKind::invalid_argument,
        "consistency_mask: empty flow field");
  check(tau > 0, ErrorKind::invalid_argument, "consistency_mask: tau must be positive");

  const std::size_t h = forward.height, w = forward.width;
  std::vector<std::uint8_t> mask(h * w, 0);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const double fx = forward.at(0, y, x);
      const double fy = forward.at(1, y, x);
      // Backward flow sampled where the warp lands (grid of pixel centers).
      const double gx = x + fx, gy = y + fy;
      if (!(gx >= 0 && gx <= w - 1 && gy >= 0 && gy <= h - 1)) continue;
      const std::size_t x0 = std::min(static_cast<std::size_t>(gx), w - 2);
      const std::size_t y0 = std::min(static_cast<std::size_t>(gy), h - 2);
      const double ax = gx - x0, ay = gy - y0;
      double back[2];
      for (int c = 0; c < 2; ++c) {
        const double v00 = backward.at(c, y0, x0), v01 = backward.at(c, y0, x0 + 1);
        const double v10 = backward.at(c, y0 + 1, x0), v11 = backward.at(c, y0 + 1, x0 + 1);
        back[c] = (1 - ay) * ((1 - ax) * v00 + ax * v01) + ay * ((1 - ax) * v10 + ax * v11);
      }
      const double ex = fx + back[0], ey = fy + back[1];
      if (std::sqrt(ex * ex + ey * ey) <= tau) mask[y * w + x] = 1;
    }
  return mask;
}

AlignResult align_depths(const std::vector<Camera>& cameras,
                         const std::vector<std::vector<double>>& monodepths,
                         const std::vector<FlowObservation>& observations,
                         const AlignConfig& config) {
  const std::size_t n = cameras.size();
  check(n >= 2, ErrorKind::invalid_argument, "align_depths: needs at least two views");
  check(monodepths.size() == n, ErrorKind::invalid_argument,
        "align_depths: one depth map per camera required");
  check(config.iterations > 0 && config.lr > 0 && config.scale_floor > 0,
        ErrorKind::invalid_argument, "align_depths: bad optimizer configuration");
  for (std::size_t v = 0; v < n; ++v) {
    check(monodepths[v].size() == cameras[v].height * cameras[v].width,
          ErrorKind::invalid_argument, "align_depths: depth map resolution mismatch");
    for (double d : monodepths[v])
      check(std::isfinite(d), ErrorKind::invalid_argument,
            "align_depths: non-finite depth value");
  }
  check(!observations.empty(), ErrorKind::invalid_argument,
        "align_depths: no flow observations");

  AlignResult result;
  const auto counts = flow_correspondence_counts(cameras, observations);
  check(std::accumulate(counts.begin(), counts.end(), std::size_t{0}) > 0,
        ErrorKind::invalid_argument, "align_depths: no consistent correspondences");
  for (std::size_t k = 0; k < counts.size(); ++k) {
    if (counts[k] < config.min_pair_correspondences) {
      result.warnings.push_back("view pair " + std::to_string(observations[k].from) + "->" +
                                std::to_string(observations[k].to) + " has only " +
                                std::to_string(counts[k]) + " consistent correspondences");
    }
  }

  // Optimized views are parameterized as s * (D - mean(D)) + c so the scale
  // and offset directions decouple; the raw offset o = c - s * mean(D) falls
  // out afterwards. Same objective, far better conditioned for Adam.
  std::vector<double> mu(n, 0.0);
  std::vector<ad::Tensor> base;
  base.reserve(n);
  for (std::size_t v = 0; v < n; ++v) {
    if (v == 0) {
      base.push_back(ad::constant({cameras[v].height, cameras[v].width}, monodepths[v]));
      continue;
    }
    for (double d : monodepths[v]) mu[v] += d;
    mu[v] /= static_cast<double>(monodepths[v].size());
    std::vector<double> centered = monodepths[v];
    for (double& d : centered) d -= mu[v];
    base.push_back(ad::constant({cameras[v].height, cameras[v].width}, std::move(centered)));
  }

  // View 0 stays at (1, 0): the objective is invariant to one global
  // scale/offset, so that view pins the gauge.
  std::vector<ad::Tensor> scales, offsets, all;
  for (std::size_t v = 1; v < n; ++v) {
    scales.push_back(ad::param({1}, {1.0}));
    offsets.push_back(ad::param({1}, {mu[v]}));
    all.push_back(scales.back());
    all.push_back(offsets.back());
  }
  Adam opt({{"alignment", all, config.lr}});

  // Adam explores; the retained estimate is the best iterate seen, so the
  // reported objective is non-increasing even while proposals oscillate
  // around the kink of the L1 objective.
  double best = std::numeric_limits<double>::infinity();
  std::vector<double> best_vals(all.size());
  result.loss_history.reserve(config.iterations);
  for (std::size_t it = 0; it < config.iterations; ++it) {
    // Learning rate annealed linearly so late proposals settle.
    opt.set_lr("alignment",
               config.lr * static_cast<double>(config.iterations - it) /
                   static_cast<double>(config.iterations));
    ad::Tape tape;
    {
      ad::TapeScope scope(tape);
      std::vector<ad::Tensor> depths;
      depths.reserve(n);
      depths.push_back(base[0]);
      for (std::size_t v = 1; v < n; ++v)
        depths.push_back(ad::add(ad::mul(base[v], scales[v - 1]), offsets[v - 1]));
      const ad::Tensor loss = flow_loss(cameras, depths, observations);
      const double value = loss.value();
      if (value <= best) {
        best = value;
        for (std::size_t i = 0; i < all.size(); ++i) best_vals[i] = all[i].at(0);
      }
      result.loss_history.push_back(best);
      opt.zero_grad();
      tape.backward(loss);
    }
    tape.clear();
    opt.step();
    for (auto& s : scales)
      s.mutable_data()[0] = std::max(config.scale_floor, s.mutable_data()[0]);
  }

  result.params.scale.assign(n, 1.0);
  result.params.offset.assign(n, 0.0);
  for (std::size_t v = 1; v < n; ++v) {
    const double s = std::max(config.scale_floor, best_vals[2 * (v - 1)]);
    result.params.scale[v] = s;
    result.params.offset[v] = best_vals[2 * (v - 1) + 1] - s * mu[v];
  }
  return result;
}

SegMask segment_by_depth(const std::vector<double>& monodepth, std::size_t height,
                         std::size_t width, std::size_t channels) {
  check(channels >= 1, ErrorKind::invalid_argument,
        "segment_by_depth: channel count must be >= 1");
  const std::size_t m = height * width;
  check(m > 0 && monodepth.size() == m, ErrorKind::invalid_argument,
        "segment_by_depth: depth size does not match resolution");
  std::vector<double> disparity(m);
  for (std::size_t i = 0; i < m; ++i) {
    check(std::isfinite(monodepth[i]) && monodepth[i] >= 0, ErrorKind::invalid_argument,
          "segment_by_depth: depths must be finite and non-negative");
    disparity[i] = 1.0 / (1.0 + monodepth[i]);
  }

  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return disparity[a] < disparity[b]; });

  SegMask seg;
  seg.channels = channels;
  seg.height = height;
  seg.width = width;
  seg.data.assign(channels * m, 0);
  // Equal-population rank blocks; a run of equal values takes the bin of its
  // first member so that ties never straddle a bin boundary and a constant
  // map lands entirely in channel 0.
  std::size_t run_start = 0;
  for (std::size_t k = 0; k < m; ++k) {
    if (k > 0 && disparity[order[k]] != disparity[order[k - 1]]) run_start = k;
    const std::size_t bin = run_start * channels / m;
    seg.data[bin * m + order[k]] = 1;
  }
  seg.validate();
  return seg;
}

double alpha_init_for_views(std::size_t n_views) {
  check(n_views >= 2, ErrorKind::invalid_argument,
        "alpha_init_for_views: needs at least two views");
  if (n_views == 2) return 0.6;
  if (n_views == 3) return 0.5;
  return 0.35;
}

SceneBundle init_scene(const std::vector<Camera>& cameras, const std::vector<ImageF>& images,
                       const std::vector<std::vector<double>>& aligned_depths,
                       std::size_t channels, std::uint64_t seed) {
  const std::size_t n = cameras.size();
  check(n >= 2, ErrorKind::invalid_argument, "init_scene: needs at least two views");
  check(images.size() == n && aligned_depths.size() == n, ErrorKind::invalid_argument,
        "init_scene: camera, image, and depth counts differ");
  const std::size_t h = images[0].height, w = images[0].width;
  for (std::size_t v = 0; v < n; ++v) {
    check(images[v].channels == 3, ErrorKind::invalid_argument,
          "init_scene: images must be RGB");
    check(images[v].height == h && images[v].width == w && cameras[v].height == h &&
              cameras[v].width == w,
          ErrorKind::invalid_argument, "init_scene: all views must share one resolution");
    check(aligned_depths[v].size() == h * w, ErrorKind::invalid_argument,
          "init_scene: depth resolution mismatch");
    for (double d : aligned_depths[v])
      check(std::isfinite(d) && d > 0, ErrorKind::invalid_argument,
            "init_scene: aligned depths must be positive");
  }

  SceneBundle bundle;
  bundle.channels = channels;
  bundle.alpha_init = alpha_init_for_views(n);
  std::mt19937_64 rng(seed);
  bundle.depth_decoder = build_decoder(h, w, decoder_capacity(DecoderHead::depth, n), channels,
                                       DecoderHead::depth, rng);
  bundle.opacity_decoder = build_decoder(h, w, decoder_capacity(DecoderHead::opacity, n),
                                         channels, DecoderHead::opacity, rng);
  // Raw network outputs of order one should map to modest deformations: the
  // depth head is scaled to a tenth of the scene's depth range (floored so a
  // near-constant scene can still deform), the opacity head to a tenth of the
  // opacity scale.
  double dmin = aligned_depths[0][0], dmax = dmin;
  for (const auto& dv : aligned_depths)
    for (double d : dv) {
      dmin = std::min(dmin, d);
      dmax = std::max(dmax, d);
    }
  bundle.depth_decoder.output_gain = 0.1 * std::max(dmax - dmin, 0.1 * dmax);
  bundle.opacity_decoder.output_gain = 0.1;
  bundle.grids.reserve(n);
  bundle.segs.reserve(n);
  for (std::size_t v = 0; v < n; ++v) {
    bundle.grids.push_back(
        make_grid(cameras[v], aligned_depths[v], images[v].data, bundle.alpha_init));
    bundle.segs.push_back(segment_by_depth(aligned_depths[v], h, w, channels));
  }
  bundle.validate();
  return bundle;
}

}  // namespace pxs
