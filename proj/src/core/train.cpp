#include "core/train.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <string>

#include "core/error.hpp"
#include "core/init.hpp"
#include "core/rasterizer.hpp"

namespace pxs {

std::size_t TrainConfig::scaled_total() const {
  return std::max<std::size_t>(1, total_iters / scale_factor);
}

std::size_t TrainConfig::scaled_phase1() const {
  return std::min(phase1_iters / scale_factor, scaled_total());
}

void TrainConfig::validate() const {
  check(phase1_iters <= total_iters, ErrorKind::invalid_argument,
        "train config: phase1_iters must not exceed total_iters");
  for (double lr : {lr_align, lr_decoder, lr_color, lr_rotation, lr_log_scale})
    check(lr > 0.0, ErrorKind::invalid_argument, "train config: learning rates must be positive");
  check(samples_per_pixel == 1 || samples_per_pixel == 4, ErrorKind::invalid_argument,
        "train config: samples_per_pixel must be 1 or 4");
  check(scale_factor >= 1, ErrorKind::invalid_argument,
        "train config: scale_factor must be >= 1");
  check(channels >= 1, ErrorKind::invalid_argument, "train config: channels must be >= 1");
  check(tau > 0.0, ErrorKind::invalid_argument, "train config: tau must be positive");
  weights.validate();
}

void TrainData::validate(const SceneBundle& bundle) const {
  const std::size_t n = bundle.view_count();
  check(images.size() == n, ErrorKind::invalid_argument,
        "train data: one target image per view required");
  for (std::size_t v = 0; v < n; ++v) {
    const auto& g = bundle.grids[v];
    check(images[v].channels == 3 && images[v].height == g.height && images[v].width == g.width,
          ErrorKind::invalid_argument,
          "train data: target image " + std::to_string(v) + " shape mismatch");
  }
  for (const auto& f : flows) {
    check(f.from < n && f.to < n && f.from != f.to, ErrorKind::invalid_argument,
          "train data: flow edge endpoints out of range");
    const auto& g = bundle.grids[f.from];
    check(f.flow.channels == 2 && f.flow.height == g.height && f.flow.width == g.width,
          ErrorKind::invalid_argument, "train data: flow shape mismatch");
    check(f.mask.size() == g.height * g.width, ErrorKind::invalid_argument,
          "train data: mask size mismatch");
  }
}

std::vector<FlowObservation> TrainData::observations() const {
  std::vector<FlowObservation> obs;
  obs.reserve(flows.size());
  for (const auto& f : flows) obs.push_back({f.from, f.to, &f.flow, &f.mask});
  return obs;
}

TrainData prepare_train_data(const Dataset& dataset, double tau) {
  TrainData data;
  for (const auto& v : dataset.views) data.images.push_back(v.image);
  for (const auto& e : dataset.flows) {
    const ImageF* reverse = nullptr;
    for (const auto& r : dataset.flows)
      if (r.from == e.to && r.to == e.from) {
        reverse = &r.flow;
        break;
      }
    if (!reverse) {
      std::ostringstream os;
      os << "flow edge " << e.from << "->" << e.to << " has no reverse edge " << e.to << "->"
         << e.from << " (required for the consistency mask)";
      fail(ErrorKind::invalid_argument, os.str());
    }
    TrainObservation o;
    o.from = static_cast<std::size_t>(e.from);
    o.to = static_cast<std::size_t>(e.to);
    o.flow = e.flow;
    o.mask = consistency_mask(e.flow, *reverse, tau);
    data.flows.push_back(std::move(o));
  }
  return data;
}

Adam make_optimizer(SceneBundle& bundle, const TrainConfig& config) {
  std::vector<Adam::Group> groups(4);
  groups[0].name = "decoder";
  groups[0].lr = config.lr_decoder;
  for (const Decoder* d : {&bundle.depth_decoder, &bundle.opacity_decoder})
    for (const auto& p : d->parameters()) groups[0].params.push_back(p);
  groups[1].name = "color";
  groups[1].lr = config.lr_color;
  groups[2].name = "rotation";
  groups[2].lr = config.lr_rotation;
  groups[3].name = "log_scale";
  groups[3].lr = config.lr_log_scale;
  for (auto& g : bundle.grids) {
    groups[1].params.push_back(g.color);
    groups[2].params.push_back(g.rotation);
    groups[3].params.push_back(g.log_scale);
  }
  return Adam(std::move(groups));
}

void unfreeze_covariance(SceneBundle& bundle) {
  bundle.validate();
  for (std::size_t v = 0; v < bundle.view_count(); ++v) {
    PixelGaussianGrid& grid = bundle.grids[v];
    if (!grid.frozen_covariance) continue;
    const std::size_t m = grid.pixel_count();

    // Current depth map, same arithmetic materialize uses.
    const double n = view_coordinate(v, bundle.view_count());
    const ad::Tensor rd_all = decode(bundle.depth_decoder, n);
    const ad::Tensor rd =
        apply_mask(rd_all, bundle.segs[v].data, bundle.channels, grid.height, grid.width);
    std::vector<double> depth(m);
    for (std::size_t p = 0; p < m; ++p)
      depth[p] = std::clamp(grid.d_init[p] + rd.at(p), kDepthFloor, 1e300);

    const std::vector<double> r = radius_from_depth(grid.camera, depth);
    auto ls = grid.log_scale.mutable_data();
    for (std::size_t p = 0; p < m; ++p)
      ls[p] = ls[m + p] = ls[2 * m + p] = std::log(r[p]);
    auto q = grid.rotation.mutable_data();
    for (std::size_t p = 0; p < m; ++p) {
      q[p] = 1.0;
      q[m + p] = q[2 * m + p] = q[3 * m + p] = 0.0;
    }
    grid.frozen_covariance = false;
  }
}

namespace {

void renormalize_rotations(SceneBundle& bundle) {
  for (auto& grid : bundle.grids) {
    if (grid.frozen_covariance) continue;  // identity until phase 2
    const std::size_t m = grid.pixel_count();
    auto q = grid.rotation.mutable_data();
    for (std::size_t p = 0; p < m; ++p) {
      const double norm = std::sqrt(q[p] * q[p] + q[m + p] * q[m + p] +
                                    q[2 * m + p] * q[2 * m + p] + q[3 * m + p] * q[3 * m + p]);
      check(norm > 0.0 && std::isfinite(norm), ErrorKind::numeric,
            "train: degenerate quaternion after optimizer step");
      q[p] /= norm;
      q[m + p] /= norm;
      q[2 * m + p] /= norm;
      q[3 * m + p] /= norm;
    }
  }
}

}  // namespace

void train(SceneBundle& bundle, const TrainData& data, const TrainConfig& config, Adam& opt) {
  config.validate();
  bundle.validate();
  data.validate(bundle);

  const std::size_t n = bundle.view_count();
  const std::size_t total = config.scaled_total();
  const std::size_t phase1 = config.scaled_phase1();
  check(bundle.iteration <= total, ErrorKind::state,
        "train: checkpoint is already past the requested iteration count");

  std::vector<Camera> cameras;
  std::vector<ad::Tensor> targets;
  for (std::size_t v = 0; v < n; ++v) {
    const auto& g = bundle.grids[v];
    cameras.push_back(g.camera);
    targets.push_back(ad::constant({3, g.height, g.width}, data.images[v].data));
  }
  const std::vector<FlowObservation> observations = data.observations();

  RenderConfig rcfg;
  rcfg.samples_per_pixel = static_cast<int>(config.samples_per_pixel);
  LossWeights weights = config.weights;

  ad::Tape tape;
  for (std::uint64_t it = bundle.iteration; it < total; ++it) {
    if (it >= phase1 && bundle.grids[0].frozen_covariance) unfreeze_covariance(bundle);
    const std::size_t view = static_cast<std::size_t>(it % n);
    weights.lambda_s = schedule_lambda_s(static_cast<std::size_t>(it), total);

    double loss_value = 0.0;
    {
      ad::TapeScope scope(tape);
      std::vector<ad::Tensor> depths;
      GaussianCloud cloud = assemble_cloud(bundle, &depths);
      RenderOutput out = render(cloud.tensors, cameras[view], rcfg);
      ad::Tensor photo = photometric(out.color, targets[view], weights.lambda_ssim);
      auto [tv, mtv] = tv_losses(depths[view], bundle.segs[view]);
      ad::Tensor flow = flow_loss(cameras, depths, observations);
      ad::Tensor loss = total_loss(photo, tv, mtv, flow, weights);
      loss_value = loss.at(0);
      if (!std::isfinite(loss_value)) {
        std::ostringstream os;
        os << "train: non-finite loss at iteration " << it;
        fail(ErrorKind::numeric, os.str());
      }
      opt.zero_grad();
      tape.backward(loss);
      tape.clear();
    }
    opt.step();
    renormalize_rotations(bundle);
    bundle.loss_history.push_back(loss_value);
    bundle.iteration = it + 1;
  }
}

void train(SceneBundle& bundle, const TrainData& data, const TrainConfig& config) {
  Adam opt = make_optimizer(bundle, config);
  train(bundle, data, config, opt);
}

}  // namespace pxs
