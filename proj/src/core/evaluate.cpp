#include "core/evaluate.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <sstream>

#include "core/error.hpp"
#include "core/losses.hpp"
#include "core/optimizer.hpp"

namespace pxs {

namespace fs = std::filesystem;

ViewEvaluation evaluate_view(const SceneBundle& bundle, const Camera& camera,
                             const ImageF& gt_image, const ImageF& gt_depth,
                             const RenderConfig& rcfg, double mask_threshold) {
  bundle.validate();
  camera.validate();
  const std::size_t h = camera.height, w = camera.width;
  check(gt_image.channels == 3 && gt_image.height == h && gt_image.width == w,
        ErrorKind::invalid_argument, "evaluate: ground-truth image does not match the camera");
  const bool have_depth = gt_depth.channels != 0;
  check(!have_depth || (gt_depth.channels == 1 && gt_depth.height == h && gt_depth.width == w),
        ErrorKind::invalid_argument, "evaluate: ground-truth depth does not match the camera");

  const GaussianCloud cloud = assemble_cloud(bundle);
  const RenderOutput out = render(cloud.tensors, camera, rcfg);

  ViewEvaluation ev;
  ev.mask = occlusion_mask(out, mask_threshold);
  const auto color = out.color.data();
  const auto depth = out.depth.data();
  const auto accum = out.accum.data();

  ev.color = ImageF(3, h, w);
  std::copy(color.begin(), color.end(), ev.color.data.begin());
  ev.depth = ImageF(1, h, w);
  for (std::size_t p = 0; p < h * w; ++p)
    ev.depth.data[p] = ev.mask[p] ? depth[p] / accum[p] : 0.0;

  EvalMetrics& m = ev.metrics;
  for (std::uint8_t b : ev.mask) m.covered_pixels += b;
  m.coverage = static_cast<double>(m.covered_pixels) / static_cast<double>(h * w);
  if (m.covered_pixels == 0) return ev;

  double se = 0.0;
  for (std::size_t p = 0; p < h * w; ++p) {
    if (!ev.mask[p]) continue;
    for (std::size_t c = 0; c < 3; ++c) {
      const double d = color[c * h * w + p] - gt_image.data[c * h * w + p];
      se += d * d;
    }
  }
  const double mse = se / (3.0 * static_cast<double>(m.covered_pixels));
  m.psnr = 10.0 * std::log10(1.0 / std::max(mse, 1e-12));

  const ad::Tensor smap =
      ssim_map(ad::constant({3, h, w}, std::vector<double>(color.begin(), color.end())),
               ad::constant({3, h, w}, gt_image.data));
  const auto sm = smap.data();
  double ssim_sum = 0.0;
  for (std::size_t p = 0; p < h * w; ++p)
    if (ev.mask[p])
      for (std::size_t c = 0; c < 3; ++c) ssim_sum += sm[c * h * w + p];
  m.ssim = ssim_sum / (3.0 * static_cast<double>(m.covered_pixels));
  m.has_image_metrics = true;

  if (have_depth) {
    double ae = 0.0;
    for (std::size_t p = 0; p < h * w; ++p)
      if (ev.mask[p]) ae += std::fabs(ev.depth.data[p] - gt_depth.data[p]);
    m.depth_mae = ae / static_cast<double>(m.covered_pixels);
    m.has_depth_metrics = true;
  }
  return ev;
}

namespace {

nlohmann::json config_json(const SceneBundle& bundle, const TrainConfig& c) {
  nlohmann::json j;
  j["align_iters"] = c.align_iters;
  j["total_iters"] = c.total_iters;
  j["phase1_iters"] = c.phase1_iters;
  j["scale_factor"] = c.scale_factor;
  j["samples_per_pixel"] = c.samples_per_pixel;
  j["seed"] = c.seed;
  j["channels"] = c.channels;
  j["tau"] = c.tau;
  j["lr_align"] = c.lr_align;
  j["lr_decoder"] = c.lr_decoder;
  j["lr_color"] = c.lr_color;
  j["lr_rotation"] = c.lr_rotation;
  j["lr_log_scale"] = c.lr_log_scale;
  j["beta_m"] = c.weights.beta_m;
  j["beta_f"] = c.weights.beta_f;
  j["lambda_ssim"] = c.weights.lambda_ssim;
  j["alpha_init"] = bundle.alpha_init;
  j["constants"] = {{"opacity_min", kOpacityLo},
                    {"opacity_max", kOpacityHi},
                    {"depth_floor", kDepthFloor},
                    {"covariance_floor_px2", kCovarianceFloor},
                    {"early_stop_transmittance", 1e-4},
                    {"occlusion_threshold", 1e-3},
                    {"adam_beta1", Adam::kBeta1},
                    {"adam_beta2", Adam::kBeta2},
                    {"adam_epsilon", Adam::kEpsilon}};
  return j;
}

nlohmann::json metrics_json(std::size_t index, const EvalMetrics& m) {
  nlohmann::json j;
  j["view"] = index;
  j["coverage"] = m.coverage;
  j["covered_pixels"] = m.covered_pixels;
  if (m.has_image_metrics) {
    j["psnr"] = m.psnr;
    j["ssim"] = m.ssim;
  }
  if (m.has_depth_metrics) j["depth_mae"] = m.depth_mae;
  return j;
}

}  // namespace

std::string write_eval_report(const SceneBundle& bundle, const TrainConfig& config,
                              const std::vector<View>& heldout, const std::string& out_dir) {
  check(!heldout.empty(), ErrorKind::invalid_argument, "evaluate: no held-out views to score");
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) fail(ErrorKind::io, out_dir + ": cannot create directory (" + ec.message() + ")");

  RenderConfig rcfg;
  rcfg.samples_per_pixel = config.samples_per_pixel;

  nlohmann::json report;
  report["config"] = config_json(bundle, config);
  report["iteration"] = bundle.iteration;
  if (!bundle.loss_history.empty()) report["final_loss"] = bundle.loss_history.back();
  report["views"] = nlohmann::json::array();

  double psnr_sum = 0, ssim_sum = 0, mae_sum = 0, cov_sum = 0;
  std::size_t n_image = 0, n_depth = 0;
  for (std::size_t k = 0; k < heldout.size(); ++k) {
    const View& view = heldout[k];
    const ViewEvaluation ev =
        evaluate_view(bundle, view.camera, view.image, view.depth, rcfg, 1e-3);

    std::ostringstream base;
    base << "eval_" << k;
    write_png_rgb((fs::path(out_dir) / (base.str() + ".png")).string(), ev.color);
    write_pfm((fs::path(out_dir) / (base.str() + "_depth.pfm")).string(), ev.depth);

    report["views"].push_back(metrics_json(k, ev.metrics));
    cov_sum += ev.metrics.coverage;
    if (ev.metrics.has_image_metrics) {
      psnr_sum += ev.metrics.psnr;
      ssim_sum += ev.metrics.ssim;
      ++n_image;
    }
    if (ev.metrics.has_depth_metrics) {
      mae_sum += ev.metrics.depth_mae;
      ++n_depth;
    }
  }

  nlohmann::json mean;
  mean["coverage"] = cov_sum / static_cast<double>(heldout.size());
  if (n_image > 0) {
    mean["psnr"] = psnr_sum / static_cast<double>(n_image);
    mean["ssim"] = ssim_sum / static_cast<double>(n_image);
  }
  if (n_depth > 0) mean["depth_mae"] = mae_sum / static_cast<double>(n_depth);
  report["mean"] = mean;

  const std::string path = (fs::path(out_dir) / "report.json").string();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::io, path + ": cannot open for writing");
  out << report.dump(2) << "\n";
  if (!out) fail(ErrorKind::io, path + ": write failed");
  return path;
}

}  // namespace pxs
