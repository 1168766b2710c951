#include "core/synth.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <random>
#include <sstream>

#include "core/error.hpp"
#include "core/rasterizer.hpp"

namespace pxs {

namespace fs = std::filesystem;

namespace {

struct Sample {
  double depth;
  bool foreground;
  Vec3 point;
};

// First surface along the pixel ray of a camera at center (bx, 0, 0).
Sample hit(const SynthConfig& c, double bx, double dirx, double diry) {
  Sample s;
  const double fx = c.fg_depth * dirx + bx;
  const double fy = c.fg_depth * diry;
  if (std::abs(fx) <= c.fg_half_extent && std::abs(fy) <= c.fg_half_extent) {
    s.depth = c.fg_depth;
    s.foreground = true;
    s.point = {fx, fy, c.fg_depth};
  } else {
    s.depth = c.bg_depth;
    s.foreground = false;
    s.point = {c.bg_depth * dirx + bx, c.bg_depth * diry, c.bg_depth};
  }
  return s;
}

void shade(const Sample& s, double rgb[3]) {
  const double x = s.point.x(), y = s.point.y();
  if (s.foreground) {
    rgb[0] = 0.55 + 0.25 * std::sin(2.0 * x) * std::cos(1.5 * y);
    rgb[1] = 0.50 + 0.22 * std::cos(1.3 * x + 0.8);
    rgb[2] = 0.42 + 0.20 * std::sin(1.1 * y + 0.4);
  } else {
    rgb[0] = 0.40 + 0.22 * std::cos(0.9 * x + 0.3);
    rgb[1] = 0.56 + 0.20 * std::sin(0.8 * x) * std::sin(0.7 * y);
    rgb[2] = 0.62 + 0.18 * std::cos(0.6 * y + 0.9);
  }
}

Camera make_cam(const SynthConfig& c, double bx, int index) {
  Camera cam;
  cam.fx = cam.fy = c.focal;
  cam.cx = c.width / 2.0;
  cam.cy = c.height / 2.0;
  cam.width = c.width;
  cam.height = c.height;
  cam.R = Mat3::Identity();
  cam.t = Vec3(-bx, 0, 0);
  cam.view_index = index;
  return cam;
}

// Anti-aliased image: plane colors averaged over the stratified sub-pixel
// samples the renderer itself uses, so sharp silhouettes become the same
// one-pixel ramps multisampled splats can reproduce.
ImageF render_view(const SynthConfig& c, double bx) {
  ImageF img(3, c.height, c.width);
  const auto offsets = sample_offsets(4);
  for (std::size_t y = 0; y < c.height; ++y)
    for (std::size_t x = 0; x < c.width; ++x) {
      double acc[3] = {0, 0, 0};
      for (const Vec2& o : offsets) {
        const double dirx = (x + o.x() - c.width / 2.0) / c.focal;
        const double diry = (y + o.y() - c.height / 2.0) / c.focal;
        double rgb[3];
        shade(hit(c, bx, dirx, diry), rgb);
        for (int k = 0; k < 3; ++k) acc[k] += rgb[k];
      }
      for (int k = 0; k < 3; ++k)
        img.at(static_cast<std::size_t>(k), y, x) = acc[k] / static_cast<double>(offsets.size());
    }
  return img;
}

ImageF depth_view(const SynthConfig& c, double bx) {
  ImageF d(1, c.height, c.width);
  for (std::size_t y = 0; y < c.height; ++y)
    for (std::size_t x = 0; x < c.width; ++x) {
      const double dirx = (x + 0.5 - c.width / 2.0) / c.focal;
      const double diry = (y + 0.5 - c.height / 2.0) / c.focal;
      d.at(0, y, x) = hit(c, bx, dirx, diry).depth;
    }
  return d;
}

// True motion field from view at bx_from into view at bx_to, defined at
// pixel centers of the source view. Pure x-disparity focal*(bx_from-bxatto)/z.
ImageF flow_view(const SynthConfig& c, double bx_from, double bx_to) {
  ImageF f(2, c.height, c.width);
  for (std::size_t y = 0; y < c.height; ++y)
    for (std::size_t x = 0; x < c.width; ++x) {
      const double dirx = (x + 0.5 - c.width / 2.0) / c.focal;
      const double diry = (y + 0.5 - c.height / 2.0) / c.focal;
      const Sample s = hit(c, bx_from, dirx, diry);
      f.at(0, y, x) = c.focal * (bx_from - bx_to) / s.depth;
      f.at(1, y, x) = 0.0;
    }
  return f;
}

}  // namespace

void SynthConfig::validate() const {
  check(n_views >= 2, ErrorKind::invalid_argument, "synth: need at least two training views");
  check(width >= 2 && height >= 2, ErrorKind::invalid_argument, "synth: resolution too small");
  check(focal > 0, ErrorKind::invalid_argument, "synth: focal must be positive");
  check(camera_spread > 0, ErrorKind::invalid_argument,
        "synth: degenerate camera placement (coincident centers)");
  check(fg_depth > 0 && bg_depth > fg_depth, ErrorKind::invalid_argument,
        "synth: need 0 < fg_depth < bg_depth");
  check(fg_half_extent > 0, ErrorKind::invalid_argument, "synth: fg_half_extent must be positive");
  check(planted_scale.size() == planted_offset.size(), ErrorKind::invalid_argument,
        "synth: planted scale/offset counts differ");
  check(planted_scale.empty() || planted_scale.size() == n_views, ErrorKind::invalid_argument,
        "synth: planted corruption needs one (scale, offset) per view");
  for (std::size_t v = 0; v < planted_scale.size(); ++v) {
    check(planted_scale[v] > 0, ErrorKind::invalid_argument,
          "synth: planted scales must be positive");
    check(planted_offset[v] < fg_depth, ErrorKind::invalid_argument,
          "synth: planted offset would make stored depths non-positive");
  }
  check(depth_noise >= 0 && depth_noise < 0.5, ErrorKind::invalid_argument,
        "synth: depth_noise out of range");
}

SynthScene synth_scene(const SynthConfig& config) {
  config.validate();
  SynthScene scene;
  const std::size_t n = config.n_views;

  std::vector<double> centers(n);
  for (std::size_t v = 0; v < n; ++v)
    centers[v] = config.camera_spread * (static_cast<double>(v) - (n - 1) / 2.0);

  std::mt19937_64 rng(config.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);

  for (std::size_t v = 0; v < n; ++v) {
    scene.cameras.push_back(make_cam(config, centers[v], static_cast<int>(v)));
    scene.images.push_back(render_view(config, centers[v]));
    scene.true_depths.push_back(depth_view(config, centers[v]));

    const double s = config.planted_scale.empty() ? 1.0 : config.planted_scale[v];
    const double o = config.planted_offset.empty() ? 0.0 : config.planted_offset[v];
    ImageF stored = scene.true_depths.back();
    for (double& d : stored.data) {
      d = (d - o) / s;
      if (config.depth_noise > 0) d *= 1.0 + config.depth_noise * gauss(rng);
      d = std::max(d, 1e-3);
    }
    scene.stored_depths.push_back(std::move(stored));
  }

  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      FlowEdge e;
      e.from = static_cast<int>(i);
      e.to = static_cast<int>(j);
      e.flow = flow_view(config, centers[i], centers[j]);
      scene.flows.push_back(std::move(e));
    }

  const double span = centers.back() - centers.front();
  for (std::size_t k = 0; k < config.n_heldout; ++k) {
    const double t = static_cast<double>(k + 1) / static_cast<double>(config.n_heldout + 1);
    const double bx = centers.front() + span * t;
    scene.heldout_cameras.push_back(make_cam(config, bx, static_cast<int>(n + k)));
    scene.heldout_images.push_back(render_view(config, bx));
    scene.heldout_depths.push_back(depth_view(config, bx));
  }
  return scene;
}

std::string write_synth_dataset(const SynthScene& scene, const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) fail(ErrorKind::io, dir + ": cannot create directory (" + ec.message() + ")");

  nlohmann::json manifest;
  manifest["views"] = nlohmann::json::array();
  for (std::size_t v = 0; v < scene.cameras.size(); ++v) {
    std::ostringstream base;
    base << "view_" << v;
    const std::string image = base.str() + ".png";
    const std::string depth = base.str() + "_depth.pfm";
    const std::string camera = base.str() + "_cam.json";
    write_png_rgb((fs::path(dir) / image).string(), scene.images[v]);
    write_pfm((fs::path(dir) / depth).string(), scene.stored_depths[v]);
    save_camera_json((fs::path(dir) / camera).string(), scene.cameras[v]);
    manifest["views"].push_back({{"image", image}, {"depth", depth}, {"camera", camera}});
  }

  manifest["flows"] = nlohmann::json::array();
  for (const auto& e : scene.flows) {
    std::ostringstream name;
    name << "flow_" << e.from << "_" << e.to << ".flo";
    write_flo((fs::path(dir) / name.str()).string(), e.flow);
    manifest["flows"].push_back({{"from", e.from}, {"to", e.to}, {"file", name.str()}});
  }

  manifest["heldout"] = nlohmann::json::array();
  for (std::size_t k = 0; k < scene.heldout_cameras.size(); ++k) {
    std::ostringstream base;
    base << "heldout_" << k;
    const std::string image = base.str() + ".png";
    const std::string depth = base.str() + "_depth.pfm";
    const std::string camera = base.str() + "_cam.json";
    write_png_rgb((fs::path(dir) / image).string(), scene.heldout_images[k]);
    write_pfm((fs::path(dir) / depth).string(), scene.heldout_depths[k]);
    save_camera_json((fs::path(dir) / camera).string(), scene.heldout_cameras[k]);
    manifest["heldout"].push_back({{"image", image}, {"depth", depth}, {"camera", camera}});
  }

  manifest["output"] = "out";

  const std::string path = (fs::path(dir) / "manifest.json").string();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::io, path + ": cannot open for writing");
  out << manifest.dump(2) << "\n";
  if (!out) fail(ErrorKind::io, path + ": write failed");
  return path;
}

}  // namespace pxs
