#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include "core/dataset.hpp"
#include "core/error.hpp"
#include "core/init.hpp"
#include "core/synth.hpp"

using namespace pxs;
namespace fs = std::filesystem;

namespace {

struct ScopedDir {
  fs::path path;
  explicit ScopedDir(const std::string& stem) {
    path = fs::temp_directory_path() / (stem + "_" + std::to_string(::getpid()));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~ScopedDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
};

const FlowEdge& reverse_of(const SynthScene& s, const FlowEdge& e) {
  for (const auto& r : s.flows)
    if (r.from == e.to && r.to == e.from) return r;
  FAIL("missing reverse edge");
  return s.flows.front();
}

// How a pixel of the source view relates to the target view, judged from the
// analytic depths alone. "clean": every bilinear corner the warp touches with
// nonzero weight lies on the same plane the source pixel sees.
enum class PixelClass { out_of_bounds, clean, occluded, mixed };

PixelClass classify(const SynthScene& s, const FlowEdge& e, std::size_t x, std::size_t y) {
  const ImageF& df = s.true_depths[static_cast<std::size_t>(e.from)];
  const ImageF& dt = s.true_depths[static_cast<std::size_t>(e.to)];
  const std::size_t w = df.width, h = df.height;
  const double gx = static_cast<double>(x) + e.flow.at(0, y, x);
  const double gy = static_cast<double>(y) + e.flow.at(1, y, x);
  if (gx < 0.0 || gx > static_cast<double>(w - 1) || gy < 0.0 || gy > static_cast<double>(h - 1))
    return PixelClass::out_of_bounds;
  const std::size_t x0 = std::min(static_cast<std::size_t>(gx), w - 2);
  const std::size_t y0 = std::min(static_cast<std::size_t>(gy), h - 2);
  const double wx = gx - static_cast<double>(x0);
  const double wy = gy - static_cast<double>(y0);
  const double z = df.at(0, y, x);
  const double weights[4] = {(1 - wx) * (1 - wy), wx * (1 - wy), (1 - wx) * wy, wx * wy};
  const double corner_z[4] = {dt.at(0, y0, x0), dt.at(0, y0, x0 + 1), dt.at(0, y0 + 1, x0),
                              dt.at(0, y0 + 1, x0 + 1)};
  bool any_same = false, any_other = false;
  for (int k = 0; k < 4; ++k) {
    if (weights[k] == 0.0) continue;
    (corner_z[k] == z ? any_same : any_other) = true;
  }
  if (any_same && !any_other) return PixelClass::clean;
  if (any_other && !any_same) return PixelClass::occluded;
  return PixelClass::mixed;
}

// Forward flow plus the bilinearly warped backward flow; zero when the two
// views agree about the pixel.
double compose_residual(const FlowEdge& fwd, const FlowEdge& bwd, std::size_t x, std::size_t y) {
  const std::size_t w = fwd.flow.width, h = fwd.flow.height;
  const double gx = static_cast<double>(x) + fwd.flow.at(0, y, x);
  const double gy = static_cast<double>(y) + fwd.flow.at(1, y, x);
  REQUIRE(gx >= 0.0);
  REQUIRE(gx <= static_cast<double>(w - 1));
  const std::size_t x0 = std::min(static_cast<std::size_t>(gx), w - 2);
  const std::size_t y0 = std::min(static_cast<std::size_t>(gy), h - 2);
  const double wx = gx - static_cast<double>(x0);
  const double wy = gy - static_cast<double>(y0);
  double bx = 0.0, by = 0.0;
  const double weights[4] = {(1 - wx) * (1 - wy), wx * (1 - wy), (1 - wx) * wy, wx * wy};
  const std::size_t cx[4] = {x0, x0 + 1, x0, x0 + 1};
  const std::size_t cy[4] = {y0, y0, y0 + 1, y0 + 1};
  for (int k = 0; k < 4; ++k) {
    bx += weights[k] * bwd.flow.at(0, cy[k], cx[k]);
    by += weights[k] * bwd.flow.at(1, cy[k], cx[k]);
  }
  return std::hypot(fwd.flow.at(0, y, x) + bx, fwd.flow.at(1, y, x) + by);
}

}  // namespace

TEST_CASE("synthetic flows compose to zero exactly where both views see the same plane") {
  const SynthConfig cfg;
  const SynthScene scene = synth_scene(cfg);
  REQUIRE(scene.flows.size() == 6);  // every ordered pair of 3 views

  std::size_t clean_total = 0, occluded_total = 0;
  for (const auto& e : scene.flows) {
    const FlowEdge& rev = reverse_of(scene, e);
    const auto mask = consistency_mask(e.flow, rev.flow, 1.0);
    REQUIRE(mask.size() == cfg.width * cfg.height);
    for (std::size_t y = 0; y < cfg.height; ++y)
      for (std::size_t x = 0; x < cfg.width; ++x) {
        const PixelClass pc = classify(scene, e, x, y);
        const std::uint8_t m = mask[y * cfg.width + x];
        switch (pc) {
          case PixelClass::out_of_bounds:
            CHECK(m == 0);
            break;
          case PixelClass::clean:
            CHECK(compose_residual(e, rev, x, y) == 0.0);
            CHECK(m == 1);
            ++clean_total;
            break;
          case PixelClass::occluded:
            // plane mismatch: residual is the full disparity gap, beyond tau
            CHECK(compose_residual(e, rev, x, y) > 1.0);
            CHECK(m == 0);
            ++occluded_total;
            break;
          case PixelClass::mixed:
            break;  // silhouette-grazing warp, either outcome is legitimate
        }
      }
  }
  CHECK(clean_total > 6 * 3000);  // the vast majority of pixels
  CHECK(occluded_total > 0);      // the slab does occlude background
}

TEST_CASE("scene geometry: cameras on a line, held-out views strictly between them") {
  SynthConfig cfg;
  cfg.n_views = 3;
  cfg.n_heldout = 2;
  const SynthScene scene = synth_scene(cfg);

  REQUIRE(scene.cameras.size() == 3);
  CHECK(scene.cameras[0].t.x() == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(scene.cameras[1].t.x() == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(scene.cameras[2].t.x() == doctest::Approx(-0.5).epsilon(1e-12));
  for (const auto& cam : scene.cameras) {
    CHECK(cam.t.y() == 0.0);
    CHECK(cam.t.z() == 0.0);
    CHECK((cam.R - Mat3::Identity()).norm() == 0.0);
  }

  REQUIRE(scene.heldout_cameras.size() == 2);
  CHECK(scene.heldout_cameras[0].t.x() == doctest::Approx(1.0 / 6).epsilon(1e-12));
  CHECK(scene.heldout_cameras[1].t.x() == doctest::Approx(-1.0 / 6).epsilon(1e-12));

  // depths carry exactly the two plane values; images stay inside (0, 1)
  for (const auto& d : scene.true_depths)
    for (double z : d.data) CHECK((z == cfg.fg_depth || z == cfg.bg_depth));
  for (const auto& img : scene.images)
    for (double v : img.data) {
      CHECK(v > 0.0);
      CHECK(v < 1.0);
    }
  // both planes actually appear
  const auto& d0 = scene.true_depths[0].data;
  CHECK(std::count(d0.begin(), d0.end(), cfg.fg_depth) > 0);
  CHECK(std::count(d0.begin(), d0.end(), cfg.bg_depth) > 0);
}

TEST_CASE("alignment recovers planted depth corruptions from the synthetic flows") {
  SynthConfig cfg;
  cfg.planted_scale = {1.0, 2.0, 0.8};
  cfg.planted_offset = {0.0, 0.5, -0.25};
  const SynthScene scene = synth_scene(cfg);

  std::vector<std::vector<std::uint8_t>> masks;
  masks.reserve(scene.flows.size());
  for (const auto& e : scene.flows)
    masks.push_back(consistency_mask(e.flow, reverse_of(scene, e).flow, 1.0));

  std::vector<FlowObservation> obs;
  for (std::size_t i = 0; i < scene.flows.size(); ++i)
    obs.push_back({static_cast<std::size_t>(scene.flows[i].from),
                   static_cast<std::size_t>(scene.flows[i].to), &scene.flows[i].flow, &masks[i]});

  std::vector<std::vector<double>> mono;
  for (const auto& d : scene.stored_depths) mono.push_back(d.data);

  const AlignResult result = align_depths(scene.cameras, mono, obs);
  CHECK(result.warnings.empty());
  REQUIRE(result.params.scale.size() == 3);
  CHECK(result.params.scale[0] == 1.0);  // pinned gauge
  CHECK(result.params.offset[0] == 0.0);
  for (std::size_t v = 1; v < 3; ++v) {
    CHECK(std::fabs(result.params.scale[v] - cfg.planted_scale[v]) <=
          1e-3 * cfg.planted_scale[v]);
    CHECK(std::fabs(result.params.offset[v] - cfg.planted_offset[v]) <= 1e-3);
  }

  SUBCASE("uncorrupted depths align to the identity") {
    SynthConfig id = SynthConfig{};
    const SynthScene clean = synth_scene(id);
    std::vector<std::vector<double>> mono2;
    for (const auto& d : clean.stored_depths) mono2.push_back(d.data);
    const AlignResult r2 = align_depths(clean.cameras, mono2, obs);
    for (std::size_t v = 0; v < 3; ++v) {
      CHECK(std::fabs(r2.params.scale[v] - 1.0) <= 1e-3);
      CHECK(std::fabs(r2.params.offset[v]) <= 1e-3);
    }
  }
}

TEST_CASE("stored depths: seeded noise is deterministic and leaves depths positive") {
  SynthConfig cfg;
  cfg.depth_noise = 0.02;
  cfg.seed = 7;
  const SynthScene a = synth_scene(cfg);
  const SynthScene b = synth_scene(cfg);
  cfg.seed = 8;
  const SynthScene c = synth_scene(cfg);

  for (std::size_t v = 0; v < a.stored_depths.size(); ++v) {
    CHECK(a.stored_depths[v].data == b.stored_depths[v].data);
    for (double d : a.stored_depths[v].data) CHECK(d > 0.0);
  }
  bool any_diff = false;
  for (std::size_t v = 0; v < a.stored_depths.size(); ++v)
    any_diff = any_diff || a.stored_depths[v].data != c.stored_depths[v].data;
  CHECK(any_diff);

  // noise only perturbs the stored copies, never the ground truth
  SynthConfig quiet = cfg;
  quiet.depth_noise = 0.0;
  const SynthScene q = synth_scene(quiet);
  for (std::size_t v = 0; v < q.true_depths.size(); ++v)
    CHECK(a.true_depths[v].data == q.true_depths[v].data);
}

TEST_CASE("degenerate synthetic configurations are rejected") {
  auto expect_invalid = [](SynthConfig cfg, const char* what) {
    CAPTURE(what);
    CHECK_THROWS_AS(synth_scene(cfg), Error);
    try {
      synth_scene(cfg);
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::invalid_argument);
    }
  };

  SynthConfig c;
  c.n_views = 1;
  expect_invalid(c, "single view");

  c = SynthConfig{};
  c.camera_spread = 0.0;
  CHECK_THROWS_WITH_AS(synth_scene(c), doctest::Contains("degenerate"), Error);

  c = SynthConfig{};
  c.fg_depth = 4.0;
  c.bg_depth = 2.0;
  expect_invalid(c, "foreground behind background");

  c = SynthConfig{};
  c.fg_half_extent = 0.0;
  expect_invalid(c, "zero-size slab");

  c = SynthConfig{};
  c.planted_scale = {1.0, 2.0};
  c.planted_offset = {0.0, 0.5, 0.0};
  expect_invalid(c, "scale/offset count mismatch");

  c = SynthConfig{};
  c.planted_scale = {1.0, 2.0};
  c.planted_offset = {0.0, 0.5};
  expect_invalid(c, "per-view vectors of the wrong length");

  c = SynthConfig{};
  c.planted_scale = {1.0, -2.0, 1.0};
  c.planted_offset = {0.0, 0.5, 0.0};
  expect_invalid(c, "negative scale");

  c = SynthConfig{};
  c.planted_scale = {1.0, 1.0, 1.0};
  c.planted_offset = {0.0, 2.5, 0.0};
  expect_invalid(c, "offset at least fg depth");

  c = SynthConfig{};
  c.depth_noise = 0.6;
  expect_invalid(c, "noise sigma out of range");
}

TEST_CASE("written dataset round-trips through the loader") {
  SynthConfig cfg;
  cfg.planted_scale = {1.0, 2.0, 0.8};
  cfg.planted_offset = {0.0, 0.5, -0.25};
  const SynthScene scene = synth_scene(cfg);

  ScopedDir dir("pxs_synth_roundtrip");
  const std::string manifest = write_synth_dataset(scene, dir.path.string());
  CHECK(fs::path(manifest).filename() == "manifest.json");

  const Dataset ds = load_dataset(manifest);
  REQUIRE(ds.views.size() == 3);
  REQUIRE(ds.heldout.size() == 2);
  REQUIRE(ds.flows.size() == 6);
  CHECK(fs::path(ds.output_dir).filename() == "out");

  for (std::size_t v = 0; v < 3; ++v) {
    const View& view = ds.views[v];
    CHECK(view.camera.fx == scene.cameras[v].fx);
    CHECK(view.camera.fy == scene.cameras[v].fy);
    CHECK(view.camera.cx == scene.cameras[v].cx);
    CHECK(view.camera.cy == scene.cameras[v].cy);
    CHECK(view.camera.width == scene.cameras[v].width);
    CHECK(view.camera.height == scene.cameras[v].height);
    CHECK((view.camera.R - scene.cameras[v].R).norm() == 0.0);
    CHECK((view.camera.t - scene.cameras[v].t).norm() == 0.0);

    // every depth value here is dyadic, so float32 storage is lossless
    CHECK(view.depth.data == scene.stored_depths[v].data);

    REQUIRE(view.image.data.size() == scene.images[v].data.size());
    double max_err = 0.0;
    for (std::size_t i = 0; i < view.image.data.size(); ++i)
      max_err = std::max(max_err, std::fabs(view.image.data[i] - scene.images[v].data[i]));
    CHECK(max_err <= 0.5 / 255.0 + 1e-9);  // 8-bit quantization only
  }

  for (std::size_t i = 0; i < ds.flows.size(); ++i) {
    CHECK(ds.flows[i].from == scene.flows[i].from);
    CHECK(ds.flows[i].to == scene.flows[i].to);
    CHECK(ds.flows[i].flow.data == scene.flows[i].flow.data);  // dyadic again
  }

  for (std::size_t k = 0; k < 2; ++k) {
    CHECK(ds.heldout[k].depth.data == scene.heldout_depths[k].data);
    CHECK(ds.heldout[k].camera.fx == scene.heldout_cameras[k].fx);
    CHECK((ds.heldout[k].camera.t - scene.heldout_cameras[k].t).norm() ==
          doctest::Approx(0.0).epsilon(1e-12));
  }
}
