#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <vector>

#include "core/checkpoint.hpp"
#include "core/error.hpp"
#include "core/init.hpp"
#include "core/rasterizer.hpp"
#include "testutil.hpp"

using namespace pxs;
namespace fs = std::filesystem;

namespace {

Camera axis_cam(std::size_t w, std::size_t h, double f, const Vec3& center, int index) {
  Camera cam;
  cam.fx = cam.fy = f;
  cam.cx = w / 2.0;
  cam.cy = h / 2.0;
  cam.width = w;
  cam.height = h;
  cam.R = Mat3::Identity();
  cam.t = -center;
  cam.view_index = index;
  return cam;
}

// Two-view 16x16 bundle with a smooth shared texture and gentle depth ramp.
SceneBundle demo_bundle() {
  const std::size_t n = 16;
  const std::vector<Camera> cams = {axis_cam(n, n, 5.0, {-0.05, 0, 0}, 0),
                                    axis_cam(n, n, 5.0, {0.05, 0, 0}, 1)};
  std::vector<ImageF> images(2, ImageF(3, n, n));
  std::vector<std::vector<double>> depths(2, std::vector<double>(n * n));
  const double base[3] = {0.3, 0.45, 0.6};
  for (int v = 0; v < 2; ++v)
    for (std::size_t y = 0; y < n; ++y)
      for (std::size_t x = 0; x < n; ++x) {
        for (int c = 0; c < 3; ++c)
          images[v].at(c, y, x) = base[c] + 0.1 * (static_cast<double>(x) / (n - 1)) +
                                  0.05 * (static_cast<double>(y) / (n - 1));
        depths[v][y * n + x] = 4.0 + 0.4 * static_cast<double>(y * n + x) / (n * n);
      }
  SceneBundle bundle = init_scene(cams, images, depths, 5, 2024);
  bundle.align.scale = {1.0, 1.25};
  bundle.align.offset = {0.0, -0.125};
  bundle.iteration = 7;
  bundle.loss_history = {0.5, 0.25, 0.125};
  return bundle;
}

std::string temp_path(const char* name) {
  return (fs::temp_directory_path() / name).string();
}

void expect_tensor_equal(const ad::Tensor& a, const ad::Tensor& b) {
  REQUIRE(a.shape() == b.shape());
  const auto da = a.data();
  const auto db = b.data();
  for (std::size_t i = 0; i < da.size(); ++i) REQUIRE(da[i] == db[i]);
}

void expect_decoder_equal(const Decoder& a, const Decoder& b) {
  CHECK(a.height == b.height);
  CHECK(a.width == b.width);
  CHECK(a.capacity == b.capacity);
  CHECK(a.out_channels == b.out_channels);
  CHECK(a.head == b.head);
  CHECK(a.output_gain == b.output_gain);
  REQUIRE(a.kernels.size() == b.kernels.size());
  REQUIRE(a.biases.size() == b.biases.size());
  for (std::size_t i = 0; i < a.kernels.size(); ++i) expect_tensor_equal(a.kernels[i], b.kernels[i]);
  for (std::size_t i = 0; i < a.biases.size(); ++i) expect_tensor_equal(a.biases[i], b.biases[i]);
}

std::vector<std::uint8_t> slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in),
                                   std::istreambuf_iterator<char>());
}

void spit(const std::string& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
}

}  // namespace

TEST_CASE("checkpoint round-trip is bitwise exact") {
  Checkpoint ck;
  ck.bundle = demo_bundle();
  ck.config.total_iters = 130;
  ck.config.phase1_iters = 80;
  ck.config.align_iters = 10;
  ck.config.seed = 99;
  ck.config.scale_factor = 10;
  ck.config.samples_per_pixel = 1;
  ck.config.lr_color = 3e-3;
  ck.config.weights.beta_m = 5.0;
  ck.config.weights.beta_f = 0.1;
  ck.has_optimizer = true;
  ck.opt_moments = {0.25, -1e-17, 3.5, 0.0, -2.0};
  ck.opt_param_steps = {3, 0, 12};
  ck.opt_step_count = 12;

  const std::string path = temp_path("ck_roundtrip.bin");
  save_checkpoint(path, ck);
  const Checkpoint lk = load_checkpoint(path);

  CHECK(lk.config.align_iters == ck.config.align_iters);
  CHECK(lk.config.total_iters == ck.config.total_iters);
  CHECK(lk.config.phase1_iters == ck.config.phase1_iters);
  CHECK(lk.config.samples_per_pixel == ck.config.samples_per_pixel);
  CHECK(lk.config.seed == ck.config.seed);
  CHECK(lk.config.scale_factor == ck.config.scale_factor);
  CHECK(lk.config.channels == ck.config.channels);
  CHECK(lk.config.lr_align == ck.config.lr_align);
  CHECK(lk.config.lr_decoder == ck.config.lr_decoder);
  CHECK(lk.config.lr_color == ck.config.lr_color);
  CHECK(lk.config.lr_rotation == ck.config.lr_rotation);
  CHECK(lk.config.lr_log_scale == ck.config.lr_log_scale);
  CHECK(lk.config.tau == ck.config.tau);
  CHECK(lk.config.weights.beta_m == ck.config.weights.beta_m);
  CHECK(lk.config.weights.beta_f == ck.config.weights.beta_f);
  CHECK(lk.config.weights.lambda_ssim == ck.config.weights.lambda_ssim);

  const SceneBundle& a = ck.bundle;
  const SceneBundle& b = lk.bundle;
  CHECK(b.channels == a.channels);
  CHECK(b.alpha_init == a.alpha_init);
  CHECK(b.iteration == a.iteration);
  CHECK(b.loss_history == a.loss_history);
  CHECK(b.align.scale == a.align.scale);
  CHECK(b.align.offset == a.align.offset);
  REQUIRE(b.view_count() == a.view_count());
  for (std::size_t v = 0; v < a.view_count(); ++v) {
    const auto& ga = a.grids[v];
    const auto& gb = b.grids[v];
    CHECK(gb.camera.fx == ga.camera.fx);
    CHECK(gb.camera.fy == ga.camera.fy);
    CHECK(gb.camera.cx == ga.camera.cx);
    CHECK(gb.camera.cy == ga.camera.cy);
    CHECK(gb.camera.width == ga.camera.width);
    CHECK(gb.camera.height == ga.camera.height);
    CHECK(gb.camera.view_index == ga.camera.view_index);
    CHECK((gb.camera.R - ga.camera.R).norm() == 0.0);
    CHECK((gb.camera.t - ga.camera.t).norm() == 0.0);
    CHECK(gb.height == ga.height);
    CHECK(gb.width == ga.width);
    CHECK(gb.alpha_init == ga.alpha_init);
    CHECK(gb.frozen_covariance == ga.frozen_covariance);
    CHECK(gb.d_init == ga.d_init);
    expect_tensor_equal(gb.color, ga.color);
    expect_tensor_equal(gb.rotation, ga.rotation);
    expect_tensor_equal(gb.log_scale, ga.log_scale);
    CHECK(b.segs[v].channels == a.segs[v].channels);
    CHECK(b.segs[v].data == a.segs[v].data);
  }
  expect_decoder_equal(b.depth_decoder, a.depth_decoder);
  expect_decoder_equal(b.opacity_decoder, a.opacity_decoder);

  CHECK(lk.has_optimizer);
  CHECK(lk.opt_moments == ck.opt_moments);
  CHECK(lk.opt_param_steps == ck.opt_param_steps);
  CHECK(lk.opt_step_count == ck.opt_step_count);

  SUBCASE("loaded parameters are trainable") {
    for (const auto& g : lk.bundle.grids) {
      CHECK(g.color.requires_grad());
      CHECK(g.rotation.requires_grad());
      CHECK(g.log_scale.requires_grad());
    }
    for (const auto& k : lk.bundle.depth_decoder.kernels) CHECK(k.requires_grad());
  }

  SUBCASE("second save of the loaded checkpoint is byte-identical") {
    const std::string path2 = temp_path("ck_roundtrip2.bin");
    save_checkpoint(path2, lk);
    CHECK(slurp(path) == slurp(path2));
    std::remove(path2.c_str());
  }
  std::remove(path.c_str());
}

TEST_CASE("reloaded checkpoint renders identically") {
  Checkpoint ck;
  ck.bundle = demo_bundle();
  const std::string path = temp_path("ck_render.bin");
  save_checkpoint(path, ck);
  const Checkpoint lk = load_checkpoint(path);
  std::remove(path.c_str());

  const Camera cam = ck.bundle.grids[0].camera;
  const RenderOutput before = render(assemble_cloud(ck.bundle).tensors, cam);
  const RenderOutput after = render(assemble_cloud(lk.bundle).tensors, cam);
  const auto pa = before.packed.data();
  const auto pb = after.packed.data();
  REQUIRE(pa.size() == pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) REQUIRE(pa[i] == pb[i]);
}

TEST_CASE("checkpoint version and magic are enforced") {
  Checkpoint ck;
  ck.bundle = demo_bundle();
  const std::string path = temp_path("ck_version.bin");
  save_checkpoint(path, ck);
  auto bytes = slurp(path);

  SUBCASE("future version is rejected") {
    bytes[4] = 2;  // version u32 little-endian LSB
    spit(path, bytes);
    CHECK_THROWS_WITH_AS(load_checkpoint(path), doctest::Contains("version"), Error);
    try {
      load_checkpoint(path);
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::format);
    }
  }
  SUBCASE("bad magic is rejected") {
    bytes[0] = 'Q';
    spit(path, bytes);
    CHECK_THROWS_WITH_AS(load_checkpoint(path), doctest::Contains("magic"), Error);
  }
  std::remove(path.c_str());
}

TEST_CASE("corrupt checkpoints error out instead of crashing") {
  Checkpoint ck;
  ck.bundle = demo_bundle();
  ck.has_optimizer = true;
  ck.opt_moments = {1.0, 2.0};
  ck.opt_param_steps = {1};
  ck.opt_step_count = 1;
  const std::string path = temp_path("ck_corrupt.bin");
  save_checkpoint(path, ck);
  const auto bytes = slurp(path);

  SUBCASE("truncations at many offsets") {
    // Cover the header plus a spread of interior cuts.
    std::vector<std::size_t> cuts = {0, 1, 3, 4, 7, 8, 20, 100};
    for (std::size_t k = 1; k < 16; ++k) cuts.push_back(bytes.size() * k / 16);
    cuts.push_back(bytes.size() - 1);
    for (std::size_t cut : cuts) {
      spit(path, std::vector<std::uint8_t>(bytes.begin(), bytes.begin() + cut));
      CHECK_THROWS_AS(load_checkpoint(path), Error);
    }
  }
  SUBCASE("trailing bytes are rejected") {
    auto padded = bytes;
    padded.push_back(0);
    spit(path, padded);
    CHECK_THROWS_WITH_AS(load_checkpoint(path), doctest::Contains("trailing"), Error);
  }
  SUBCASE("oversized count field is rejected") {
    // bundle.views count sits right after config+bundle header; corrupt a
    // count by maxing out the view-count field.
    auto corrupt = bytes;
    const std::size_t views_at = 4 + 4 + (7 * 8 + 10 * 8) + 8 + 8 + 8;  // magic+ver+config+ch+alpha+iter
    for (int i = 0; i < 8; ++i) corrupt[views_at + i] = 0xFF;
    spit(path, corrupt);
    CHECK_THROWS_AS(load_checkpoint(path), Error);
  }
  SUBCASE("missing file names the path") {
    std::remove(path.c_str());
    CHECK_THROWS_WITH_AS(load_checkpoint(path), doctest::Contains("ck_corrupt.bin"), Error);
  }
  std::remove(path.c_str());
}
