#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "core/error.hpp"
#include "core/losses.hpp"
#include "testutil.hpp"

using namespace pxs;
using namespace pxs::ad;

namespace {

// ---- scalar reference implementations, kept deliberately naive ----

double ref_gauss_window(std::vector<double>& k) {
  double sum = 0;
  for (int i = 0; i < 11; ++i) {
    k[i] = std::exp(-0.5 * (i - 5.0) * (i - 5.0) / (1.5 * 1.5));
    sum += k[i];
  }
  for (auto& v : k) v /= sum;
  return sum;
}

// Mean (1-lambda)*L1 + lambda*(1-SSIM) over a planar (C,H,W) image pair.
double ref_photometric(const std::vector<double>& a, const std::vector<double>& b, std::size_t c,
                       std::size_t h, std::size_t w, double lambda) {
  double l1 = 0;
  for (std::size_t i = 0; i < a.size(); ++i) l1 += std::abs(a[i] - b[i]);
  l1 /= a.size();

  std::vector<double> k(11);
  ref_gauss_window(k);
  auto blur_at = [&](const std::vector<double>& img, std::size_t ch, std::ptrdiff_t cy,
                     std::ptrdiff_t cx, const std::vector<double>* other) {
    double acc = 0;
    for (int dy = -5; dy <= 5; ++dy)
      for (int dx = -5; dx <= 5; ++dx) {
        const std::ptrdiff_t y = cy + dy, x = cx + dx;
        if (y < 0 || y >= static_cast<std::ptrdiff_t>(h) || x < 0 ||
            x >= static_cast<std::ptrdiff_t>(w))
          continue;
        const std::size_t i = ch * h * w + y * w + x;
        const double v = other ? img[i] * (*other)[i] : img[i];
        acc += k[dy + 5] * k[dx + 5] * v;
      }
    return acc;
  };

  const double c1 = 1e-4, c2 = 9e-4;
  double ssim_sum = 0;
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        const double mx = blur_at(a, ch, y, x, nullptr);
        const double my = blur_at(b, ch, y, x, nullptr);
        const double mxx = blur_at(a, ch, y, x, &a);
        const double myy = blur_at(b, ch, y, x, &b);
        const double mxy = blur_at(a, ch, y, x, &b);
        const double vx = mxx - mx * mx, vy = myy - my * my, cov = mxy - mx * my;
        ssim_sum += ((2 * mx * my + c1) * (2 * cov + c2)) /
                    ((mx * mx + my * my + c1) * (vx + vy + c2));
      }
  const double ssim_mean = ssim_sum / (c * h * w);
  return (1 - lambda) * l1 + lambda * (1 - ssim_mean);
}

// TV / masked-TV of disparity, one difference at a time.
std::pair<double, double> ref_tv(const std::vector<double>& depth,
                                 const std::vector<std::uint8_t>& owner, std::size_t h,
                                 std::size_t w) {
  double tv = 0, mtv = 0;
  auto disp = [&](std::size_t i) { return 1.0 / (1.0 + depth[i]); };
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x + 1 < w; ++x) {
      const double d = std::abs(disp(y * w + x + 1) - disp(y * w + x));
      tv += d;
      if (owner[y * w + x] == owner[y * w + x + 1]) mtv += d;
    }
  for (std::size_t y = 0; y + 1 < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const double d = std::abs(disp((y + 1) * w + x) - disp(y * w + x));
      tv += d;
      if (owner[y * w + x] == owner[(y + 1) * w + x]) mtv += d;
    }
  return {tv / (h * w), mtv / (h * w)};
}

SegMask mask_from_owner(const std::vector<std::uint8_t>& owner, std::size_t c, std::size_t h,
                        std::size_t w) {
  SegMask seg;
  seg.channels = c;
  seg.height = h;
  seg.width = w;
  seg.data.assign(c * h * w, 0);
  for (std::size_t p = 0; p < h * w; ++p) seg.data[owner[p] * h * w + p] = 1;
  return seg;
}

Camera look_camera(double fx, double fy, std::size_t w, std::size_t h, const Vec3& offset) {
  Camera cam;
  cam.fx = fx;
  cam.fy = fy;
  cam.cx = w / 2.0;
  cam.cy = h / 2.0;
  cam.width = w;
  cam.height = h;
  cam.t = -offset;  // world-to-cam translation for a camera at `offset`
  return cam;
}

}  // namespace

TEST_CASE("photometric is zero on identical images and linear on offsets") {
  std::mt19937_64 rng(3);
  auto img = testutil::random_vec(rng, 3 * 64, 0.1, 0.9);
  Tensor a = constant({3, 8, 8}, img);
  CHECK(photometric(a, a).value() == doctest::Approx(0.0).epsilon(1e-14));
  CHECK(ssim(a, a).value() == doctest::Approx(1.0).epsilon(1e-12));

  auto shifted = img;
  for (auto& v : shifted) v += 0.05;
  Tensor b = constant({3, 8, 8}, shifted);
  // With the structural term switched off the loss is exactly the offset.
  CHECK(photometric(b, a, 0.0).value() == doctest::Approx(0.05).epsilon(1e-12));
}

TEST_CASE("photometric matches a scalar reimplementation") {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 3; ++trial) {
    auto av = testutil::random_vec(rng, 3 * 64, 0.0, 1.0);
    auto bv = testutil::random_vec(rng, 3 * 64, 0.0, 1.0);
    Tensor a = constant({3, 8, 8}, av);
    Tensor b = constant({3, 8, 8}, bv);
    const double got = photometric(a, b).value();
    const double want = ref_photometric(av, bv, 3, 8, 8, 0.2);
    CHECK(got == doctest::Approx(want).epsilon(1e-10));
    CHECK(got >= 0.0);
  }
}

TEST_CASE("photometric gradient matches finite differences") {
  std::mt19937_64 rng(7);
  Tensor a = param({3, 8, 8}, testutil::random_vec(rng, 3 * 64, 0.1, 0.9));
  Tensor b = constant({3, 8, 8}, testutil::random_vec(rng, 3 * 64, 0.0, 1.0));
  auto make_loss = [&]() { return photometric(a, b); };
  Tape tape;
  {
    TapeScope scope(tape);
    tape.backward(make_loss());
  }
  auto eval = [&]() { return make_loss().value(); };
  CHECK(testutil::max_grad_rel_err(a, eval, 1e-6, 1e-5) < 1e-4);
}

TEST_CASE("tv losses vanish on constant depth") {
  SegMask seg = mask_from_owner(std::vector<std::uint8_t>(64, 0), 1, 8, 8);
  Tensor depth = constant({8, 8}, std::vector<double>(64, 3.0));
  auto [tv, mtv] = tv_losses(depth, seg);
  CHECK(tv.value() == 0.0);
  CHECK(mtv.value() == 0.0);
}

TEST_CASE("masked tv ignores differences across a region boundary") {
  // Two depth planes split down the middle, mask channels aligned with them.
  std::vector<double> depth(64);
  std::vector<std::uint8_t> owner(64);
  for (std::size_t y = 0; y < 8; ++y)
    for (std::size_t x = 0; x < 8; ++x) {
      depth[y * 8 + x] = x < 4 ? 1.0 : 3.0;
      owner[y * 8 + x] = x < 4 ? 0 : 1;
    }
  SegMask seg = mask_from_owner(owner, 2, 8, 8);
  auto [tv, mtv] = tv_losses(constant({8, 8}, depth), seg);
  CHECK(tv.value() > 0.0);
  CHECK(mtv.value() == 0.0);
}

TEST_CASE("tv losses match a scalar reimplementation and obey the mask bound") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 5; ++trial) {
    auto depth = testutil::random_vec(rng, 64, 0.0, 5.0);
    std::vector<std::uint8_t> owner(64);
    std::uniform_int_distribution<int> ch(0, 2);
    for (auto& o : owner) o = static_cast<std::uint8_t>(ch(rng));
    SegMask seg = mask_from_owner(owner, 3, 8, 8);
    auto [tv, mtv] = tv_losses(constant({8, 8}, depth), seg);
    auto [rtv, rmtv] = ref_tv(depth, owner, 8, 8);
    CHECK(tv.value() == doctest::Approx(rtv).epsilon(1e-12));
    CHECK(mtv.value() == doctest::Approx(rmtv).epsilon(1e-12));
    CHECK(mtv.value() <= tv.value() + 1e-15);
    CHECK(tv.value() >= 0.0);
  }
}

TEST_CASE("tv gradients match finite differences") {
  std::mt19937_64 rng(13);
  Tensor depth = param({8, 8}, testutil::random_vec(rng, 64, 0.5, 4.0));
  std::vector<std::uint8_t> owner(64);
  std::uniform_int_distribution<int> ch(0, 1);
  for (auto& o : owner) o = static_cast<std::uint8_t>(ch(rng));
  SegMask seg = mask_from_owner(owner, 2, 8, 8);

  for (int which = 0; which < 2; ++which) {
    auto make_loss = [&]() {
      auto [tv, mtv] = tv_losses(depth, seg);
      return which == 0 ? tv : mtv;
    };
    depth.zero_grad();  // gradients accumulate across backward passes
    Tape tape;
    {
      TapeScope scope(tape);
      tape.backward(make_loss());
    }
    auto eval = [&]() { return make_loss().value(); };
    // Guard sized for exact-zero gradients at masked pixels, where central
    // differences return pure roundoff noise (~1e-10).
    CHECK(testutil::max_grad_rel_err(depth, eval, 1e-7, 1e-2) < 1e-4);
  }
}

TEST_CASE("schedule ramps linearly from zero to one") {
  CHECK(schedule_lambda_s(0, 13000) == 0.0);
  CHECK(schedule_lambda_s(13000, 13000) == 1.0);
  CHECK(schedule_lambda_s(6500, 13000) == 0.5);
  CHECK_THROWS_AS(schedule_lambda_s(5, 4), Error);
  CHECK_THROWS_AS(schedule_lambda_s(0, 0), Error);
}

TEST_CASE("flow loss is zero for geometrically consistent views") {
  // Two cameras a small baseline apart, both fronto-parallel to a plane at
  // depth 4: the flow between them is a constant disparity shift.
  const std::size_t hw = 16;
  std::vector<Camera> cams = {look_camera(20, 20, hw, hw, {0, 0, 0}),
                              look_camera(20, 20, hw, hw, {0.4, 0, 0})};
  const double plane_z = 4.0;
  const double shift = -cams[0].fx * 0.4 / plane_z;  // pixels, view 0 -> view 1

  ImageF flow01(2, hw, hw);
  for (std::size_t p = 0; p < hw * hw; ++p) flow01.data[p] = shift;
  std::vector<std::uint8_t> mask(hw * hw, 1);

  std::vector<Tensor> depths = {constant({hw, hw}, std::vector<double>(hw * hw, plane_z)),
                                constant({hw, hw}, std::vector<double>(hw * hw, plane_z))};
  Tensor loss = flow_loss(cams, depths, {{0, 1, &flow01, &mask}});
  CHECK(loss.value() < 1e-12);

  // Offsetting the target view's depth grows the loss linearly.
  std::vector<Tensor> d1 = {depths[0], constant({hw, hw}, std::vector<double>(hw * hw, plane_z + 0.1))};
  std::vector<Tensor> d2 = {depths[0], constant({hw, hw}, std::vector<double>(hw * hw, plane_z + 0.2))};
  const double l1 = flow_loss(cams, d1, {{0, 1, &flow01, &mask}}).value();
  const double l2 = flow_loss(cams, d2, {{0, 1, &flow01, &mask}}).value();
  CHECK(l1 > 0.0);
  CHECK(l2 / l1 == doctest::Approx(2.0).epsilon(1e-9));
}

TEST_CASE("flow loss skips masked and out-of-bounds pixels") {
  const std::size_t hw = 8;
  std::vector<Camera> cams = {look_camera(10, 10, hw, hw, {0, 0, 0}),
                              look_camera(10, 10, hw, hw, {0.2, 0, 0})};
  std::vector<Tensor> depths = {constant({hw, hw}, std::vector<double>(hw * hw, 2.0)),
                                constant({hw, hw}, std::vector<double>(hw * hw, 2.0))};

  ImageF flow(2, hw, hw);
  std::vector<std::uint8_t> empty_mask(hw * hw, 0);
  CHECK(flow_loss(cams, depths, {{0, 1, &flow, &empty_mask}}).value() == 0.0);
  CHECK(flow_loss(cams, depths, {}).value() == 0.0);

  // Flow that exits the image: those pixels must not contribute or count.
  ImageF oob(2, hw, hw);
  for (std::size_t p = 0; p < hw * hw; ++p) oob.data[p] = 100.0;
  std::vector<std::uint8_t> ones(hw * hw, 1);
  CHECK(flow_loss(cams, depths, {{0, 1, &oob, &ones}}).value() == 0.0);
}

TEST_CASE("flow loss gradient matches finite differences for both views") {
  std::mt19937_64 rng(17);
  const std::size_t hw = 8;
  std::vector<Camera> cams = {look_camera(12, 12, hw, hw, {0, 0, 0}),
                              look_camera(12, 12, hw, hw, {0.3, -0.1, 0})};
  // Slightly inconsistent random depths keep every L1 term away from its kink.
  std::vector<Tensor> depths = {param({hw, hw}, testutil::random_vec(rng, hw * hw, 2.0, 3.0)),
                                param({hw, hw}, testutil::random_vec(rng, hw * hw, 2.0, 3.0))};

  ImageF flow01(2, hw, hw);
  ImageF flow10(2, hw, hw);
  std::uniform_real_distribution<double> uf(-1.5, 1.5);
  for (auto& v : flow01.data) v = uf(rng);
  for (auto& v : flow10.data) v = uf(rng);
  std::vector<std::uint8_t> mask(hw * hw, 1);
  for (std::size_t p = 0; p < hw * hw; p += 3) mask[p] = 0;

  std::vector<FlowObservation> obs = {{0, 1, &flow01, &mask}, {1, 0, &flow10, &mask}};
  auto make_loss = [&]() { return flow_loss(cams, depths, obs); };
  Tape tape;
  {
    TapeScope scope(tape);
    tape.backward(make_loss());
  }
  auto eval = [&]() { return make_loss().value(); };
  CHECK(testutil::max_grad_rel_err(depths[0], eval, 1e-6, 1e-5) < 1e-4);
  CHECK(testutil::max_grad_rel_err(depths[1], eval, 1e-6, 1e-5) < 1e-4);
}

TEST_CASE("total loss combines terms with the pinned default weights") {
  LossWeights w;
  CHECK(w.beta_m == 5.0);
  CHECK(w.beta_f == 0.1);
  CHECK(w.lambda_ssim == 0.2);

  Tensor photo = constant_scalar(0.25);
  Tensor tv = constant_scalar(0.03);
  Tensor mtv = constant_scalar(0.01);
  Tensor flow = constant_scalar(0.5);

  w.lambda_s = 0.0;
  CHECK(total_loss(photo, tv, mtv, flow, w).value() ==
        doctest::Approx(0.25 + 5.0 * 0.03 + 0.1 * 0.5).epsilon(1e-14));
  w.lambda_s = 1.0;
  CHECK(total_loss(photo, tv, mtv, flow, w).value() ==
        doctest::Approx(0.25 + 5.0 * 0.01 + 0.1 * 0.5).epsilon(1e-14));
  w.lambda_s = 0.4;
  CHECK(total_loss(photo, tv, mtv, flow, w).value() ==
        doctest::Approx(0.25 + 5.0 * (0.6 * 0.03 + 0.4 * 0.01) + 0.1 * 0.5).epsilon(1e-14));

  Tensor zero = constant_scalar(0.0);
  CHECK(total_loss(zero, zero, zero, zero, w).value() == 0.0);

  LossWeights bad;
  bad.beta_m = -1;
  CHECK_THROWS_AS(total_loss(photo, tv, mtv, flow, bad), Error);
  bad = LossWeights{};
  bad.lambda_s = 1.5;
  CHECK_THROWS_AS(total_loss(photo, tv, mtv, flow, bad), Error);
}

TEST_CASE("target range and shape preconditions are enforced") {
  Tensor a = constant({3, 8, 8}, std::vector<double>(192, 0.5));
  Tensor bad = constant({3, 8, 8}, std::vector<double>(192, 1.5));
  CHECK_THROWS_WITH_AS(photometric(a, bad), doctest::Contains("[0,1]"), Error);
  Tensor small = constant({3, 4, 4}, std::vector<double>(48, 0.5));
  CHECK_THROWS_AS(photometric(a, small), Error);
  Tensor negative_depth = constant({2, 2}, {1.0, -0.5, 1.0, 1.0});
  SegMask seg = mask_from_owner(std::vector<std::uint8_t>(4, 0), 1, 2, 2);
  CHECK_THROWS_AS(tv_losses(negative_depth, seg), Error);
}
