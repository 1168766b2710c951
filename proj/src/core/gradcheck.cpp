#include "core/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <numeric>
#include <random>

#include "core/decoder.hpp"
#include "core/error.hpp"
#include "core/init.hpp"
#include "core/losses.hpp"
#include "core/rasterizer.hpp"
#include "core/scene.hpp"
#include "core/tensor.hpp"

namespace pxs {

namespace {

using ad::Shape;
using ad::Tensor;

struct Probe {
  std::vector<Tensor> params;
  std::function<Tensor()> forward;  // scalar loss, re-evaluated on mutated leaves
  double h = 1e-5;
  double guard = 1e-6;
  std::size_t max_entries = static_cast<std::size_t>(-1);
};

struct OpSpec {
  std::string name;
  double tolerance = 1e-4;
  std::function<Probe(std::mt19937_64&, std::size_t trial)> build;
};

double rel_err(double analytic, double fd, double abs_guard) {
  const double denom = std::max({std::fabs(analytic), std::fabs(fd), abs_guard});
  return std::fabs(analytic - fd) / denom;
}

double run_probe(Probe& probe, std::mt19937_64& rng) {
  ad::Tape tape;
  {
    ad::TapeScope scope(tape);
    const Tensor loss = probe.forward();
    tape.backward(loss);
    tape.clear();
  }

  double worst = 0.0;
  for (Tensor& p : probe.params) {
    auto data = p.mutable_data();
    const auto g = p.grad();
    double gmax = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) gmax = std::max(gmax, std::fabs(g[i]));
    const double abs_guard = std::max(probe.guard * gmax, 1e-10);

    std::vector<std::size_t> idx(data.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    if (idx.size() > probe.max_entries) {
      std::shuffle(idx.begin(), idx.end(), rng);
      idx.resize(probe.max_entries);
    }
    for (std::size_t i : idx) {
      const double saved = data[i];
      data[i] = saved + probe.h;
      const double fp = probe.forward().value();
      data[i] = saved - probe.h;
      const double fm = probe.forward().value();
      data[i] = saved;
      const double fd = (fp - fm) / (2.0 * probe.h);
      worst = std::max(worst, rel_err(g.empty() ? 0.0 : g[i], fd, abs_guard));
    }
  }
  return worst;
}

std::vector<double> uniform_vec(std::mt19937_64& rng, std::size_t n, double lo, double hi) {
  std::uniform_real_distribution<double> d(lo, hi);
  std::vector<double> v(n);
  for (auto& x : v) x = d(rng);
  return v;
}

// Magnitudes in [0.2, 1.2] with random sign: safely away from the |x| kink.
std::vector<double> signed_vec(std::mt19937_64& rng, std::size_t n) {
  std::uniform_real_distribution<double> mag(0.2, 1.2);
  std::vector<double> v(n);
  for (std::size_t i = 0; i < n; ++i) v[i] = (rng() & 1 ? 1.0 : -1.0) * mag(rng);
  return v;
}

Tensor uparam(std::mt19937_64& rng, Shape shape, double lo, double hi) {
  const std::size_t n = ad::shape_numel(shape);
  return ad::param(std::move(shape), uniform_vec(rng, n, lo, hi));
}

// Fixed random positive weights so the probe loss sees every output entry.
Tensor weights_like(std::mt19937_64& rng, const Shape& shape) {
  const std::size_t n = ad::shape_numel(shape);
  return ad::constant(shape, uniform_vec(rng, n, 0.5, 1.5));
}

Tensor wsum(const Tensor& t, const Tensor& w) { return ad::reduce_sum(ad::mul(t, w)); }

Camera probe_camera(std::size_t w, std::size_t h, double f, double center_x = 0.0) {
  Camera cam;
  cam.fx = cam.fy = f;
  cam.cx = w / 2.0;
  cam.cy = h / 2.0;
  cam.width = w;
  cam.height = h;
  cam.t = Vec3(-center_x, 0, 0);
  cam.view_index = 0;
  return cam;
}

// Depths on [2, 5] whose pairwise gaps stay well above the FD step, so
// neither the TV kinks nor the renderer's depth sort can flip mid-probe.
std::vector<double> separated_depths(std::mt19937_64& rng, std::size_t n) {
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::shuffle(perm.begin(), perm.end(), rng);
  std::uniform_real_distribution<double> jitter(0.0, 0.4);
  std::vector<double> d(n);
  for (std::size_t i = 0; i < n; ++i)
    d[i] = 2.0 + 3.0 * (static_cast<double>(perm[i]) + jitter(rng)) / static_cast<double>(n);
  return d;
}

Probe binary_probe(std::mt19937_64& rng, const std::function<Tensor(Tensor, Tensor)>& op,
                   double b_lo = -1.5, double b_hi = 1.5) {
  const Shape shape{2, 3, 4};
  Tensor a = uparam(rng, shape, -1.5, 1.5);
  Tensor b = uparam(rng, shape, b_lo, b_hi);
  Tensor w = weights_like(rng, shape);
  Probe p;
  p.params = {a, b};
  p.forward = [=] { return wsum(op(a, b), w); };
  return p;
}

Probe unary_probe(std::mt19937_64& rng, const std::function<Tensor(Tensor)>& op,
                  std::vector<double> values) {
  const Shape shape{2, 3, 4};
  Tensor a = ad::param(shape, std::move(values));
  Tensor w = weights_like(rng, shape);
  Probe p;
  p.params = {a};
  p.forward = [=] { return wsum(op(a), w); };
  return p;
}

// Gaussian grid with randomized colors, rotations, and log-scales; depths
// separated and opacities interior to the clamp window.
PixelGaussianGrid probe_grid(std::mt19937_64& rng, const Camera& cam, bool frozen) {
  const std::size_t m = cam.width * cam.height;
  PixelGaussianGrid grid =
      make_grid(cam, separated_depths(rng, m), uniform_vec(rng, 3 * m, 0.1, 0.9), 0.4);
  const auto rot = uniform_vec(rng, 4 * m, 0.3, 1.3);
  std::copy(rot.begin(), rot.end(), grid.rotation.mutable_data().begin());
  const auto ls = uniform_vec(rng, 3 * m, -0.7, 0.5);
  std::copy(ls.begin(), ls.end(), grid.log_scale.mutable_data().begin());
  grid.frozen_covariance = frozen;
  return grid;
}

Probe materialize_probe(std::mt19937_64& rng, bool frozen) {
  auto cam = probe_camera(4, 4, 3.0);
  auto grid = std::make_shared<PixelGaussianGrid>(probe_grid(rng, cam, frozen));
  const Shape hw{4, 4};
  Tensor rd = uparam(rng, hw, -0.1, 0.1);
  Tensor ro = uparam(rng, hw, -0.15, 0.15);
  const std::size_t m = 16;
  Tensor wp = weights_like(rng, {m, 3});
  Tensor wc = weights_like(rng, {m, 3});
  Tensor wo = weights_like(rng, {m, 1});
  Tensor ws = weights_like(rng, {m, 9});
  Probe p;
  p.params = {grid->color, rd, ro};
  if (!frozen) {
    p.params.push_back(grid->rotation);
    p.params.push_back(grid->log_scale);
  }
  p.forward = [=] {
    const CloudSlice s = materialize(*grid, rd, ro);
    using namespace ad;
    return add(add(wsum(s.positions, wp), wsum(s.colors, wc)),
               add(wsum(s.opacities, wo), wsum(s.covariances, ws)));
  };
  return p;
}

Probe decoder_probe(std::mt19937_64& rng, DecoderHead head) {
  auto dec = std::make_shared<Decoder>(build_decoder(16, 16, 2, 3, head, rng));
  dec->output_gain = 0.5;
  // zero biases give sigmoid/tanh heads a flat spot; randomize them
  for (auto& b : dec->biases) {
    const auto v = uniform_vec(rng, b.numel(), -0.1, 0.1);
    std::copy(v.begin(), v.end(), b.mutable_data().begin());
  }
  std::uniform_real_distribution<double> view(0.0, 1.0);
  const double n = view(rng);
  Tensor w = weights_like(rng, {3, 16, 16});
  Probe p;
  p.params = dec->parameters();
  p.max_entries = 8;
  p.forward = [=] { return wsum(decode(*dec, n), w); };
  return p;
}

struct FlowState {
  std::vector<Camera> cameras;
  std::vector<ImageF> flows;
  std::vector<std::vector<std::uint8_t>> masks;
  std::vector<FlowObservation> obs;
};

Probe flow_probe(std::mt19937_64& rng) {
  const std::size_t n = 6;
  auto st = std::make_shared<FlowState>();
  st->cameras = {probe_camera(n, n, 4.0, 0.0), probe_camera(n, n, 4.0, 0.4)};
  for (int e = 0; e < 2; ++e) {
    ImageF flow(2, n, n);
    flow.data = uniform_vec(rng, flow.data.size(), -1.2, 1.2);
    st->flows.push_back(std::move(flow));
    st->masks.emplace_back(n * n, 1);
  }
  st->obs = {{0, 1, &st->flows[0], &st->masks[0]}, {1, 0, &st->flows[1], &st->masks[1]}};
  // disjoint depth ranges keep the point-distance L1 away from its kink
  Tensor da = uparam(rng, {n, n}, 2.0, 3.0);
  Tensor db = uparam(rng, {n, n}, 4.0, 5.0);
  Probe p;
  p.params = {da, db};
  p.forward = [=] { return flow_loss(st->cameras, {da, db}, st->obs); };
  return p;
}

Probe render_probe(std::mt19937_64& rng, std::size_t trial) {
  const std::size_t m = 6;
  std::vector<double> pos(m * 3);
  std::uniform_real_distribution<double> xy(-0.8, 0.8), zj(0.0, 0.25);
  for (std::size_t g = 0; g < m; ++g) {
    pos[g * 3] = xy(rng);
    pos[g * 3 + 1] = xy(rng);
    pos[g * 3 + 2] = 2.0 + 0.6 * static_cast<double>(g) + zj(rng);  // sort-safe gaps
  }
  std::vector<double> cov(m * 9);
  std::uniform_real_distribution<double> su(0.08, 0.3), qu(-1.0, 1.0);
  for (std::size_t g = 0; g < m; ++g) {
    Eigen::Quaterniond q(qu(rng) + 1.5, qu(rng), qu(rng), qu(rng));
    q.normalize();
    const Mat3 r = q.toRotationMatrix();
    Vec3 s(su(rng), su(rng), su(rng));
    const Mat3 sigma = r * s.cwiseProduct(s).asDiagonal() * r.transpose();
    for (int i = 0; i < 9; ++i) cov[g * 9 + i] = sigma(i / 3, i % 3);
  }
  CloudSlice slice;
  slice.positions = ad::param({m, 3}, std::move(pos));
  slice.colors = uparam(rng, {m, 3}, 0.1, 0.9);
  slice.opacities = uparam(rng, {m, 1}, 0.1, 0.6);
  slice.covariances = ad::constant({m, 9}, std::move(cov));

  const Camera cam = probe_camera(8, 8, 6.0);
  RenderConfig cfg;
  cfg.samples_per_pixel = trial % 2 ? 4 : 1;
  cfg.early_termination = false;  // removes the stop-point discontinuity
  cfg.cutoff_sigma = 9.0;         // pushes the ellipse edge below FD resolution
  Tensor w = weights_like(rng, {5, 8, 8});
  Probe p;
  p.params = {slice.positions, slice.colors, slice.opacities};
  p.h = 1e-6;
  p.guard = 1e-4;
  p.forward = [=] { return wsum(render(slice, cam, cfg).packed, w); };
  return p;
}

Probe render_chain_probe(std::mt19937_64& rng, std::size_t trial) {
  auto cam = probe_camera(4, 4, 3.0);
  auto grid = std::make_shared<PixelGaussianGrid>(probe_grid(rng, cam, false));
  Tensor rd = uparam(rng, {4, 4}, -0.05, 0.05);
  Tensor ro = uparam(rng, {4, 4}, -0.15, 0.15);
  RenderConfig cfg;
  cfg.samples_per_pixel = trial % 2 ? 4 : 1;
  cfg.early_termination = false;
  cfg.cutoff_sigma = 9.0;
  Tensor w = weights_like(rng, {5, 4, 4});
  Probe p;
  p.params = {grid->color, grid->rotation, grid->log_scale, rd, ro};
  p.h = 1e-6;
  p.guard = 1e-4;
  p.forward = [=] { return wsum(render(materialize(*grid, rd, ro), cam, cfg).packed, w); };
  return p;
}

std::vector<OpSpec> op_specs() {
  using namespace ad;
  std::vector<OpSpec> specs;
  auto simple = [&](std::string name, std::function<Probe(std::mt19937_64&)> b) {
    specs.push_back({std::move(name), 1e-4,
                     [b = std::move(b)](std::mt19937_64& rng, std::size_t) { return b(rng); }});
  };

  simple("add", [](auto& rng) {
    return binary_probe(rng, [](Tensor a, Tensor b) { return add(a, b); });
  });
  simple("sub", [](auto& rng) {
    return binary_probe(rng, [](Tensor a, Tensor b) { return sub(a, b); });
  });
  simple("mul", [](auto& rng) {
    return binary_probe(rng, [](Tensor a, Tensor b) { return mul(a, b); });
  });
  simple("div", [](auto& rng) {
    return binary_probe(rng, [](Tensor a, Tensor b) { return div(a, b); }, 0.5, 2.5);
  });
  simple("squared_diff", [](auto& rng) {
    return binary_probe(rng, [](Tensor a, Tensor b) { return squared_diff(a, b); });
  });
  simple("add_scalar", [](auto& rng) {
    std::uniform_real_distribution<double> c(-1.0, 1.0);
    const double k = c(rng);
    return unary_probe(rng, [k](Tensor a) { return add(a, k); },
                       uniform_vec(rng, 24, -1.5, 1.5));
  });
  simple("sub_scalar", [](auto& rng) {
    std::uniform_real_distribution<double> c(-1.0, 1.0);
    const double k = c(rng);
    return unary_probe(rng, [k](Tensor a) { return sub(k, a); },
                       uniform_vec(rng, 24, -1.5, 1.5));
  });
  simple("mul_scalar", [](auto& rng) {
    std::uniform_real_distribution<double> c(0.3, 2.0);
    const double k = c(rng);
    return unary_probe(rng, [k](Tensor a) { return mul(a, k); },
                       uniform_vec(rng, 24, -1.5, 1.5));
  });
  simple("scalar_broadcast", [](auto& rng) {
    const Shape shape{2, 3, 4};
    Tensor a = uparam(rng, shape, 0.5, 1.5);
    Tensor s = uparam(rng, {1}, 0.5, 1.5);
    Tensor w = weights_like(rng, shape);
    Tensor w2 = weights_like(rng, shape);
    Probe p;
    p.params = {a, s};
    p.forward = [=] { return add(wsum(mul(a, s), w), wsum(add(a, s), w2)); };
    return p;
  });
  simple("abs", [](auto& rng) {
    return unary_probe(rng, [](Tensor a) { return abs(a); }, signed_vec(rng, 24));
  });
  simple("exp", [](auto& rng) {
    return unary_probe(rng, [](Tensor a) { return exp(a); }, uniform_vec(rng, 24, -2.0, 2.0));
  });
  simple("reciprocal", [](auto& rng) {
    return unary_probe(rng, [](Tensor a) { return reciprocal(a); },
                       uniform_vec(rng, 24, 0.5, 2.5));
  });
  simple("sigmoid", [](auto& rng) {
    return unary_probe(rng, [](Tensor a) { return sigmoid(a); }, uniform_vec(rng, 24, -4.0, 4.0));
  });
  simple("clamp", [](auto& rng) {
    auto vals = uniform_vec(rng, 24, -2.0, 2.0);
    for (auto& v : vals)  // keep every entry clear of the clamp corners
      if (std::fabs(std::fabs(v) - 1.0) < 5e-3) v += (v > 0 ? 6e-3 : -6e-3);
    return unary_probe(rng, [](Tensor a) { return clamp(a, -1.0, 1.0); }, std::move(vals));
  });
  simple("leaky_relu", [](auto& rng) {
    return unary_probe(rng, [](Tensor a) { return leaky_relu(a, 0.1); }, signed_vec(rng, 24));
  });
  simple("conv2d", [](auto& rng) {
    Tensor in = uparam(rng, {2, 5, 5}, -1.0, 1.0);
    Tensor k = uparam(rng, {3, 2, 3, 3}, -0.5, 0.5);
    Tensor b = uparam(rng, {3}, -0.3, 0.3);
    Tensor w = weights_like(rng, {3, 5, 5});
    Probe p;
    p.params = {in, k, b};
    p.forward = [=] { return wsum(conv2d(in, k, b), w); };
    return p;
  });
  simple("upsample_bilinear2x", [](auto& rng) {
    Tensor in = uparam(rng, {2, 4, 4}, -1.0, 1.0);
    Tensor w = weights_like(rng, {2, 8, 8});
    Probe p;
    p.params = {in};
    p.forward = [=] { return wsum(upsample_bilinear2x(in), w); };
    return p;
  });
  simple("reduce_sum", [](auto& rng) {
    Tensor a = uparam(rng, {2, 3, 4}, -1.0, 1.0);
    Tensor w = weights_like(rng, {3});
    std::uniform_real_distribution<double> c(0.5, 1.5);
    const double k = c(rng);
    Probe p;
    p.params = {a};
    p.forward = [=] {
      return add(mul(reduce_sum(a), k), wsum(reduce_sum(a, {0, 2}), w));
    };
    return p;
  });
  simple("reduce_mean", [](auto& rng) {
    Tensor a = uparam(rng, {2, 3, 4}, -1.0, 1.0);
    Tensor w = weights_like(rng, {2, 4});
    std::uniform_real_distribution<double> c(0.5, 1.5);
    const double k = c(rng);
    Probe p;
    p.params = {a};
    p.forward = [=] {
      return add(mul(reduce_mean(a), k), wsum(reduce_mean(a, {1}), w));
    };
    return p;
  });
  simple("reshape", [](auto& rng) {
    Tensor a = uparam(rng, {2, 6}, -1.0, 1.0);
    Tensor w = weights_like(rng, {3, 4});
    Probe p;
    p.params = {a};
    p.forward = [=] { return wsum(reshape(a, {3, 4}), w); };
    return p;
  });
  simple("slice_channel", [](auto& rng) {
    Tensor a = uparam(rng, {4, 3, 3}, -1.0, 1.0);
    Tensor w = weights_like(rng, {3, 3});
    Probe p;
    p.params = {a};
    p.forward = [=] { return wsum(slice_channel(a, 2), w); };
    return p;
  });
  simple("slice_channels", [](auto& rng) {
    Tensor a = uparam(rng, {4, 3, 3}, -1.0, 1.0);
    Tensor w = weights_like(rng, {2, 3, 3});
    Probe p;
    p.params = {a};
    p.forward = [=] { return wsum(slice_channels(a, 1, 2), w); };
    return p;
  });
  simple("concat_rows", [](auto& rng) {
    Tensor a = uparam(rng, {2, 3}, -1.0, 1.0);
    Tensor b = uparam(rng, {3, 3}, -1.0, 1.0);
    Tensor w = weights_like(rng, {5, 3});
    Probe p;
    p.params = {a, b};
    p.forward = [=] { return wsum(concat_rows({a, b}), w); };
    return p;
  });
  simple("interleave_channels", [](auto& rng) {
    Tensor a = uparam(rng, {3, 2, 2}, -1.0, 1.0);
    Tensor w = weights_like(rng, {4, 3});
    Probe p;
    p.params = {a};
    p.forward = [=] { return wsum(interleave_channels(a), w); };
    return p;
  });
  simple("apply_mask", [](auto& rng) {
    const std::size_t c = 3, n = 4;
    Tensor a = uparam(rng, {c, n, n}, -1.0, 1.0);
    std::vector<std::uint8_t> mask(c * n * n, 0);
    std::uniform_int_distribution<std::size_t> pick(0, c - 1);
    for (std::size_t p = 0; p < n * n; ++p) mask[pick(rng) * n * n + p] = 1;
    Tensor w = weights_like(rng, {n, n});
    Probe p;
    p.params = {a};
    p.forward = [=] { return wsum(apply_mask(a, mask, c, n, n), w); };
    return p;
  });
  simple("gaussian_blur", [](auto& rng) {
    Tensor a = uparam(rng, {2, 8, 8}, -1.0, 1.0);
    Tensor w = weights_like(rng, {2, 8, 8});
    Probe p;
    p.params = {a};
    p.forward = [=] { return wsum(gaussian_blur(a, 5, 1.0), w); };
    return p;
  });
  simple("ssim", [](auto& rng) {
    Tensor img = uparam(rng, {3, 8, 8}, 0.05, 0.45);
    Tensor tgt = ad::constant({3, 8, 8}, uniform_vec(rng, 192, 0.55, 0.95));
    Probe p;
    p.params = {img};
    p.forward = [=] { return ssim(img, tgt); };
    return p;
  });
  simple("photometric", [](auto& rng) {
    // disjoint value ranges keep |image - target| off its kink
    Tensor img = uparam(rng, {3, 8, 8}, 0.05, 0.45);
    Tensor tgt = ad::constant({3, 8, 8}, uniform_vec(rng, 192, 0.55, 0.95));
    Probe p;
    p.params = {img};
    p.forward = [=] { return photometric(img, tgt, 0.2); };
    return p;
  });
  simple("tv_losses", [](auto& rng) {
    const std::size_t n = 6;
    auto depths = separated_depths(rng, n * n);
    const SegMask seg = segment_by_depth(depths, n, n, 3);
    Tensor d = ad::param({n, n}, std::move(depths));
    std::uniform_real_distribution<double> c(0.5, 1.5);
    const double w1 = c(rng), w2 = c(rng);
    Probe p;
    p.params = {d};
    p.forward = [=] {
      const auto [tv, mtv] = tv_losses(d, seg);
      return add(mul(tv, w1), mul(mtv, w2));
    };
    return p;
  });
  specs.push_back({"flow_loss", 1e-4,
                   [](std::mt19937_64& rng, std::size_t) { return flow_probe(rng); }});
  simple("total_loss", [](auto& rng) {
    Tensor photo = uparam(rng, {1}, 0.1, 1.0);
    Tensor tv = uparam(rng, {1}, 0.1, 1.0);
    Tensor mtv = uparam(rng, {1}, 0.1, 1.0);
    Tensor flow = uparam(rng, {1}, 0.1, 1.0);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    LossWeights w;
    w.beta_m = 6.0 * u(rng);
    w.beta_f = u(rng);
    w.lambda_s = u(rng);
    Probe p;
    p.params = {photo, tv, mtv, flow};
    p.forward = [=] { return total_loss(photo, tv, mtv, flow, w); };
    return p;
  });
  simple("materialize", [](auto& rng) { return materialize_probe(rng, false); });
  simple("materialize_frozen", [](auto& rng) { return materialize_probe(rng, true); });
  simple("decoder_depth", [](auto& rng) { return decoder_probe(rng, DecoderHead::depth); });
  simple("decoder_opacity", [](auto& rng) { return decoder_probe(rng, DecoderHead::opacity); });
  specs.push_back({"render", 1e-3, render_probe});
  specs.push_back({"render_chain", 1e-3, render_chain_probe});
  return specs;
}

}  // namespace

std::vector<GradCheckEntry> run_gradcheck(std::uint64_t seed, std::size_t trials) {
  check(trials > 0, ErrorKind::invalid_argument, "gradcheck: trials must be positive");
  auto specs = op_specs();
  std::vector<GradCheckEntry> out;
  out.reserve(specs.size());
  for (std::size_t i = 0; i < specs.size(); ++i) {
    GradCheckEntry entry;
    entry.op = specs[i].name;
    entry.tolerance = specs[i].tolerance;
    entry.trials = trials;
    std::mt19937_64 rng(seed * 0x9e3779b97f4a7c15ULL + (i + 1) * 0xbf58476d1ce4e5b9ULL);
    for (std::size_t t = 0; t < trials; ++t) {
      Probe probe = specs[i].build(rng, t);
      entry.max_rel_err = std::max(entry.max_rel_err, run_probe(probe, rng));
    }
    out.push_back(std::move(entry));
  }
  return out;
}

bool all_passed(const std::vector<GradCheckEntry>& entries) {
  for (const auto& e : entries)
    if (!e.passed()) return false;
  return !entries.empty();
}

}  // namespace pxs
