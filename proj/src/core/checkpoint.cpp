#include "core/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <span>
#include <sstream>
#include <vector>

#include "core/error.hpp"

namespace pxs {

namespace {

constexpr char kMagic[4] = {'P', 'X', 'S', 'B'};

class Writer {
 public:
  void u8(std::uint8_t v) { buf_.push_back(v); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void f64s(std::span<const double> v) {
    for (double x : v) f64(x);
  }
  void f64s(const std::vector<double>& v) { f64s(std::span<const double>(v)); }

  void tensor(const ad::Tensor& t) {
    const auto& shape = t.shape();
    u64(shape.size());
    for (std::size_t d : shape) u64(d);
    f64s(t.data());
  }

  void save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorKind::io, path + ": cannot open for writing");
    out.write(reinterpret_cast<const char*>(buf_.data()),
              static_cast<std::streamsize>(buf_.size()));
    out.flush();
    if (!out) fail(ErrorKind::io, path + ": write failed");
  }

 private:
  std::vector<std::uint8_t> buf_;
};

class Reader {
 public:
  Reader(std::string path) : path_(std::move(path)) {
    std::ifstream in(path_, std::ios::binary);
    if (!in) fail(ErrorKind::io, path_ + ": cannot open");
    in.seekg(0, std::ios::end);
    const auto size = in.tellg();
    if (size < 0) fail(ErrorKind::io, path_ + ": cannot determine size");
    buf_.resize(static_cast<std::size_t>(size));
    in.seekg(0);
    in.read(reinterpret_cast<char*>(buf_.data()), size);
    if (!in) fail(ErrorKind::io, path_ + ": read failed");
  }

  [[noreturn]] void bail(const std::string& expected) const {
    std::ostringstream os;
    os << path_ << ": at byte " << pos_ << ": " << expected;
    fail(ErrorKind::format, os.str());
  }

  void need(std::size_t n, const char* what) const {
    if (buf_.size() - pos_ < n) bail(std::string("truncated, expected ") + what);
  }

  std::uint8_t u8(const char* what) {
    need(1, what);
    return buf_[pos_++];
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(buf_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  std::uint64_t u64(const char* what) {
    need(8, what);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(buf_[pos_ + i]) << (8 * i);
    pos_ += 8;
    return v;
  }
  double f64(const char* what) { return std::bit_cast<double>(u64(what)); }

  // A count field whose payload is `elem_size` bytes per element; bounded by
  // the bytes actually left so corrupt counts cannot trigger huge allocations.
  std::size_t count(std::size_t elem_size, const char* what) {
    const std::uint64_t n = u64(what);
    if (n > (buf_.size() - pos_) / std::max<std::size_t>(elem_size, 1))
      bail(std::string(what) + " count exceeds remaining file size");
    return static_cast<std::size_t>(n);
  }

  std::vector<double> f64s(std::size_t n, const char* what) {
    need(n * 8, what);
    std::vector<double> v(n);
    for (std::size_t i = 0; i < n; ++i) v[i] = f64(what);
    return v;
  }

  ad::Tensor param_tensor(const char* what) {
    const std::size_t ndim = count(8, what);
    if (ndim == 0 || ndim > 8) bail(std::string(what) + " has an invalid rank");
    ad::Shape shape(ndim);
    std::size_t numel = 1;
    for (std::size_t i = 0; i < ndim; ++i) {
      shape[i] = static_cast<std::size_t>(u64(what));
      if (shape[i] == 0 || numel > (buf_.size() / 8) / shape[i])
        bail(std::string(what) + " dimensions exceed file size");
      numel *= shape[i];
    }
    return ad::param(shape, f64s(numel, what));
  }

  void done() const {
    if (pos_ != buf_.size()) bail("trailing bytes after checkpoint payload");
  }

  const std::string& path() const { return path_; }
  std::size_t pos() const { return pos_; }

 private:
  std::string path_;
  std::vector<std::uint8_t> buf_;
  std::size_t pos_ = 0;
};

void write_config(Writer& w, const TrainConfig& c) {
  w.u64(c.align_iters);
  w.u64(c.total_iters);
  w.u64(c.phase1_iters);
  w.u64(c.samples_per_pixel);
  w.u64(c.seed);
  w.u64(c.scale_factor);
  w.u64(c.channels);
  w.f64(c.lr_align);
  w.f64(c.lr_decoder);
  w.f64(c.lr_color);
  w.f64(c.lr_rotation);
  w.f64(c.lr_log_scale);
  w.f64(c.tau);
  w.f64(c.weights.beta_m);
  w.f64(c.weights.beta_f);
  w.f64(c.weights.lambda_ssim);
  w.f64(c.weights.lambda_s);
}

TrainConfig read_config(Reader& r) {
  TrainConfig c;
  c.align_iters = static_cast<std::size_t>(r.u64("config.align_iters"));
  c.total_iters = static_cast<std::size_t>(r.u64("config.total_iters"));
  c.phase1_iters = static_cast<std::size_t>(r.u64("config.phase1_iters"));
  c.samples_per_pixel = static_cast<std::size_t>(r.u64("config.samples_per_pixel"));
  c.seed = r.u64("config.seed");
  c.scale_factor = static_cast<std::size_t>(r.u64("config.scale_factor"));
  c.channels = static_cast<std::size_t>(r.u64("config.channels"));
  c.lr_align = r.f64("config.lr_align");
  c.lr_decoder = r.f64("config.lr_decoder");
  c.lr_color = r.f64("config.lr_color");
  c.lr_rotation = r.f64("config.lr_rotation");
  c.lr_log_scale = r.f64("config.lr_log_scale");
  c.tau = r.f64("config.tau");
  c.weights.beta_m = r.f64("config.beta_m");
  c.weights.beta_f = r.f64("config.beta_f");
  c.weights.lambda_ssim = r.f64("config.lambda_ssim");
  c.weights.lambda_s = r.f64("config.lambda_s");
  return c;
}

void write_camera(Writer& w, const Camera& cam) {
  w.f64(cam.fx);
  w.f64(cam.fy);
  w.f64(cam.cx);
  w.f64(cam.cy);
  w.u64(cam.width);
  w.u64(cam.height);
  for (int i = 0; i < 9; ++i) w.f64(cam.R(i / 3, i % 3));
  for (int i = 0; i < 3; ++i) w.f64(cam.t(i));
  w.u64(static_cast<std::uint64_t>(static_cast<std::int64_t>(cam.view_index)));
}

Camera read_camera(Reader& r) {
  Camera cam;
  cam.fx = r.f64("camera.fx");
  cam.fy = r.f64("camera.fy");
  cam.cx = r.f64("camera.cx");
  cam.cy = r.f64("camera.cy");
  cam.width = static_cast<std::size_t>(r.u64("camera.width"));
  cam.height = static_cast<std::size_t>(r.u64("camera.height"));
  for (int i = 0; i < 9; ++i) cam.R(i / 3, i % 3) = r.f64("camera.R");
  for (int i = 0; i < 3; ++i) cam.t(i) = r.f64("camera.t");
  const auto idx = static_cast<std::int64_t>(r.u64("camera.view_index"));
  if (idx < std::numeric_limits<int>::min() || idx > std::numeric_limits<int>::max())
    r.bail("camera.view_index out of range");
  cam.view_index = static_cast<int>(idx);
  return cam;
}

void write_decoder(Writer& w, const Decoder& d) {
  w.u64(d.height);
  w.u64(d.width);
  w.u64(d.capacity);
  w.u64(d.out_channels);
  w.u8(d.head == DecoderHead::depth ? 0 : 1);
  w.f64(d.output_gain);
  w.u64(d.kernels.size());
  for (const auto& k : d.kernels) w.tensor(k);
  w.u64(d.biases.size());
  for (const auto& b : d.biases) w.tensor(b);
}

Decoder read_decoder(Reader& r) {
  Decoder d;
  d.height = static_cast<std::size_t>(r.u64("decoder.height"));
  d.width = static_cast<std::size_t>(r.u64("decoder.width"));
  d.capacity = static_cast<std::size_t>(r.u64("decoder.capacity"));
  d.out_channels = static_cast<std::size_t>(r.u64("decoder.out_channels"));
  const std::uint8_t head = r.u8("decoder.head");
  if (head > 1) r.bail("decoder.head must be 0 or 1");
  d.head = head == 0 ? DecoderHead::depth : DecoderHead::opacity;
  d.output_gain = r.f64("decoder.output_gain");
  const std::size_t nk = r.count(1, "decoder.kernels");
  if (nk == 0 || nk > 64) r.bail("decoder.kernels count out of range");
  for (std::size_t i = 0; i < nk; ++i) d.kernels.push_back(r.param_tensor("decoder.kernel"));
  const std::size_t nb = r.count(1, "decoder.biases");
  if (nb != nk) r.bail("decoder.biases count must match kernels");
  for (std::size_t i = 0; i < nb; ++i) d.biases.push_back(r.param_tensor("decoder.bias"));
  return d;
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ck) {
  const SceneBundle& b = ck.bundle;
  b.validate();
  Writer w;
  for (char c : kMagic) w.u8(static_cast<std::uint8_t>(c));
  w.u32(kCheckpointVersion);
  write_config(w, ck.config);

  w.u64(b.channels);
  w.f64(b.alpha_init);
  w.u64(b.iteration);
  w.u64(b.view_count());
  for (const auto& g : b.grids) {
    write_camera(w, g.camera);
    w.u64(g.height);
    w.u64(g.width);
    w.f64(g.alpha_init);
    w.u8(g.frozen_covariance ? 1 : 0);
    w.f64s(g.d_init);
    w.tensor(g.color);
    w.tensor(g.rotation);
    w.tensor(g.log_scale);
  }
  for (const auto& s : b.segs) {
    w.u64(s.channels);
    w.u64(s.height);
    w.u64(s.width);
    for (std::uint8_t v : s.data) w.u8(v);
  }
  write_decoder(w, b.depth_decoder);
  write_decoder(w, b.opacity_decoder);

  w.u64(b.align.scale.size());
  w.f64s(b.align.scale);
  w.f64s(b.align.offset);

  w.u64(b.loss_history.size());
  w.f64s(b.loss_history);

  w.u8(ck.has_optimizer ? 1 : 0);
  if (ck.has_optimizer) {
    w.u64(ck.opt_moments.size());
    w.f64s(ck.opt_moments);
    w.u64(ck.opt_param_steps.size());
    for (std::uint64_t s : ck.opt_param_steps) w.u64(s);
    w.u64(ck.opt_step_count);
  }

  w.save(path);
}

Checkpoint load_checkpoint(const std::string& path) {
  Reader r(path);
  char magic[4];
  for (char& c : magic) c = static_cast<char>(r.u8("magic"));
  if (std::memcmp(magic, kMagic, 4) != 0) r.bail("not a checkpoint file (bad magic)");
  const std::uint32_t version = r.u32("version");
  if (version != kCheckpointVersion) {
    std::ostringstream os;
    os << "checkpoint version " << version << ", this build reads version " << kCheckpointVersion;
    r.bail(os.str());
  }

  Checkpoint ck;
  ck.config = read_config(r);

  SceneBundle& b = ck.bundle;
  b.channels = static_cast<std::size_t>(r.u64("bundle.channels"));
  b.alpha_init = r.f64("bundle.alpha_init");
  b.iteration = r.u64("bundle.iteration");
  const std::size_t n_views = r.count(1, "bundle.views");
  if (n_views == 0 || n_views > 4096) r.bail("bundle.views count out of range");
  for (std::size_t v = 0; v < n_views; ++v) {
    PixelGaussianGrid g;
    g.camera = read_camera(r);
    g.height = static_cast<std::size_t>(r.u64("grid.height"));
    g.width = static_cast<std::size_t>(r.u64("grid.width"));
    if (g.height != g.camera.height || g.width != g.camera.width)
      r.bail("grid resolution does not match its camera");
    g.alpha_init = r.f64("grid.alpha_init");
    const std::uint8_t frozen = r.u8("grid.frozen_covariance");
    if (frozen > 1) r.bail("grid.frozen_covariance must be 0 or 1");
    g.frozen_covariance = frozen == 1;
    const std::size_t m = g.height * g.width;
    if (m == 0 || m > (1u << 26)) r.bail("grid resolution out of range");
    g.d_init = r.f64s(m, "grid.d_init");
    g.color = r.param_tensor("grid.color");
    g.rotation = r.param_tensor("grid.rotation");
    g.log_scale = r.param_tensor("grid.log_scale");
    if (g.color.shape() != ad::Shape{3, g.height, g.width})
      r.bail("grid.color shape mismatch");
    if (g.rotation.shape() != ad::Shape{4, g.height, g.width})
      r.bail("grid.rotation shape mismatch");
    if (g.log_scale.shape() != ad::Shape{3, g.height, g.width})
      r.bail("grid.log_scale shape mismatch");
    b.grids.push_back(std::move(g));
  }
  for (std::size_t v = 0; v < n_views; ++v) {
    SegMask s;
    s.channels = static_cast<std::size_t>(r.u64("seg.channels"));
    s.height = static_cast<std::size_t>(r.u64("seg.height"));
    s.width = static_cast<std::size_t>(r.u64("seg.width"));
    if (s.channels == 0 || s.channels > 4096 || s.height > (1u << 16) || s.width > (1u << 16))
      r.bail("seg dimensions out of range");
    const std::size_t total = s.channels * s.height * s.width;
    r.need(total, "seg.data");
    s.data.resize(total);
    for (std::size_t i = 0; i < total; ++i) s.data[i] = r.u8("seg.data");
    b.segs.push_back(std::move(s));
  }
  b.depth_decoder = read_decoder(r);
  b.opacity_decoder = read_decoder(r);

  const std::size_t n_align = r.count(16, "align");
  if (n_align != 0 && n_align != n_views) r.bail("align parameter count must match views");
  b.align.scale = r.f64s(n_align, "align.scale");
  b.align.offset = r.f64s(n_align, "align.offset");

  b.loss_history = r.f64s(r.count(8, "loss_history"), "loss_history");

  const std::uint8_t has_opt = r.u8("optimizer.present");
  if (has_opt > 1) r.bail("optimizer.present must be 0 or 1");
  ck.has_optimizer = has_opt == 1;
  if (ck.has_optimizer) {
    ck.opt_moments = r.f64s(r.count(8, "optimizer.moments"), "optimizer.moments");
    const std::size_t n_steps = r.count(8, "optimizer.param_steps");
    ck.opt_param_steps.resize(n_steps);
    for (std::size_t i = 0; i < n_steps; ++i)
      ck.opt_param_steps[i] = r.u64("optimizer.param_steps");
    ck.opt_step_count = r.u64("optimizer.step_count");
  }
  r.done();

  try {
    b.validate();
    for (const auto& g : b.grids) g.camera.validate();
  } catch (const Error& e) {
    fail(ErrorKind::format, path + ": inconsistent checkpoint: " + e.what());
  }
  return ck;
}

}  // namespace pxs
