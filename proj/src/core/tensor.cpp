#include "core/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <sstream>

#include "core/error.hpp"
#include "core/parallel.hpp"

namespace pxs::ad {

std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (auto d : s) n *= d;
  return n;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "(";
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ")";
  return os.str();
}

Tensor wrap_node(std::shared_ptr<detail::Node> n) {
  Tensor t;
  t.node_ = std::move(n);
  return t;
}

std::span<const double> Tensor::grad() const { return node_->grad; }

void Tensor::zero_grad() { node_->grad.clear(); }

double Tensor::value() const {
  check(numel() == 1, ErrorKind::invalid_argument,
        "value() requires a scalar tensor, got shape " + shape_str(shape()));
  return node_->data[0];
}

namespace {

std::shared_ptr<detail::Node> new_node(Shape shape, std::vector<double> data, bool requires_grad) {
  check(shape_numel(shape) == data.size(), ErrorKind::invalid_argument,
        "shape " + shape_str(shape) + " does not match data length " + std::to_string(data.size()));
  auto n = std::make_shared<detail::Node>();
  n->shape = std::move(shape);
  n->data = std::move(data);
  n->requires_grad = requires_grad;
  return n;
}

thread_local Tape* g_active_tape = nullptr;

std::uint64_t g_epoch = 0;

void ensure_adjoint(detail::Node& n, std::uint64_t epoch) {
  if (n.adjoint_epoch != epoch) {
    n.adjoint.assign(n.data.size(), 0.0);
    n.adjoint_epoch = epoch;
  }
}

}  // namespace

Tensor constant(Shape shape, std::vector<double> data) {
  return wrap_node(new_node(std::move(shape), std::move(data), false));
}

Tensor constant_scalar(double v) { return constant({}, {v}); }

Tensor param(Shape shape, std::vector<double> data) {
  return wrap_node(new_node(std::move(shape), std::move(data), true));
}

Tensor zeros(Shape shape, bool requires_grad) {
  std::vector<double> d(shape_numel(shape), 0.0);
  return wrap_node(new_node(std::move(shape), std::move(d), requires_grad));
}

Tensor full(Shape shape, double v, bool requires_grad) {
  std::vector<double> d(shape_numel(shape), v);
  return wrap_node(new_node(std::move(shape), std::move(d), requires_grad));
}

TapeScope::TapeScope(Tape& t) : prev_(g_active_tape) { g_active_tape = &t; }
TapeScope::~TapeScope() { g_active_tape = prev_; }

Tape* active_tape() { return g_active_tape; }

Tensor make_op(std::vector<Tensor> inputs, Shape out_shape, std::vector<double> out_data,
               BackwardFn backward) {
  bool any_grad = false;
  for (const auto& in : inputs) any_grad = any_grad || in.requires_grad();
  Tape* tape = g_active_tape;
  bool record = any_grad && tape != nullptr;
  auto out = new_node(std::move(out_shape), std::move(out_data), record);
  if (record) {
    Tape::Entry e;
    e.out = out;
    e.inputs.reserve(inputs.size());
    for (const auto& in : inputs) e.inputs.push_back(in.node());
    e.fn = std::move(backward);
    tape->record(std::move(e));
  }
  return wrap_node(std::move(out));
}

void Tape::backward(const Tensor& loss) {
  check(loss.numel() == 1, ErrorKind::invalid_argument,
        "backward requires a scalar loss, got shape " + shape_str(loss.shape()));
  const std::uint64_t epoch = ++g_epoch;
  ensure_adjoint(*loss.node(), epoch);
  loss.node()->adjoint[0] = 1.0;

  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
    Entry& e = *it;
    if (e.out->adjoint_epoch != epoch) continue;  // not reachable from loss
    std::vector<double*> sinks(e.inputs.size(), nullptr);
    for (std::size_t i = 0; i < e.inputs.size(); ++i) {
      if (!e.inputs[i]->requires_grad) continue;
      ensure_adjoint(*e.inputs[i], epoch);
      sinks[i] = e.inputs[i]->adjoint.data();
    }
    e.fn(e.out->adjoint, sinks);
  }

  // Fold this pass's adjoints into the persistent accumulators, once per node.
  auto flush = [&](detail::Node& n) {
    if (!n.requires_grad || n.adjoint_epoch != epoch || n.flush_epoch == epoch) return;
    n.flush_epoch = epoch;
    if (n.grad.empty()) n.grad.assign(n.data.size(), 0.0);
    for (std::size_t i = 0; i < n.grad.size(); ++i) n.grad[i] += n.adjoint[i];
  };
  flush(*loss.node());
  for (auto& e : entries_) {
    flush(*e.out);
    for (auto& in : e.inputs) flush(*in);
  }
}

void Tape::clear() { entries_.clear(); }

// ---------------------------------------------------------------------------
// Elementwise machinery

namespace {

enum class BinKind { add, sub, mul, div, sqdiff };

const char* bin_name(BinKind k) {
  switch (k) {
    case BinKind::add: return "add";
    case BinKind::sub: return "sub";
    case BinKind::mul: return "mul";
    case BinKind::div: return "div";
    case BinKind::sqdiff: return "squared_diff";
  }
  return "?";
}

double bin_forward(BinKind k, double a, double b) {
  switch (k) {
    case BinKind::add: return a + b;
    case BinKind::sub: return a - b;
    case BinKind::mul: return a * b;
    case BinKind::div: return a / b;
    case BinKind::sqdiff: { double d = a - b; return d * d; }
  }
  return 0.0;
}

Tensor binary_op(BinKind kind, const Tensor& a, const Tensor& b) {
  const bool a_scalar = a.numel() == 1;
  const bool b_scalar = b.numel() == 1;
  check(a_scalar || b_scalar || a.shape() == b.shape(), ErrorKind::invalid_argument,
        std::string(bin_name(kind)) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
            shape_str(b.shape()));
  const Shape& out_shape = a_scalar && !b_scalar ? b.shape() : a.shape();
  const std::size_t n = a_scalar && !b_scalar ? b.numel() : a.numel();
  std::vector<double> out(n);
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  parallel_for(n, [&](std::size_t i0, std::size_t i1) {
    for (std::size_t i = i0; i < i1; ++i)
      out[i] = bin_forward(kind, pa[a_scalar ? 0 : i], pb[b_scalar ? 0 : i]);
  });
  Tensor an = a, bn = b;
  return make_op({a, b}, out_shape, std::move(out),
                 [kind, an, bn, a_scalar, b_scalar, n](std::span<const double> up,
                                                       const std::vector<double*>& sinks) {
                   const double* pa = an.data().data();
                   const double* pb = bn.data().data();
                   double* ga = sinks[0];
                   double* gb = sinks[1];
                   for (std::size_t i = 0; i < n; ++i) {
                     const double av = pa[a_scalar ? 0 : i];
                     const double bv = pb[b_scalar ? 0 : i];
                     const double u = up[i];
                     double da = 0, db = 0;
                     switch (kind) {
                       case BinKind::add: da = u; db = u; break;
                       case BinKind::sub: da = u; db = -u; break;
                       case BinKind::mul: da = u * bv; db = u * av; break;
                       case BinKind::div: da = u / bv; db = -u * av / (bv * bv); break;
                       case BinKind::sqdiff: da = 2.0 * (av - bv) * u; db = -da; break;
                     }
                     if (ga) ga[a_scalar ? 0 : i] += da;
                     if (gb) gb[b_scalar ? 0 : i] += db;
                   }
                 });
}

enum class UnKind { abs_, exp_, recip, sigmoid_, clamp_, lrelu };

Tensor unary_op(UnKind kind, const Tensor& a, double p0 = 0, double p1 = 0) {
  const std::size_t n = a.numel();
  std::vector<double> out(n);
  const double* pa = a.data().data();
  parallel_for(n, [&](std::size_t i0, std::size_t i1) {
    for (std::size_t i = i0; i < i1; ++i) {
      const double x = pa[i];
      switch (kind) {
        case UnKind::abs_: out[i] = std::fabs(x); break;
        case UnKind::exp_: out[i] = std::exp(x); break;
        case UnKind::recip: out[i] = 1.0 / x; break;
        case UnKind::sigmoid_: out[i] = 1.0 / (1.0 + std::exp(-x)); break;
        case UnKind::clamp_: out[i] = std::min(std::max(x, p0), p1); break;
        case UnKind::lrelu: out[i] = x >= 0 ? x : p0 * x; break;
      }
    }
  });
  Tensor an = a;
  Tensor result = make_op(
      {a}, a.shape(), std::move(out),
      [kind, an, p0, p1, n](std::span<const double> up, const std::vector<double*>& sinks) {
        double* ga = sinks[0];
        if (!ga) return;
        const double* pa = an.data().data();
        for (std::size_t i = 0; i < n; ++i) {
          const double x = pa[i];
          const double u = up[i];
          switch (kind) {
            case UnKind::abs_: ga[i] += (x > 0 ? u : (x < 0 ? -u : 0.0)); break;
            case UnKind::exp_: ga[i] += u * std::exp(x); break;
            case UnKind::recip: ga[i] += -u / (x * x); break;
            case UnKind::sigmoid_: {
              const double s = 1.0 / (1.0 + std::exp(-x));
              ga[i] += u * s * (1.0 - s);
              break;
            }
            case UnKind::clamp_: ga[i] += (x >= p0 && x <= p1) ? u : 0.0; break;
            case UnKind::lrelu: ga[i] += u * (x >= 0 ? 1.0 : p0); break;
          }
        }
      });
  return result;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return binary_op(BinKind::add, a, b); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary_op(BinKind::sub, a, b); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary_op(BinKind::mul, a, b); }
Tensor div(const Tensor& a, const Tensor& b) { return binary_op(BinKind::div, a, b); }
Tensor squared_diff(const Tensor& a, const Tensor& b) { return binary_op(BinKind::sqdiff, a, b); }

Tensor add(const Tensor& a, double b) { return add(a, constant_scalar(b)); }
Tensor sub(double a, const Tensor& b) { return sub(constant_scalar(a), b); }
Tensor mul(const Tensor& a, double b) { return mul(a, constant_scalar(b)); }

Tensor abs(const Tensor& a) { return unary_op(UnKind::abs_, a); }
Tensor exp(const Tensor& a) { return unary_op(UnKind::exp_, a); }
Tensor reciprocal(const Tensor& a) { return unary_op(UnKind::recip, a); }
Tensor sigmoid(const Tensor& a) { return unary_op(UnKind::sigmoid_, a); }

Tensor clamp(const Tensor& a, double lo, double hi) {
  check(lo <= hi, ErrorKind::invalid_argument, "clamp: lo > hi");
  return unary_op(UnKind::clamp_, a, lo, hi);
}

Tensor leaky_relu(const Tensor& a, double slope) { return unary_op(UnKind::lrelu, a, slope); }

// ---------------------------------------------------------------------------
// conv2d

Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias) {
  check(input.shape().size() == 3, ErrorKind::invalid_argument,
        "conv2d: input must be (Cin,H,W), got " + shape_str(input.shape()));
  check(kernel.shape().size() == 4, ErrorKind::invalid_argument,
        "conv2d: kernel must be (Cout,Cin,k,k), got " + shape_str(kernel.shape()));
  const std::size_t cin = input.dim(0), h = input.dim(1), w = input.dim(2);
  const std::size_t cout = kernel.dim(0), k = kernel.dim(2);
  check(kernel.dim(1) == cin, ErrorKind::invalid_argument,
        "conv2d: channel mismatch, input has " + std::to_string(cin) + " channels, kernel expects " +
            std::to_string(kernel.dim(1)));
  check(kernel.dim(3) == k && k % 2 == 1, ErrorKind::invalid_argument,
        "conv2d: kernel must be square with odd size, got " + shape_str(kernel.shape()));
  check(bias.shape() == Shape{cout}, ErrorKind::invalid_argument,
        "conv2d: bias must be (Cout), got " + shape_str(bias.shape()));

  const std::size_t pad = (k - 1) / 2;
  const std::size_t plane = h * w;
  std::vector<double> out(cout * plane);
  const double* in = input.data().data();
  const double* kw = kernel.data().data();
  const double* bs = bias.data().data();

  // out[co] = bias[co] + sum_ci sum_(ky,kx) w * shift(in[ci]); the inner loops
  // run over contiguous row segments so they vectorize.
  auto forward_co = [&](std::size_t co0, std::size_t co1) {
    for (std::size_t co = co0; co < co1; ++co) {
      double* op = out.data() + co * plane;
      std::fill(op, op + plane, bs[co]);
      for (std::size_t ci = 0; ci < cin; ++ci) {
        const double* ip = in + ci * plane;
        for (std::size_t ky = 0; ky < k; ++ky) {
          for (std::size_t kx = 0; kx < k; ++kx) {
            const double wgt = kw[((co * cin + ci) * k + ky) * k + kx];
            if (wgt == 0.0) continue;
            const long dy = static_cast<long>(ky) - static_cast<long>(pad);
            const long dx = static_cast<long>(kx) - static_cast<long>(pad);
            const long y0 = std::max(0L, -dy), y1 = std::min<long>(h, static_cast<long>(h) - dy);
            const long x0 = std::max(0L, -dx), x1 = std::min<long>(w, static_cast<long>(w) - dx);
            for (long y = y0; y < y1; ++y) {
              double* orow = op + y * w + x0;
              const double* irow = ip + (y + dy) * w + (x0 + dx);
              for (long x = x0; x < x1; ++x) *orow++ += wgt * *irow++;
            }
          }
        }
      }
    }
  };
  parallel_for(cout, [&](std::size_t b0, std::size_t b1) { forward_co(b0, b1); });

  Tensor in_t = input, k_t = kernel, b_t = bias;
  return make_op(
      {input, kernel, bias}, {cout, h, w}, std::move(out),
      [in_t, k_t, cin, cout, h, w, k, pad, plane](std::span<const double> up,
                                                  const std::vector<double*>& sinks) {
        const double* in = in_t.data().data();
        const double* kw = k_t.data().data();
        double* gin = sinks[0];
        double* gk = sinks[1];
        double* gb = sinks[2];
        if (gb) {
          for (std::size_t co = 0; co < cout; ++co) {
            double s = 0;
            const double* urow = up.data() + co * plane;
            for (std::size_t i = 0; i < plane; ++i) s += urow[i];
            gb[co] += s;
          }
        }
        if (gk) {
          // gk[co,ci,ky,kx] = <up[co], shift(in[ci])>; each entry written by one task
          parallel_for(cout * cin, [&](std::size_t t0, std::size_t t1) {
            for (std::size_t t = t0; t < t1; ++t) {
              const std::size_t co = t / cin, ci = t % cin;
              const double* upl = up.data() + co * plane;
              const double* ip = in + ci * plane;
              for (std::size_t ky = 0; ky < k; ++ky) {
                for (std::size_t kx = 0; kx < k; ++kx) {
                  const long dy = static_cast<long>(ky) - static_cast<long>(pad);
                  const long dx = static_cast<long>(kx) - static_cast<long>(pad);
                  const long y0 = std::max(0L, -dy), y1 = std::min<long>(h, static_cast<long>(h) - dy);
                  const long x0 = std::max(0L, -dx), x1 = std::min<long>(w, static_cast<long>(w) - dx);
                  double s = 0;
                  for (long y = y0; y < y1; ++y) {
                    const double* urow = upl + y * w + x0;
                    const double* irow = ip + (y + dy) * w + (x0 + dx);
                    for (long x = x0; x < x1; ++x) s += *urow++ * *irow++;
                  }
                  gk[((co * cin + ci) * k + ky) * k + kx] += s;
                }
              }
            }
          });
        }
        if (gin) {
          // gin[ci] += sum_co correlate(up[co], flipped kernel); disjoint per ci
          parallel_for(cin, [&](std::size_t c0, std::size_t c1) {
            for (std::size_t ci = c0; ci < c1; ++ci) {
              double* gp = gin + ci * plane;
              for (std::size_t co = 0; co < cout; ++co) {
                const double* upl = up.data() + co * plane;
                for (std::size_t ky = 0; ky < k; ++ky) {
                  for (std::size_t kx = 0; kx < k; ++kx) {
                    const double wgt = kw[((co * cin + ci) * k + ky) * k + kx];
                    if (wgt == 0.0) continue;
                    const long dy = static_cast<long>(ky) - static_cast<long>(pad);
                    const long dx = static_cast<long>(kx) - static_cast<long>(pad);
                    // out[y,x] consumed in[y+dy,x+dx] => gin[y+dy,x+dx] += w*up[y,x]
                    const long y0 = std::max(0L, -dy), y1 = std::min<long>(h, static_cast<long>(h) - dy);
                    const long x0 = std::max(0L, -dx), x1 = std::min<long>(w, static_cast<long>(w) - dx);
                    for (long y = y0; y < y1; ++y) {
                      const double* urow = upl + y * w + x0;
                      double* grow = gp + (y + dy) * w + (x0 + dx);
                      for (long x = x0; x < x1; ++x) *grow++ += wgt * *urow++;
                    }
                  }
                }
              }
            }
          });
        }
      });
}

// ---------------------------------------------------------------------------
// upsample_bilinear2x

namespace {
// align_corners=false source mapping for scale 2: src = (dst + 0.5)/2 - 0.5.
inline void up2_weights(std::size_t dst, std::size_t src_size, std::size_t& i0, std::size_t& i1,
                        double& w0, double& w1) {
  const double s = (static_cast<double>(dst) + 0.5) / 2.0 - 0.5;
  double f = std::floor(s);
  long lo = static_cast<long>(f);
  double frac = s - f;
  long hi = lo + 1;
  lo = std::clamp(lo, 0L, static_cast<long>(src_size) - 1);
  hi = std::clamp(hi, 0L, static_cast<long>(src_size) - 1);
  i0 = static_cast<std::size_t>(lo);
  i1 = static_cast<std::size_t>(hi);
  w0 = 1.0 - frac;
  w1 = frac;
}
}  // namespace

Tensor upsample_bilinear2x(const Tensor& input) {
  check(input.shape().size() == 3, ErrorKind::invalid_argument,
        "upsample_bilinear2x: input must be (C,H,W), got " + shape_str(input.shape()));
  const std::size_t c = input.dim(0), h = input.dim(1), w = input.dim(2);
  const std::size_t oh = 2 * h, ow = 2 * w;
  std::vector<double> out(c * oh * ow);
  const double* in = input.data().data();

  std::vector<std::size_t> yi0(oh), yi1(oh), xi0(ow), xi1(ow);
  std::vector<double> yw0(oh), yw1(oh), xw0(ow), xw1(ow);
  for (std::size_t y = 0; y < oh; ++y) up2_weights(y, h, yi0[y], yi1[y], yw0[y], yw1[y]);
  for (std::size_t x = 0; x < ow; ++x) up2_weights(x, w, xi0[x], xi1[x], xw0[x], xw1[x]);

  parallel_for(c * oh, [&](std::size_t r0, std::size_t r1) {
    for (std::size_t r = r0; r < r1; ++r) {
      const std::size_t ch = r / oh, y = r % oh;
      const double* ip = in + ch * h * w;
      double* op = out.data() + ch * oh * ow + y * ow;
      const double* row0 = ip + yi0[y] * w;
      const double* row1 = ip + yi1[y] * w;
      for (std::size_t x = 0; x < ow; ++x) {
        op[x] = yw0[y] * (xw0[x] * row0[xi0[x]] + xw1[x] * row0[xi1[x]]) +
                yw1[y] * (xw0[x] * row1[xi0[x]] + xw1[x] * row1[xi1[x]]);
      }
    }
  });

  return make_op({input}, {c, oh, ow}, std::move(out),
                 [c, h, w, oh, ow, yi0, yi1, xi0, xi1, yw0, yw1, xw0, xw1](
                     std::span<const double> up, const std::vector<double*>& sinks) {
                   double* gin = sinks[0];
                   if (!gin) return;
                   for (std::size_t ch = 0; ch < c; ++ch) {
                     double* gp = gin + ch * h * w;
                     const double* upl = up.data() + ch * oh * ow;
                     for (std::size_t y = 0; y < oh; ++y) {
                       for (std::size_t x = 0; x < ow; ++x) {
                         const double u = upl[y * ow + x];
                         gp[yi0[y] * w + xi0[x]] += yw0[y] * xw0[x] * u;
                         gp[yi0[y] * w + xi1[x]] += yw0[y] * xw1[x] * u;
                         gp[yi1[y] * w + xi0[x]] += yw1[y] * xw0[x] * u;
                         gp[yi1[y] * w + xi1[x]] += yw1[y] * xw1[x] * u;
                       }
                     }
                   }
                 });
}

// ---------------------------------------------------------------------------
// reductions

namespace {

Tensor reduce_impl(const Tensor& a, const std::vector<std::size_t>& axes, bool mean) {
  const Shape& sh = a.shape();
  std::vector<bool> reduced(sh.size(), false);
  if (axes.empty()) {
    std::fill(reduced.begin(), reduced.end(), true);
  } else {
    for (auto ax : axes) {
      check(ax < sh.size(), ErrorKind::invalid_argument,
            "reduce: axis " + std::to_string(ax) + " out of range for shape " + shape_str(sh));
      reduced[ax] = true;
    }
  }
  Shape out_shape;
  for (std::size_t i = 0; i < sh.size(); ++i)
    if (!reduced[i]) out_shape.push_back(sh[i]);

  // Strides of the input, and the output index for each input element.
  const std::size_t n = a.numel();
  std::vector<std::size_t> strides(sh.size(), 1);
  for (std::size_t i = sh.size(); i-- > 1;) strides[i - 1] = strides[i] * sh[i];
  std::vector<std::size_t> out_strides;
  {
    std::vector<std::size_t> os(out_shape.size(), 1);
    for (std::size_t i = out_shape.size(); i-- > 1;) os[i - 1] = os[i] * out_shape[i];
    out_strides = std::move(os);
  }
  const std::size_t out_n = shape_numel(out_shape);
  const std::size_t count = out_n == 0 ? 0 : n / std::max<std::size_t>(out_n, 1);
  const double scale = mean ? 1.0 / static_cast<double>(count) : 1.0;

  auto out_index = [sh, strides, reduced, out_strides](std::size_t flat) {
    std::size_t oi = 0, k = 0;
    for (std::size_t d = 0; d < sh.size(); ++d) {
      const std::size_t idx = (flat / strides[d]) % sh[d];
      if (!reduced[d]) oi += idx * out_strides[k++];
    }
    return oi;
  };

  std::vector<double> out(out_n, 0.0);
  const double* pa = a.data().data();
  for (std::size_t i = 0; i < n; ++i) out[out_index(i)] += pa[i];
  if (mean)
    for (auto& v : out) v *= scale;

  return make_op({a}, std::move(out_shape), std::move(out),
                 [n, scale, out_index](std::span<const double> up, const std::vector<double*>& sinks) {
                   double* ga = sinks[0];
                   if (!ga) return;
                   for (std::size_t i = 0; i < n; ++i) ga[i] += scale * up[out_index(i)];
                 });
}

}  // namespace

Tensor reduce_sum(const Tensor& a, const std::vector<std::size_t>& axes) {
  return reduce_impl(a, axes, false);
}

Tensor reduce_mean(const Tensor& a, const std::vector<std::size_t>& axes) {
  return reduce_impl(a, axes, true);
}

// ---------------------------------------------------------------------------
// shape ops

Tensor reshape(const Tensor& a, Shape new_shape) {
  check(shape_numel(new_shape) == a.numel(), ErrorKind::invalid_argument,
        "reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(new_shape));
  std::vector<double> out(a.data().begin(), a.data().end());
  const std::size_t n = a.numel();
  return make_op({a}, std::move(new_shape), std::move(out),
                 [n](std::span<const double> up, const std::vector<double*>& sinks) {
                   if (!sinks[0]) return;
                   for (std::size_t i = 0; i < n; ++i) sinks[0][i] += up[i];
                 });
}

Tensor slice_channel(const Tensor& a, std::size_t c) {
  check(a.shape().size() == 3, ErrorKind::invalid_argument,
        "slice_channel: input must be (C,H,W), got " + shape_str(a.shape()));
  check(c < a.dim(0), ErrorKind::invalid_argument, "slice_channel: channel out of range");
  const std::size_t h = a.dim(1), w = a.dim(2), plane = h * w;
  std::vector<double> out(a.data().begin() + c * plane, a.data().begin() + (c + 1) * plane);
  return make_op({a}, {h, w}, std::move(out),
                 [c, plane](std::span<const double> up, const std::vector<double*>& sinks) {
                   if (!sinks[0]) return;
                   double* g = sinks[0] + c * plane;
                   for (std::size_t i = 0; i < plane; ++i) g[i] += up[i];
                 });
}

Tensor slice_channels(const Tensor& a, std::size_t first, std::size_t count) {
  check(a.shape().size() == 3, ErrorKind::invalid_argument,
        "slice_channels: input must be (C,H,W), got " + shape_str(a.shape()));
  check(count >= 1 && first + count <= a.dim(0), ErrorKind::invalid_argument,
        "slice_channels: channel range out of bounds");
  const std::size_t h = a.dim(1), w = a.dim(2), plane = h * w;
  std::vector<double> out(a.data().begin() + first * plane,
                          a.data().begin() + (first + count) * plane);
  const std::size_t n = count * plane;
  return make_op({a}, {count, h, w}, std::move(out),
                 [first, plane, n](std::span<const double> up,
                                   const std::vector<double*>& sinks) {
                   if (!sinks[0]) return;
                   double* g = sinks[0] + first * plane;
                   for (std::size_t i = 0; i < n; ++i) g[i] += up[i];
                 });
}

Tensor interleave_channels(const Tensor& a) {
  check(a.shape().size() == 3, ErrorKind::invalid_argument,
        "interleave_channels: input must be (C,H,W), got " + shape_str(a.shape()));
  const std::size_t c = a.dim(0), plane = a.dim(1) * a.dim(2);
  std::vector<double> out(a.numel());
  const auto src = a.data();
  for (std::size_t p = 0; p < plane; ++p)
    for (std::size_t ch = 0; ch < c; ++ch) out[p * c + ch] = src[ch * plane + p];
  return make_op({a}, {plane, c}, std::move(out),
                 [c, plane](std::span<const double> up, const std::vector<double*>& sinks) {
                   if (!sinks[0]) return;
                   for (std::size_t p = 0; p < plane; ++p)
                     for (std::size_t ch = 0; ch < c; ++ch)
                       sinks[0][ch * plane + p] += up[p * c + ch];
                 });
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  check(!parts.empty(), ErrorKind::invalid_argument, "concat_rows: no inputs");
  const std::size_t k = parts[0].shape().size() == 2 ? parts[0].dim(1) : 0;
  check(k > 0, ErrorKind::invalid_argument, "concat_rows: inputs must be rank-2");
  std::size_t rows = 0;
  for (const auto& p : parts) {
    check(p.shape().size() == 2 && p.dim(1) == k, ErrorKind::invalid_argument,
          "concat_rows: column mismatch " + shape_str(p.shape()));
    rows += p.dim(0);
  }
  std::vector<double> out;
  out.reserve(rows * k);
  std::vector<std::size_t> sizes;
  for (const auto& p : parts) {
    out.insert(out.end(), p.data().begin(), p.data().end());
    sizes.push_back(p.numel());
  }
  return make_op(std::vector<Tensor>(parts), {rows, k}, std::move(out),
                 [sizes](std::span<const double> up, const std::vector<double*>& sinks) {
                   std::size_t off = 0;
                   for (std::size_t p = 0; p < sizes.size(); ++p) {
                     if (sinks[p])
                       for (std::size_t i = 0; i < sizes[p]; ++i) sinks[p][i] += up[off + i];
                     off += sizes[p];
                   }
                 });
}

}  // namespace pxs::ad
