#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace pxs::ad {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

namespace detail {
struct Node {
  Shape shape;
  std::vector<double> data;
  bool requires_grad = false;
  std::vector<double> grad;     // persistent accumulator, allocated on first write
  std::vector<double> adjoint;  // scratch for one backward pass
  std::uint64_t adjoint_epoch = 0;
  std::uint64_t flush_epoch = 0;
};
}  // namespace detail

// Dense 64-bit tensor participating in reverse-mode differentiation. Value
// semantics on the handle; the underlying node is immutable after creation
// except for gradient accumulation and explicit parameter updates.
class Tensor {
public:
  Tensor() = default;

  const Shape& shape() const { return node_->shape; }
  std::size_t numel() const { return node_->data.size(); }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  bool defined() const { return node_ != nullptr; }

  std::span<const double> data() const { return node_->data; }
  // In-place access for optimizer steps on leaves; the graph is rebuilt per
  // iteration, so stored forward values are never reused across updates.
  std::span<double> mutable_data() { return node_->data; }

  bool requires_grad() const { return node_->requires_grad; }
  bool has_grad() const { return !node_->grad.empty(); }
  std::span<const double> grad() const;
  void zero_grad();

  double value() const;  // scalar tensors only
  double at(std::size_t i) const { return node_->data[i]; }

  std::shared_ptr<detail::Node> node() const { return node_; }

private:
  friend Tensor wrap_node(std::shared_ptr<detail::Node> n);
  std::shared_ptr<detail::Node> node_;
};

Tensor wrap_node(std::shared_ptr<detail::Node> n);

// Leaf constructors.
Tensor constant(Shape shape, std::vector<double> data);
Tensor constant_scalar(double v);
Tensor param(Shape shape, std::vector<double> data);
Tensor zeros(Shape shape, bool requires_grad = false);
Tensor full(Shape shape, double v, bool requires_grad = false);

// Accumulates `upstream` (same layout as the op output) into the adjoint
// buffers of the op inputs; slot i is null when input i takes no gradient.
using BackwardFn =
    std::function<void(std::span<const double> upstream, const std::vector<double*>& input_adjoints)>;

// Ordered record of executed differentiable operations. backward() visits them
// in exact reverse execution order; clear() releases all saved intermediates.
class Tape {
public:
  void backward(const Tensor& loss);
  void clear();
  std::size_t size() const { return entries_.size(); }

  struct Entry {
    std::shared_ptr<detail::Node> out;
    std::vector<std::shared_ptr<detail::Node>> inputs;
    BackwardFn fn;
  };
  void record(Entry e) { entries_.push_back(std::move(e)); }

private:
  std::vector<Entry> entries_;
};

// Scoped activation of a tape. Ops executed with no active tape run in
// inference mode: no recording, outputs never require grad.
class TapeScope {
public:
  explicit TapeScope(Tape& t);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

private:
  Tape* prev_;
};

Tape* active_tape();

// Generic differentiable op: forward value supplied by the caller, backward
// rule recorded on the active tape. All built-in ops funnel through this.
Tensor make_op(std::vector<Tensor> inputs, Shape out_shape, std::vector<double> out_data,
               BackwardFn backward);

// Elementwise binary ops. Shapes must match exactly, or one side is a scalar
// (numel 1) broadcast over the other.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor squared_diff(const Tensor& a, const Tensor& b);

Tensor add(const Tensor& a, double b);
Tensor sub(double a, const Tensor& b);
Tensor mul(const Tensor& a, double b);

// Elementwise unary ops.
Tensor abs(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor reciprocal(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor clamp(const Tensor& a, double lo, double hi);
Tensor leaky_relu(const Tensor& a, double slope);

// input (Cin,H,W), kernel (Cout,Cin,k,k) with k odd, bias (Cout).
// Cross-correlation with zero padding (k-1)/2; spatial size preserved.
Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias);

// (C,H,W) -> (C,2H,2W), align-corners-false bilinear.
Tensor upsample_bilinear2x(const Tensor& input);

// Sum or mean over the given axes; empty axes = all axes (scalar result).
Tensor reduce_sum(const Tensor& a, const std::vector<std::size_t>& axes = {});
Tensor reduce_mean(const Tensor& a, const std::vector<std::size_t>& axes = {});

Tensor reshape(const Tensor& a, Shape new_shape);
Tensor slice_channel(const Tensor& a, std::size_t c);  // (C,H,W) -> (H,W)
Tensor slice_channels(const Tensor& a, std::size_t first, std::size_t count);  // -> (count,H,W)
Tensor concat_rows(const std::vector<Tensor>& parts);  // [(Mi,K)] -> (sum Mi, K)
Tensor interleave_channels(const Tensor& a);  // (C,H,W) -> (H*W, C)

}  // namespace pxs::ad
