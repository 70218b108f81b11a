#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace msw::ad {

using Shape = std::vector<int>;

int64_t numel(const Shape& shape);

namespace detail {
struct TensorNode {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until backward touches this node
  bool requires_grad = false;
  std::string name;
};
}  // namespace detail

/// Dense double-precision tensor handle. Copies are shallow: they refer to
/// the same storage, which is what parameter sharing relies on.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from_data(Shape shape, std::vector<double> data,
                          bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  int64_t numel() const;

  std::span<double> data();
  std::span<const double> data() const;
  /// Value of a single-element tensor.
  double value() const;

  bool requires_grad() const;
  void set_requires_grad(bool on);

  bool has_grad() const;
  std::span<double> grad();
  std::span<const double> grad() const;
  void zero_grad();

  const std::string& name() const;
  void set_name(std::string name);

  /// True if both handles refer to the same storage.
  bool same_storage(const Tensor& other) const { return node_ == other.node_; }

 private:
  explicit Tensor(std::shared_ptr<detail::TensorNode> node)
      : node_(std::move(node)) {}
  detail::TensorNode& node();
  const detail::TensorNode& node() const;

  std::shared_ptr<detail::TensorNode> node_;
  friend class Graph;
};

/// Reverse-mode tape. Records every differentiable op in execution order;
/// backward() replays the tape in exact reverse order. One Graph (and the
/// tensors flowing through it) is confined to a single thread.
class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  // Elementwise. Binary ops require identical shapes (no broadcasting).
  Tensor add(const Tensor& a, const Tensor& b);
  Tensor sub(const Tensor& a, const Tensor& b);
  Tensor mul(const Tensor& a, const Tensor& b);
  Tensor div(const Tensor& a, const Tensor& b);
  Tensor neg(const Tensor& a);
  Tensor relu(const Tensor& a);
  Tensor sigmoid(const Tensor& a);
  Tensor log(const Tensor& a);  // throws std::domain_error on x <= 0
  Tensor exp(const Tensor& a);
  /// max(x, lo); gradient passes where x >= lo.
  Tensor clamp_min(const Tensor& a, double lo);
  /// Huber with beta = 1: 0.5 x^2 for |x| < 1, |x| - 0.5 otherwise.
  Tensor smooth_l1(const Tensor& a);
  /// scale * x + shift with constant coefficients.
  Tensor affine(const Tensor& a, double scale, double shift);

  /// input C x H x W, weight O x C x Kh x Kw (odd kernels), bias O.
  Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias,
                int stride, int padding);

  /// a: Ca x H x W, b: Cb x H x W -> (Ca+Cb) x H x W, channels of a first.
  Tensor concat_channels(const Tensor& a, const Tensor& b);
  /// Elementwise fusion ops over equal shapes. channel_max routes the
  /// gradient to the argmax input; ties go to the first argument.
  Tensor channel_sum(const Tensor& a, const Tensor& b);
  Tensor channel_max(const Tensor& a, const Tensor& b);

  /// Pick flat indices out of a into a 1-D tensor; backward scatter-adds.
  Tensor gather(const Tensor& a, std::vector<int64_t> indices);
  /// Same data, new extents (element count must match).
  Tensor reshape(const Tensor& a, Shape shape);
  /// Sum of all elements -> scalar.
  Tensor sum(const Tensor& a);
  /// 1 x H x W -> length-W vector of per-column maxima (axis=0) or
  /// length-H vector of per-row maxima (axis=1). Ties route to the
  /// smallest index.
  Tensor max_project(const Tensor& a, int axis);

  /// Backpropagate from a scalar loss through every recorded op in
  /// reverse execution order, accumulating into Tensor::grad. Calling
  /// backward a second time without recording new ops is an error.
  void backward(const Tensor& loss);

  size_t op_count() const { return tape_.size(); }
  /// Drop the tape (tensor handles held elsewhere stay valid).
  void reset();

 private:
  using NodePtr = std::shared_ptr<detail::TensorNode>;

  Tensor make_output(Shape shape, bool requires_grad);
  void record(std::function<void()> backward_fn);
  static std::vector<double>& ensure_grad(const NodePtr& node);

  Tensor binary_elementwise(const Tensor& a, const Tensor& b, const char* what,
                            const std::function<double(double, double)>& fwd,
                            const std::function<void(double, double, double,
                                                     double&, double&)>& bwd);
  Tensor unary_elementwise(const Tensor& a,
                           const std::function<double(double)>& fwd,
                           const std::function<double(double, double)>& dfdx);

  std::vector<std::function<void()>> tape_;
  bool backward_done_ = false;
};

/// Central finite-difference check of a scalar-valued function against the
/// tape's analytic gradients. Relative error |a-n| / (|a|+|n|) is measured
/// only where |a|+|n| > 1e-8. When max_coords_per_tensor is positive, a
/// deterministic random subset of coordinates is probed per input.
double grad_check(
    const std::function<Tensor(Graph&, const std::vector<Tensor>&)>& f,
    std::vector<Tensor> inputs, double eps, int max_coords_per_tensor = -1,
    uint64_t seed = 7);

}  // namespace msw::ad
