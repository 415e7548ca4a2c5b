#pragma once

// Reverse-mode differentiation over dense row-major f64 tensors.
//
// A Tensor is a shared handle to a graph node. Ops record their inputs and a
// backward closure whenever any input requires a gradient; `backward(loss)`
// walks the recorded graph in reverse creation order. Leaves that require a
// gradient (parameters) accumulate into their gradient buffer across calls
// until `zero_grad()`.
//
// Binary elementwise ops accept operands of equal shape, or a second operand
// whose shape is a suffix of the first (broadcast over leading batch axes).

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace rotinv::ad {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

struct Node;
using NodePtr = std::shared_ptr<Node>;

struct Node {
  std::uint64_t id = 0;
  const char* op = "leaf";
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;
  std::vector<NodePtr> parents;
  std::function<void(Node&)> backward;

  /// Gradient buffer, allocated (zeroed) on first use.
  std::span<double> grad_buffer();
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(NodePtr node) : node_(std::move(node)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
  static Tensor scalar(double value);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  /// Extent of axis `axis`; negative values count from the end.
  std::size_t dim(std::ptrdiff_t axis) const;
  std::size_t numel() const { return node_->value.size(); }
  bool requires_grad() const { return node_->requires_grad; }

  std::span<const double> values() const { return node_->value; }
  /// Writable storage; only meaningful on leaves (parameters, inputs).
  std::span<double> mutable_values() { return node_->value; }
  /// Gradient, or all zeros when none has been accumulated.
  std::vector<double> grad() const;
  bool has_grad() const { return !node_->grad.empty(); }
  void zero_grad() { node_->grad.clear(); }

  double item() const;
  double at(std::initializer_list<std::size_t> index) const;

  /// Same values, no graph history.
  Tensor detach() const;

  const NodePtr& node() const { return node_; }

 private:
  NodePtr node_;
};

/// Reverse sweep from a scalar loss. Throws std::invalid_argument for
/// non-scalar losses and NumericError for a non-finite loss.
void backward(const Tensor& loss);

// ---- core ops ------------------------------------------------------------

/// a[..., K] x b[K, N] -> [..., N]
Tensor matmul(const Tensor& a, const Tensor& b);
/// Batched a[B, M, K] x b[B, K, N] -> [B, M, N]
Tensor bmm(const Tensor& a, const Tensor& b);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double s);
Tensor neg(const Tensor& a);

Tensor concat(const std::vector<Tensor>& parts, std::ptrdiff_t axis);
Tensor slice(const Tensor& a, std::ptrdiff_t axis, std::size_t begin, std::size_t end);
Tensor reshape(const Tensor& a, Shape shape);
Tensor transpose(const Tensor& a, std::ptrdiff_t axis0, std::ptrdiff_t axis1);
/// Repeat a unit axis `n` times.
Tensor expand(const Tensor& a, std::ptrdiff_t axis, std::size_t n);

Tensor sum(const Tensor& a);
Tensor sum(const Tensor& a, std::ptrdiff_t axis, bool keepdim = false);
Tensor mean(const Tensor& a);
Tensor mean(const Tensor& a, std::ptrdiff_t axis, bool keepdim = false);
/// Maximum over `axis`; the gradient goes to the first maximal entry.
Tensor max(const Tensor& a, std::ptrdiff_t axis, bool keepdim = false);

Tensor sqrt(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor softmax(const Tensor& a);      // over the last axis
Tensor log_softmax(const Tensor& a);  // over the last axis
/// x / max(||x||, eps) with the norm taken over `axis`.
Tensor normalize(const Tensor& a, std::ptrdiff_t axis, double eps = 1e-12);
/// Rows of `a` (axis 0) picked by `indices`.
Tensor gather(const Tensor& a, std::span<const std::size_t> indices);
/// Cross product over a trailing axis of extent 3.
Tensor cross(const Tensor& a, const Tensor& b);
/// Row i (axis 0) of the result is `fallback` row i where mask[i] is set, else `a` row i.
/// `fallback` carries no gradient.
Tensor where_rows(const std::vector<bool>& mask, const Tensor& fallback, const Tensor& a);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator/(const Tensor& a, const Tensor& b) { return div(a, b); }
inline Tensor operator*(const Tensor& a, double s) { return scale(a, s); }
inline Tensor operator*(double s, const Tensor& a) { return scale(a, s); }
inline Tensor operator+(const Tensor& a, double s) { return add_scalar(a, s); }
inline Tensor operator-(const Tensor& a) { return neg(a); }

/// Mean cross-entropy of row-wise logits [B, C] against integer labels.
Tensor cross_entropy(const Tensor& logits, std::span<const int> labels);

}  // namespace rotinv::ad
