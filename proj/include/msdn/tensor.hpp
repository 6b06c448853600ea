#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <array>
#include <cstdint>
#include <cstring>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "msdn/errors.hpp"

namespace msdn {

using Index = Eigen::Index;

template <typename Scalar>
using Buffer = Eigen::Array<Scalar, Eigen::Dynamic, 1>;

template <typename Scalar>
using RowMajorArray =
    Eigen::Array<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
using RowMajorMatrix =
    Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Extents of a tensor, outermost first. Rank is 1..4; (n, c, h, w) for images.
class Shape {
 public:
  static constexpr int kMaxRank = 4;

  Shape() : dims_{1, 1, 1, 1}, rank_(1) {}

  Shape(std::initializer_list<Index> extents)
      : Shape(std::span<const Index>(extents.begin(), extents.size())) {}

  explicit Shape(std::span<const Index> extents) {
    if (extents.empty() || extents.size() > kMaxRank) {
      throw ShapeError("tensor rank must be between 1 and 4, got " +
                       std::to_string(extents.size()));
    }
    rank_ = static_cast<int>(extents.size());
    for (int i = 0; i < rank_; ++i) {
      if (extents[i] < 0) throw ShapeError("negative tensor extent");
      dims_[i] = extents[i];
    }
  }

  int rank() const { return rank_; }

  Index operator[](int axis) const { return dims_[normalize_axis(axis)]; }

  Index numel() const {
    Index n = 1;
    for (int i = 0; i < rank_; ++i) n *= dims_[i];
    return n;
  }

  // Accepts negative axes counted from the innermost one.
  int normalize_axis(int axis) const {
    const int a = axis < 0 ? axis + rank_ : axis;
    if (a < 0 || a >= rank_) {
      throw ShapeError("axis " + std::to_string(axis) + " invalid for " + str());
    }
    return a;
  }

  std::span<const Index> extents() const { return {dims_.data(), std::size_t(rank_)}; }

  // Product of all extents except the last two.
  Index planes() const {
    Index p = 1;
    for (int i = 0; i + 2 < rank_; ++i) p *= dims_[i];
    return p;
  }

  Shape with(int axis, Index extent) const {
    Shape s = *this;
    s.dims_[normalize_axis(axis)] = extent;
    return s;
  }

  bool operator==(const Shape& o) const {
    if (rank_ != o.rank_) return false;
    return std::equal(dims_.begin(), dims_.begin() + rank_, o.dims_.begin());
  }

  std::string str() const {
    std::ostringstream os;
    os << '(';
    for (int i = 0; i < rank_; ++i) os << (i ? "," : "") << dims_[i];
    os << ')';
    return os.str();
  }

 private:
  std::array<Index, kMaxRank> dims_;
  int rank_;
};

namespace detail {

// One vertex of the dynamic gradient tape.
template <typename Scalar>
struct Node {
  Shape shape;
  Buffer<Scalar> data;
  Buffer<Scalar> grad;  // empty until the first accumulation
  bool requires_grad = false;
  bool grad_touched = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(const Node&)> backward;

  void accumulate(const Buffer<Scalar>& g) {
    if (!requires_grad) return;
    if (grad.size() == 0) {
      grad = g;
    } else {
      grad += g;
    }
    grad_touched = true;
  }

  // Zero-filled gradient slot for ops that scatter-add.
  Buffer<Scalar>& grad_slot() {
    if (grad.size() == 0) grad = Buffer<Scalar>::Zero(data.size());
    grad_touched = true;
    return grad;
  }
};

inline bool& grad_mode_flag() {
  thread_local bool enabled = true;
  return enabled;
}

}  // namespace detail

inline bool grad_enabled() { return detail::grad_mode_flag(); }

// Disables tape recording for the lifetime of the guard (inference).
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_mode_flag()) { detail::grad_mode_flag() = false; }
  ~NoGradGuard() { detail::grad_mode_flag() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// Dense row-major tensor handle. Copies share storage; values produced by an
// operation are never modified afterwards, only trainable leaves are.
template <typename Scalar>
class Tensor {
 public:
  using scalar_type = Scalar;
  using NodeType = detail::Node<Scalar>;
  using BackwardFn = std::function<void(const NodeType&)>;

  Tensor() = default;

  static Tensor from_buffer(const Shape& shape, Buffer<Scalar> data) {
    if (data.size() != shape.numel()) {
      throw ShapeError("buffer of " + std::to_string(data.size()) +
                       " values does not match shape " + shape.str());
    }
    auto node = std::make_shared<NodeType>();
    node->shape = shape;
    node->data = std::move(data);
    return Tensor(std::move(node));
  }

  static Tensor zeros(const Shape& shape) {
    return from_buffer(shape, Buffer<Scalar>::Zero(shape.numel()));
  }

  static Tensor full(const Shape& shape, Scalar value) {
    return from_buffer(shape, Buffer<Scalar>::Constant(shape.numel(), value));
  }

  static Tensor from_values(const Shape& shape, std::initializer_list<Scalar> values) {
    Buffer<Scalar> b(static_cast<Index>(values.size()));
    std::copy(values.begin(), values.end(), b.data());
    return from_buffer(shape, std::move(b));
  }

  static Tensor scalar(Scalar value) { return full(Shape{1}, value); }

  // Trainable leaf with a zero-initialized gradient accumulator.
  static Tensor leaf(const Shape& shape, Buffer<Scalar> data) {
    Tensor t = from_buffer(shape, std::move(data));
    t.node_->requires_grad = true;
    t.node_->grad = Buffer<Scalar>::Zero(shape.numel());
    return t;
  }

  // Result of a differentiable operation. The backward closure receives the
  // result node (with its gradient filled in) and pushes gradients into
  // node.parents in the order given here.
  static Tensor make(const Shape& shape, Buffer<Scalar> data,
                     std::initializer_list<Tensor> parents, BackwardFn backward) {
    Tensor out = from_buffer(shape, std::move(data));
    if (!grad_enabled()) return out;
    const bool any = std::any_of(parents.begin(), parents.end(),
                                 [](const Tensor& p) { return p.requires_grad(); });
    if (!any) return out;
    out.node_->requires_grad = true;
    for (const Tensor& p : parents) out.node_->parents.push_back(p.node_);
    out.node_->backward = std::move(backward);
    return out;
  }

  bool valid() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int rank() const { return node_->shape.rank(); }
  Index dim(int axis) const { return node_->shape[axis]; }
  Index numel() const { return node_->shape.numel(); }

  const Buffer<Scalar>& data() const { return node_->data; }
  const Scalar* raw() const { return node_->data.data(); }

  // Only trainable or constant leaves may be written in place.
  Buffer<Scalar>& mutable_data() {
    if (!node_->parents.empty()) {
      throw ContractError("cannot modify the output of a recorded operation");
    }
    return node_->data;
  }

  bool requires_grad() const { return node_ && node_->requires_grad; }
  bool has_grad() const { return node_->grad.size() == node_->data.size(); }
  bool grad_touched() const { return node_->grad_touched; }

  const Buffer<Scalar>& grad() const { return node_->grad; }

  void zero_grad() {
    if (node_->requires_grad) node_->grad = Buffer<Scalar>::Zero(node_->data.size());
    node_->grad_touched = false;
  }

  Scalar item() const {
    if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape().str());
    return node_->data[0];
  }

  Scalar operator[](Index flat) const { return node_->data[flat]; }

  // Element of a rank-4 tensor.
  Scalar at(Index n, Index c, Index h, Index w) const {
    const Shape& s = shape();
    return node_->data[((n * s[1] + c) * s[2] + h) * s[3] + w];
  }

  // The p-th innermost (h, w) plane as a row-major Eigen view.
  Eigen::Map<const RowMajorArray<Scalar>> plane(Index p) const {
    const Index h = dim(-2), w = dim(-1);
    return {node_->data.data() + p * h * w, h, w};
  }

  Tensor detach() const { return from_buffer(shape(), node_->data); }

  template <typename Other>
  Tensor<Other> cast() const {
    return Tensor<Other>::from_buffer(shape(), node_->data.template cast<Other>());
  }

  const std::shared_ptr<NodeType>& node() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<NodeType> node) : node_(std::move(node)) {}

  std::shared_ptr<NodeType> node_;
};

template <typename Scalar>
bool bit_equal(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  return a.shape() == b.shape() &&
         std::equal(a.raw(), a.raw() + a.numel(), b.raw(),
                    [](Scalar x, Scalar y) {
                      return std::memcmp(&x, &y, sizeof(Scalar)) == 0;
                    });
}

// Reverse-mode sweep from a scalar loss. Gradients accumulate into every
// reachable trainable leaf; intermediate gradients are recomputed each call.
template <typename Scalar>
void backward(const Tensor<Scalar>& loss) {
  using NodePtr = std::shared_ptr<detail::Node<Scalar>>;
  if (!loss.valid() || loss.numel() != 1) {
    throw ContractError("backward() needs a scalar loss, got shape " +
                        (loss.valid() ? loss.shape().str() : std::string("<null>")));
  }
  if (!loss.requires_grad()) {
    throw ContractError("loss does not depend on any trainable tensor");
  }

  std::vector<NodePtr> order;
  std::unordered_set<const detail::Node<Scalar>*> seen;
  std::vector<std::pair<NodePtr, std::size_t>> stack{{loss.node(), 0}};
  seen.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      const NodePtr& p = node->parents[next++];
      if (p->requires_grad && seen.insert(p.get()).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (const NodePtr& n : order) {
    if (!n->parents.empty()) n->grad.resize(0);
  }
  loss.node()->grad = Buffer<Scalar>::Ones(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    const NodePtr& n = *it;
    if (n->backward && n->grad.size() != 0) n->backward(*n);
  }
}

}  // namespace msdn
