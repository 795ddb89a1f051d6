#pragma once

#include <algorithm>
#include <functional>
#include <memory>
#include <unordered_set>
#include <vector>

#include "crs/common.hpp"

namespace crs {

using Shape = std::vector<int>;

inline long shape_numel(const Shape& s) {
  long n = 1;
  for (int d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

namespace detail {
// Reverse-mode recording is a thread-local switch so eval paths can run
// without building graphs.
inline thread_local bool grad_enabled = true;
}  // namespace detail

inline bool grad_mode_enabled() { return detail::grad_enabled; }

/// RAII guard disabling autodiff recording in its scope.
struct NoGradGuard {
  NoGradGuard() : prev(detail::grad_enabled) { detail::grad_enabled = false; }
  ~NoGradGuard() { detail::grad_enabled = prev; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
  bool prev;
};

/// One recorded op in the reverse-mode tape. `parents` links toward the
/// leaves for traversal; `backward` receives the output gradient and
/// accumulates into the grads of the input tensors captured in the closure.
template <typename T>
struct Node {
  std::vector<std::shared_ptr<Node<T>>> parents;
  std::shared_ptr<std::vector<T>> out_grad;
  std::function<void(const std::vector<T>&)> backward;
};

/// Dense tensor (rank 2 or 4, NCHW layout for rank 4) with shared storage
/// and an optional gradient buffer. Values are immutable once an op produced
/// them; only grad buffers mutate during backward.
template <typename T>
class TensorT {
 public:
  TensorT() = default;

  explicit TensorT(Shape shape, T fill = T(0)) : shape_(std::move(shape)) {
    for (int d : shape_)
      if (d <= 0) throw ShapeError("tensor dims must be positive, got " + shape_str(shape_));
    data_ = std::make_shared<std::vector<T>>(static_cast<size_t>(shape_numel(shape_)), fill);
  }

  static TensorT zeros(Shape shape) { return TensorT(std::move(shape)); }
  static TensorT full(Shape shape, T v) { return TensorT(std::move(shape), v); }

  static TensorT from(Shape shape, std::vector<T> values) {
    TensorT t;
    t.shape_ = std::move(shape);
    if (shape_numel(t.shape_) != static_cast<long>(values.size()))
      throw ShapeError(strf("value count %zu does not match shape %s", values.size(),
                            shape_str(t.shape_).c_str()));
    t.data_ = std::make_shared<std::vector<T>>(std::move(values));
    return t;
  }

  static TensorT scalar(T v) { return from({1}, {v}); }

  bool defined() const { return data_ != nullptr; }
  int rank() const { return static_cast<int>(shape_.size()); }
  const Shape& shape() const { return shape_; }
  int dim(int i) const { return shape_[static_cast<size_t>(i)]; }
  long numel() const { return data_ ? static_cast<long>(data_->size()) : 0; }

  T* data() { return data_->data(); }
  const T* data() const { return data_->data(); }
  std::vector<T>& vec() { return *data_; }
  const std::vector<T>& vec() const { return *data_; }

  T& at4(int n, int c, int h, int w) {
    return (*data_)[idx4(n, c, h, w)];
  }
  T at4(int n, int c, int h, int w) const { return (*data_)[idx4(n, c, h, w)]; }
  T& at2(int n, int f) { return (*data_)[static_cast<size_t>(n) * shape_[1] + f]; }
  T at2(int n, int f) const { return (*data_)[static_cast<size_t>(n) * shape_[1] + f]; }

  bool requires_grad() const { return grad_ != nullptr; }

  void set_requires_grad(bool on) {
    if (on) {
      if (!grad_) grad_ = std::make_shared<std::vector<T>>(data_->size(), T(0));
    } else {
      grad_.reset();
    }
  }

  T* grad() { return grad_->data(); }
  const T* grad() const { return grad_->data(); }
  const std::vector<T>& grad_vec() const { return *grad_; }

  void zero_grad() {
    if (grad_) std::fill(grad_->begin(), grad_->end(), T(0));
  }

  std::shared_ptr<std::vector<T>> data_buf() const { return data_; }
  std::shared_ptr<std::vector<T>> grad_buf() const { return grad_; }

  /// Deep value copy with no grad buffer and no tape node.
  TensorT detached_copy() const {
    TensorT t;
    t.shape_ = shape_;
    t.data_ = std::make_shared<std::vector<T>>(*data_);
    return t;
  }

  /// Same-storage view under a different shape (no tape node).
  TensorT reshaped_view(Shape new_shape) const {
    if (shape_numel(new_shape) != numel())
      throw ShapeError(strf("reshape %s -> %s changes element count",
                            shape_str(shape_).c_str(), shape_str(new_shape).c_str()));
    TensorT t;
    t.shape_ = std::move(new_shape);
    t.data_ = data_;
    return t;
  }

  std::shared_ptr<Node<T>> node;

 private:
  size_t idx4(int n, int c, int h, int w) const {
    return ((static_cast<size_t>(n) * shape_[1] + c) * shape_[2] + h) * shape_[3] + w;
  }

  Shape shape_;
  std::shared_ptr<std::vector<T>> data_;
  std::shared_ptr<std::vector<T>> grad_;
};

using Tensor = TensorT<float>;
using DTensor = TensorT<double>;

namespace detail {

template <typename T>
void check_finite(const TensorT<T>& t, const char* op) {
#ifndef NDEBUG
  for (const T& v : t.vec())
    if (!std::isfinite(static_cast<double>(v)))
      throw NonFiniteError(strf("%s produced a non-finite value", op));
#else
  (void)t;
  (void)op;
#endif
}

/// Wire up the tape node for `out` given its inputs and backward closure.
/// No-op when recording is off or no input carries gradients.
template <typename T, typename Fn>
void record(TensorT<T>& out, std::initializer_list<const TensorT<T>*> inputs, Fn&& backward) {
  if (!grad_enabled) return;
  bool needed = false;
  for (const TensorT<T>* in : inputs)
    if (in->requires_grad()) needed = true;
  if (!needed) return;
  out.set_requires_grad(true);
  auto node = std::make_shared<Node<T>>();
  for (const TensorT<T>* in : inputs)
    if (in->node) node->parents.push_back(in->node);
  node->out_grad = out.grad_buf();
  node->backward = std::forward<Fn>(backward);
  out.node = node;
}

}  // namespace detail

/// Reverse-mode accumulation from a scalar loss. Leaf grads (parameters)
/// accumulate additively across calls; interior grads are reset per call.
template <typename T>
void backward(TensorT<T>& loss) {
  if (loss.numel() != 1)
    throw ShapeError(strf("backward requires a scalar loss, got shape %s",
                          shape_str(loss.shape()).c_str()));
  if (!loss.node)
    throw ValueError("backward: loss was not produced by recorded ops");

  // Iterative postorder DFS over the tape.
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> seen;
  std::vector<std::pair<Node<T>*, size_t>> stack;
  stack.emplace_back(loss.node.get(), 0);
  seen.insert(loss.node.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node<T>* parent = node->parents[next++].get();
      if (seen.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (Node<T>* n : order) std::fill(n->out_grad->begin(), n->out_grad->end(), T(0));
  (*loss.grad_buf())[0] = T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it)
    if ((*it)->backward) (*it)->backward(*(*it)->out_grad);
}

}  // namespace crs
