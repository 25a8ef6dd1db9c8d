#pragma once

#include <algorithm>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace mambapupil {

using Shape = std::vector<int>;

inline std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (int d : shape) n *= static_cast<std::size_t>(d);
  return n;
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ')';
  return os.str();
}

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Recording switch for the backward graph. Thread-local so that replicas on
/// different threads do not interfere.
class GradMode {
 public:
  static bool enabled() { return flag(); }
  static void set(bool on) { flag() = on; }

 private:
  static bool& flag() {
    thread_local bool on = true;
    return on;
  }
};

class NoGradGuard {
 public:
  NoGradGuard() : prev_(GradMode::enabled()) { GradMode::set(false); }
  ~NoGradGuard() { GradMode::set(prev_); }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

template <typename T>
struct TensorNode {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // allocated lazily
  bool requires_grad = false;
  std::vector<std::shared_ptr<TensorNode>> inputs;
  // Propagates this node's grad into its inputs.
  std::function<void(TensorNode&)> backward;

  std::vector<T>& ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), T(0));
    return grad;
  }
  bool wants_grad() const { return requires_grad; }
};

/// Dense row-major tensor handle. Copies share storage (like a reference);
/// use clone() for a deep copy.
template <typename T>
class Tensor {
 public:
  using value_type = T;
  using Node = TensorNode<T>;

  Tensor() = default;

  explicit Tensor(Shape shape, bool requires_grad = false)
      : impl_(std::make_shared<Node>()) {
    validate(shape);
    impl_->data.assign(shape_numel(shape), T(0));
    impl_->shape = std::move(shape);
    impl_->requires_grad = requires_grad;
  }

  Tensor(Shape shape, std::vector<T> values, bool requires_grad = false)
      : impl_(std::make_shared<Node>()) {
    validate(shape);
    if (values.size() != shape_numel(shape)) {
      throw ShapeError("tensor data length " + std::to_string(values.size()) +
                       " does not match shape " + shape_str(shape));
    }
    impl_->data = std::move(values);
    impl_->shape = std::move(shape);
    impl_->requires_grad = requires_grad;
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    return Tensor(std::move(shape), requires_grad);
  }
  static Tensor full(Shape shape, T value, bool requires_grad = false) {
    Tensor t(std::move(shape), requires_grad);
    std::fill(t.impl_->data.begin(), t.impl_->data.end(), value);
    return t;
  }
  static Tensor scalar(T value, bool requires_grad = false) {
    return Tensor(Shape{1}, std::vector<T>{value}, requires_grad);
  }

  bool defined() const { return static_cast<bool>(impl_); }
  const Shape& shape() const { return impl_->shape; }
  int rank() const { return static_cast<int>(impl_->shape.size()); }
  int dim(int axis) const {
    if (axis < 0) axis += rank();
    return impl_->shape.at(static_cast<std::size_t>(axis));
  }
  std::size_t numel() const { return impl_->data.size(); }

  std::span<T> data() { return impl_->data; }
  std::span<const T> data() const { return impl_->data; }
  std::vector<T>& values() { return impl_->data; }
  const std::vector<T>& values() const { return impl_->data; }

  /// Gradient buffer; zero-filled on first access.
  std::span<T> grad() { return impl_->ensure_grad(); }
  std::span<const T> grad() const { return impl_->ensure_grad(); }
  bool has_grad() const { return impl_->grad.size() == impl_->data.size(); }
  void zero_grad() { impl_->grad.assign(impl_->data.size(), T(0)); }

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool on) { impl_->requires_grad = on; }

  T item() const {
    if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
    return impl_->data[0];
  }
  T& operator[](std::size_t i) { return impl_->data[i]; }
  const T& operator[](std::size_t i) const { return impl_->data[i]; }

  Tensor clone() const { return Tensor(impl_->shape, impl_->data, false); }

  Node* node() const { return impl_.get(); }
  const std::shared_ptr<Node>& shared() const { return impl_; }

 private:
  static void validate(const Shape& shape) {
    if (shape.empty()) throw ShapeError("tensor rank must be at least 1");
    for (int d : shape) {
      if (d <= 0) throw ShapeError("tensor dims must be positive, got " + shape_str(shape));
    }
  }

  std::shared_ptr<Node> impl_;
};

namespace detail {

/// Creates an output tensor wired to `inputs` when gradient recording applies.
template <typename T>
Tensor<T> make_result(Shape shape, std::initializer_list<const Tensor<T>*> inputs) {
  Tensor<T> out(std::move(shape));
  if (!GradMode::enabled()) return out;
  bool any = false;
  for (const Tensor<T>* in : inputs) any = any || in->requires_grad();
  if (!any) return out;
  out.set_requires_grad(true);
  for (const Tensor<T>* in : inputs) out.node()->inputs.push_back(in->shared());
  return out;
}

template <typename T>
Tensor<T> make_result(Shape shape, const std::vector<Tensor<T>>& inputs) {
  Tensor<T> out(std::move(shape));
  if (!GradMode::enabled()) return out;
  bool any = false;
  for (const auto& in : inputs) any = any || in.requires_grad();
  if (!any) return out;
  out.set_requires_grad(true);
  for (const auto& in : inputs) out.node()->inputs.push_back(in.shared());
  return out;
}

}  // namespace detail

/// Reverse sweep from a scalar. Populates .grad of every reachable tensor
/// that requires it; intermediate graph records are released afterwards.
template <typename T>
void backward(const Tensor<T>& loss) {
  if (loss.numel() != 1) {
    throw ShapeError("backward() requires a scalar, got shape " + shape_str(loss.shape()));
  }
  if (!loss.requires_grad()) return;

  using Node = TensorNode<T>;
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{loss.node(), 0}};
  seen.insert(loss.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node* child = node->inputs[next++].get();
      if (child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  loss.node()->ensure_grad()[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    if (node->backward) {
      node->ensure_grad();
      node->backward(*node);
    }
  }
  for (Node* node : order) {
    if (!node->inputs.empty()) {
      node->backward = nullptr;
      node->inputs.clear();
    }
  }
}

}  // namespace mambapupil
