#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <new>
#include <span>
#include <string>
#include <vector>

namespace fundus::ad {

using Shape = std::vector<int>;

/// Allocator with a fixed 64-byte alignment, so vectorized kernels take the
/// same path on every run regardless of where the heap places a buffer.
template <typename T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlignment{64};

  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlignment)); }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlignment); }

  template <typename U>
  bool operator==(const AlignedAllocator<U>&) const noexcept { return true; }
};

template <typename T>
using Buffer = std::vector<T, AlignedAllocator<T>>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

template <typename T>
struct Node {
  Shape shape;
  Buffer<T> value;
  /// Empty until a gradient reaches this node.
  Buffer<T> grad;
  bool requires_grad = false;
  bool frozen = false;
  std::vector<std::shared_ptr<Node>> parents;
  /// Propagates `self.grad` into the parents' gradients.
  std::function<void(Node& self)> backward_fn;

  Buffer<T>& ensure_grad() {
    if (grad.empty()) grad.assign(value.size(), T(0));
    return grad;
  }
};

/// Dense tensor handle taking part in a reverse-mode graph.
///
/// Copies share the underlying node. Values are stored contiguously in
/// row-major order; image batches use [N, C, H, W]. `T` is float for training
/// and double for gradient checking.
template <typename T>
class BasicTensor {
 public:
  BasicTensor() = default;
  explicit BasicTensor(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

  static BasicTensor zeros(Shape shape, bool requires_grad = false);
  static BasicTensor full(Shape shape, T value, bool requires_grad = false);
  static BasicTensor from(Shape shape, std::vector<T> values, bool requires_grad = false);
  static BasicTensor from_buffer(Shape shape, Buffer<T> values, bool requires_grad = false);

  bool defined() const noexcept { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t numel() const { return node_->value.size(); }

  std::span<T> values() { return node_->value; }
  std::span<const T> values() const { return node_->value; }
  T item() const;

  bool has_grad() const { return !node_->grad.empty(); }
  /// Gradient, or an empty span when none has been accumulated.
  std::span<const T> grad() const { return node_->grad; }
  std::span<T> mutable_grad() { return node_->ensure_grad(); }
  void zero_grad() { node_->grad.clear(); }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool flag) { node_->requires_grad = flag; }
  bool frozen() const { return node_->frozen; }
  void set_frozen(bool flag) { node_->frozen = flag; }

  /// Leaf copy with the same values and no graph history.
  BasicTensor detach() const;
  /// Deep copy preserving requires_grad/frozen, without gradient.
  BasicTensor clone() const;

  Node<T>& node() const { return *node_; }
  const std::shared_ptr<Node<T>>& node_ptr() const { return node_; }

 private:
  std::shared_ptr<Node<T>> node_;
};

using Tensor = BasicTensor<float>;
using TensorD = BasicTensor<double>;

/// True unless a NoGradGuard is alive on this thread.
bool grad_enabled() noexcept;

/// Disables graph recording on this thread for its lifetime; ops return
/// leaves that do not require gradients.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

/// Nodes reachable from `root` that require gradients, parents before children.
template <typename T>
std::vector<Node<T>*> topological_order(const BasicTensor<T>& root);

/// Seeds d(loss)/d(loss) = 1 and accumulates gradients into every reachable
/// node that requires them. Contributions along multiple paths are summed,
/// and leaf gradients accumulate across calls until zero_grad(). Throws
/// NonScalarLoss unless `loss` has exactly one element.
template <typename T>
void backward(const BasicTensor<T>& loss);

extern template class BasicTensor<float>;
extern template class BasicTensor<double>;

}  // namespace fundus::ad
