#include "fundus/autodiff/tensor.hpp"

#include <unordered_set>
#include <utility>

#include "fundus/error.hpp"

namespace fundus::ad {

namespace {
thread_local bool g_grad_enabled = true;
}  // namespace

bool grad_enabled() noexcept { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (int d : shape) {
    if (d < 0) throw Error(ErrorCode::ShapeMismatch, "negative extent in " + shape_str(shape));
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

std::string shape_str(const Shape& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

template <typename T>
BasicTensor<T> BasicTensor<T>::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), T(0), requires_grad);
}

template <typename T>
BasicTensor<T> BasicTensor<T>::full(Shape shape, T value, bool requires_grad) {
  auto node = std::make_shared<Node<T>>();
  node->value.assign(shape_numel(shape), value);
  node->shape = std::move(shape);
  node->requires_grad = requires_grad;
  return BasicTensor(std::move(node));
}

template <typename T>
BasicTensor<T> BasicTensor<T>::from(Shape shape, std::vector<T> values, bool requires_grad) {
  return from_buffer(std::move(shape), Buffer<T>(values.begin(), values.end()), requires_grad);
}

template <typename T>
BasicTensor<T> BasicTensor<T>::from_buffer(Shape shape, Buffer<T> values, bool requires_grad) {
  if (values.size() != shape_numel(shape)) {
    throw Error(ErrorCode::ShapeMismatch, std::to_string(values.size()) +
                                              " values do not fill shape " + shape_str(shape));
  }
  auto node = std::make_shared<Node<T>>();
  node->shape = std::move(shape);
  node->value = std::move(values);
  node->requires_grad = requires_grad;
  return BasicTensor(std::move(node));
}

template <typename T>
T BasicTensor<T>::item() const {
  if (numel() != 1) {
    throw Error(ErrorCode::ShapeMismatch, "item() on tensor of shape " + shape_str(shape()));
  }
  return node_->value.front();
}

template <typename T>
BasicTensor<T> BasicTensor<T>::detach() const {
  return from_buffer(node_->shape, node_->value, false);
}

template <typename T>
BasicTensor<T> BasicTensor<T>::clone() const {
  BasicTensor out = from_buffer(node_->shape, node_->value, node_->requires_grad);
  out.set_frozen(node_->frozen);
  return out;
}

template <typename T>
std::vector<Node<T>*> topological_order(const BasicTensor<T>& root) {
  std::vector<Node<T>*> order;
  if (!root.defined() || !root.requires_grad()) return order;
  std::unordered_set<Node<T>*> visited;
  // Iterative post-order DFS; deep U-Net graphs would otherwise recurse deeply.
  std::vector<std::pair<Node<T>*, std::size_t>> stack{{&root.node(), 0}};
  visited.insert(&root.node());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node<T>* parent = node->parents[next++].get();
      if (parent->requires_grad && visited.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  return order;
}

template <typename T>
void backward(const BasicTensor<T>& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw Error(ErrorCode::NonScalarLoss,
                "backward needs a single-element loss, got " +
                    (loss.defined() ? shape_str(loss.shape()) : std::string("undefined")));
  }
  if (!loss.requires_grad()) return;
  const auto order = topological_order(loss);
  loss.node().ensure_grad()[0] += T(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>& node = **it;
    if (node.backward_fn && !node.grad.empty()) node.backward_fn(node);
  }
}

template class BasicTensor<float>;
template class BasicTensor<double>;
template std::vector<Node<float>*> topological_order(const BasicTensor<float>&);
template std::vector<Node<double>*> topological_order(const BasicTensor<double>&);
template void backward(const BasicTensor<float>&);
template void backward(const BasicTensor<double>&);

}  // namespace fundus::ad
