#include "pcs/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

#include "pcs/errors.hpp"

namespace pcs {

namespace {
thread_local bool g_grad_enabled = true;
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, float fill) : impl_(std::make_shared<TensorImpl>()) {
  for (auto d : shape) {
    if (d == 0) throw ShapeError("tensor extents must be positive, got " + shape_str(shape));
  }
  impl_->data.assign(shape_numel(shape), fill);
  impl_->shape = std::move(shape);
}

Tensor::Tensor(Shape shape, std::vector<float> data) : impl_(std::make_shared<TensorImpl>()) {
  for (auto d : shape) {
    if (d == 0) throw ShapeError("tensor extents must be positive, got " + shape_str(shape));
  }
  if (shape_numel(shape) != data.size()) {
    throw ShapeError("shape " + shape_str(shape) + " needs " + std::to_string(shape_numel(shape)) +
                     " values, got " + std::to_string(data.size()));
  }
  impl_->shape = std::move(shape);
  impl_->data = std::move(data);
}

Tensor Tensor::scalar(float value) { return Tensor(Shape{1}, std::vector<float>{value}); }

const Shape& Tensor::shape() const { return impl_->shape; }

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= impl_->shape.size()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for " + shape_str(impl_->shape));
  }
  return impl_->shape[axis];
}

std::size_t Tensor::numel() const { return impl_->data.size(); }

std::span<const float> Tensor::data() const { return impl_->data; }
std::span<float> Tensor::mutable_data() { return impl_->data; }

float Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
  return impl_->data[0];
}

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool flag) {
  impl_->requires_grad = flag;
  return *this;
}

bool Tensor::has_grad() const { return impl_ && !impl_->grad.empty(); }

std::span<const float> Tensor::grad() const { return impl_->grad; }

std::span<float> Tensor::grad_buffer() {
  if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), 0.0f);
  return impl_->grad;
}

void Tensor::clear_grad() {
  impl_->grad.clear();
  impl_->grad.shrink_to_fit();
}

const std::shared_ptr<Node>& Tensor::grad_fn() const { return impl_->grad_fn; }

Tensor Tensor::clone() const {
  Tensor t;
  t.impl_ = std::make_shared<TensorImpl>();
  t.impl_->shape = impl_->shape;
  t.impl_->data = impl_->data;
  return t;
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

bool grad_enabled() { return g_grad_enabled; }

Tensor make_result(Shape shape, std::vector<float> data, std::string op,
                   std::vector<Tensor> inputs,
                   std::function<void(std::span<const float>)> backward_fn) {
  Tensor out(std::move(shape), std::move(data));
  if (!g_grad_enabled) return out;
  const bool any = std::any_of(inputs.begin(), inputs.end(),
                               [](const Tensor& t) { return t.requires_grad(); });
  if (!any) return out;
  auto node = std::make_shared<Node>();
  node->op = std::move(op);
  node->inputs = std::move(inputs);
  node->backward = std::move(backward_fn);
  out.impl()->requires_grad = true;
  out.impl()->grad_fn = std::move(node);
  return out;
}

void backward(const Tensor& root) {
  if (!root.defined() || root.numel() != 1) {
    throw AutogradError("backward() needs a scalar root, got shape " +
                        (root.defined() ? shape_str(root.shape()) : std::string("<undefined>")));
  }
  if (!root.requires_grad()) {
    throw AutogradError("backward() on a tensor that does not require grad");
  }
  TensorImpl* root_impl = root.impl();

  // Iterative post-order DFS; `order` ends up in topological order. Handles
  // are held by value so that releasing a node cannot free a tensor that is
  // still waiting for its gradient.
  std::vector<Tensor> order;
  std::unordered_set<const Node*> visited;
  std::vector<std::pair<Tensor, std::size_t>> stack;
  if (root_impl->grad_fn) {
    if (root_impl->grad_fn->consumed) throw AutogradError("backward() on a consumed graph");
    stack.emplace_back(root, 0);
    visited.insert(root_impl->grad_fn.get());
  }
  while (!stack.empty()) {
    auto& [tensor, next] = stack.back();
    Node* node = tensor.impl()->grad_fn.get();
    if (next < node->inputs.size()) {
      const Tensor& child = node->inputs[next++];
      const Node* child_node = child.impl()->grad_fn.get();
      if (child_node && child.requires_grad() && !visited.count(child_node)) {
        if (child_node->consumed) throw AutogradError("backward() through a consumed graph node");
        visited.insert(child_node);
        stack.emplace_back(child, 0);
      }
    } else {
      order.push_back(std::move(tensor));
      stack.pop_back();
    }
  }

  if (root_impl->grad.empty()) root_impl->grad.assign(1, 0.0f);
  root_impl->grad[0] += 1.0f;
  if (!root_impl->grad_fn) return;

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorImpl* impl = it->impl();
    Node& node = *impl->grad_fn;
    if (!impl->grad.empty()) node.backward(impl->grad);
    node.consumed = true;
    node.backward = nullptr;
    node.inputs.clear();
  }
}

void check_finite(std::span<const float> values, const std::string& what) {
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values[i])) {
      throw NumericError(what + ": non-finite value at index " + std::to_string(i));
    }
  }
}

}  // namespace pcs
