#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace pcs {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class Tensor;

/// One recorded primitive. The closure receives the gradient of the node's
/// output and accumulates into the gradients of its inputs.
struct Node {
  std::string op;
  std::vector<Tensor> inputs;
  std::function<void(std::span<const float>)> backward;
  bool consumed = false;
};

struct TensorImpl {
  Shape shape;
  std::vector<float> data;
  std::vector<float> grad;  // empty until first accumulation
  bool requires_grad = false;
  std::shared_ptr<Node> grad_fn;
};

/// Dense row-major float32 array with an optional gradient buffer.
///
/// Tensor is a shared handle: copies alias the same storage, which is how
/// parameters are referenced from the autograd graph and from the optimizer.
/// Use clone() for a deep copy.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, float fill = 0.0f);
  Tensor(Shape shape, std::vector<float> data);

  static Tensor scalar(float value);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t ndim() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;

  std::span<const float> data() const;
  std::span<float> mutable_data();
  float item() const;
  float at(std::size_t flat_index) const { return data()[flat_index]; }

  bool requires_grad() const;
  Tensor& set_requires_grad(bool flag);

  bool has_grad() const;
  std::span<const float> grad() const;
  /// Gradient buffer, allocated as zeros on first use.
  std::span<float> grad_buffer();
  void clear_grad();

  const std::shared_ptr<Node>& grad_fn() const;

  /// Deep copy of the values, detached from any graph, requires_grad off.
  Tensor clone() const;
  /// Same storage semantics as clone(); named for intent at call sites.
  Tensor detach() const { return clone(); }

  bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }
  TensorImpl* impl() const { return impl_.get(); }

 private:
  std::shared_ptr<TensorImpl> impl_;
};

/// Disables graph recording for its lifetime (thread local).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

/// Builds an op result. When recording is on and any input requires a
/// gradient, the result carries a graph node with the given closure.
Tensor make_result(Shape shape, std::vector<float> data, std::string op,
                   std::vector<Tensor> inputs,
                   std::function<void(std::span<const float>)> backward);

/// Reverse-mode sweep from a scalar root. Every node reachable from the root
/// is visited exactly once and then released; the graph cannot be replayed.
void backward(const Tensor& root);

/// Throws NumericError naming `what` if any value is NaN or Inf.
void check_finite(std::span<const float> values, const std::string& what);

}  // namespace pcs
