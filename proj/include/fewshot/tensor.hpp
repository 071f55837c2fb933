#pragma once
// Dense row-major tensor with reverse-mode automatic differentiation.
//
// A Tensor is a cheap handle to shared storage. Operations (see ops.hpp)
// record a node on their output whenever an input requires a gradient and
// gradient recording is enabled on the calling thread, so the graph is rebuilt
// on every forward pass. `Tensor::backward` traces the recorded graph from a
// scalar loss, orders it topologically and runs every node's backward rule
// once. Leaf gradients accumulate across calls until `zero_grad`; gradients
// of intermediate tensors are reset at the start of each pass.

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "fewshot/real.hpp"

namespace fewshot {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

struct TensorImpl;

// One recorded operation. `backward` reads the output gradient from `out`
// and accumulates into the gradients of `inputs`.
struct Node {
  const char* name = "";
  std::vector<std::shared_ptr<TensorImpl>> inputs;
  std::function<void(const TensorImpl& out)> backward;
};

struct TensorImpl {
  Shape shape;
  std::vector<Real> data;
  std::vector<Real> grad;  // empty until a backward pass touches it
  bool requires_grad = false;
  std::shared_ptr<Node> producer;  // null for leaves

  // Gradient buffer, allocated as zeros on first use.
  std::span<Real> grad_buffer();
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, Real value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<Real> values,
                     bool requires_grad = false);
  static Tensor scalar(Real value, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t ndim() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;

  std::span<const Real> data() const;
  std::span<Real> mutable_data();
  Real item() const;
  Real at(std::initializer_list<std::size_t> index) const;

  bool requires_grad() const;
  void set_requires_grad(bool flag);
  bool has_grad() const;
  std::span<const Real> grad() const;
  std::span<Real> mutable_grad();
  void zero_grad();

  bool is_leaf() const;
  const Node* producer() const;

  // Same values, no history, independent storage.
  Tensor detach() const;
  Tensor clone() const { return detach(); }

  // Reverse-mode pass from this scalar; throws ContractError otherwise.
  void backward() const;

  const std::shared_ptr<TensorImpl>& impl() const { return impl_; }

 private:
  std::shared_ptr<TensorImpl> impl_;
};

// The recorded graph reachable from a root tensor, in topological order
// (inputs before the tensors they produce).
class Graph {
 public:
  static Graph trace(const Tensor& root);

  std::span<const std::shared_ptr<TensorImpl>> order() const { return order_; }
  std::size_t node_count() const;

  // Seeds d(root)/d(root) = 1 and propagates to every reachable input.
  void backward() const;

 private:
  std::vector<std::shared_ptr<TensorImpl>> order_;
};

// True when operations on this thread record graph nodes.
bool grad_enabled();

// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

// Builds an op result. When any input requires a gradient (and recording is
// enabled) the result gets a producer node running `backward`.
Tensor make_result(Shape shape, std::vector<Real> values,
                   std::initializer_list<const Tensor*> inputs,
                   const char* name,
                   std::function<void(const TensorImpl& out)> backward);
Tensor make_result(Shape shape, std::vector<Real> values,
                   std::span<const Tensor> inputs, const char* name,
                   std::function<void(const TensorImpl& out)> backward);

}  // namespace fewshot
