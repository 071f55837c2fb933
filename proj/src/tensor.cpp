#include "fewshot/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

#include "fewshot/error.hpp"

namespace fewshot {

namespace {
thread_local bool g_grad_enabled = true;

bool all_finite(std::span<const Real> values) {
  return std::all_of(values.begin(), values.end(),
                     [](Real v) { return std::isfinite(v); });
}
}  // namespace

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::span<Real> TensorImpl::grad_buffer() {
  if (grad.size() != data.size()) grad.assign(data.size(), Real(0));
  return grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), Real(0), requires_grad);
}

Tensor Tensor::full(Shape shape, Real value, bool requires_grad) {
  const std::size_t n = shape_numel(shape);
  return from(std::move(shape), std::vector<Real>(n, value), requires_grad);
}

Tensor Tensor::from(Shape shape, std::vector<Real> values, bool requires_grad) {
  for (std::size_t d : shape) {
    if (d == 0) throw DimensionError("tensor extents must be positive, got " + shape_str(shape));
  }
  if (shape_numel(shape) != values.size()) {
    throw DimensionError("shape " + shape_str(shape) + " does not hold " +
                         std::to_string(values.size()) + " values");
  }
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(values);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::scalar(Real value, bool requires_grad) {
  return from({1}, {value}, requires_grad);
}

const Shape& Tensor::shape() const { return impl_->shape; }

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= impl_->shape.size()) {
    throw ContractError("axis " + std::to_string(axis) + " out of range for shape " +
                        shape_str(impl_->shape));
  }
  return impl_->shape[axis];
}

std::size_t Tensor::numel() const { return impl_->data.size(); }

std::span<const Real> Tensor::data() const { return impl_->data; }
std::span<Real> Tensor::mutable_data() { return impl_->data; }

Real Tensor::item() const {
  if (numel() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape()));
  return impl_->data[0];
}

Real Tensor::at(std::initializer_list<std::size_t> index) const {
  const Shape& s = shape();
  if (index.size() != s.size()) throw ContractError("index rank mismatch");
  std::size_t flat = 0;
  std::size_t axis = 0;
  for (std::size_t i : index) {
    if (i >= s[axis]) throw ContractError("index out of range");
    flat = flat * s[axis] + i;
    ++axis;
  }
  return impl_->data[flat];
}

bool Tensor::requires_grad() const { return impl_->requires_grad; }
void Tensor::set_requires_grad(bool flag) { impl_->requires_grad = flag; }
bool Tensor::has_grad() const { return !impl_->grad.empty(); }
std::span<const Real> Tensor::grad() const { return impl_->grad; }
std::span<Real> Tensor::mutable_grad() { return impl_->grad_buffer(); }

void Tensor::zero_grad() {
  std::fill(impl_->grad.begin(), impl_->grad.end(), Real(0));
}

bool Tensor::is_leaf() const { return impl_->producer == nullptr; }
const Node* Tensor::producer() const { return impl_->producer.get(); }

Tensor Tensor::detach() const {
  return from(impl_->shape, impl_->data, false);
}

void Tensor::backward() const {
  if (!defined() || numel() != 1) {
    throw ContractError("backward() needs a scalar loss, got shape " +
                        (defined() ? shape_str(shape()) : std::string("<undefined>")));
  }
  Graph::trace(*this).backward();
}

Graph Graph::trace(const Tensor& root) {
  Graph g;
  if (!root.defined()) return g;
  // Iterative post-order DFS; a tensor is emitted after all of its inputs.
  std::unordered_set<const TensorImpl*> visited;
  std::vector<std::pair<std::shared_ptr<TensorImpl>, std::size_t>> stack;
  stack.emplace_back(root.impl(), 0);
  visited.insert(root.impl().get());
  while (!stack.empty()) {
    auto& [impl, next] = stack.back();
    const Node* node = impl->producer.get();
    if (node != nullptr && next < node->inputs.size()) {
      const auto& child = node->inputs[next++];
      if (visited.insert(child.get()).second) stack.emplace_back(child, 0);
      continue;
    }
    g.order_.push_back(impl);
    stack.pop_back();
  }
  return g;
}

std::size_t Graph::node_count() const {
  return static_cast<std::size_t>(
      std::count_if(order_.begin(), order_.end(),
                    [](const auto& t) { return t->producer != nullptr; }));
}

void Graph::backward() const {
  if (order_.empty()) return;
  for (const auto& t : order_) {
    if (t->producer) std::fill(t->grad.begin(), t->grad.end(), Real(0));
  }
  const auto& root = order_.back();
  if (!root->requires_grad) return;
  root->grad_buffer()[0] += Real(1);
  for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
    const TensorImpl& t = **it;
    if (t.producer && !t.grad.empty()) t.producer->backward(t);
  }
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

Tensor make_result(Shape shape, std::vector<Real> values,
                   std::initializer_list<const Tensor*> inputs,
                   const char* name,
                   std::function<void(const TensorImpl& out)> backward) {
  std::vector<Tensor> handles;
  handles.reserve(inputs.size());
  for (const Tensor* t : inputs) {
    if (t != nullptr && t->defined()) handles.push_back(*t);
  }
  return make_result(std::move(shape), std::move(values),
                     std::span<const Tensor>(handles), name, std::move(backward));
}

Tensor make_result(Shape shape, std::vector<Real> values,
                   std::span<const Tensor> inputs, const char* name,
                   std::function<void(const TensorImpl& out)> backward) {
  if (!all_finite(values)) {
    const bool inputs_finite = std::all_of(inputs.begin(), inputs.end(), [](const Tensor& t) {
      return all_finite(t.data());
    });
    if (inputs_finite) {
      throw NumericalError(std::string("non-finite output from ") + name +
                           " on finite inputs");
    }
  }
  Tensor out = Tensor::from(std::move(shape), std::move(values), false);
  if (!g_grad_enabled) return out;
  const bool needs_grad = std::any_of(inputs.begin(), inputs.end(),
                                      [](const Tensor& t) { return t.requires_grad(); });
  if (!needs_grad) return out;
  auto node = std::make_shared<Node>();
  node->name = name;
  node->inputs.reserve(inputs.size());
  for (const Tensor& t : inputs) node->inputs.push_back(t.impl());
  node->backward = std::move(backward);
  out.impl()->producer = std::move(node);
  out.impl()->requires_grad = true;
  return out;
}

}  // namespace fewshot
