#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace mugen {

/// Thrown when tensor extents are incompatible with an operation.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Thrown when a caller violates an operation's precondition.
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Thrown when a non-finite value is produced; carries the producing op.
class NumericalError : public std::runtime_error {
 public:
  NumericalError(std::string op, const std::string& what)
      : std::runtime_error(what), op_(std::move(op)) {}
  const std::string& op() const noexcept { return op_; }

 private:
  std::string op_;
};

using Shape = std::vector<std::size_t>;

inline std::size_t element_count(const Shape& dims) {
  std::size_t n = 1;
  for (auto d : dims) n *= d;
  return n;
}

inline std::string shape_string(const Shape& dims) {
  std::string s = "[";
  for (std::size_t i = 0; i < dims.size(); ++i) {
    if (i) s += "x";
    s += std::to_string(dims[i]);
  }
  return s + "]";
}

namespace detail {
inline std::atomic<bool>& finite_check_flag() {
  static std::atomic<bool> flag{false};
  return flag;
}
}  // namespace detail

/// Debug mode: every op checks its output for NaN/Inf and throws NumericalError.
inline void set_finite_checks(bool enabled) { detail::finite_check_flag().store(enabled); }
inline bool finite_checks_enabled() { return detail::finite_check_flag().load(); }

template <typename T>
struct Node;

template <typename T>
using NodePtr = std::shared_ptr<Node<T>>;

/// Storage plus graph linkage for one tensor value.
template <typename T>
struct Node {
  Shape dims;
  std::vector<T> data;
  std::vector<T> grad;
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<NodePtr<T>> inputs;
  std::function<void(Node&)> backward;

  std::span<T> grad_buffer() {
    if (grad.size() != data.size()) grad.assign(data.size(), T(0));
    return grad;
  }
};

/// Dense row-major tensor handle. Copies share storage; ops never mutate inputs.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  explicit Tensor(Shape dims, T fill = T(0), bool requires_grad = false)
      : node_(std::make_shared<Node<T>>()) {
    validate(dims);
    node_->data.assign(element_count(dims), fill);
    node_->dims = std::move(dims);
    node_->requires_grad = requires_grad;
  }

  Tensor(Shape dims, std::vector<T> values, bool requires_grad = false)
      : node_(std::make_shared<Node<T>>()) {
    validate(dims);
    if (element_count(dims) != values.size()) {
      throw ShapeError("tensor " + shape_string(dims) + " needs " +
                       std::to_string(element_count(dims)) + " values, got " +
                       std::to_string(values.size()));
    }
    node_->dims = std::move(dims);
    node_->data = std::move(values);
    node_->requires_grad = requires_grad;
  }

  static Tensor scalar(T v, bool requires_grad = false) {
    return Tensor(Shape{1}, std::vector<T>{v}, requires_grad);
  }

  explicit Tensor(NodePtr<T> node) : node_(std::move(node)) {}

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& dims() const { return node_->dims; }
  std::size_t dim(std::size_t i) const { return node_->dims.at(i); }
  std::size_t rank() const { return node_->dims.size(); }
  std::size_t numel() const { return node_->data.size(); }

  std::span<T> data() { return node_->data; }
  std::span<const T> data() const { return node_->data; }
  std::vector<T>& values() { return node_->data; }
  const std::vector<T>& values() const { return node_->data; }

  bool has_grad() const { return node_->grad.size() == node_->data.size(); }
  std::span<T> grad() { return node_->grad_buffer(); }
  std::span<const T> grad() const { return node_->grad; }
  void zero_grad() {
    if (has_grad()) std::fill(node_->grad.begin(), node_->grad.end(), T(0));
  }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }
  const char* op() const { return node_->op; }

  T item() const {
    if (numel() != 1) throw ContractError("item() on tensor " + shape_string(dims()));
    return node_->data[0];
  }
  T operator[](std::size_t i) const { return node_->data[i]; }

  /// Value copy with no graph history.
  Tensor detach(bool requires_grad = false) const {
    return Tensor(node_->dims, node_->data, requires_grad);
  }

  Node<T>* node() const { return node_.get(); }
  const NodePtr<T>& node_ptr() const { return node_; }

 private:
  static void validate(const Shape& dims) {
    if (dims.empty()) throw ShapeError("tensor rank must be >= 1");
    for (auto d : dims) {
      if (d == 0) throw ShapeError("tensor extents must be positive, got " + shape_string(dims));
    }
  }

  NodePtr<T> node_;
};

/// Converts element type (used to move data between f32 and f64 models).
template <typename To, typename From>
Tensor<To> cast(const Tensor<From>& x) {
  std::vector<To> v(x.values().begin(), x.values().end());
  return Tensor<To>(x.dims(), std::move(v));
}

namespace detail {

template <typename T>
bool all_finite(std::span<const T> xs) {
  return std::all_of(xs.begin(), xs.end(), [](T v) { return std::isfinite(v); });
}

/// Wraps a freshly computed value as an op output and links it into the graph when any
/// input requires a gradient.
template <typename T>
Tensor<T> make_result(Shape dims, std::vector<T> data, const char* op,
                      std::initializer_list<Tensor<T>> inputs,
                      std::function<void(Node<T>&)> backward) {
  auto node = std::make_shared<Node<T>>();
  node->dims = std::move(dims);
  node->data = std::move(data);
  node->op = op;
  if (finite_checks_enabled() && !all_finite<T>(node->data)) {
    throw NumericalError(op, std::string("non-finite output from op '") + op + "'");
  }
  bool needs = false;
  for (const auto& in : inputs) needs = needs || (in.defined() && in.requires_grad());
  if (needs) {
    node->requires_grad = true;
    node->inputs.reserve(inputs.size());
    for (const auto& in : inputs) node->inputs.push_back(in.node_ptr());
    node->backward = std::move(backward);
  }
  return Tensor<T>(std::move(node));
}

/// Gradient slot of input i, or an empty span if that input does not need one.
template <typename T>
std::span<T> input_grad(Node<T>& self, std::size_t i) {
  auto& in = self.inputs[i];
  if (!in || !in->requires_grad) return {};
  return in->grad_buffer();
}

template <typename T>
const std::vector<T>& input_data(const Node<T>& self, std::size_t i) {
  return self.inputs[i]->data;
}

}  // namespace detail
}  // namespace mugen
