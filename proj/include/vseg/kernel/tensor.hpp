#pragma once

#include <algorithm>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "vseg/errors.hpp"

namespace vseg {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

template <class T>
class Tape;

namespace detail {

template <class T>
struct TensorNode {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;  // empty until first touched by backward
  bool requires_grad = false;
  const Tape<T>* producer_tape = nullptr;
  std::size_t producer_index = 0;

  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), T(0));
  }
};

}  // namespace detail

/// Reference-counted handle to an N-d array. Values are C-ordered. Copies of
/// a handle alias the same storage; ops never mutate their inputs.
template <class T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  explicit Tensor(Shape shape, T fill = T(0), bool requires_grad = false)
      : node_(std::make_shared<detail::TensorNode<T>>()) {
    node_->value.assign(vseg::numel(shape), fill);
    node_->shape = std::move(shape);
    node_->requires_grad = requires_grad;
  }

  Tensor(Shape shape, std::vector<T> values, bool requires_grad = false)
      : node_(std::make_shared<detail::TensorNode<T>>()) {
    if (values.size() != vseg::numel(shape)) {
      throw ShapeError("tensor values length " + std::to_string(values.size()) +
                       " does not match shape " + to_string(shape));
    }
    node_->shape = std::move(shape);
    node_->value = std::move(values);
    node_->requires_grad = requires_grad;
  }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t numel() const { return node_->value.size(); }

  const std::vector<T>& values() const { return node_->value; }
  /// Mutable access for leaf construction (parameters, inputs, optimizer).
  std::vector<T>& mutable_values() { return node_->value; }
  T item() const {
    if (numel() != 1) throw ShapeError("item() on non-scalar tensor " + to_string(shape()));
    return node_->value[0];
  }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool flag) { node_->requires_grad = flag; }

  /// Gradient buffer; all zeros if backward never reached this tensor.
  const std::vector<T>& grad() const {
    node_->ensure_grad();
    return node_->grad;
  }
  std::vector<T>& mutable_grad() {
    node_->ensure_grad();
    return node_->grad;
  }
  void zero_grad() { node_->grad.assign(node_->value.size(), T(0)); }

  /// Deep copy detached from any tape.
  Tensor clone() const { return Tensor(shape(), values(), requires_grad()); }

  bool same_node(const Tensor& other) const { return node_ == other.node_; }

  std::shared_ptr<detail::TensorNode<T>> node() const { return node_; }

 private:
  std::shared_ptr<detail::TensorNode<T>> node_;
};

/// Ordered record of differentiable operations. Records are appended in
/// program order, which is a valid topological order by construction.
template <class T>
class Tape {
 public:
  using Node = detail::TensorNode<T>;
  using NodePtr = std::shared_ptr<Node>;

  struct Record {
    std::string op;
    std::vector<NodePtr> inputs;
    NodePtr output;
    std::function<void()> backward;
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// True when an op over `inputs` must be recorded.
  template <class... Ts>
  bool wants(const Ts&... inputs) const {
    return (... || inputs.requires_grad());
  }

  void record(std::string op, std::vector<NodePtr> inputs, const Tensor<T>& output,
              std::function<void()> backward) {
    auto node = output.node();
    node->requires_grad = true;
    node->producer_tape = this;
    node->producer_index = records_.size();
    records_.push_back(Record{std::move(op), std::move(inputs), node, std::move(backward)});
  }

  std::size_t size() const { return records_.size(); }
  const std::vector<Record>& records() const { return records_; }
  void clear() { records_.clear(); }

 private:
  std::vector<Record> records_;
};

/// Reverse-mode sweep from a scalar `loss`. Gradients of every tensor that
/// participates on the tape are overwritten (not accumulated across calls).
template <class T>
void backward(const Tensor<T>& loss, const Tape<T>& tape) {
  if (loss.numel() != 1) throw ShapeError("backward: loss must be scalar, got " + to_string(loss.shape()));
  auto loss_node = loss.node();
  if (loss_node->producer_tape != &tape) {
    throw GraphError("backward: loss was not produced on this tape");
  }
  const auto& records = tape.records();
  const std::size_t last = loss_node->producer_index;
  if (last >= records.size() || records[last].output != loss_node) {
    throw GraphError("backward: loss producer record missing from tape");
  }
  for (std::size_t i = 0; i <= last; ++i) {
    const auto& rec = records[i];
    for (const auto& in : rec.inputs) {
      if (in->producer_tape != nullptr) {
        if (in->producer_tape != &tape) throw GraphError("backward: input of '" + rec.op + "' produced on another tape");
        if (in->producer_index >= i) throw GraphError("backward: cycle or out-of-order producer at '" + rec.op + "'");
      }
      if (in->requires_grad) in->grad.assign(in->value.size(), T(0));
    }
    rec.output->grad.assign(rec.output->value.size(), T(0));
  }
  loss_node->grad[0] = T(1);
  for (std::size_t i = last + 1; i-- > 0;) {
    records[i].backward();
  }
}

}  // namespace vseg
