#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

#include "mac/diffcore/array.hpp"
#include "mac/diffcore/parameter.hpp"

namespace mac::diff {

class Tape;

// Handle to a node recorded on a Tape.
class Var {
 public:
  Var() = default;

  bool valid() const noexcept { return tape_ != nullptr; }
  Tape& tape() const { return *tape_; }
  std::size_t id() const noexcept { return id_; }
  const Array& value() const;
  const Shape& shape() const { return value().shape(); }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

// Records primitive ops in execution order and replays them in reverse to
// accumulate gradients. Node ids are assigned in topological order, so a
// descending sweep over ids is a valid reverse topological order.
class Tape {
 public:
  // Called with the node's value and accumulated gradient; pushes
  // contributions to inputs through Tape::grad_sink.
  using BackwardFn = std::function<void(Tape&, const Array& out_value, const Array& out_grad)>;

  explicit Tape(Precision precision = Precision::f32) : precision_(precision) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Precision precision() const noexcept { return precision_; }

  Var constant(Array value);
  // Differentiable input that is not a model parameter.
  Var leaf(Array value);
  // Parameters are recorded once per tape; repeated calls return the same node.
  Var parameter(Parameter& p);

  // Records an op result. `op` names the op in error messages. The backward
  // function is dropped when no input requires a gradient.
  Var record(const char* op, Array value, std::initializer_list<Var> inputs, BackwardFn backward);
  Var record(const char* op, Array value, const std::vector<Var>& inputs, BackwardFn backward);

  const Array& value(Var v) const { return nodes_[v.id_].value; }
  bool requires_grad(Var v) const { return nodes_[v.id_].requires_grad; }
  // Gradient accumulated on v by the last backward pass (zeros if none).
  Array grad(Var v) const;

  // Gradient accumulator for v, allocated on first use; nullptr when v does
  // not require a gradient.
  Array* grad_sink(Var v);

  // Loss must hold exactly one value.
  void backward(Var loss);
  // Seeds root with an arbitrary same-shape gradient.
  void backward(Var root, const Array& seed);

  // Adds each parameter node's gradient into Parameter::grad.
  void accumulate_parameter_gradients() const;
  // (parameter, gradient) for every parameter node that received a gradient,
  // in recording order.
  std::vector<std::pair<Parameter*, Array>> parameter_gradients() const;

  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    Array value;
    Array grad;
    bool requires_grad = false;
    bool has_grad = false;
    Parameter* param = nullptr;
    BackwardFn backward;
  };

  Var push(Node node);
  void check(Var v) const;

  Precision precision_;
  std::deque<Node> nodes_;  // stable references across record()
  std::unordered_map<const Parameter*, std::size_t> param_nodes_;
};

}  // namespace mac::diff
