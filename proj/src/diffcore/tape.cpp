#include "mac/diffcore/tape.hpp"

#include "mac/errors.hpp"

namespace mac::diff {

const Array& Var::value() const {
  if (tape_ == nullptr) throw ContractError("value() on an unbound Var");
  return tape_->value(*this);
}

Var Tape::push(Node node) {
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

void Tape::check(Var v) const {
  if (v.tape_ != this || v.id_ >= nodes_.size()) {
    throw ContractError("Var does not belong to this tape");
  }
}

Var Tape::constant(Array value) {
  Node n;
  value.set_precision(precision_);
  n.value = std::move(value);
  return push(std::move(n));
}

Var Tape::leaf(Array value) {
  Node n;
  value.set_precision(precision_);
  n.value = std::move(value);
  n.requires_grad = true;
  return push(std::move(n));
}

Var Tape::parameter(Parameter& p) {
  if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) return Var(this, it->second);
  Node n;
  n.value = p.value.with_precision(precision_);
  n.requires_grad = true;
  n.param = &p;
  Var v = push(std::move(n));
  param_nodes_.emplace(&p, v.id_);
  return v;
}

Var Tape::record(const char* op, Array value, std::initializer_list<Var> inputs, BackwardFn backward) {
  return record(op, std::move(value), std::vector<Var>(inputs), std::move(backward));
}

Var Tape::record(const char* op, Array value, const std::vector<Var>& inputs, BackwardFn backward) {
  bool any_grad = false;
  for (Var in : inputs) {
    check(in);
    any_grad = any_grad || nodes_[in.id_].requires_grad;
  }
  value.set_precision(precision_);
  if (!value.all_finite()) {
    throw NumericError(std::string("non-finite value produced by ") + op + " with shape " +
                       shape_string(value.shape()));
  }
  Node n;
  n.value = std::move(value);
  n.requires_grad = any_grad;
  if (any_grad) n.backward = std::move(backward);
  return push(std::move(n));
}

Array Tape::grad(Var v) const {
  check(v);
  const Node& n = nodes_[v.id_];
  if (!n.has_grad) return Array(n.value.shape(), precision_);
  return n.grad;
}

Array* Tape::grad_sink(Var v) {
  Node& n = nodes_[v.id_];
  if (!n.requires_grad) return nullptr;
  if (!n.has_grad) {
    n.grad = Array(n.value.shape(), Precision::f64);
    n.has_grad = true;
  }
  return &n.grad;
}

void Tape::backward(Var loss) {
  check(loss);
  if (nodes_[loss.id_].value.size() != 1) {
    throw ContractError("backward() needs a scalar loss, got shape " +
                        shape_string(nodes_[loss.id_].value.shape()));
  }
  backward(loss, Array(nodes_[loss.id_].value.shape(), std::vector<double>{1.0}, Precision::f64));
}

void Tape::backward(Var root, const Array& seed) {
  check(root);
  if (seed.shape() != nodes_[root.id_].value.shape()) {
    throw DimensionError("backward seed shape " + shape_string(seed.shape()) + " does not match " +
                         shape_string(nodes_[root.id_].value.shape()));
  }
  for (Node& n : nodes_) {
    n.has_grad = false;
    n.grad = Array();
  }
  Array* sink = grad_sink(root);
  if (sink == nullptr) return;
  for (std::size_t i = 0; i < seed.size(); ++i) (*sink)[i] = seed[i];

  for (std::size_t id = root.id_ + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (!n.has_grad) continue;
    if (precision_ == Precision::f32) {
      n.grad.set_precision(Precision::f32);
    }
    if (n.backward) {
      // Callbacks only touch gradients of earlier nodes; nodes_ never grows here.
      n.backward(*this, n.value, n.grad);
    }
  }
}

void Tape::accumulate_parameter_gradients() const {
  for (const Node& n : nodes_) {
    if (n.param == nullptr || !n.has_grad) continue;
    Array& target = n.param->grad;
    if (target.shape() != n.param->value.shape()) target = Array(n.param->value.shape(), n.param->value.precision());
    for (std::size_t i = 0; i < target.size(); ++i) target[i] += n.grad[i];
    target.round_to_precision();
  }
}

std::vector<std::pair<Parameter*, Array>> Tape::parameter_gradients() const {
  std::vector<std::pair<Parameter*, Array>> out;
  for (const Node& n : nodes_) {
    if (n.param == nullptr || !n.has_grad) continue;
    out.emplace_back(n.param, n.grad);
  }
  return out;
}

}  // namespace mac::diff
