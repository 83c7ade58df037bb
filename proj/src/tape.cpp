#include "ucdg/tape.hpp"

#include <algorithm>
#include <stdexcept>

namespace ucdg {

void Parameter::zero_grad() {
  if (grad.shape() != value.shape()) {
    grad = Tensor(value.shape());
  } else {
    grad.fill(0.0);
  }
}

const Tensor& Var::value() const { return tape_->value(id_); }

bool Var::requires_grad() const { return tape_->requires_grad(id_); }

const Tensor& Tape::value(std::size_t id) const {
  const Node& n = nodes_.at(id);
  return n.external ? *n.external : n.value;
}

Var Tape::push(Node node) {
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

void Tape::check_owner(Var v) const {
  if (v.tape_ != this) throw std::invalid_argument("Tape: variable recorded on a different tape");
}

Var Tape::leaf(Tensor value) {
  Node n;
  n.requires_grad = value.requires_grad();
  n.value = std::move(value);
  return push(std::move(n));
}

Var Tape::constant(Tensor value) {
  Node n;
  n.value = std::move(value);
  n.value.set_requires_grad(false);
  return push(std::move(n));
}

Var Tape::constant_ref(const Tensor& value) {
  Node n;
  n.external = &value;
  return push(std::move(n));
}

Var Tape::param(Parameter& param) {
  Node n;
  n.external = &param.value;
  n.requires_grad = true;
  n.sink = &param;
  return push(std::move(n));
}

Var Tape::record(Tensor value, std::initializer_list<Var> inputs, BackwardFn backward) {
  return record(std::move(value), std::vector<Var>(inputs), std::move(backward));
}

Var Tape::record(Tensor value, const std::vector<Var>& inputs, BackwardFn backward) {
  bool needs = false;
  for (const Var& v : inputs) {
    check_owner(v);
    needs = needs || nodes_[v.id_].requires_grad;
  }
  Node n;
  n.value = std::move(value);
  n.requires_grad = needs;
  if (needs) n.backward = std::move(backward);
  return push(std::move(n));
}

Tensor* Tape::grad_target(Var v) {
  Node& n = nodes_.at(v.id_);
  if (!n.requires_grad) return nullptr;
  if (n.grad.empty()) n.grad = Tensor(value(v.id_).shape());
  return &n.grad;
}

void Tape::backward(Var loss) {
  check_owner(loss);
  if (backward_done_) throw std::logic_error("Tape::backward: already run on this tape");
  const Tensor& lv = value(loss.id_);
  if (lv.size() != 1) {
    throw ShapeError("backward: loss must be a scalar, got shape " + shape_string(lv.shape()));
  }
  backward_done_ = true;
  if (!nodes_[loss.id_].requires_grad) return;
  *grad_target(loss) = Tensor(lv.shape(), 1.0);

  for (std::size_t i = loss.id_ + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.grad.empty()) continue;
    if (n.backward) n.backward(*this, n.grad);
  }
  for (Node& n : nodes_) {
    if (!n.sink || n.grad.empty()) continue;
    Parameter& p = *n.sink;
    if (p.grad.shape() != p.value.shape()) p.grad = Tensor(p.value.shape());
    auto dst = p.grad.data();
    auto src = n.grad.data();
    for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
  }
}

Tensor Tape::grad(Var v) const {
  check_owner(v);
  const Node& n = nodes_.at(v.id_);
  if (n.grad.empty()) return Tensor(value(v.id_).shape());
  return n.grad;
}

}  // namespace ucdg
