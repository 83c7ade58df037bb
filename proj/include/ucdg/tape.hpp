#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <initializer_list>
#include <string>

#include "ucdg/tensor.hpp"

namespace ucdg {

// A trainable array together with its accumulated gradient.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;

  Parameter() = default;
  Parameter(std::string n, Tensor v) : name(std::move(n)), value(std::move(v)), grad(value.shape()) {}

  void zero_grad();
  std::size_t size() const { return value.size(); }
};

class Tape;

// Handle to a value recorded on a Tape. Cheap to copy; valid as long as the
// tape lives.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t dim(std::size_t axis) const { return value().dim(axis); }
  bool requires_grad() const;
  Tape& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

// Records primitive operations in execution order. Every node's inputs were
// recorded before it, so a reverse sweep visits nodes in a valid order.
class Tape {
 public:
  // Called during the reverse sweep with the gradient of the loss w.r.t. the
  // node's output. Implementations add into the input gradients obtained via
  // grad_target().
  using BackwardFn = std::function<void(Tape&, const Tensor& grad_out)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Tensor value);  // requires_grad taken from the tensor
  Var constant(Tensor value);
  // Binds a parameter without copying; backward() adds into param.grad.
  Var param(Parameter& param);
  // Binds a tensor that outlives the tape as a constant, without copying.
  Var constant_ref(const Tensor& value);

  Var record(Tensor value, std::initializer_list<Var> inputs, BackwardFn backward);
  Var record(Tensor value, const std::vector<Var>& inputs, BackwardFn backward);

  // Reverse sweep from a scalar loss. May run once per tape.
  void backward(Var loss);

  // d(loss)/d(v); zeros when v was not reached or does not require grad.
  Tensor grad(Var v) const;

  // Gradient buffer of v for accumulation inside a BackwardFn, or nullptr
  // when v does not require grad.
  Tensor* grad_target(Var v);

  const Tensor& value(std::size_t id) const;
  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    const Tensor* external = nullptr;
    Tensor grad;
    bool requires_grad = false;
    Parameter* sink = nullptr;
    BackwardFn backward;
  };

  Var push(Node node);
  void check_owner(Var v) const;

  std::deque<Node> nodes_;
  bool backward_done_ = false;
};

}  // namespace ucdg
