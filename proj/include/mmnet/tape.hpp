#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "mmnet/tensor.hpp"

namespace mmnet {

/// A named trainable array with its accumulated gradient.
template <typename T>
struct Param {
  std::string name;
  Tensor<T> value;
  std::vector<T> grad;

  void zero_grad() { grad.assign(value.data.size(), T(0)); }
};

template <typename T>
class Tape;

/// Handle to a node recorded on a tape.
template <typename T>
struct Var {
  Tape<T>* tape = nullptr;
  int id = -1;

  const Tensor<T>& value() const;
  const Shape& shape() const { return value().shape; }
  bool valid() const { return tape != nullptr && id >= 0; }
};

/// Append-only record of a forward computation. Nodes are stored in
/// creation order, which is a topological order by construction.
///
/// A tape belongs to one execution stream. Separate tapes may be used from
/// separate threads as long as they do not share Params being written.
template <typename T>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, int self)>;

  Tape() = default;
  /// With `grad_enabled == false` parameters are recorded as constants and
  /// no backward closures are kept (inference).
  explicit Tape(bool grad_enabled) : grad_enabled_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Non-differentiable input.
  Var<T> constant(Tensor<T> value);
  /// Free leaf; its gradient can be read with grad() after backward().
  Var<T> leaf(Tensor<T> value, bool requires_grad = true);
  /// Leaf bound to a parameter; backward() accumulates into param.grad.
  Var<T> param(Param<T>& p);

  /// Records the result of a primitive. `backward` is dropped when none of
  /// the inputs require a gradient.
  Var<T> record(const char* op, Tensor<T> value, std::initializer_list<int> inputs, BackwardFn backward);
  Var<T> record(const char* op, Tensor<T> value, const std::vector<int>& inputs, BackwardFn backward);

  /// Reverse sweep from a scalar loss. May be called once per tape.
  void backward(Var<T> loss);

  const Tensor<T>& value(int id) const { return nodes_[id].value; }
  bool requires_grad(int id) const { return nodes_[id].requires_grad; }
  /// Gradient buffer of a node, zero-filled on first access.
  std::vector<T>& grad_buffer(int id);
  /// Gradient of a node after backward(); zeros if it was never reached.
  std::vector<T> grad(Var<T> v) const;

  int size() const { return static_cast<int>(nodes_.size()); }
  const char* op_name(int id) const { return nodes_[id].op; }

  /// First node holding a NaN/Inf value, or -1.
  int first_non_finite() const;

 private:
  struct Node {
    const char* op = "";
    Tensor<T> value;
    std::vector<T> grad;
    std::vector<int> inputs;
    BackwardFn backward;
    Param<T>* param = nullptr;
    bool requires_grad = false;
  };

  std::vector<Node> nodes_;
  bool backward_done_ = false;
  bool grad_enabled_ = true;
};

template <typename T>
const Tensor<T>& Var<T>::value() const {
  return tape->value(id);
}

}  // namespace mmnet
