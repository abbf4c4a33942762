#include "mmnet/tape.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

namespace mmnet {

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

int64_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), int64_t{1},
                         [](int64_t a, int b) { return a * b; });
}

template <typename T>
bool all_finite(const Tensor<T>& t) {
  for (T v : t.data) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

template <typename T>
Var<T> Tape<T>::constant(Tensor<T> value) {
  Node n;
  n.op = "constant";
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return {this, size() - 1};
}

template <typename T>
Var<T> Tape<T>::leaf(Tensor<T> value, bool requires_grad) {
  Node n;
  n.op = "leaf";
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  nodes_.push_back(std::move(n));
  return {this, size() - 1};
}

template <typename T>
Var<T> Tape<T>::param(Param<T>& p) {
  Node n;
  n.op = "param";
  n.value = p.value;
  n.param = grad_enabled_ ? &p : nullptr;
  n.requires_grad = grad_enabled_;
  nodes_.push_back(std::move(n));
  return {this, size() - 1};
}

template <typename T>
Var<T> Tape<T>::record(const char* op, Tensor<T> value, std::initializer_list<int> inputs,
                       BackwardFn backward) {
  return record(op, std::move(value), std::vector<int>(inputs), std::move(backward));
}

template <typename T>
Var<T> Tape<T>::record(const char* op, Tensor<T> value, const std::vector<int>& inputs,
                       BackwardFn backward) {
  if (backward_done_) throw ContractError("cannot record on a tape after backward()");
  const int self = size();
  Node n;
  n.op = op;
  n.value = std::move(value);
  n.inputs = inputs;
  for (int in : inputs) {
    if (in < 0 || in >= self) {
      throw InternalError(std::string("op '") + op + "' references node " + std::to_string(in) +
                          " which is not earlier on the tape");
    }
    n.requires_grad = n.requires_grad || nodes_[in].requires_grad;
  }
  if (n.requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return {this, self};
}

template <typename T>
std::vector<T>& Tape<T>::grad_buffer(int id) {
  Node& n = nodes_[id];
  if (n.grad.empty()) n.grad.assign(n.value.data.size(), T(0));
  return n.grad;
}

template <typename T>
std::vector<T> Tape<T>::grad(Var<T> v) const {
  const Node& n = nodes_.at(v.id);
  if (n.grad.empty()) return std::vector<T>(n.value.data.size(), T(0));
  return n.grad;
}

template <typename T>
void Tape<T>::backward(Var<T> loss) {
  if (loss.tape != this) throw ContractError("loss does not belong to this tape");
  if (backward_done_) throw ContractError("backward() called twice on the same tape");
  if (nodes_[loss.id].value.numel() != 1) {
    throw ContractError("backward() needs a scalar loss, got shape " +
                        shape_str(nodes_[loss.id].value.shape));
  }
  backward_done_ = true;
  if (!nodes_[loss.id].requires_grad) return;
  grad_buffer(loss.id)[0] = T(1);
  for (int id = loss.id; id >= 0; --id) {
    Node& n = nodes_[id];
    if (!n.requires_grad || n.grad.empty()) continue;
    for (int in : n.inputs) {
      if (in >= id) throw InternalError("cycle detected on gradient tape");
    }
    if (n.backward) n.backward(*this, id);
    if (n.param) {
      Param<T>& p = *n.param;
      if (p.grad.size() != n.grad.size()) p.grad.assign(n.grad.size(), T(0));
      for (size_t i = 0; i < n.grad.size(); ++i) p.grad[i] += n.grad[i];
    }
  }
}

template <typename T>
int Tape<T>::first_non_finite() const {
  for (int id = 0; id < size(); ++id) {
    if (!all_finite(nodes_[id].value)) return id;
  }
  return -1;
}

template bool all_finite(const Tensor<float>&);
template bool all_finite(const Tensor<double>&);
template class Tape<float>;
template class Tape<double>;

}  // namespace mmnet
