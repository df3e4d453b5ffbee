#include "pmdef/tape.hpp"

#include "pmdef/error.hpp"

namespace pmdef {

Var Tape::leaf(Tensor value, bool requires_grad) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

Var Tape::record(Tensor value, std::initializer_list<Var> inputs, BackwardFn backward) {
  Node n;
  n.value = std::move(value);
  for (auto in : inputs) {
    if (!in.valid() || in.id >= nodes_.size()) throw ContractError("op input is not on this tape");
    n.inputs.push_back(in.id);
    n.requires_grad = n.requires_grad || nodes_[in.id].requires_grad;
  }
  if (n.requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

const Tape::Node& Tape::node(Var v) const {
  if (!v.valid() || v.id >= nodes_.size()) throw ContractError("variable is not on this tape");
  return nodes_[v.id];
}

Tape::Node& Tape::node(Var v) {
  if (!v.valid() || v.id >= nodes_.size()) throw ContractError("variable is not on this tape");
  return nodes_[v.id];
}

const Tensor& Tape::value(Var v) const { return node(v).value; }

bool Tape::requires_grad(Var v) const { return node(v).requires_grad; }

const Tensor& Tape::grad(Var v) const {
  const auto& n = node(v);
  if (!n.requires_grad) throw ContractError("gradient requested for a variable that does not require grad");
  if (n.grad.empty()) throw ContractError("gradient requested before backward()");
  return n.grad;
}

Tensor& Tape::grad_slot(Var v) {
  auto& n = node(v);
  if (n.grad.empty()) n.grad = Tensor(n.value.shape(), 0.0);
  return n.grad;
}

void Tape::backward(Var output) {
  auto& out = node(output);
  if (out.value.size() != 1)
    throw ContractError("backward() needs a scalar output, got shape " + to_string(out.value.shape()));
  for (auto& n : nodes_)
    if (n.requires_grad) n.grad = Tensor(n.value.shape(), 0.0);
  if (!out.requires_grad) return;
  out.grad[0] = 1.0;
  visits_ = 0;
  for (std::size_t i = output.id + 1; i-- > 0;) {
    auto& n = nodes_[i];
    if (!n.backward) continue;
    n.backward(*this, n.grad);
    ++visits_;
  }
}

}  // namespace pmdef
