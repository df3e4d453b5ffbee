#pragma once

#include <cstddef>
#include <functional>
#include <limits>
#include <vector>

#include "pmdef/tensor.hpp"

namespace pmdef {

class Tape;

// Handle to a value recorded on a Tape. Only meaningful for the tape that
// produced it.
struct Var {
  static constexpr std::size_t npos = std::numeric_limits<std::size_t>::max();
  std::size_t id = npos;
  bool valid() const noexcept { return id != npos; }
};

// Reverse-mode autodiff record. Nodes are appended in evaluation order, so the
// record is topologically sorted by construction and backward() is a single
// reverse sweep.
class Tape {
 public:
  // Receives the gradient of the output w.r.t. this node and accumulates
  // into the input nodes' grad slots.
  using BackwardFn = std::function<void(Tape&, const Tensor& grad_out)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = default;
  Tape& operator=(Tape&&) = default;

  Var leaf(Tensor value, bool requires_grad = false);
  Var constant(Tensor value) { return leaf(std::move(value), false); }

  // Records an op output. The backward closure is kept only when at least one
  // input requires a gradient.
  Var record(Tensor value, std::initializer_list<Var> inputs, BackwardFn backward);

  const Tensor& value(Var v) const;
  const Shape& shape(Var v) const { return value(v).shape(); }
  bool requires_grad(Var v) const;

  // Gradient after backward(). Zero-filled for leaves the output does not use.
  const Tensor& grad(Var v) const;

  // Mutable gradient accumulator for use inside backward closures.
  Tensor& grad_slot(Var v);

  void backward(Var output);

  std::size_t size() const noexcept { return nodes_.size(); }
  std::size_t backward_visits() const noexcept { return visits_; }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
  };

  const Node& node(Var v) const;
  Node& node(Var v);

  std::vector<Node> nodes_;
  std::size_t visits_ = 0;
};

}  // namespace pmdef
