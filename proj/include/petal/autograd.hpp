#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <deque>
#include <unordered_map>
#include <vector>

#include "petal/tensor.hpp"

namespace petal {

class Rng;

// A trainable tensor and its accumulated gradient.
struct Parameter {
  Parameter(std::string name, Tensor value);

  std::string name;
  Tensor value;
  Tensor grad;

  void zero_grad();
};

// Handle to a node in a Graph. Only meaningful for the graph that created it.
struct Var {
  std::size_t id = static_cast<std::size_t>(-1);
  bool valid() const { return id != static_cast<std::size_t>(-1); }
};

// Computation graph recorded during one forward pass. Nodes are appended in
// creation order, which is a valid topological order for the reverse sweep.
class Graph {
 public:
  // Called during backward with the node's output value and its gradient.
  // The closure accumulates into its inputs via Graph::grad_of.
  using BackwardFn = std::function<void(Graph&, std::span<const double> out_grad, const Tensor& out)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var constant(Tensor value);
  // Leaf whose gradient is kept and readable after backward().
  Var variable(Tensor value);
  // Leaf bound to a parameter; backward() adds its gradient into p.grad.
  // Repeated calls with the same parameter return the same node.
  Var param(Parameter& p);

  const Tensor& value(Var v) const { return nodes_.at(v.id).value; }
  const Shape& shape(Var v) const { return nodes_.at(v.id).value.shape(); }
  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }

  // Gradient of the last backward() target w.r.t. v; zeros if v did not
  // contribute.
  Tensor grad(Var v) const;

  // Reverse sweep from a scalar node. May be called once per graph.
  void backward(Var loss);

  // For op implementations.
  Var push(Tensor value, std::span<const Var> inputs, BackwardFn fn);
  // Mutable gradient buffer for an input node, allocated on first use.
  std::span<double> grad_of(Var v);

  std::size_t num_nodes() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    bool requires_grad = false;
    std::vector<double> grad;
    BackwardFn backward;
    Parameter* param = nullptr;
  };

  // deque keeps value references stable while nodes are appended.
  std::deque<Node> nodes_;
  std::unordered_map<const Parameter*, std::size_t> param_nodes_;
  bool backward_done_ = false;
};

}  // namespace petal
