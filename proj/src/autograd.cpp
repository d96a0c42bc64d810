#include "petal/autograd.hpp"

#include <stdexcept>

#include "petal/errors.hpp"

namespace petal {

Parameter::Parameter(std::string n, Tensor v) : name(std::move(n)), value(std::move(v)), grad(value.shape()) {}

void Parameter::zero_grad() {
  auto g = grad.mutable_data();
  std::fill(g.begin(), g.end(), 0.0);
}

Var Graph::constant(Tensor value) {
  nodes_.push_back(Node{std::move(value), false, {}, {}, nullptr});
  return Var{nodes_.size() - 1};
}

Var Graph::variable(Tensor value) {
  nodes_.push_back(Node{std::move(value), true, {}, {}, nullptr});
  return Var{nodes_.size() - 1};
}

Var Graph::param(Parameter& p) {
  if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) return Var{it->second};
  nodes_.push_back(Node{p.value, true, {}, {}, &p});
  param_nodes_.emplace(&p, nodes_.size() - 1);
  return Var{nodes_.size() - 1};
}

Var Graph::push(Tensor value, std::span<const Var> inputs, BackwardFn fn) {
  bool needs = false;
  for (const auto& v : inputs) needs = needs || nodes_.at(v.id).requires_grad;
  Node n{std::move(value), needs, {}, {}, nullptr};
  if (needs) n.backward = std::move(fn);
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

std::span<double> Graph::grad_of(Var v) {
  auto& n = nodes_.at(v.id);
  if (n.grad.empty()) n.grad.assign(n.value.size(), 0.0);
  return n.grad;
}

Tensor Graph::grad(Var v) const {
  const auto& n = nodes_.at(v.id);
  if (n.grad.empty()) return Tensor(n.value.shape());
  return Tensor(n.value.shape(), n.grad);
}

void Graph::backward(Var loss) {
  if (backward_done_) throw std::logic_error("Graph::backward called twice");
  backward_done_ = true;
  auto& root = nodes_.at(loss.id);
  if (root.value.size() != 1) throw DimensionError("backward target must be a scalar, got " + shape_str(root.value.shape()));
  if (!root.requires_grad) return;
  root.grad.assign(1, 1.0);
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    auto& n = nodes_[i];
    if (!n.requires_grad || n.grad.empty()) continue;
    if (n.backward) {
      // Move the gradient out so the closure may safely grow other buffers.
      std::vector<double> g = std::move(n.grad);
      n.backward(*this, g, n.value);
      nodes_[i].grad = std::move(g);
    }
    if (nodes_[i].param != nullptr) {
      auto pg = nodes_[i].param->grad.mutable_data();
      const auto& g = nodes_[i].grad;
      for (std::size_t k = 0; k < g.size(); ++k) pg[k] += g[k];
    }
  }
}

}  // namespace petal
