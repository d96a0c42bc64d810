#include "petal/params.hpp"

#include <cmath>
#include <stdexcept>

#include "petal/rng.hpp"

namespace petal {

Tensor xavier_uniform(Shape shape, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::vector<double> data(shape_numel(shape));
  for (auto& v : data) v = rng.uniform(-bound, bound);
  return Tensor(std::move(shape), std::move(data));
}

Parameter& ParamStore::add(std::string name, Tensor value) {
  if (find(name) != nullptr) throw std::invalid_argument("duplicate parameter name: " + name);
  params_.push_back(std::make_unique<Parameter>(std::move(name), std::move(value)));
  return *params_.back();
}

Parameter& ParamStore::xavier(std::string name, Shape shape, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  return add(std::move(name), xavier_uniform(std::move(shape), fan_in, fan_out, rng));
}

Parameter& ParamStore::constant(std::string name, Shape shape, double value) {
  return add(std::move(name), Tensor::full(std::move(shape), value));
}

std::vector<Parameter*> ParamStore::all() const {
  std::vector<Parameter*> out;
  out.reserve(params_.size());
  for (const auto& p : params_) out.push_back(p.get());
  return out;
}

Parameter* ParamStore::find(const std::string& name) const {
  for (const auto& p : params_)
    if (p->name == name) return p.get();
  return nullptr;
}

std::size_t ParamStore::num_scalars() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p->value.size();
  return n;
}

void ParamStore::zero_grad() {
  for (auto& p : params_) p->zero_grad();
}

}  // namespace petal
