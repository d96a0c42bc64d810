#pragma once

#include <memory>
#include <string>
#include <vector>

#include "petal/autograd.hpp"

namespace petal {

class Rng;

// Uniform in ±sqrt(6 / (fan_in + fan_out)).
Tensor xavier_uniform(Shape shape, std::size_t fan_in, std::size_t fan_out, Rng& rng);

// Owns a model's parameters in creation order. Addresses are stable.
class ParamStore {
 public:
  Parameter& add(std::string name, Tensor value);
  Parameter& xavier(std::string name, Shape shape, std::size_t fan_in, std::size_t fan_out, Rng& rng);
  Parameter& constant(std::string name, Shape shape, double value);

  std::vector<Parameter*> all() const;
  Parameter* find(const std::string& name) const;
  std::size_t size() const { return params_.size(); }
  std::size_t num_scalars() const;
  void zero_grad();

 private:
  std::vector<std::unique_ptr<Parameter>> params_;
};

}  // namespace petal
