#pragma once

#include <string>
#include <vector>

#include "maven/tensor.hpp"

namespace maven {

/// A named trainable tensor plus its gradient accumulator.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
  bool trainable = true;

  Parameter() = default;
  Parameter(std::string n, Tensor v, bool is_trainable = true)
      : name(std::move(n)), value(std::move(v)), grad(value.dims()), trainable(is_trainable) {}

  void zero_grad() { grad.fill(0.0); }
};

using ParamRefs = std::vector<Parameter*>;

void zero_grads(const ParamRefs& params);

/// Appends `more` to `params`.
void append(ParamRefs& params, const ParamRefs& more);

}  // namespace maven
