#pragma once

// Building blocks with hand-written reverse passes. Each backward call
// accumulates into the owning Parameter grads and returns the gradient with
// respect to the layer input.

#include <string>
#include <vector>

#include "maven/parameter.hpp"
#include "maven/rng.hpp"

namespace maven {

struct Linear {
  Parameter weight;  // [in × out]
  Parameter bias;    // [out]; unused when has_bias is false
  bool has_bias = true;

  Linear() = default;
  /// Weights drawn N(0, stddev²); bias zero. stddev <= 0 selects 1/sqrt(in).
  Linear(const std::string& name, std::size_t in, std::size_t out, Rng rng, double stddev = 0.0,
         bool with_bias = true);

  std::size_t in_dim() const { return weight.value.rows(); }
  std::size_t out_dim() const { return weight.value.cols(); }

  Tensor forward(const Tensor& x) const;
  Tensor backward(const Tensor& x, const Tensor& dy);

  ParamRefs parameters() {
    if (!has_bias) return {&weight};
    return {&weight, &bias};
  }
};

struct LayerNorm {
  Parameter gamma;
  Parameter beta;
  double eps = 1e-5;

  struct Cache {
    Tensor normalized;
    std::vector<double> inv_std;
  };

  LayerNorm() = default;
  LayerNorm(const std::string& name, std::size_t dim);

  Tensor forward(const Tensor& x, Cache* cache = nullptr) const;
  Tensor backward(const Cache& cache, const Tensor& dy);

  ParamRefs parameters() { return {&gamma, &beta}; }
};

}  // namespace maven
