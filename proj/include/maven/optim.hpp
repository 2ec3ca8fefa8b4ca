#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>

#include "maven/parameter.hpp"

namespace maven {

struct AdamWConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

/// First/second moment buffers keyed by parameter name, plus the shared step
/// counter used for bias correction.
struct AdamWState {
  struct Moments {
    Tensor m;
    Tensor v;
  };
  std::map<std::string, Moments> moments;
  std::int64_t step = 0;
};

/// One AdamW update with decoupled weight decay:
///   p -= lr*wd*p;  p -= lr * m̂ / (sqrt(v̂) + eps)
/// Parameters with trainable == false are skipped entirely, including their
/// moment buffers.
void adamw_step(const ParamRefs& params, AdamWState& state, const AdamWConfig& config);

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

/// Compares param.grad (already populated by the caller) against central
/// differences (f(x+eps) - f(x-eps)) / 2eps of `loss`, coordinate by
/// coordinate. Relative error uses max(|analytic|, |numeric|, 1e-8) as the
/// denominator. The parameter value is restored bit-exactly afterwards.
GradCheckResult finite_diff_check(const std::function<double()>& loss, Parameter& param, double eps = 1e-5);

}  // namespace maven
