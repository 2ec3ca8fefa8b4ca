#include "maven/optim.hpp"

#include <algorithm>
#include <cmath>

#include "maven/error.hpp"

namespace maven {

void adamw_step(const ParamRefs& params, AdamWState& state, const AdamWConfig& config) {
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double bias1 = 1.0 - std::pow(config.beta1, t);
  const double bias2 = 1.0 - std::pow(config.beta2, t);
  for (Parameter* p : params) {
    if (!p->trainable) continue;
    if (p->grad.dims() != p->value.dims()) throw ShapeError(p->name + ": grad dims differ from value dims");
    auto [it, inserted] = state.moments.try_emplace(p->name);
    if (inserted) {
      it->second.m = Tensor(p->value.dims());
      it->second.v = Tensor(p->value.dims());
    }
    Tensor& m = it->second.m;
    Tensor& v = it->second.v;
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const double g = p->grad[i];
      m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * g;
      v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * g * g;
      const double m_hat = m[i] / bias1;
      const double v_hat = v[i] / bias2;
      double& x = p->value[i];
      x -= config.lr * config.weight_decay * x;
      x -= config.lr * m_hat / (std::sqrt(v_hat) + config.eps);
    }
  }
}

GradCheckResult finite_diff_check(const std::function<double()>& loss, Parameter& param, double eps) {
  GradCheckResult result;
  for (std::size_t i = 0; i < param.value.size(); ++i) {
    const double original = param.value[i];
    param.value[i] = original + eps;
    const double up = loss();
    param.value[i] = original - eps;
    const double down = loss();
    param.value[i] = original;
    const double numeric = (up - down) / (2.0 * eps);
    const double analytic = param.grad[i];
    const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
    const double rel = std::abs(analytic - numeric) / denom;
    if (i == 0 || rel > result.max_rel_error) result = {rel, i, analytic, numeric};
  }
  return result;
}

}  // namespace maven
