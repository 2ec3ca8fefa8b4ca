#include "maven/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "maven/error.hpp"
#include "maven/kernels.hpp"

namespace maven {

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul inner dims " + dims_to_string(a.dims()) + " x " + dims_to_string(b.dims()));
  }
  Tensor out = Tensor::matrix(a.rows(), b.cols());
  kernels::parallel::matmul(a, b, out);
  return out;
}

Tensor matmul_tn(const Tensor& a, const Tensor& b) {
  if (a.rows() != b.rows()) {
    throw ShapeError("matmul_tn " + dims_to_string(a.dims()) + " x " + dims_to_string(b.dims()));
  }
  Tensor out = Tensor::matrix(a.cols(), b.cols());
  kernels::parallel::matmul_tn(a, b, out);
  return out;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.cols()) {
    throw ShapeError("matmul_nt " + dims_to_string(a.dims()) + " x " + dims_to_string(b.dims()));
  }
  Tensor out = Tensor::matrix(a.rows(), b.rows());
  kernels::parallel::matmul_nt(a, b, out);
  return out;
}

double sigmoid(double x) noexcept {
  constexpr double kLow = std::numeric_limits<double>::denorm_min();
  const double hi = std::nextafter(1.0, 0.0);
  double s;
  if (x >= 0.0) {
    s = 1.0 / (1.0 + std::exp(-x));
  } else {
    const double e = std::exp(x);
    s = e / (1.0 + e);
  }
  return std::clamp(s, kLow, hi);
}

Tensor sigmoid(const Tensor& x) {
  Tensor out = x;
  for (double& v : out.values()) v = sigmoid(v);
  return out;
}

double softplus(double x) noexcept { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

double gelu(double x) noexcept { return 0.5 * x * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0)); }

double gelu_grad(double x) noexcept {
  const double cdf = 0.5 * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0));
  const double pdf = std::exp(-0.5 * x * x) * std::numbers::inv_sqrtpi / std::numbers::sqrt2;
  return cdf + x * pdf;
}

Tensor gelu(const Tensor& x) {
  Tensor out = x;
  for (double& v : out.values()) v = gelu(v);
  return out;
}

Tensor gelu_backward(const Tensor& x, const Tensor& dy) {
  if (x.dims() != dy.dims()) throw ShapeError("gelu_backward dims");
  Tensor dx = dy;
  for (std::size_t i = 0; i < dx.size(); ++i) dx[i] *= gelu_grad(x[i]);
  return dx;
}

Tensor relu(const Tensor& x) {
  Tensor out = x;
  for (double& v : out.values()) v = v > 0.0 ? v : 0.0;
  return out;
}

Tensor relu_backward(const Tensor& x, const Tensor& dy) {
  if (x.dims() != dy.dims()) throw ShapeError("relu_backward dims");
  Tensor dx = dy;
  for (std::size_t i = 0; i < dx.size(); ++i) {
    if (!(x[i] > 0.0)) dx[i] = 0.0;
  }
  return dx;
}

Tensor softmax_rows(const Tensor& logits) {
  Tensor out = logits;
  const std::size_t n = out.cols();
  for (std::size_t r = 0; r < out.rows(); ++r) {
    auto row = out.row(r);
    const double mx = *std::max_element(row.begin(), row.end());
    double total = 0.0;
    for (double& v : row) {
      v = std::exp(v - mx);
      total += v;
    }
    for (std::size_t j = 0; j < n; ++j) row[j] /= total;
  }
  return out;
}

LossAndGrad bce_with_logits(const Tensor& logits, std::span<const double> labels) {
  const std::size_t n = logits.size();
  if (labels.size() != n) {
    throw ShapeError("bce: " + std::to_string(n) + " logits vs " + std::to_string(labels.size()) + " labels");
  }
  if (n == 0) throw ShapeError("bce on empty input");
  LossAndGrad out{0.0, Tensor(logits.dims())};
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double x = logits[i];
    const double y = labels[i];
    if (y != 0.0 && y != 1.0) throw DataError("bce label must be 0 or 1");
    out.loss += std::max(x, 0.0) - x * y + std::log1p(std::exp(-std::abs(x)));
    out.grad[i] = (sigmoid(x) - y) * inv_n;
  }
  out.loss *= inv_n;
  return out;
}

LossAndGrad cross_entropy_logits(const Tensor& logits, std::span<const std::size_t> targets) {
  const std::size_t n = logits.rows();
  const std::size_t v = logits.cols();
  if (targets.size() != n) throw ShapeError("cross_entropy: targets length != logits rows");
  if (n == 0) throw ShapeError("cross_entropy on empty input");
  LossAndGrad out{0.0, softmax_rows(logits)};
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t r = 0; r < n; ++r) {
    const std::size_t t = targets[r];
    if (t >= v) throw IndexError("target " + std::to_string(t) + " outside vocabulary of " + std::to_string(v));
    auto row = logits.row(r);
    const double mx = *std::max_element(row.begin(), row.end());
    double total = 0.0;
    for (double x : row) total += std::exp(x - mx);
    out.loss += (mx + std::log(total)) - row[t];
    auto g = out.grad.row(r);
    g[t] -= 1.0;
    for (double& x : g) x *= inv_n;
  }
  out.loss *= inv_n;
  return out;
}

}  // namespace maven
