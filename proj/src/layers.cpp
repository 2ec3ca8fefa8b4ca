#include "maven/layers.hpp"

#include <cmath>

#include "maven/error.hpp"
#include "maven/ops.hpp"

namespace maven {

void zero_grads(const ParamRefs& params) {
  for (Parameter* p : params) p->zero_grad();
}

void append(ParamRefs& params, const ParamRefs& more) { params.insert(params.end(), more.begin(), more.end()); }

Linear::Linear(const std::string& name, std::size_t in, std::size_t out, Rng rng, double stddev, bool with_bias)
    : has_bias(with_bias) {
  const double s = stddev > 0.0 ? stddev : 1.0 / std::sqrt(static_cast<double>(in));
  weight = Parameter(name + ".weight", normal_tensor({in, out}, s, rng));
  bias = Parameter(name + ".bias", Tensor::vector(out));
}

Tensor Linear::forward(const Tensor& x) const {
  if (x.cols() != in_dim()) {
    throw ShapeError(weight.name + ": input " + dims_to_string(x.dims()) + " vs weight " +
                     dims_to_string(weight.value.dims()));
  }
  Tensor y = matmul(x, weight.value);
  if (!has_bias) return y;
  const std::size_t n = y.cols();
  for (std::size_t r = 0; r < y.rows(); ++r) {
    double* row = y.data() + r * n;
    for (std::size_t j = 0; j < n; ++j) row[j] += bias.value[j];
  }
  return y;
}

Tensor Linear::backward(const Tensor& x, const Tensor& dy) {
  add_inplace(weight.grad, matmul_tn(x, dy));
  const std::size_t n = dy.cols();
  for (std::size_t r = 0; has_bias && r < dy.rows(); ++r) {
    for (std::size_t j = 0; j < n; ++j) bias.grad[j] += dy(r, j);
  }
  return matmul_nt(dy, weight.value);
}

LayerNorm::LayerNorm(const std::string& name, std::size_t dim)
    : gamma(name + ".gamma", Tensor::vector(dim, 1.0)), beta(name + ".beta", Tensor::vector(dim, 0.0)) {}

Tensor LayerNorm::forward(const Tensor& x, Cache* cache) const {
  const std::size_t n = x.cols();
  if (n != gamma.value.size()) throw ShapeError(gamma.name + ": width mismatch");
  Tensor y = Tensor::matrix(x.rows(), n);
  Tensor normalized = Tensor::matrix(x.rows(), n);
  std::vector<double> inv_std(x.rows());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    auto row = x.row(r);
    double mean = 0.0;
    for (double v : row) mean += v;
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (double v : row) var += (v - mean) * (v - mean);
    var /= static_cast<double>(n);
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[r] = is;
    for (std::size_t j = 0; j < n; ++j) {
      const double h = (row[j] - mean) * is;
      normalized(r, j) = h;
      y(r, j) = h * gamma.value[j] + beta.value[j];
    }
  }
  if (cache) {
    cache->normalized = std::move(normalized);
    cache->inv_std = std::move(inv_std);
  }
  return y;
}

Tensor LayerNorm::backward(const Cache& cache, const Tensor& dy) {
  const std::size_t n = dy.cols();
  const double inv_n = 1.0 / static_cast<double>(n);
  Tensor dx = Tensor::matrix(dy.rows(), n);
  std::vector<double> dh(n);
  for (std::size_t r = 0; r < dy.rows(); ++r) {
    double mean_dh = 0.0;
    double mean_dh_h = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double h = cache.normalized(r, j);
      const double g = dy(r, j);
      gamma.grad[j] += g * h;
      beta.grad[j] += g;
      dh[j] = g * gamma.value[j];
      mean_dh += dh[j];
      mean_dh_h += dh[j] * h;
    }
    mean_dh *= inv_n;
    mean_dh_h *= inv_n;
    for (std::size_t j = 0; j < n; ++j) {
      dx(r, j) = cache.inv_std[r] * (dh[j] - mean_dh - cache.normalized(r, j) * mean_dh_h);
    }
  }
  return dx;
}

}  // namespace maven
