#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "maven/tensor.hpp"

namespace maven {

/// a[m×k] · b[k×n]. Deterministic: the k-sum runs left to right.
Tensor matmul(const Tensor& a, const Tensor& b);
/// aᵀ · b for a[r×m], b[r×n].
Tensor matmul_tn(const Tensor& a, const Tensor& b);
/// a · bᵀ for a[m×k], b[n×k].
Tensor matmul_nt(const Tensor& a, const Tensor& b);

/// Logistic function. The result is clamped into the open interval (0, 1):
/// for |x| beyond ~37 the exact value rounds to 0 or 1 in double precision.
double sigmoid(double x) noexcept;
Tensor sigmoid(const Tensor& x);

double softplus(double x) noexcept;

/// Exact (erf-based) GELU and its derivative.
double gelu(double x) noexcept;
double gelu_grad(double x) noexcept;
Tensor gelu(const Tensor& x);
/// dL/dx given the forward input x and upstream gradient dy.
Tensor gelu_backward(const Tensor& x, const Tensor& dy);

Tensor relu(const Tensor& x);
Tensor relu_backward(const Tensor& x, const Tensor& dy);

/// Row-wise numerically stable softmax of a matrix.
Tensor softmax_rows(const Tensor& logits);

struct LossAndGrad {
  double loss = 0.0;
  Tensor grad;  // dLoss/dinput, same dims as the scored tensor
};

/// Mean binary cross-entropy on logits, evaluated as
/// max(x,0) - x*y + log1p(exp(-|x|)). grad_i = (sigmoid(x_i) - y_i) / n.
LossAndGrad bce_with_logits(const Tensor& logits, std::span<const double> labels);

/// Mean negative log-softmax at the target columns of logits[n×V].
/// grad = (softmax - one_hot) / n.
LossAndGrad cross_entropy_logits(const Tensor& logits, std::span<const std::size_t> targets);

}  // namespace maven
