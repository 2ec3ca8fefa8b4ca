#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace maven {

using Dims = std::vector<std::size_t>;

std::string dims_to_string(const Dims& dims);

/// Dense row-major tensor of doubles. Matrices are 2-D tensors; most kernels
/// only accept those.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Dims dims, double fill = 0.0);
  Tensor(Dims dims, std::vector<double> data);

  static Tensor matrix(std::size_t rows, std::size_t cols, double fill = 0.0) {
    return Tensor({rows, cols}, fill);
  }
  static Tensor vector(std::size_t n, double fill = 0.0) { return Tensor({n}, fill); }
  static Tensor from_rows(std::initializer_list<std::initializer_list<double>> rows);

  const Dims& dims() const noexcept { return dims_; }
  std::size_t ndim() const noexcept { return dims_.size(); }
  std::size_t dim(std::size_t axis) const { return dims_.at(axis); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  // Matrix view; throws ShapeError unless 2-D.
  std::size_t rows() const;
  std::size_t cols() const;

  double* data() noexcept { return data_.data(); }
  const double* data() const noexcept { return data_.data(); }
  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }

  double& operator[](std::size_t i) noexcept { return data_[i]; }
  double operator[](std::size_t i) const noexcept { return data_[i]; }
  double& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * dims_[1] + c]; }
  double operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * dims_[1] + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols(), cols()}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols(), cols()}; }

  void fill(double value);
  Tensor reshaped(Dims dims) const;

  /// Rows [begin, end) of a matrix as a new matrix.
  Tensor slice_rows(std::size_t begin, std::size_t end) const;
  /// Gathers the listed rows of a matrix, in the listed order.
  Tensor gather_rows(std::span<const std::size_t> indices) const;

  bool all_finite() const noexcept;

  /// Bitwise-equal dims and values (NaN never compares equal).
  friend bool operator==(const Tensor& a, const Tensor& b) = default;

 private:
  Dims dims_;
  std::vector<double> data_;
};

/// Vertical concatenation of matrices with equal column counts.
Tensor concat_rows(std::span<const Tensor> parts);

/// Per-row concatenation: [a | b] for matrices with equal row counts.
Tensor concat_cols(const Tensor& a, const Tensor& b);

void add_inplace(Tensor& dst, const Tensor& src);
double max_abs_diff(const Tensor& a, const Tensor& b);

}  // namespace maven
