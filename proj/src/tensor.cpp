#include "maven/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>

#include "maven/error.hpp"

namespace maven {

namespace {

std::size_t product(const Dims& dims) {
  return std::accumulate(dims.begin(), dims.end(), std::size_t{1}, std::multiplies<>());
}

void check_dims(const Dims& dims) {
  for (std::size_t d : dims) {
    if (d == 0) throw ShapeError("tensor dims must be positive, got " + dims_to_string(dims));
  }
}

}  // namespace

std::string dims_to_string(const Dims& dims) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < dims.size(); ++i) {
    if (i) os << 'x';
    os << dims[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor(Dims dims, double fill) : dims_(std::move(dims)) {
  check_dims(dims_);
  data_.assign(product(dims_), fill);
}

Tensor::Tensor(Dims dims, std::vector<double> data) : dims_(std::move(dims)), data_(std::move(data)) {
  check_dims(dims_);
  if (product(dims_) != data_.size()) {
    throw ShapeError("dims " + dims_to_string(dims_) + " do not match " + std::to_string(data_.size()) +
                     " values");
  }
}

Tensor Tensor::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t n = rows.size();
  const std::size_t m = n ? rows.begin()->size() : 0;
  std::vector<double> data;
  data.reserve(n * m);
  for (const auto& r : rows) {
    if (r.size() != m) throw ShapeError("ragged row list");
    data.insert(data.end(), r.begin(), r.end());
  }
  return Tensor({n, m}, std::move(data));
}

std::size_t Tensor::rows() const {
  if (dims_.size() != 2) throw ShapeError("expected a matrix, got " + dims_to_string(dims_));
  return dims_[0];
}

std::size_t Tensor::cols() const {
  if (dims_.size() != 2) throw ShapeError("expected a matrix, got " + dims_to_string(dims_));
  return dims_[1];
}

void Tensor::fill(double value) { std::fill(data_.begin(), data_.end(), value); }

Tensor Tensor::reshaped(Dims dims) const {
  Tensor out = *this;
  if (product(dims) != data_.size()) {
    throw ShapeError("cannot reshape " + dims_to_string(dims_) + " to " + dims_to_string(dims));
  }
  out.dims_ = std::move(dims);
  return out;
}

Tensor Tensor::slice_rows(std::size_t begin, std::size_t end) const {
  const std::size_t c = cols();
  if (begin >= end || end > rows()) throw ShapeError("row slice out of range");
  std::vector<double> data(data_.begin() + static_cast<std::ptrdiff_t>(begin * c),
                           data_.begin() + static_cast<std::ptrdiff_t>(end * c));
  return Tensor({end - begin, c}, std::move(data));
}

Tensor Tensor::gather_rows(std::span<const std::size_t> indices) const {
  const std::size_t c = cols();
  const std::size_t n = rows();
  if (indices.empty()) throw ShapeError("gather of zero rows");
  Tensor out = Tensor::matrix(indices.size(), c);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= n) throw IndexError("row " + std::to_string(indices[i]) + " >= " + std::to_string(n));
    std::copy_n(data_.data() + indices[i] * c, c, out.data() + i * c);
  }
  return out;
}

bool Tensor::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

Tensor concat_rows(std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("concat of zero tensors");
  const std::size_t c = parts.front().cols();
  std::size_t total = 0;
  for (const auto& p : parts) {
    if (p.cols() != c) throw ShapeError("concat_rows column mismatch");
    total += p.rows();
  }
  std::vector<double> data;
  data.reserve(total * c);
  for (const auto& p : parts) data.insert(data.end(), p.values().begin(), p.values().end());
  return Tensor({total, c}, std::move(data));
}

Tensor concat_cols(const Tensor& a, const Tensor& b) {
  if (a.rows() != b.rows()) throw ShapeError("concat_cols row mismatch");
  const std::size_t ca = a.cols();
  const std::size_t cb = b.cols();
  Tensor out = Tensor::matrix(a.rows(), ca + cb);
  for (std::size_t r = 0; r < a.rows(); ++r) {
    std::copy_n(a.data() + r * ca, ca, out.data() + r * (ca + cb));
    std::copy_n(b.data() + r * cb, cb, out.data() + r * (ca + cb) + ca);
  }
  return out;
}

void add_inplace(Tensor& dst, const Tensor& src) {
  if (dst.dims() != src.dims()) {
    throw ShapeError("add " + dims_to_string(src.dims()) + " into " + dims_to_string(dst.dims()));
  }
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.dims() != b.dims()) throw ShapeError("max_abs_diff dims mismatch");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace maven
