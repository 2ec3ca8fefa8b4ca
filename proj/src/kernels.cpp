#include "maven/kernels.hpp"

#include <limits>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "maven/error.hpp"

namespace maven::kernels {

namespace {

// Below this many multiply-adds the fork/join overhead dominates.
constexpr std::size_t kParallelWork = 1u << 15;

void check_matmul(const Tensor& a, const Tensor& b, const Tensor& out) {
  if (a.cols() != b.rows() || out.rows() != a.rows() || out.cols() != b.cols()) {
    throw ShapeError("matmul " + dims_to_string(a.dims()) + " x " + dims_to_string(b.dims()) + " -> " +
                     dims_to_string(out.dims()));
  }
}

void check_matmul_tn(const Tensor& a, const Tensor& b, const Tensor& out) {
  if (a.rows() != b.rows() || out.rows() != a.cols() || out.cols() != b.cols()) {
    throw ShapeError("matmul_tn " + dims_to_string(a.dims()) + " x " + dims_to_string(b.dims()));
  }
}

void check_matmul_nt(const Tensor& a, const Tensor& b, const Tensor& out) {
  if (a.cols() != b.cols() || out.rows() != a.rows() || out.cols() != b.rows()) {
    throw ShapeError("matmul_nt " + dims_to_string(a.dims()) + " x " + dims_to_string(b.dims()));
  }
}

void check_nearest(const Tensor& q, const Tensor& c, std::span<std::size_t> index, std::span<double> dist) {
  if (c.rows() == 0) throw ConfigError("empty codebook");
  if (q.cols() != c.cols()) {
    throw ShapeError("query dim " + std::to_string(q.cols()) + " vs codeword dim " + std::to_string(c.cols()));
  }
  if (index.size() != q.rows() || dist.size() != q.rows()) throw ShapeError("nearest_rows output size");
}

void check_patch_grid(std::span<const std::uint8_t> mask, PatchGrid g, std::span<std::uint8_t> labels) {
  if (g.patch == 0 || g.width % g.patch != 0 || g.height % g.patch != 0) {
    throw ConfigError("mask " + std::to_string(g.width) + "x" + std::to_string(g.height) +
                      " not divisible by patch size " + std::to_string(g.patch));
  }
  if (mask.size() != g.width * g.height) throw ShapeError("mask size does not match its dims");
  if (labels.size() != (g.width / g.patch) * (g.height / g.patch)) throw ShapeError("label buffer size");
}

inline void matmul_row(const Tensor& a, const Tensor& b, Tensor& out, std::size_t i) {
  const std::size_t k = a.cols();
  const std::size_t n = b.cols();
  const double* arow = a.data() + i * k;
  double* orow = out.data() + i * n;
  for (std::size_t j = 0; j < n; ++j) orow[j] = 0.0;
  for (std::size_t t = 0; t < k; ++t) {
    const double av = arow[t];
    const double* brow = b.data() + t * n;
    for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
  }
}

inline void matmul_tn_row(const Tensor& a, const Tensor& b, Tensor& out, std::size_t i) {
  const std::size_t r = a.rows();
  const std::size_t m = a.cols();
  const std::size_t n = b.cols();
  double* orow = out.data() + i * n;
  for (std::size_t j = 0; j < n; ++j) orow[j] = 0.0;
  for (std::size_t t = 0; t < r; ++t) {
    const double av = a.data()[t * m + i];
    const double* brow = b.data() + t * n;
    for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
  }
}

inline void matmul_nt_row(const Tensor& a, const Tensor& b, Tensor& out, std::size_t i) {
  const std::size_t k = a.cols();
  const std::size_t n = b.rows();
  const double* arow = a.data() + i * k;
  double* orow = out.data() + i * n;
  for (std::size_t j = 0; j < n; ++j) {
    const double* brow = b.data() + j * k;
    double s = 0.0;
    for (std::size_t t = 0; t < k; ++t) s += arow[t] * brow[t];
    orow[j] = s;
  }
}

inline void nearest_row(const Tensor& q, const Tensor& c, std::span<std::size_t> index, std::span<double> dist,
                        std::size_t i) {
  const std::size_t d = q.cols();
  const double* qrow = q.data() + i * d;
  double best = std::numeric_limits<double>::infinity();
  std::size_t best_j = 0;
  for (std::size_t j = 0; j < c.rows(); ++j) {
    const double* crow = c.data() + j * d;
    double s = 0.0;
    for (std::size_t t = 0; t < d; ++t) {
      const double diff = qrow[t] - crow[t];
      s += diff * diff;
    }
    if (s < best) {
      best = s;
      best_j = j;
    }
  }
  index[i] = best_j;
  dist[i] = best;
}

inline void patch_any_one(std::span<const std::uint8_t> mask, PatchGrid g, std::size_t min_pixels,
                          std::span<std::uint8_t> labels, std::size_t patch_index) {
  const std::size_t grid_cols = g.width / g.patch;
  const std::size_t pr = patch_index / grid_cols;
  const std::size_t pc = patch_index % grid_cols;
  std::size_t count = 0;
  for (std::size_t y = pr * g.patch; y < (pr + 1) * g.patch && count < min_pixels; ++y) {
    const std::uint8_t* line = mask.data() + y * g.width;
    for (std::size_t x = pc * g.patch; x < (pc + 1) * g.patch; ++x) count += line[x] ? 1 : 0;
  }
  labels[patch_index] = count >= min_pixels ? 1 : 0;
}

}  // namespace

namespace serial {

void matmul(const Tensor& a, const Tensor& b, Tensor& out) {
  check_matmul(a, b, out);
  for (std::size_t i = 0; i < a.rows(); ++i) matmul_row(a, b, out, i);
}

void matmul_tn(const Tensor& a, const Tensor& b, Tensor& out) {
  check_matmul_tn(a, b, out);
  for (std::size_t i = 0; i < a.cols(); ++i) matmul_tn_row(a, b, out, i);
}

void matmul_nt(const Tensor& a, const Tensor& b, Tensor& out) {
  check_matmul_nt(a, b, out);
  for (std::size_t i = 0; i < a.rows(); ++i) matmul_nt_row(a, b, out, i);
}

void nearest_rows(const Tensor& queries, const Tensor& codewords, std::span<std::size_t> index,
                  std::span<double> distance) {
  check_nearest(queries, codewords, index, distance);
  for (std::size_t i = 0; i < queries.rows(); ++i) nearest_row(queries, codewords, index, distance, i);
}

void patch_any(std::span<const std::uint8_t> mask, PatchGrid grid, std::size_t min_pixels,
               std::span<std::uint8_t> labels) {
  check_patch_grid(mask, grid, labels);
  for (std::size_t i = 0; i < labels.size(); ++i) patch_any_one(mask, grid, min_pixels, labels, i);
}

}  // namespace serial

namespace parallel {

void matmul(const Tensor& a, const Tensor& b, Tensor& out) {
  check_matmul(a, b, out);
  const auto m = static_cast<std::ptrdiff_t>(a.rows());
  const bool big = a.rows() * a.cols() * b.cols() >= kParallelWork;
#pragma omp parallel for schedule(static) if (big)
  for (std::ptrdiff_t i = 0; i < m; ++i) matmul_row(a, b, out, static_cast<std::size_t>(i));
}

void matmul_tn(const Tensor& a, const Tensor& b, Tensor& out) {
  check_matmul_tn(a, b, out);
  const auto m = static_cast<std::ptrdiff_t>(a.cols());
  const bool big = a.rows() * a.cols() * b.cols() >= kParallelWork;
#pragma omp parallel for schedule(static) if (big)
  for (std::ptrdiff_t i = 0; i < m; ++i) matmul_tn_row(a, b, out, static_cast<std::size_t>(i));
}

void matmul_nt(const Tensor& a, const Tensor& b, Tensor& out) {
  check_matmul_nt(a, b, out);
  const auto m = static_cast<std::ptrdiff_t>(a.rows());
  const bool big = a.rows() * a.cols() * b.rows() >= kParallelWork;
#pragma omp parallel for schedule(static) if (big)
  for (std::ptrdiff_t i = 0; i < m; ++i) matmul_nt_row(a, b, out, static_cast<std::size_t>(i));
}

void nearest_rows(const Tensor& queries, const Tensor& codewords, std::span<std::size_t> index,
                  std::span<double> distance) {
  check_nearest(queries, codewords, index, distance);
  const auto n = static_cast<std::ptrdiff_t>(queries.rows());
  const bool big = queries.size() * codewords.rows() >= kParallelWork;
#pragma omp parallel for schedule(static) if (big)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    nearest_row(queries, codewords, index, distance, static_cast<std::size_t>(i));
  }
}

void patch_any(std::span<const std::uint8_t> mask, PatchGrid grid, std::size_t min_pixels,
               std::span<std::uint8_t> labels) {
  check_patch_grid(mask, grid, labels);
  const auto n = static_cast<std::ptrdiff_t>(labels.size());
  const bool big = mask.size() >= kParallelWork;
#pragma omp parallel for schedule(static) if (big)
  for (std::ptrdiff_t i = 0; i < n; ++i) patch_any_one(mask, grid, min_pixels, labels, static_cast<std::size_t>(i));
}

}  // namespace parallel

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

}  // namespace maven::kernels
