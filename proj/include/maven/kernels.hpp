#pragma once

// Data-parallel inner loops. Every kernel exists twice: `serial` is the
// reference kept for testing, `parallel` splits the outer loop across OpenMP
// threads. Each output element is produced by one thread with the same
// summation order as the serial loop, so both variants agree bit-for-bit.

#include <cstddef>
#include <cstdint>
#include <span>

#include "maven/tensor.hpp"

namespace maven::kernels {

struct PatchGrid {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t patch = 1;
};

namespace serial {

/// out[m×n] = a[m×k] · b[k×n]; the k-sum runs left to right.
void matmul(const Tensor& a, const Tensor& b, Tensor& out);
/// out[m×n] = aᵀ · b for a[r×m], b[r×n]; the r-sum runs top to bottom.
void matmul_tn(const Tensor& a, const Tensor& b, Tensor& out);
/// out[m×n] = a · bᵀ for a[m×k], b[n×k].
void matmul_nt(const Tensor& a, const Tensor& b, Tensor& out);

/// For every query row, the index of the nearest codeword row by squared
/// Euclidean distance; ties resolve to the lowest index.
void nearest_rows(const Tensor& queries, const Tensor& codewords, std::span<std::size_t> index,
                  std::span<double> distance);

/// labels[i] = 1 iff patch i (row-major over the patch grid) holds at least
/// `min_pixels` set mask pixels.
void patch_any(std::span<const std::uint8_t> mask, PatchGrid grid, std::size_t min_pixels,
               std::span<std::uint8_t> labels);

}  // namespace serial

namespace parallel {

void matmul(const Tensor& a, const Tensor& b, Tensor& out);
void matmul_tn(const Tensor& a, const Tensor& b, Tensor& out);
void matmul_nt(const Tensor& a, const Tensor& b, Tensor& out);
void nearest_rows(const Tensor& queries, const Tensor& codewords, std::span<std::size_t> index,
                  std::span<double> distance);
void patch_any(std::span<const std::uint8_t> mask, PatchGrid grid, std::size_t min_pixels,
               std::span<std::uint8_t> labels);

}  // namespace parallel

/// Threads OpenMP will use for the parallel variants (1 without OpenMP).
int max_threads();

}  // namespace maven::kernels
