#pragma once

// Reference implementations used as oracles by the tests. They are written
// for clarity, never for speed, and share no code with the library.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "maven/tensor.hpp"

namespace testing {

inline maven::Tensor triple_loop_matmul(const maven::Tensor& a, const maven::Tensor& b) {
  maven::Tensor c = maven::Tensor::matrix(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) s += a(i, k) * b(k, j);
      c(i, j) = s;
    }
  }
  return c;
}

inline maven::Tensor transpose(const maven::Tensor& a) {
  maven::Tensor t = maven::Tensor::matrix(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
  }
  return t;
}

/// Index of the closest row of `codewords`, scanning every candidate.
inline std::size_t brute_nearest(std::span<const double> q, const maven::Tensor& codewords) {
  std::size_t best = 0;
  double best_d = INFINITY;
  for (std::size_t r = 0; r < codewords.rows(); ++r) {
    double d = 0.0;
    for (std::size_t c = 0; c < q.size(); ++c) {
      const double diff = q[c] - codewords(r, c);
      d += diff * diff;
    }
    if (d < best_d) {
      best_d = d;
      best = r;
    }
  }
  return best;
}

/// Sort every index by (score desc, index asc), take m, restore index order.
inline std::vector<std::size_t> sort_and_take(const std::vector<double>& scores, std::size_t m) {
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return a < b;
  });
  idx.resize(m);
  std::sort(idx.begin(), idx.end());
  return idx;
}

/// Per-pixel scan: a patch is positive when any of its pixels is set.
inline std::vector<std::uint8_t> pixel_scan_labels(const std::vector<std::uint8_t>& mask, std::size_t w,
                                                   std::size_t h, std::size_t p) {
  std::vector<std::uint8_t> out((w / p) * (h / p), 0);
  for (std::size_t py = 0; py < h / p; ++py) {
    for (std::size_t px = 0; px < w / p; ++px) {
      bool any = false;
      for (std::size_t y = py * p; y < (py + 1) * p; ++y) {
        for (std::size_t x = px * p; x < (px + 1) * p; ++x) any = any || mask[y * w + x] != 0;
      }
      out[py * (w / p) + px] = any ? 1 : 0;
    }
  }
  return out;
}

/// Fresh scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("maven_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace testing
