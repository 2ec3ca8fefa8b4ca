#include "maven/discrete_tokenizer.hpp"

#include <algorithm>
#include <limits>
#include <set>

#include "maven/error.hpp"
#include "maven/kernels.hpp"

namespace maven {

Codebook::Codebook(Tensor codewords) : codewords_(std::move(codewords)) {
  if (codewords_.ndim() != 2) throw ConfigError("codebook must be a matrix");
  if (codewords_.rows() < 2) throw ConfigError("codebook needs at least 2 codewords");
  if (!codewords_.all_finite()) throw ConfigError("codebook contains non-finite values");
  std::set<std::vector<double>> seen;
  for (std::size_t i = 0; i < codewords_.rows(); ++i) {
    auto r = codewords_.row(i);
    if (!seen.emplace(r.begin(), r.end()).second) {
      throw ConfigError("codeword " + std::to_string(i) + " duplicates an earlier codeword");
    }
  }
}

Tensor pool_to_slots(const ContinuousSequence& seq, std::size_t slots) {
  const std::size_t n = seq.length();
  if (slots == 0 || n % slots != 0) {
    throw ConfigError("cannot pool " + std::to_string(n) + " patches into " + std::to_string(slots) + " slots");
  }
  const std::size_t group = n / slots;
  const std::size_t z = seq.dim();
  Tensor out = Tensor::matrix(slots, z);
  for (std::size_t s = 0; s < slots; ++s) {
    for (std::size_t g = 0; g < group; ++g) {
      auto src = seq.tokens.row(s * group + g);
      for (std::size_t j = 0; j < z; ++j) out(s, j) += src[j];
    }
    for (std::size_t j = 0; j < z; ++j) out(s, j) /= static_cast<double>(group);
  }
  return out;
}

DiscreteTokens quantize(const Tensor& slots, const Codebook& codebook, std::string image_id) {
  if (codebook.codewords().empty()) throw ConfigError("empty codebook");
  if (slots.cols() != codebook.dim()) {
    throw ShapeError("slot dim " + std::to_string(slots.cols()) + " vs codebook dim " +
                     std::to_string(codebook.dim()));
  }
  DiscreteTokens out;
  out.image_id = std::move(image_id);
  out.indices.resize(slots.rows());
  std::vector<double> dist(slots.rows());
  kernels::parallel::nearest_rows(slots, codebook.codewords(), out.indices, dist);
  return out;
}

double quantization_error(const Tensor& samples, const Tensor& codewords) {
  std::vector<std::size_t> idx(samples.rows());
  std::vector<double> dist(samples.rows());
  kernels::parallel::nearest_rows(samples, codewords, idx, dist);
  double total = 0.0;
  for (double d : dist) total += d;
  return total / static_cast<double>(samples.rows());
}

namespace {

double squared_distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s;
}

Tensor kmeans_plus_plus(const Tensor& samples, std::size_t k, Rng& rng) {
  const std::size_t n = samples.rows();
  const std::size_t z = samples.cols();
  Tensor centers = Tensor::matrix(k, z);
  std::vector<double> nearest(n, std::numeric_limits<double>::infinity());
  std::size_t pick = rng.below(n);
  for (std::size_t c = 0; c < k; ++c) {
    std::copy_n(samples.data() + pick * z, z, centers.data() + c * z);
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      nearest[i] = std::min(nearest[i], squared_distance(samples.row(i), centers.row(c)));
      total += nearest[i];
    }
    if (c + 1 == k) break;
    if (total <= 0.0) throw DataError("fewer distinct samples than requested codewords");
    const double target = rng.uniform() * total;
    double acc = 0.0;
    pick = n;
    for (std::size_t i = 0; i < n; ++i) {
      acc += nearest[i];
      if (nearest[i] > 0.0 && acc > target) {
        pick = i;
        break;
      }
    }
    if (pick == n) {
      // Rounding left target at the very top; take the last positive-weight sample.
      for (std::size_t i = n; i-- > 0;) {
        if (nearest[i] > 0.0) {
          pick = i;
          break;
        }
      }
    }
  }
  return centers;
}

}  // namespace

Codebook train_codebook(const Tensor& samples, std::size_t k, std::size_t iterations, Rng rng, KMeansTrace* trace) {
  const std::size_t n = samples.rows();
  const std::size_t z = samples.cols();
  if (k < 2) throw ConfigError("codebook size must be at least 2");
  if (n < k) {
    throw DataError("k-means needs at least " + std::to_string(k) + " samples, got " + std::to_string(n));
  }
  Tensor centers = kmeans_plus_plus(samples, k, rng);

  std::vector<std::size_t> assign(n);
  std::vector<double> dist(n);
  auto objective = [&]() {
    double total = 0.0;
    for (double d : dist) total += d;
    return total / static_cast<double>(n);
  };
  kernels::parallel::nearest_rows(samples, centers, assign, dist);
  if (trace) trace->objective = {objective()};

  std::vector<std::size_t> previous;
  for (std::size_t it = 0; it < iterations; ++it) {
    Tensor sums = Tensor::matrix(k, z);
    std::vector<std::size_t> counts(k, 0);
    for (std::size_t i = 0; i < n; ++i) {
      ++counts[assign[i]];
      auto row = samples.row(i);
      for (std::size_t j = 0; j < z; ++j) sums(assign[i], j) += row[j];
    }
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] == 0) continue;
      for (std::size_t j = 0; j < z; ++j) centers(c, j) = sums(c, j) / static_cast<double>(counts[c]);
    }
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] != 0) continue;
      kernels::parallel::nearest_rows(samples, centers, assign, dist);
      const auto far = static_cast<std::size_t>(std::max_element(dist.begin(), dist.end()) - dist.begin());
      std::copy_n(samples.data() + far * z, z, centers.data() + c * z);
    }
    previous = assign;
    kernels::parallel::nearest_rows(samples, centers, assign, dist);
    if (trace) trace->objective.push_back(objective());
    if (assign == previous) break;
  }
  return Codebook(std::move(centers));
}

}  // namespace maven
