#pragma once

#include <string>
#include <vector>

#include "maven/continuous_encoder.hpp"
#include "maven/rng.hpp"
#include "maven/tensor.hpp"

namespace maven {

/// Discrete visual vocabulary: N_v distinct codewords of dimension z_d.
class Codebook {
 public:
  Codebook() = default;
  /// Throws ConfigError unless N_v >= 2, all values finite and all rows distinct.
  explicit Codebook(Tensor codewords);

  const Tensor& codewords() const noexcept { return codewords_; }
  std::size_t size() const { return codewords_.rows(); }
  std::size_t dim() const { return codewords_.cols(); }

 private:
  Tensor codewords_;
};

struct DiscreteTokens {
  std::vector<std::size_t> indices;  // each in [0, N_v)
  std::string image_id;

  std::size_t length() const noexcept { return indices.size(); }
};

/// Mean-pools consecutive groups of n_c / n_d patch rows into n_d slots.
Tensor pool_to_slots(const ContinuousSequence& seq, std::size_t slots);

/// Nearest codeword per slot by squared Euclidean distance, lowest index on ties.
DiscreteTokens quantize(const Tensor& slots, const Codebook& codebook, std::string image_id = {});

struct KMeansTrace {
  /// Mean squared quantization error: entry 0 after seeding, then one entry
  /// per completed Lloyd iteration.
  std::vector<double> objective;
};

/// k-means with k-means++ seeding. Clusters that become empty are re-seeded
/// at the sample farthest from its current codeword. Stops early once the
/// assignment is stable. Throws DataError with fewer samples than codewords.
Codebook train_codebook(const Tensor& samples, std::size_t codebook_size, std::size_t iterations, Rng rng,
                        KMeansTrace* trace = nullptr);

/// Mean squared distance from each sample to its nearest codeword.
double quantization_error(const Tensor& samples, const Tensor& codewords);

}  // namespace maven
