#pragma once

#include <span>
#include <string>
#include <vector>

#include "maven/continuous_encoder.hpp"
#include "maven/discrete_tokenizer.hpp"
#include "maven/mini_lm.hpp"
#include "maven/optim.hpp"
#include "maven/vocab_bridge.hpp"

namespace maven {

/// Last-layer LM state at an EOS token appended after an image's discrete tokens.
struct EosSummary {
  Tensor vector;  // [z_llm]
  std::vector<std::size_t> provenance;  // the discrete indices it summarizes
};

/// Runs [d_1 + N, …, d_nd + N, EOS] through the LM and returns the final
/// hidden state at the EOS position.
EosSummary eos_summary(const DiscreteTokens& discrete, const MiniLm& lm, const UnifiedVocab& vocab);

/// Three-layer relevance scorer: 2·z_llm → h → h → 1 with ReLU between.
class SelectorMLP {
 public:
  struct Cache {
    Tensor input, pre1, act1, pre2, act2;
  };

  SelectorMLP() = default;
  SelectorMLP(std::size_t input_dim, std::size_t hidden, Rng rng);

  /// One logit per feature row, shape [n × 1].
  Tensor logits(const Tensor& features, Cache* cache = nullptr) const;
  /// Backward from dLoss/dlogits; accumulates parameter grads.
  void backward(const Cache& cache, const Tensor& d_logits);

  std::size_t input_dim() const { return layer1_.in_dim(); }
  ParamRefs parameters();

 private:
  Linear layer1_, layer2_, layer3_;
};

/// [projected patch_i | h_eos] rows, shape [n × 2·z_llm].
Tensor selector_features(const Tensor& projected_patches, const Tensor& eos);

/// a_i = sigmoid(F(concat(projector(v_i), h_eos))), independently per patch.
std::vector<double> score_patches(const ContinuousSequence& seq, const EosSummary& eos, const Projector& projector,
                                  const SelectorMLP& mlp);

struct ReducedSequence {
  Tensor tokens;  // [m × z]
  std::vector<std::size_t> kept_positions;  // strictly increasing
  std::vector<double> scores;               // scores of the kept rows
  std::string image_id;

  std::size_t length() const noexcept { return kept_positions.size(); }
};

/// m = floor(n_c · alpha). A 1e-9 guard absorbs binary rounding of alpha so
/// that e.g. 20 · 0.7 yields 14. Throws ConfigError for alpha outside (0, 1]
/// or m == 0.
std::size_t keep_count(std::size_t n_c, double alpha);

/// Keeps the m highest-scoring patches (ties toward the lower index) in their
/// original order.
ReducedSequence select_top_m(const ContinuousSequence& seq, std::span<const double> scores, double alpha);

struct SelectorExample {
  ContinuousSequence sequence;
  EosSummary eos;
  std::vector<double> labels;  // one 0/1 label per patch
};

struct SelectorTrainConfig {
  std::size_t steps = 300;
  std::size_t batch = 8;
  AdamWConfig optimizer{.lr = 1e-3};
};

struct SelectorTrainResult {
  std::vector<double> loss_trace;  // one entry per step
};

/// Minimizes patch-level BCE. Only the selector's parameters are updated; the
/// projector is used read-only for the patch half of the features.
SelectorTrainResult train_selector(std::span<const SelectorExample> data, const Projector& projector,
                                   SelectorMLP& mlp, const SelectorTrainConfig& config);

/// Synthetic selector data with a hidden linear rule: random patch features
/// and EOS summaries, labelled 1 iff w·projector(v_i) + u·h_eos > 0 for a
/// fixed random (w, u). `patches` rows per example, `feature_dim` = z.
std::vector<SelectorExample> planted_rule_examples(std::size_t count, std::size_t patches, std::size_t feature_dim,
                                                   const Projector& projector, Rng rng);

/// Fraction of patches whose thresholded score (>= 0.5) matches the label.
double selector_accuracy(std::span<const SelectorExample> data, const Projector& projector, const SelectorMLP& mlp);

}  // namespace maven
