#pragma once

#include <span>
#include <string>
#include <vector>

#include "maven/discrete_tokenizer.hpp"
#include "maven/error.hpp"
#include "maven/mini_lm.hpp"
#include "maven/patch_selector.hpp"
#include "maven/vocab_bridge.hpp"

namespace maven {

class PlanError : public Error {
 public:
  explicit PlanError(const std::string& what) : Error("plan error: " + what, ExitCode::kData) {}
};

/// K images and text runs, with the order in which they appear.
struct MultimodalInput {
  enum class Kind { kImage, kText };
  struct Item {
    Kind kind;
    std::size_t index;
  };

  std::vector<std::string> image_ids;
  std::vector<std::vector<std::size_t>> text_segments;  // unified text ids
  std::vector<Item> plan;

  /// Throws PlanError unless every image and segment is referenced exactly once.
  void validate() const;
};

/// [projected continuous rows (C) ; embedded discrete tokens (D)] for one
/// image. `projected` holds one row per kept patch. Throws DataError when the
/// two halves come from different images.
HybridSequence assemble_image_block(const ReducedSequence& reduced, const DiscreteTokens& discrete,
                                    const Tensor& projected, const EmbeddingTable& table,
                                    const UnifiedVocab& vocab);
HybridSequence assemble_image_block(const ReducedSequence& reduced, const DiscreteTokens& discrete,
                                    const Projector& projector, const EmbeddingTable& table,
                                    const UnifiedVocab& vocab);
/// Continuous-only block [C…C] with no discrete half.
HybridSequence assemble_continuous_block(const ReducedSequence& reduced, const Tensor& projected);

struct InterleaveOptions {
  /// Insert the reserved separator id after every image block that is
  /// followed by another item.
  bool separators = false;
};

/// Concatenates blocks and text runs in plan order. `blocks[k]` is the block
/// of image k. Targets remain on D and T positions only.
HybridSequence interleave(const MultimodalInput& input, std::span<const HybridSequence> blocks,
                          const EmbeddingTable& table, const UnifiedVocab& vocab, InterleaveOptions options = {});

/// Image and tokenizer geometry that determines token counts.
struct Geometry {
  std::size_t width = 32;
  std::size_t height = 32;
  std::size_t patch = 8;
  std::size_t discrete_len = 4;

  /// n_c = (W/p)·(H/p); throws ConfigError on non-divisible dims.
  std::size_t continuous_len() const;

  static Geometry desk() { return {}; }
  /// 336×336 at p=14 (576 patches) with 32 discrete tokens.
  static Geometry paper() { return {336, 336, 14, 32}; }
};

struct ImageBudget {
  std::size_t continuous = 0;  // n_c
  std::size_t kept = 0;        // m
  std::size_t discrete = 0;    // n_d
};

struct BudgetReport {
  double alpha = 1.0;
  std::vector<ImageBudget> images;
  std::size_t continuous_total = 0;
  std::size_t discrete_total = 0;
  std::size_t text_total = 0;
  std::size_t visual_total = 0;
  std::size_t total = 0;
  std::size_t baseline_total = 0;  // unreduced continuous-only tokens plus text
  double quadratic_ratio = 1.0;    // (total / baseline_total)²

  /// {"alpha":…,"m":…,"nd":…,"visual_total":…,"quadratic_ratio":…}
  std::string to_json_line() const;
};

/// Closed-form token accounting for `images` images of the given geometry.
BudgetReport budget_report(const Geometry& geometry, double alpha, std::size_t images = 1, std::size_t text_len = 0);
std::vector<BudgetReport> budget_report(const Geometry& geometry, std::span<const double> alphas,
                                        std::size_t images = 1, std::size_t text_len = 0);

}  // namespace maven
