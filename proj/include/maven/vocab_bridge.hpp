#pragma once

#include <filesystem>
#include <span>
#include <vector>

#include "maven/continuous_encoder.hpp"
#include "maven/layers.hpp"
#include "maven/rng.hpp"

namespace maven {

/// Text ids occupy [0, N); visual ids occupy [N, N + N_v).
struct UnifiedVocab {
  std::size_t text_size = 0;    // N
  std::size_t visual_size = 0;  // N_v

  std::size_t unified_size() const noexcept { return text_size + visual_size; }
  /// Reserved end-of-sequence id: the last text id.
  std::size_t eos_id() const noexcept { return text_size - 1; }
  /// Reserved separator id used between interleaved blocks when enabled.
  std::size_t separator_id() const noexcept { return text_size - 2; }

  bool is_visual(std::size_t unified) const noexcept { return unified >= text_size && unified < unified_size(); }
  bool is_text(std::size_t unified) const noexcept { return unified < text_size; }
};

/// d ↦ d + N. Throws IndexError unless 0 <= d < N_v.
std::size_t to_unified(std::size_t discrete_index, const UnifiedVocab& vocab);
/// Inverse of to_unified. Throws IndexError for ids outside the visual range.
std::size_t to_discrete(std::size_t unified_id, const UnifiedVocab& vocab);
std::vector<std::size_t> to_unified(std::span<const std::size_t> discrete, const UnifiedVocab& vocab);

// Manifest: "N=<int>\nNV=<int>\nEOS=<int>\n".
std::string format_vocab_manifest(const UnifiedVocab& vocab);
UnifiedVocab parse_vocab_manifest(const std::string& text);
void write_vocab_manifest(const std::filesystem::path& path, const UnifiedVocab& vocab);
UnifiedVocab read_vocab_manifest(const std::filesystem::path& path);

/// Shared token embedding table [N_u × z_llm]; also serves as the tied LM head.
struct EmbeddingTable {
  Parameter weights;

  std::size_t vocab_size() const { return weights.value.rows(); }
  std::size_t dim() const { return weights.value.cols(); }
};

/// Copies `base` [N × z] and appends N_v rows drawn N(0, 0.02²) from `rng`.
EmbeddingTable expand_embeddings(const Tensor& base, std::size_t visual_rows, Rng rng,
                                 const std::string& name = "lm.embedding");

/// Row gather; throws IndexError on ids >= N_u.
Tensor embed(std::span<const std::size_t> ids, const EmbeddingTable& table);
/// Scatter-adds d_rows into the gradient rows of `ids`.
void embed_backward(std::span<const std::size_t> ids, const Tensor& d_rows, EmbeddingTable& table);

/// Two-layer MLP with GELU bridging patch features (z) into the LM embedding
/// space (z_llm); hidden width z_llm.
class Projector {
 public:
  struct Cache {
    Tensor input;
    Tensor hidden_pre;
    Tensor hidden;
  };

  Projector() = default;
  Projector(std::size_t in_dim, std::size_t out_dim, Rng rng);

  Tensor forward(const Tensor& x, Cache* cache = nullptr) const;
  /// Accumulates parameter grads, returns dL/dx.
  Tensor backward(const Cache& cache, const Tensor& dy);

  std::size_t in_dim() const { return fc1_.in_dim(); }
  std::size_t out_dim() const { return fc2_.out_dim(); }
  ParamRefs parameters();

 private:
  Linear fc1_;
  Linear fc2_;
};

/// Row-wise projector application; the output has one row per input token.
Tensor project_continuous(const ContinuousSequence& seq, const Projector& projector);

}  // namespace maven
