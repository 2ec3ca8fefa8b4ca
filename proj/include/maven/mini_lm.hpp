#pragma once

#include <cstdint>
#include <filesystem>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "maven/layers.hpp"
#include "maven/vocab_bridge.hpp"

namespace maven {

enum class SegmentTag : char {
  kContinuous = 'C',
  kDiscrete = 'D',
  kText = 'T',
};

inline constexpr std::size_t kNoToken = std::numeric_limits<std::size_t>::max();
inline constexpr std::size_t kNoTarget = std::numeric_limits<std::size_t>::max();

/// Location of one image's [C…C D…D] block inside a hybrid sequence.
struct ImageSpan {
  std::size_t image_slot = 0;  // index into the input's image list
  std::string image_id;
  std::size_t begin = 0;
  std::size_t continuous_len = 0;
  std::size_t discrete_len = 0;

  std::size_t end() const noexcept { return begin + continuous_len + discrete_len; }
};

/// Embedded LM input with per-position bookkeeping.
///
/// targets[i] is the id the model must emit at position i, predicted from the
/// output at position i-1; kNoTarget marks positions outside the loss.
/// Continuous positions never carry a token id or a target.
struct HybridSequence {
  Tensor embedded;  // [len × z_llm]
  std::vector<SegmentTag> tags;
  std::vector<std::size_t> token_ids;
  std::vector<std::size_t> targets;
  std::vector<ImageSpan> spans;

  std::size_t length() const noexcept { return tags.size(); }
  std::string tag_string() const;
  std::size_t target_count() const;

  /// Throws InvariantError when the bookkeeping is inconsistent.
  void validate() const;
  /// Clears every target outside [begin, end).
  void keep_targets_in(std::size_t begin, std::size_t end);

  /// Text/discrete-only sequence from unified ids; every position is a target.
  static HybridSequence from_tokens(std::span<const std::size_t> ids, const EmbeddingTable& table,
                                    const UnifiedVocab& vocab);
};

/// Concatenates sequences in order, shifting image spans.
HybridSequence concat_sequences(std::span<const HybridSequence> parts);

struct LmConfig {
  std::size_t dim = 64;
  std::size_t layers = 2;
  std::size_t heads = 2;
  std::size_t max_len = 512;
  std::size_t vocab_size = 0;  // N_u
  std::size_t mlp_hidden = 0;  // 0 selects 4 * dim

  std::size_t hidden_width() const noexcept { return mlp_hidden ? mlp_hidden : 4 * dim; }
  void validate() const;
};

/// Tiny pre-norm decoder-only transformer. The embedding table is shared with
/// the output head (logits = LN(h) · Eᵀ), and positions use learned absolute
/// embeddings.
class MiniLm {
 public:
  struct Block {
    LayerNorm ln1;
    Linear query, key, value, out;
    LayerNorm ln2;
    Linear fc1, fc2;
  };

  struct BlockCache {
    Tensor input;
    LayerNorm::Cache ln1;
    Tensor normed1, q, k, v;
    std::vector<Tensor> probs;  // per head [len × len]
    Tensor attended;
    Tensor mid;
    LayerNorm::Cache ln2;
    Tensor normed2, pre_act, act;
  };

  struct Cache {
    std::vector<BlockCache> blocks;
    LayerNorm::Cache final_ln;
  };

  struct Forward {
    Tensor hidden;                             // [len × z], after the final norm
    std::vector<std::vector<Tensor>> attention;  // [layer][head] -> [len × len]
  };

  struct LossGrad {
    double loss = 0.0;
    Tensor d_embedded;  // dLoss/d(input embedding rows)
  };

  MiniLm() = default;
  MiniLm(LmConfig config, EmbeddingTable table, Rng rng);

  /// Throws CapacityError when the sequence is longer than max_len.
  Forward forward_hidden(const Tensor& embedded, Cache* cache = nullptr) const;
  Forward forward_hidden(const HybridSequence& seq, Cache* cache = nullptr) const {
    return forward_hidden(seq.embedded, cache);
  }

  Tensor logits(const Tensor& hidden) const;

  /// Mean next-token cross-entropy over target positions. Throws DataError
  /// when there is no target after position 0.
  double lm_loss(const HybridSequence& seq) const;

  /// lm_loss plus gradients: accumulates into every LM parameter (including
  /// the tied head on the embedding table) and returns the gradient with
  /// respect to the input rows. Input-row gradients are not scattered into
  /// the table; see accumulate_token_grads.
  LossGrad lm_loss_backward(const HybridSequence& seq);

  /// Scatter-adds d_embedded rows of token positions (D and T) into the
  /// embedding gradient.
  void accumulate_token_grads(const HybridSequence& seq, const Tensor& d_embedded);

  /// Argmax decoding from token ids; ties go to the lowest id.
  std::vector<std::size_t> generate_greedy(std::span<const std::size_t> prefix, std::size_t steps,
                                           const UnifiedVocab& vocab) const;
  /// Argmax decoding continuing an already embedded hybrid prefix. Returns
  /// only the generated ids.
  std::vector<std::size_t> generate_greedy(const HybridSequence& prefix, std::size_t steps) const;

  const LmConfig& config() const noexcept { return config_; }
  EmbeddingTable& embedding() noexcept { return embedding_; }
  const EmbeddingTable& embedding() const noexcept { return embedding_; }

  /// All LM parameters, embedding table first.
  ParamRefs parameters();

 private:
  Tensor attention_forward(const Block& b, BlockCache& c) const;
  Tensor attention_backward(Block& b, const BlockCache& c, const Tensor& d_out);
  Tensor backward(const Cache& cache, const Tensor& d_hidden);

  LmConfig config_;
  EmbeddingTable embedding_;
  Parameter positions_;
  std::vector<Block> blocks_;
  LayerNorm final_norm_;
};

/// Head-averaged attention of one layer, exported with its segment tags.
struct AttentionExport {
  Tensor matrix;  // [len × len]
  std::string tags;

  /// Mean, over text rows, of the attention mass landing on discrete-visual
  /// columns. Lies in [0, 1]; zero when there are no text rows.
  double text_to_segment_mass(SegmentTag target) const;
};

/// Throws ConfigError for an invalid layer index.
AttentionExport attention_export(const HybridSequence& seq, const MiniLm& lm, std::size_t layer);

/// Writes `<stem>.mvt` (MVT1 matrix) and `<stem>.tags` (one tag char per line).
void write_attention_export(const std::filesystem::path& stem, const AttentionExport& exported);
AttentionExport read_attention_export(const std::filesystem::path& stem);

}  // namespace maven
