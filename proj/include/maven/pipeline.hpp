#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "maven/corpus.hpp"
#include "maven/model.hpp"

namespace maven {

enum class LossKind {
  kSelectorBce,
  kDiscreteAutoregressive,
  kContinuousCaption,
  kFullInstruction,
};

const char* loss_kind_name(LossKind kind);

/// Which parameters stage `stage` may update.
///   1: selector.*
///   2: lm.embedding
///   3: projector.*
///   4: everything except encoder.*, selector.* and tokenizer.codebook
bool stage_trainable(int stage, std::string_view name);

struct StageConfig {
  int stage = 1;
  std::size_t steps = 300;
  double lr = 1e-3;
  std::size_t batch = 8;
  std::string data;  // dataset directory; empty when the caller supplies a corpus
  std::uint64_t seed = 0;
  /// Stage 2 only: restrict updates to the appended visual rows [N, N_u).
  bool new_rows_only = false;
  /// Stage 1 only: trailing fraction of images held out for accuracy.
  double holdout = 0.2;

  static StageConfig defaults(int stage);
  /// key=value lines; keys stage, steps, lr, batch, data, seed,
  /// new_rows_only, holdout. Missing keys keep defaults(stage).
  static StageConfig parse(const std::string& text);
  std::string to_text() const;

  LossKind loss_kind() const;
  bool trainable(std::string_view name) const { return stage_trainable(stage, name); }
  void validate() const;
};

struct StageReport {
  int stage = 0;
  LossKind loss = LossKind::kSelectorBce;
  std::vector<double> loss_trace;  // one minibatch loss per step
  double initial_loss = 0.0;       // full-dataset loss before the first step
  double final_loss = 0.0;         // full-dataset loss after the last step
  double heldout_accuracy = -1.0;  // stage 1 only
  std::size_t examples = 0;
  ChecksumMap before;
  ChecksumMap after;
  std::vector<std::string> changed;  // parameters whose checksum moved
};

/// Each stage sets the trainable flags from its predicate, trains, and then
/// audits checksums: a frozen parameter that changed raises InvariantError.
StageReport run_stage1(MavenModel& model, const ToyCorpus& corpus, const StageConfig& config);
StageReport run_stage2(MavenModel& model, const ToyCorpus& corpus, const StageConfig& config);
StageReport run_stage3(MavenModel& model, const ToyCorpus& corpus, const StageConfig& config);
StageReport run_stage4(MavenModel& model, const ToyCorpus& corpus, const StageConfig& config);
StageReport run_stage(MavenModel& model, const ToyCorpus& corpus, const StageConfig& config);

struct RunAllResult {
  Checkpoint final_checkpoint;
  std::vector<Checkpoint> checkpoints;  // one per stage
  std::vector<StageReport> reports;
};

/// Initializes a model from `seed` and runs `configs` in order. The configs
/// must be exactly stages 1, 2, 3, 4; anything else is a ConfigError.
RunAllResult run_all(std::uint64_t seed, const ModelConfig& model_config, const ToyCorpus& corpus,
                     std::span<const StageConfig> configs);
std::vector<StageConfig> default_stage_configs(std::uint64_t seed);

/// Sequences used by each stage, exposed for audits.
std::vector<HybridSequence> stage2_sequences(const MavenModel& model, const ToyCorpus& corpus);
std::vector<HybridSequence> stage3_sequences(const MavenModel& model, const ToyCorpus& corpus);

/// Hybrid input for images + instruction (no response), built with the
/// current weights.
HybridSequence instruction_prefix(const MavenModel& model, std::span<const ImageGrid> images,
                                  std::span<const std::size_t> instruction, bool include_discrete = true);

/// Greedy decoding until EOS or `max_tokens`; EOS is not included.
std::vector<std::size_t> generate_response(const MavenModel& model, std::span<const ImageGrid> images,
                                           std::span<const std::size_t> instruction, std::size_t max_tokens = 8);

struct AttentionReport {
  double text_to_discrete = 0.0;    // hybrid input
  double text_to_continuous = 0.0;  // same input without discrete tokens
  AttentionExport hybrid;
};

/// Last-layer attention on one stage-4 sample, averaged over heads.
AttentionReport attention_report(const MavenModel& model, const ToyCorpus& corpus, std::size_t sample = 0);

}  // namespace maven
