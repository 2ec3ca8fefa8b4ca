#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>

#include "maven/assembler.hpp"
#include "maven/continuous_encoder.hpp"
#include "maven/discrete_tokenizer.hpp"
#include "maven/mini_lm.hpp"
#include "maven/patch_selector.hpp"
#include "maven/pseudo_labels.hpp"
#include "maven/vocab_bridge.hpp"

namespace maven {

struct ModelConfig {
  Geometry geometry;
  std::size_t encoder_dim = 32;
  std::size_t encoder_layers = 1;
  std::size_t codebook_size = 64;
  std::size_t codebook_images = 128;  // synthetic images the codebook is fitted on
  std::size_t codebook_iterations = 25;
  std::size_t text_vocab = 32;
  std::size_t lm_dim = 64;
  std::size_t lm_layers = 2;
  std::size_t lm_heads = 2;
  std::size_t lm_max_len = 512;
  double keep_ratio = 0.25;

  static ModelConfig desk() { return {}; }
  /// 336×336 images at p=14 with 32 discrete tokens; everything else desk-sized.
  static ModelConfig paper_geometry();

  EncoderConfig encoder_config() const;
  LmConfig lm_config() const;
  UnifiedVocab vocab() const { return {text_vocab, codebook_size}; }
  SynthConfig synth_config() const;

  /// key=value lines, one per field.
  std::string to_text() const;
  static ModelConfig parse(const std::string& text);
};

using ChecksumMap = std::map<std::string, std::string>;

/// Every component of the hybrid encoder plus the language model, with one
/// flat namespace of named parameters.
class MavenModel {
 public:
  struct EncodedImage {
    ContinuousSequence continuous;
    DiscreteTokens discrete;
  };

  /// Seeds every component from `seed`. The codebook is fitted with k-means
  /// on slots of synthetic images; pass fit_codebook = false to get a zeroed
  /// placeholder (used when tensors are about to be loaded).
  static MavenModel initialize(const ModelConfig& config, std::uint64_t seed, bool fit_codebook = true);

  const ModelConfig& config() const noexcept { return config_; }
  const UnifiedVocab& vocab() const noexcept { return vocab_; }

  PatchEncoder& encoder() noexcept { return encoder_; }
  const PatchEncoder& encoder() const noexcept { return encoder_; }
  Codebook codebook() const { return Codebook(codebook_.value); }
  Projector& projector() noexcept { return projector_; }
  const Projector& projector() const noexcept { return projector_; }
  SelectorMLP& selector() noexcept { return selector_; }
  const SelectorMLP& selector() const noexcept { return selector_; }
  MiniLm& lm() noexcept { return lm_; }
  const MiniLm& lm() const noexcept { return lm_; }

  /// encoder.*, tokenizer.codebook, projector.*, selector.*, lm.*
  ParamRefs parameters();
  /// Throws DataError for unknown names.
  Parameter& param(std::string_view name);
  /// tensor_checksum of every parameter, keyed by name.
  ChecksumMap checksums();

  EncodedImage encode_image(const ImageGrid& image, const std::string& id) const;
  EosSummary eos(const DiscreteTokens& discrete) const { return eos_summary(discrete, lm_, vocab_); }
  std::vector<double> scores(const EncodedImage& encoded) const;
  ReducedSequence reduce(const EncodedImage& encoded, double alpha) const;

 private:
  ModelConfig config_;
  UnifiedVocab vocab_;
  PatchEncoder encoder_;
  Parameter codebook_;
  Projector projector_;
  SelectorMLP selector_;
  MiniLm lm_;
};

/// Named tensors plus provenance. `manifest` maps each name to the sha256 of
/// its MVT1 serialization.
struct Checkpoint {
  ModelConfig config;
  int stage = 0;
  std::uint64_t seed = 0;
  std::map<std::string, Tensor> tensors;
  ChecksumMap manifest;
};

Checkpoint make_checkpoint(MavenModel& model, int stage, std::uint64_t seed);
MavenModel restore_model(const Checkpoint& checkpoint);

/// Directory layout: one MVT1 file per parameter (params/<name>.mvt, with any
/// '/' in a name mapped to a subdirectory), manifest.txt of "name sha256"
/// lines, checkpoint.txt (stage, seed), config.txt, vocab.txt. The directory
/// is staged under a temporary name and renamed into place.
void save_checkpoint(const std::filesystem::path& dir, const Checkpoint& checkpoint);
/// Verifies every file against manifest.txt; throws DataError on mismatch and
/// PreconditionError when the directory is missing.
Checkpoint load_checkpoint(const std::filesystem::path& dir);

std::string format_manifest(const ChecksumMap& manifest);

}  // namespace maven
