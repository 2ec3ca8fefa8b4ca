#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "maven/assembler.hpp"
#include "maven/pseudo_labels.hpp"
#include "maven/rng.hpp"
#include "maven/vocab_bridge.hpp"

namespace maven {

/// Text ids of the synthetic language. Id 0 is unused padding, ids in
/// [kFirstFreeWord, N-2) carry no meaning, and N-2 and N-1 are the separator
/// and EOS.
namespace words {
inline constexpr std::size_t kTopLeft = 1;
inline constexpr std::size_t kTopRight = 2;
inline constexpr std::size_t kBottomLeft = 3;
inline constexpr std::size_t kBottomRight = 4;
inline constexpr std::size_t kSmall = 5;
inline constexpr std::size_t kLarge = 6;
inline constexpr std::size_t kWhere = 7;
inline constexpr std::size_t kDescribe = 8;
inline constexpr std::size_t kFirstFreeWord = 9;
}  // namespace words

/// Quadrant word of the rectangle centre.
std::size_t quadrant_word(const Rect& rect, std::size_t width, std::size_t height);

struct TextPair {
  std::size_t image = 0;  // index into ToyCorpus::samples
  std::vector<std::size_t> text;
};

struct InstructionSample {
  std::vector<std::size_t> images;
  std::vector<std::size_t> instruction;
  std::vector<std::size_t> response;  // EOS not included
};

struct CorpusConfig {
  std::size_t stage2_pairs = 8;
  std::size_t stage3_pairs = 8;
  std::size_t stage4_samples = 8;
  std::size_t stage4_pool = 8;  // images stage-4 samples draw from
  std::size_t text_len = 3;     // length of the random stage-2 strings
};

/// Synthetic training data for all four stages, derived from one image pool.
///   stage 1: every sample's image and mask.
///   stage 2: image + random-but-fixed text string.
///   stage 3: image + one-word caption (the quadrant word).
///   stage 4: 1–3 images, "where" instruction, quadrant word per image.
struct ToyCorpus {
  SynthConfig synth;
  std::vector<SynthSample> samples;
  std::vector<TextPair> stage2;
  std::vector<TextPair> stage3;
  std::vector<InstructionSample> stage4;
};

ToyCorpus build_toy_corpus(std::size_t count, const SynthConfig& synth, const UnifiedVocab& vocab, Rng rng,
                           const CorpusConfig& config = {});

/// images/NNNNNN.mvt, masks/NNNNNN.mvm, stage2.txt, stage3.txt, stage4.txt.
/// Returns the written paths relative to `dir`, sorted.
std::vector<std::string> write_corpus(const std::filesystem::path& dir, const ToyCorpus& corpus);
ToyCorpus read_corpus(const std::filesystem::path& dir);

}  // namespace maven
