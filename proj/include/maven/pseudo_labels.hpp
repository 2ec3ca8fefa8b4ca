#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "maven/continuous_encoder.hpp"
#include "maven/rng.hpp"

namespace maven {

/// Binary segmentation mask, row-major, values in {0, 1}.
struct MaskRaster {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> data;

  static MaskRaster zeros(std::size_t width, std::size_t height);
  std::uint8_t& at(std::size_t y, std::size_t x) { return data[y * width + x]; }
  std::uint8_t at(std::size_t y, std::size_t x) const { return data[y * width + x]; }
  std::size_t count() const;
  /// Throws DataError on non-binary values or a size mismatch.
  void validate() const;
};

struct PatchLabels {
  std::vector<std::uint8_t> labels;  // row-major over the patch grid
  std::size_t patch_size = 0;
  std::string source_id;
};

/// label_i = 1 iff patch i shares at least `min_overlap` pixels with the mask
/// (one pixel by default, i.e. any overlap).
PatchLabels patch_labels(const MaskRaster& mask, std::size_t patch_size, std::size_t min_overlap = 1);
/// Same, after checking that the mask matches the paired image (DataError otherwise).
PatchLabels patch_labels(const MaskRaster& mask, const ImageGrid& image, std::size_t patch_size,
                         std::size_t min_overlap = 1);

// "MVM1" layout: magic, u32 LE width, u32 LE height, width·height bytes of {0,1}.
std::vector<std::uint8_t> encode_mvm1(const MaskRaster& mask);
MaskRaster decode_mvm1(std::span<const std::uint8_t> bytes);
void write_mask(const std::filesystem::path& path, const MaskRaster& mask);
MaskRaster read_mask(const std::filesystem::path& path);

struct Rect {
  std::size_t x0 = 0, y0 = 0, width = 0, height = 0;

  std::size_t area() const noexcept { return width * height; }
  bool contains(std::size_t y, std::size_t x) const noexcept {
    return x >= x0 && x < x0 + width && y >= y0 && y < y0 + height;
  }
};

struct SynthConfig {
  std::size_t width = 32;
  std::size_t height = 32;
  std::size_t min_side = 6;
  std::size_t max_side = 14;
  double background_max = 0.35;  // background pixels ~ U[0, background_max]
  double foreground_min = 0.75;  // rectangle pixels ~ U[foreground_min, 1]
};

struct SynthSample {
  ImageGrid image;
  MaskRaster mask;
  Rect rect;
};

/// Noise images with one bright axis-aligned rectangle; the mask is exactly
/// the rectangle. Deterministic in `rng`.
std::vector<SynthSample> synth_masks(std::size_t count, const SynthConfig& config, Rng rng);

}  // namespace maven
