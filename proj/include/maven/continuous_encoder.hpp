#pragma once

#include <compare>
#include <string>
#include <vector>

#include "maven/layers.hpp"
#include "maven/tensor.hpp"

namespace maven {

/// RGB image in HWC order with values in [0, 1].
struct ImageGrid {
  std::size_t width = 0;
  std::size_t height = 0;
  Tensor pixels;  // [height, width, 3]

  /// Validates dims [H, W, 3] and the [0, 1] value range.
  static ImageGrid from_tensor(Tensor t);
  static ImageGrid filled(std::size_t width, std::size_t height, double value);

  double at(std::size_t y, std::size_t x, std::size_t c) const { return pixels[(y * width + x) * 3 + c]; }
  double& at(std::size_t y, std::size_t x, std::size_t c) { return pixels[(y * width + x) * 3 + c]; }
};

struct PatchPosition {
  std::size_t row = 0;
  std::size_t col = 0;
  friend auto operator<=>(const PatchPosition&, const PatchPosition&) = default;
};

/// Encoder output for one image: one feature row per patch, row-major over
/// the patch grid.
struct ContinuousSequence {
  Tensor tokens;  // [n_c × z]
  std::vector<PatchPosition> positions;
  std::string image_id;

  std::size_t length() const { return tokens.rows(); }
  std::size_t dim() const { return tokens.cols(); }
};

struct EncoderConfig {
  std::size_t patch_size = 8;
  std::size_t dim = 32;
  std::size_t layers = 1;
  std::size_t mlp_hidden = 64;
};

/// Splits an image into p×p patches, row-major over the grid; each output row
/// is one patch flattened in (y, x, channel) order. Throws ConfigError when
/// W or H is not a multiple of p.
Tensor patchify(const ImageGrid& image, std::size_t patch_size);

/// Fixed 2-D sinusoidal encodings: the first half of the channels encode the
/// grid row, the second half the grid column. `dim` must be divisible by 4.
Tensor sinusoidal_position_2d(std::size_t grid_rows, std::size_t grid_cols, std::size_t dim);

/// Frozen, randomly initialized patch encoder: linear patch embedding followed
/// by `layers` pre-norm self-attention blocks. Position encodings are added
/// at the entry of the first block, so with zero blocks the map is patch-local.
class PatchEncoder {
 public:
  PatchEncoder() = default;
  PatchEncoder(EncoderConfig config, Rng rng);

  ContinuousSequence encode(const ImageGrid& image, std::string image_id = {}) const;

  const EncoderConfig& config() const noexcept { return config_; }
  ParamRefs parameters();

 private:
  struct Block {
    LayerNorm ln1;
    Linear query, key, value, out;
    LayerNorm ln2;
    Linear fc1, fc2;
  };

  Tensor attend(const Block& block, const Tensor& x) const;

  EncoderConfig config_;
  Linear patch_embed_;
  std::vector<Block> blocks_;
};

ContinuousSequence encode_continuous(const ImageGrid& image, const PatchEncoder& encoder,
                                     std::string image_id = {});

}  // namespace maven
