#include "maven/pseudo_labels.hpp"

#include <algorithm>
#include <cstring>

#include "maven/error.hpp"
#include "maven/kernels.hpp"
#include "maven/tensor_io.hpp"

namespace maven {

MaskRaster MaskRaster::zeros(std::size_t width, std::size_t height) {
  return MaskRaster{width, height, std::vector<std::uint8_t>(width * height, 0)};
}

std::size_t MaskRaster::count() const {
  return static_cast<std::size_t>(std::count(data.begin(), data.end(), std::uint8_t{1}));
}

void MaskRaster::validate() const {
  if (data.size() != width * height) throw DataError("mask holds " + std::to_string(data.size()) + " pixels, dims say " +
                                                     std::to_string(width * height));
  if (std::any_of(data.begin(), data.end(), [](std::uint8_t v) { return v > 1; })) {
    throw DataError("mask values must be 0 or 1");
  }
}

PatchLabels patch_labels(const MaskRaster& mask, std::size_t p, std::size_t min_overlap) {
  mask.validate();
  if (p == 0 || mask.width % p != 0 || mask.height % p != 0) {
    throw ConfigError("mask " + std::to_string(mask.width) + "x" + std::to_string(mask.height) +
                      " is not divisible by patch size " + std::to_string(p));
  }
  if (min_overlap == 0) throw ConfigError("min_overlap must be at least 1 pixel");
  PatchLabels out;
  out.patch_size = p;
  out.labels.resize((mask.width / p) * (mask.height / p));
  kernels::parallel::patch_any(mask.data, {mask.width, mask.height, p}, min_overlap, out.labels);
  return out;
}

PatchLabels patch_labels(const MaskRaster& mask, const ImageGrid& image, std::size_t p, std::size_t min_overlap) {
  if (mask.width != image.width || mask.height != image.height) {
    throw DataError("mask " + std::to_string(mask.width) + "x" + std::to_string(mask.height) + " vs image " +
                    std::to_string(image.width) + "x" + std::to_string(image.height));
  }
  return patch_labels(mask, p, min_overlap);
}

std::vector<std::uint8_t> encode_mvm1(const MaskRaster& mask) {
  mask.validate();
  std::vector<std::uint8_t> out = {'M', 'V', 'M', '1'};
  put_u32le(out, static_cast<std::uint32_t>(mask.width));
  put_u32le(out, static_cast<std::uint32_t>(mask.height));
  out.insert(out.end(), mask.data.begin(), mask.data.end());
  return out;
}

MaskRaster decode_mvm1(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "MVM1", 4) != 0) throw DataError("missing MVM1 magic");
  MaskRaster m;
  m.width = get_u32le(bytes, 4);
  m.height = get_u32le(bytes, 8);
  if (bytes.size() != 12 + m.width * m.height) throw DataError("MVM1 payload size mismatch");
  m.data.assign(bytes.begin() + 12, bytes.end());
  m.validate();
  return m;
}

void write_mask(const std::filesystem::path& path, const MaskRaster& mask) { write_file_atomic(path, encode_mvm1(mask)); }

MaskRaster read_mask(const std::filesystem::path& path) {
  try {
    return decode_mvm1(read_file_bytes(path));
  } catch (const DataError& e) {
    throw DataError(path.string() + ": " + e.what());
  }
}

std::vector<SynthSample> synth_masks(std::size_t count, const SynthConfig& cfg, Rng rng) {
  if (cfg.min_side == 0 || cfg.max_side < cfg.min_side || cfg.max_side > std::min(cfg.width, cfg.height)) {
    throw ConfigError("rectangle side range does not fit the image");
  }
  if (!(cfg.background_max < cfg.foreground_min)) throw ConfigError("foreground must be brighter than background");
  std::vector<SynthSample> out;
  out.reserve(count);
  for (std::size_t s = 0; s < count; ++s) {
    Rng r = rng.split("sample." + std::to_string(s));
    Rect rect;
    rect.width = cfg.min_side + r.below(cfg.max_side - cfg.min_side + 1);
    rect.height = cfg.min_side + r.below(cfg.max_side - cfg.min_side + 1);
    rect.x0 = r.below(cfg.width - rect.width + 1);
    rect.y0 = r.below(cfg.height - rect.height + 1);
    SynthSample sample{ImageGrid::filled(cfg.width, cfg.height, 0.0), MaskRaster::zeros(cfg.width, cfg.height), rect};
    for (std::size_t y = 0; y < cfg.height; ++y) {
      for (std::size_t x = 0; x < cfg.width; ++x) {
        const bool inside = rect.contains(y, x);
        for (std::size_t c = 0; c < 3; ++c) {
          sample.image.at(y, x, c) = inside ? r.uniform(cfg.foreground_min, 1.0) : r.uniform(0.0, cfg.background_max);
        }
        sample.mask.at(y, x) = inside ? 1 : 0;
      }
    }
    out.push_back(std::move(sample));
  }
  return out;
}

}  // namespace maven
