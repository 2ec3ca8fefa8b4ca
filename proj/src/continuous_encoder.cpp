#include "maven/continuous_encoder.hpp"

#include <cmath>

#include "maven/error.hpp"
#include "maven/ops.hpp"

namespace maven {

ImageGrid ImageGrid::from_tensor(Tensor t) {
  if (t.ndim() != 3 || t.dim(2) != 3) throw DataError("image tensor must be [H,W,3], got " + dims_to_string(t.dims()));
  for (double v : t.values()) {
    if (!(v >= 0.0 && v <= 1.0)) throw DataError("image pixel outside [0,1]");
  }
  ImageGrid img;
  img.height = t.dim(0);
  img.width = t.dim(1);
  img.pixels = std::move(t);
  return img;
}

ImageGrid ImageGrid::filled(std::size_t width, std::size_t height, double value) {
  return from_tensor(Tensor({height, width, 3}, value));
}

Tensor patchify(const ImageGrid& image, std::size_t p) {
  if (p == 0 || image.width % p != 0 || image.height % p != 0) {
    throw ConfigError("image " + std::to_string(image.width) + "x" + std::to_string(image.height) +
                      " (W x H) is not divisible by patch size p=" + std::to_string(p));
  }
  const std::size_t grid_rows = image.height / p;
  const std::size_t grid_cols = image.width / p;
  Tensor out = Tensor::matrix(grid_rows * grid_cols, 3 * p * p);
  for (std::size_t gr = 0; gr < grid_rows; ++gr) {
    for (std::size_t gc = 0; gc < grid_cols; ++gc) {
      double* row = out.data() + (gr * grid_cols + gc) * out.cols();
      for (std::size_t y = 0; y < p; ++y) {
        for (std::size_t x = 0; x < p; ++x) {
          for (std::size_t c = 0; c < 3; ++c) *row++ = image.at(gr * p + y, gc * p + x, c);
        }
      }
    }
  }
  return out;
}

Tensor sinusoidal_position_2d(std::size_t grid_rows, std::size_t grid_cols, std::size_t dim) {
  if (dim % 4 != 0) throw ConfigError("2-D position encoding needs dim divisible by 4, got " + std::to_string(dim));
  const std::size_t half = dim / 2;
  const std::size_t freqs = half / 2;
  Tensor pe = Tensor::matrix(grid_rows * grid_cols, dim);
  for (std::size_t r = 0; r < grid_rows; ++r) {
    for (std::size_t c = 0; c < grid_cols; ++c) {
      auto row = pe.row(r * grid_cols + c);
      for (std::size_t f = 0; f < freqs; ++f) {
        const double omega = std::pow(10000.0, -static_cast<double>(f) / static_cast<double>(freqs));
        row[2 * f] = std::sin(static_cast<double>(r) * omega);
        row[2 * f + 1] = std::cos(static_cast<double>(r) * omega);
        row[half + 2 * f] = std::sin(static_cast<double>(c) * omega);
        row[half + 2 * f + 1] = std::cos(static_cast<double>(c) * omega);
      }
    }
  }
  return pe;
}

PatchEncoder::PatchEncoder(EncoderConfig config, Rng rng) : config_(config) {
  const std::size_t z = config_.dim;
  const std::size_t in = 3 * config_.patch_size * config_.patch_size;
  patch_embed_ = Linear("encoder.patch_embed", in, z, rng.split("patch_embed"));
  for (std::size_t l = 0; l < config_.layers; ++l) {
    const std::string base = "encoder.blocks." + std::to_string(l);
    Rng r = rng.split(base);
    blocks_.push_back(Block{
        LayerNorm(base + ".ln1", z),
        Linear(base + ".query", z, z, r.split("query")),
        Linear(base + ".key", z, z, r.split("key")),
        Linear(base + ".value", z, z, r.split("value")),
        Linear(base + ".out", z, z, r.split("out")),
        LayerNorm(base + ".ln2", z),
        Linear(base + ".fc1", z, config_.mlp_hidden, r.split("fc1")),
        Linear(base + ".fc2", config_.mlp_hidden, z, r.split("fc2")),
    });
  }
  for (Parameter* p : parameters()) p->trainable = false;
}

ParamRefs PatchEncoder::parameters() {
  ParamRefs out = patch_embed_.parameters();
  for (Block& b : blocks_) {
    append(out, b.ln1.parameters());
    append(out, b.query.parameters());
    append(out, b.key.parameters());
    append(out, b.value.parameters());
    append(out, b.out.parameters());
    append(out, b.ln2.parameters());
    append(out, b.fc1.parameters());
    append(out, b.fc2.parameters());
  }
  return out;
}

Tensor PatchEncoder::attend(const Block& block, const Tensor& x) const {
  const Tensor a = block.ln1.forward(x);
  const Tensor q = block.query.forward(a);
  const Tensor k = block.key.forward(a);
  const Tensor v = block.value.forward(a);
  Tensor scores = matmul_nt(q, k);
  const double scale = 1.0 / std::sqrt(static_cast<double>(q.cols()));
  for (double& s : scores.values()) s *= scale;
  return block.out.forward(matmul(softmax_rows(scores), v));
}

ContinuousSequence PatchEncoder::encode(const ImageGrid& image, std::string image_id) const {
  const std::size_t p = config_.patch_size;
  const Tensor patches = patchify(image, p);
  Tensor x = patch_embed_.forward(patches);
  const std::size_t grid_rows = image.height / p;
  const std::size_t grid_cols = image.width / p;
  if (!blocks_.empty()) add_inplace(x, sinusoidal_position_2d(grid_rows, grid_cols, config_.dim));
  for (const Block& b : blocks_) {
    add_inplace(x, attend(b, x));
    add_inplace(x, b.fc2.forward(gelu(b.fc1.forward(b.ln2.forward(x)))));
  }
  ContinuousSequence seq;
  seq.tokens = std::move(x);
  seq.image_id = std::move(image_id);
  seq.positions.reserve(grid_rows * grid_cols);
  for (std::size_t r = 0; r < grid_rows; ++r) {
    for (std::size_t c = 0; c < grid_cols; ++c) seq.positions.push_back({r, c});
  }
  return seq;
}

ContinuousSequence encode_continuous(const ImageGrid& image, const PatchEncoder& encoder, std::string image_id) {
  return encoder.encode(image, std::move(image_id));
}

}  // namespace maven
