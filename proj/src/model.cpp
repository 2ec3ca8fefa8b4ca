#include "maven/model.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "maven/error.hpp"
#include "maven/tensor_io.hpp"

namespace maven {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// ModelConfig

ModelConfig ModelConfig::paper_geometry() {
  ModelConfig c;
  c.geometry = Geometry::paper();
  c.codebook_images = 8;
  return c;
}

EncoderConfig ModelConfig::encoder_config() const {
  return EncoderConfig{geometry.patch, encoder_dim, encoder_layers, 2 * encoder_dim};
}

LmConfig ModelConfig::lm_config() const {
  return LmConfig{lm_dim, lm_layers, lm_heads, lm_max_len, text_vocab + codebook_size, 0};
}

SynthConfig ModelConfig::synth_config() const {
  SynthConfig s;
  s.width = geometry.width;
  s.height = geometry.height;
  const std::size_t side = std::min(geometry.width, geometry.height);
  s.min_side = std::max<std::size_t>(2, side * 6 / 32);
  s.max_side = std::max(s.min_side, side * 14 / 32);
  return s;
}

std::string ModelConfig::to_text() const {
  std::ostringstream os;
  os << "width=" << geometry.width << "\nheight=" << geometry.height << "\npatch=" << geometry.patch
     << "\ndiscrete_len=" << geometry.discrete_len << "\nencoder_dim=" << encoder_dim
     << "\nencoder_layers=" << encoder_layers << "\ncodebook_size=" << codebook_size
     << "\ncodebook_images=" << codebook_images << "\ncodebook_iterations=" << codebook_iterations
     << "\ntext_vocab=" << text_vocab << "\nlm_dim=" << lm_dim << "\nlm_layers=" << lm_layers
     << "\nlm_heads=" << lm_heads << "\nlm_max_len=" << lm_max_len << "\nkeep_ratio=" << keep_ratio << "\n";
  return os.str();
}

ModelConfig ModelConfig::parse(const std::string& text) {
  ModelConfig c;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("model config line without '=': " + line);
    const std::string key = line.substr(0, eq);
    const std::string value = line.substr(eq + 1);
    try {
      if (key == "keep_ratio") {
        c.keep_ratio = std::stod(value);
        continue;
      }
      const std::size_t v = std::stoul(value);
      if (key == "width") c.geometry.width = v;
      else if (key == "height") c.geometry.height = v;
      else if (key == "patch") c.geometry.patch = v;
      else if (key == "discrete_len") c.geometry.discrete_len = v;
      else if (key == "encoder_dim") c.encoder_dim = v;
      else if (key == "encoder_layers") c.encoder_layers = v;
      else if (key == "codebook_size") c.codebook_size = v;
      else if (key == "codebook_images") c.codebook_images = v;
      else if (key == "codebook_iterations") c.codebook_iterations = v;
      else if (key == "text_vocab") c.text_vocab = v;
      else if (key == "lm_dim") c.lm_dim = v;
      else if (key == "lm_layers") c.lm_layers = v;
      else if (key == "lm_heads") c.lm_heads = v;
      else if (key == "lm_max_len") c.lm_max_len = v;
      else throw ConfigError("unknown model config key '" + key + "'");
    } catch (const std::logic_error&) {
      throw ConfigError("bad value for '" + key + "': " + value);
    }
  }
  return c;
}

// ---------------------------------------------------------------------------
// MavenModel

MavenModel MavenModel::initialize(const ModelConfig& config, std::uint64_t seed, bool fit_codebook) {
  const Rng root(seed);
  MavenModel m;
  m.config_ = config;
  m.vocab_ = config.vocab();
  if (m.vocab_.text_size < 3) throw ConfigError("text vocabulary needs room for the reserved ids");
  const std::size_t n_c = config.geometry.continuous_len();
  if (n_c % config.geometry.discrete_len != 0) {
    throw ConfigError(std::to_string(n_c) + " patches cannot pool into " + std::to_string(config.geometry.discrete_len) +
                      " discrete slots");
  }
  m.encoder_ = PatchEncoder(config.encoder_config(), root.split("encoder"));

  if (fit_codebook) {
    const auto samples = synth_masks(config.codebook_images, config.synth_config(), root.split("tokenizer.corpus"));
    std::vector<Tensor> slots;
    for (const auto& s : samples) slots.push_back(pool_to_slots(m.encoder_.encode(s.image), config.geometry.discrete_len));
    const Codebook cb =
        train_codebook(concat_rows(slots), config.codebook_size, config.codebook_iterations, root.split("tokenizer.kmeans"));
    m.codebook_ = Parameter("tokenizer.codebook", cb.codewords(), false);
  } else {
    m.codebook_ = Parameter("tokenizer.codebook", Tensor::matrix(config.codebook_size, config.encoder_dim), false);
  }

  Rng text_rng = root.split("lm.text_table");
  const Tensor base = normal_tensor({config.text_vocab, config.lm_dim}, 0.02, text_rng);
  m.lm_ = MiniLm(config.lm_config(), expand_embeddings(base, config.codebook_size, root.split("lm.visual_rows")),
                 root.split("lm"));
  m.projector_ = Projector(config.encoder_dim, config.lm_dim, root.split("projector"));
  m.selector_ = SelectorMLP(2 * config.lm_dim, config.lm_dim, root.split("selector"));
  return m;
}

ParamRefs MavenModel::parameters() {
  ParamRefs out = encoder_.parameters();
  out.push_back(&codebook_);
  append(out, projector_.parameters());
  append(out, selector_.parameters());
  append(out, lm_.parameters());
  return out;
}

Parameter& MavenModel::param(std::string_view name) {
  for (Parameter* p : parameters()) {
    if (p->name == name) return *p;
  }
  throw DataError("unknown parameter '" + std::string(name) + "'");
}

ChecksumMap MavenModel::checksums() {
  ChecksumMap out;
  for (Parameter* p : parameters()) out[p->name] = tensor_checksum(p->value);
  return out;
}

MavenModel::EncodedImage MavenModel::encode_image(const ImageGrid& image, const std::string& id) const {
  EncodedImage e;
  e.continuous = encoder_.encode(image, id);
  e.discrete = quantize(pool_to_slots(e.continuous, config_.geometry.discrete_len), codebook(), id);
  return e;
}

std::vector<double> MavenModel::scores(const EncodedImage& encoded) const {
  return score_patches(encoded.continuous, eos(encoded.discrete), projector_, selector_);
}

ReducedSequence MavenModel::reduce(const EncodedImage& encoded, double alpha) const {
  return select_top_m(encoded.continuous, scores(encoded), alpha);
}

// ---------------------------------------------------------------------------
// Checkpoints

Checkpoint make_checkpoint(MavenModel& model, int stage, std::uint64_t seed) {
  Checkpoint c;
  c.config = model.config();
  c.stage = stage;
  c.seed = seed;
  for (Parameter* p : model.parameters()) {
    c.tensors[p->name] = p->value;
    c.manifest[p->name] = sha256_hex(encode_mvt1(p->value));
  }
  return c;
}

MavenModel restore_model(const Checkpoint& checkpoint) {
  MavenModel m = MavenModel::initialize(checkpoint.config, checkpoint.seed, false);
  for (Parameter* p : m.parameters()) {
    const auto it = checkpoint.tensors.find(p->name);
    if (it == checkpoint.tensors.end()) throw DataError("checkpoint lacks parameter '" + p->name + "'");
    if (it->second.dims() != p->value.dims()) {
      throw DataError("checkpoint tensor '" + p->name + "' has dims " + dims_to_string(it->second.dims()) +
                      ", model expects " + dims_to_string(p->value.dims()));
    }
    p->value = it->second;
  }
  m.codebook();  // validates the loaded codewords
  return m;
}

std::string format_manifest(const ChecksumMap& manifest) {
  std::string out;
  for (const auto& [name, hash] : manifest) out += name + " " + hash + "\n";
  return out;
}

namespace {

fs::path tensor_path(const fs::path& dir, const std::string& name) { return dir / "params" / (name + ".mvt"); }

std::string read_text(const fs::path& path) {
  const auto bytes = read_file_bytes(path);
  return {bytes.begin(), bytes.end()};
}

}  // namespace

void save_checkpoint(const fs::path& dir, const Checkpoint& checkpoint) {
  auto staging = dir;
  staging += ".staging";
  std::error_code ec;
  fs::remove_all(staging, ec);
  fs::create_directories(staging / "params");
  ChecksumMap manifest;
  for (const auto& [name, tensor] : checkpoint.tensors) {
    const auto bytes = encode_mvt1(tensor);
    write_file_atomic(tensor_path(staging, name), bytes);
    manifest[name] = sha256_hex(bytes);
  }
  write_text_atomic(staging / "manifest.txt", format_manifest(manifest));
  write_text_atomic(staging / "checkpoint.txt",
                    "stage=" + std::to_string(checkpoint.stage) + "\nseed=" + std::to_string(checkpoint.seed) + "\n");
  write_text_atomic(staging / "config.txt", checkpoint.config.to_text());
  write_vocab_manifest(staging / "vocab.txt", checkpoint.config.vocab());
  fs::remove_all(dir, ec);
  if (dir.has_parent_path()) fs::create_directories(dir.parent_path());
  fs::rename(staging, dir, ec);
  if (ec) throw IoError("cannot move checkpoint into " + dir.string() + ": " + ec.message());
}

Checkpoint load_checkpoint(const fs::path& dir) {
  if (!fs::is_directory(dir) || !fs::exists(dir / "manifest.txt")) {
    throw PreconditionError("no checkpoint at " + dir.string());
  }
  Checkpoint c;
  c.config = ModelConfig::parse(read_text(dir / "config.txt"));
  std::istringstream meta(read_text(dir / "checkpoint.txt"));
  std::string line;
  while (std::getline(meta, line)) {
    if (line.rfind("stage=", 0) == 0) c.stage = std::stoi(line.substr(6));
    if (line.rfind("seed=", 0) == 0) c.seed = std::stoull(line.substr(5));
  }
  std::istringstream manifest(read_text(dir / "manifest.txt"));
  std::string name, hash;
  while (manifest >> name >> hash) {
    const auto bytes = read_file_bytes(tensor_path(dir, name));
    if (sha256_hex(bytes) != hash) throw DataError("checksum mismatch for '" + name + "' in " + dir.string());
    c.tensors[name] = decode_mvt1(bytes);
    c.manifest[name] = hash;
  }
  return c;
}

}  // namespace maven
