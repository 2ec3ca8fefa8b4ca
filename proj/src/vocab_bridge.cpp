#include "maven/vocab_bridge.hpp"

#include <fstream>
#include <map>
#include <sstream>

#include "maven/error.hpp"
#include "maven/ops.hpp"
#include "maven/tensor_io.hpp"

namespace maven {

std::size_t to_unified(std::size_t d, const UnifiedVocab& vocab) {
  if (d >= vocab.visual_size) {
    throw IndexError("discrete index " + std::to_string(d) + " outside [0, " + std::to_string(vocab.visual_size) +
                     ")");
  }
  return d + vocab.text_size;
}

std::size_t to_discrete(std::size_t unified_id, const UnifiedVocab& vocab) {
  if (!vocab.is_visual(unified_id)) throw IndexError("id " + std::to_string(unified_id) + " is not a visual id");
  return unified_id - vocab.text_size;
}

std::vector<std::size_t> to_unified(std::span<const std::size_t> discrete, const UnifiedVocab& vocab) {
  std::vector<std::size_t> out;
  out.reserve(discrete.size());
  for (std::size_t d : discrete) out.push_back(to_unified(d, vocab));
  return out;
}

std::string format_vocab_manifest(const UnifiedVocab& vocab) {
  std::ostringstream os;
  os << "N=" << vocab.text_size << "\nNV=" << vocab.visual_size << "\nEOS=" << vocab.eos_id() << "\n";
  return os.str();
}

UnifiedVocab parse_vocab_manifest(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw DataError("vocab manifest line without '=': " + line);
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  if (!kv.count("N") || !kv.count("NV")) throw DataError("vocab manifest needs N and NV");
  UnifiedVocab v{std::stoul(kv["N"]), std::stoul(kv["NV"])};
  if (v.text_size < 2) throw DataError("text vocabulary must hold at least the reserved ids");
  if (kv.count("EOS") && std::stoul(kv["EOS"]) != v.eos_id()) throw DataError("EOS must be N-1");
  return v;
}

void write_vocab_manifest(const std::filesystem::path& path, const UnifiedVocab& vocab) {
  write_text_atomic(path, format_vocab_manifest(vocab));
}

UnifiedVocab read_vocab_manifest(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  return parse_vocab_manifest(std::string(bytes.begin(), bytes.end()));
}

EmbeddingTable expand_embeddings(const Tensor& base, std::size_t visual_rows, Rng rng, const std::string& name) {
  const std::size_t n = base.rows();
  const std::size_t z = base.cols();
  std::vector<double> data(base.values().begin(), base.values().end());
  data.reserve((n + visual_rows) * z);
  for (std::size_t i = 0; i < visual_rows * z; ++i) data.push_back(0.02 * rng.normal());
  return EmbeddingTable{Parameter(name, Tensor({n + visual_rows, z}, std::move(data)))};
}

Tensor embed(std::span<const std::size_t> ids, const EmbeddingTable& table) {
  for (std::size_t id : ids) {
    if (id >= table.vocab_size()) {
      throw IndexError("token " + std::to_string(id) + " >= vocabulary size " + std::to_string(table.vocab_size()));
    }
  }
  return table.weights.value.gather_rows(ids);
}

void embed_backward(std::span<const std::size_t> ids, const Tensor& d_rows, EmbeddingTable& table) {
  const std::size_t z = table.dim();
  if (d_rows.rows() != ids.size() || d_rows.cols() != z) throw ShapeError("embed_backward dims");
  for (std::size_t i = 0; i < ids.size(); ++i) {
    double* g = table.weights.grad.data() + ids[i] * z;
    for (std::size_t j = 0; j < z; ++j) g[j] += d_rows(i, j);
  }
}

Projector::Projector(std::size_t in_dim, std::size_t out_dim, Rng rng)
    : fc1_("projector.fc1", in_dim, out_dim, rng.split("fc1")),
      fc2_("projector.fc2", out_dim, out_dim, rng.split("fc2")) {}

Tensor Projector::forward(const Tensor& x, Cache* cache) const {
  Tensor pre = fc1_.forward(x);
  Tensor hidden = gelu(pre);
  Tensor y = fc2_.forward(hidden);
  if (cache) *cache = Cache{x, std::move(pre), std::move(hidden)};
  return y;
}

Tensor Projector::backward(const Cache& cache, const Tensor& dy) {
  const Tensor d_hidden = fc2_.backward(cache.hidden, dy);
  return fc1_.backward(cache.input, gelu_backward(cache.hidden_pre, d_hidden));
}

ParamRefs Projector::parameters() {
  ParamRefs out = fc1_.parameters();
  append(out, fc2_.parameters());
  return out;
}

Tensor project_continuous(const ContinuousSequence& seq, const Projector& projector) {
  if (seq.dim() != projector.in_dim()) {
    throw ShapeError("patch dim " + std::to_string(seq.dim()) + " vs projector input " +
                     std::to_string(projector.in_dim()));
  }
  return projector.forward(seq.tokens);
}

}  // namespace maven
