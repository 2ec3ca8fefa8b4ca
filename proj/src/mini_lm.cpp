#include "maven/mini_lm.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "maven/error.hpp"
#include "maven/ops.hpp"
#include "maven/tensor_io.hpp"

namespace maven {

// ---------------------------------------------------------------------------
// HybridSequence

std::string HybridSequence::tag_string() const {
  std::string s;
  s.reserve(tags.size());
  for (SegmentTag t : tags) s.push_back(static_cast<char>(t));
  return s;
}

std::size_t HybridSequence::target_count() const {
  return static_cast<std::size_t>(
      std::count_if(targets.begin(), targets.end(), [](std::size_t t) { return t != kNoTarget; }));
}

void HybridSequence::validate() const {
  const std::size_t n = tags.size();
  if (token_ids.size() != n || targets.size() != n) throw InvariantError("hybrid sequence bookkeeping sizes differ");
  if (n > 0 && (embedded.rows() != n)) throw InvariantError("embedded rows != sequence length");
  for (std::size_t i = 0; i < n; ++i) {
    if (tags[i] == SegmentTag::kContinuous && (token_ids[i] != kNoToken || targets[i] != kNoTarget)) {
      throw InvariantError("continuous position " + std::to_string(i) + " carries a token or target");
    }
    if (tags[i] != SegmentTag::kContinuous && token_ids[i] == kNoToken) {
      throw InvariantError("token position " + std::to_string(i) + " has no id");
    }
  }
  for (const ImageSpan& s : spans) {
    if (s.end() > n) throw InvariantError("image span past sequence end");
    for (std::size_t i = s.begin; i < s.end(); ++i) {
      const SegmentTag want = i < s.begin + s.continuous_len ? SegmentTag::kContinuous : SegmentTag::kDiscrete;
      if (tags[i] != want) throw InvariantError("image block is not C* then D*");
    }
  }
}

void HybridSequence::keep_targets_in(std::size_t begin, std::size_t end) {
  for (std::size_t i = 0; i < targets.size(); ++i) {
    if (i < begin || i >= end) targets[i] = kNoTarget;
  }
}

HybridSequence HybridSequence::from_tokens(std::span<const std::size_t> ids, const EmbeddingTable& table,
                                           const UnifiedVocab& vocab) {
  HybridSequence seq;
  if (ids.empty()) return seq;
  seq.embedded = embed(ids, table);
  for (std::size_t id : ids) {
    seq.tags.push_back(vocab.is_visual(id) ? SegmentTag::kDiscrete : SegmentTag::kText);
    seq.token_ids.push_back(id);
    seq.targets.push_back(id);
  }
  return seq;
}

HybridSequence concat_sequences(std::span<const HybridSequence> parts) {
  HybridSequence out;
  std::vector<Tensor> rows;
  for (const HybridSequence& p : parts) {
    if (p.length() == 0) continue;
    const std::size_t offset = out.length();
    rows.push_back(p.embedded);
    out.tags.insert(out.tags.end(), p.tags.begin(), p.tags.end());
    out.token_ids.insert(out.token_ids.end(), p.token_ids.begin(), p.token_ids.end());
    out.targets.insert(out.targets.end(), p.targets.begin(), p.targets.end());
    for (ImageSpan s : p.spans) {
      s.begin += offset;
      out.spans.push_back(std::move(s));
    }
  }
  if (!rows.empty()) out.embedded = concat_rows(rows);
  return out;
}

// ---------------------------------------------------------------------------
// MiniLm

void LmConfig::validate() const {
  if (dim == 0 || heads == 0 || dim % heads != 0) {
    throw ConfigError("LM dim " + std::to_string(dim) + " must be a positive multiple of heads " +
                      std::to_string(heads));
  }
  if (max_len == 0 || vocab_size == 0) throw ConfigError("LM needs positive max_len and vocab_size");
}

MiniLm::MiniLm(LmConfig config, EmbeddingTable table, Rng rng)
    : config_(config), embedding_(std::move(table)), final_norm_("lm.final_norm", config.dim) {
  config_.validate();
  if (embedding_.dim() != config_.dim || embedding_.vocab_size() != config_.vocab_size) {
    throw ConfigError("embedding table " + dims_to_string(embedding_.weights.value.dims()) +
                      " does not match LM config");
  }
  Rng pos_rng = rng.split("positions");
  positions_ = Parameter("lm.positions", normal_tensor({config_.max_len, config_.dim}, 0.02, pos_rng));
  const std::size_t z = config_.dim;
  const std::size_t h = config_.hidden_width();
  // Fan-in scaling; residual-branch outputs are further divided by sqrt(2L).
  const double in_std = 1.0 / std::sqrt(static_cast<double>(z));
  const double out_std = in_std / std::sqrt(2.0 * static_cast<double>(config_.layers));
  const double hidden_out_std = 1.0 / std::sqrt(static_cast<double>(h) * 2.0 * static_cast<double>(config_.layers));
  for (std::size_t l = 0; l < config_.layers; ++l) {
    const std::string base = "lm.blocks." + std::to_string(l);
    Rng r = rng.split(base);
    blocks_.push_back(Block{
        LayerNorm(base + ".ln1", z),
        Linear(base + ".query", z, z, r.split("query"), in_std),
        // A key bias only adds a per-row constant to the scores, which softmax
        // ignores, so the key projection has none.
        Linear(base + ".key", z, z, r.split("key"), in_std, false),
        Linear(base + ".value", z, z, r.split("value"), in_std),
        Linear(base + ".out", z, z, r.split("out"), out_std),
        LayerNorm(base + ".ln2", z),
        Linear(base + ".fc1", z, h, r.split("fc1"), in_std),
        Linear(base + ".fc2", h, z, r.split("fc2"), hidden_out_std),
    });
  }
}

ParamRefs MiniLm::parameters() {
  ParamRefs out{&embedding_.weights, &positions_};
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
  append(out, final_norm_.parameters());
  return out;
}

Tensor MiniLm::attention_forward(const Block& b, BlockCache& c) const {
  const std::size_t len = c.q.rows();
  const std::size_t heads = config_.heads;
  const std::size_t dh = config_.dim / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  Tensor attended = Tensor::matrix(len, config_.dim);
  c.probs.assign(heads, Tensor());
  std::vector<double> scores(len);
  for (std::size_t h = 0; h < heads; ++h) {
    Tensor probs = Tensor::matrix(len, len);
    const std::size_t off = h * dh;
    for (std::size_t i = 0; i < len; ++i) {
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j <= i; ++j) {
        double s = 0.0;
        for (std::size_t t = 0; t < dh; ++t) s += c.q(i, off + t) * c.k(j, off + t);
        scores[j] = s * scale;
        mx = std::max(mx, scores[j]);
      }
      double total = 0.0;
      for (std::size_t j = 0; j <= i; ++j) {
        scores[j] = std::exp(scores[j] - mx);
        total += scores[j];
      }
      for (std::size_t j = 0; j <= i; ++j) probs(i, j) = scores[j] / total;
      for (std::size_t j = 0; j <= i; ++j) {
        const double p = probs(i, j);
        for (std::size_t t = 0; t < dh; ++t) attended(i, off + t) += p * c.v(j, off + t);
      }
    }
    c.probs[h] = std::move(probs);
  }
  (void)b;
  return attended;
}

MiniLm::Forward MiniLm::forward_hidden(const Tensor& embedded, Cache* cache) const {
  const std::size_t len = embedded.rows();
  if (len > config_.max_len) {
    throw CapacityError("sequence of " + std::to_string(len) + " exceeds max length " +
                        std::to_string(config_.max_len));
  }
  if (embedded.cols() != config_.dim) throw ShapeError("input width " + std::to_string(embedded.cols()));
  Tensor x = embedded;
  for (std::size_t i = 0; i < len; ++i) {
    for (std::size_t j = 0; j < config_.dim; ++j) x(i, j) += positions_.value(i, j);
  }
  Forward fwd;
  Cache local;
  Cache& c = cache ? *cache : local;
  c.blocks.assign(blocks_.size(), BlockCache{});
  for (std::size_t l = 0; l < blocks_.size(); ++l) {
    const Block& b = blocks_[l];
    BlockCache& bc = c.blocks[l];
    bc.input = x;
    bc.normed1 = b.ln1.forward(x, &bc.ln1);
    bc.q = b.query.forward(bc.normed1);
    bc.k = b.key.forward(bc.normed1);
    bc.v = b.value.forward(bc.normed1);
    bc.attended = attention_forward(b, bc);
    add_inplace(x, b.out.forward(bc.attended));
    bc.mid = x;
    bc.normed2 = b.ln2.forward(x, &bc.ln2);
    bc.pre_act = b.fc1.forward(bc.normed2);
    bc.act = gelu(bc.pre_act);
    add_inplace(x, b.fc2.forward(bc.act));
    fwd.attention.push_back(bc.probs);
  }
  fwd.hidden = final_norm_.forward(x, &c.final_ln);
  return fwd;
}

Tensor MiniLm::logits(const Tensor& hidden) const { return matmul_nt(hidden, embedding_.weights.value); }

namespace {

struct LossRows {
  std::vector<std::size_t> rows;     // predicting positions (i - 1)
  std::vector<std::size_t> targets;  // ids at i
};

LossRows loss_rows(const HybridSequence& seq, std::size_t vocab) {
  LossRows lr;
  for (std::size_t i = 1; i < seq.length(); ++i) {
    if (seq.targets[i] == kNoTarget) continue;
    if (seq.targets[i] >= vocab) throw IndexError("target id " + std::to_string(seq.targets[i]));
    lr.rows.push_back(i - 1);
    lr.targets.push_back(seq.targets[i]);
  }
  if (lr.rows.empty()) throw DataError("sequence has no target positions");
  return lr;
}

}  // namespace

double MiniLm::lm_loss(const HybridSequence& seq) const {
  const LossRows lr = loss_rows(seq, config_.vocab_size);
  const Forward fwd = forward_hidden(seq.embedded);
  return cross_entropy_logits(logits(fwd.hidden.gather_rows(lr.rows)), lr.targets).loss;
}

Tensor MiniLm::attention_backward(Block& b, const BlockCache& c, const Tensor& d_out) {
  (void)b;
  const std::size_t len = c.q.rows();
  const std::size_t heads = config_.heads;
  const std::size_t dh = config_.dim / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  Tensor dq = Tensor::matrix(len, config_.dim);
  Tensor dk = Tensor::matrix(len, config_.dim);
  Tensor dv = Tensor::matrix(len, config_.dim);
  std::vector<double> dp(len);
  for (std::size_t h = 0; h < heads; ++h) {
    const Tensor& probs = c.probs[h];
    const std::size_t off = h * dh;
    for (std::size_t i = 0; i < len; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j <= i; ++j) {
        double s = 0.0;
        for (std::size_t t = 0; t < dh; ++t) s += d_out(i, off + t) * c.v(j, off + t);
        dp[j] = s;
        dot += probs(i, j) * s;
        const double p = probs(i, j);
        for (std::size_t t = 0; t < dh; ++t) dv(j, off + t) += p * d_out(i, off + t);
      }
      for (std::size_t j = 0; j <= i; ++j) {
        const double ds = probs(i, j) * (dp[j] - dot) * scale;
        for (std::size_t t = 0; t < dh; ++t) {
          dq(i, off + t) += ds * c.k(j, off + t);
          dk(j, off + t) += ds * c.q(i, off + t);
        }
      }
    }
  }
  Tensor d_normed = b.query.backward(c.normed1, dq);
  add_inplace(d_normed, b.key.backward(c.normed1, dk));
  add_inplace(d_normed, b.value.backward(c.normed1, dv));
  return d_normed;
}

Tensor MiniLm::backward(const Cache& cache, const Tensor& d_hidden) {
  Tensor dx = final_norm_.backward(cache.final_ln, d_hidden);
  for (std::size_t l = blocks_.size(); l-- > 0;) {
    Block& b = blocks_[l];
    const BlockCache& bc = cache.blocks[l];
    const Tensor d_act = b.fc2.backward(bc.act, dx);
    const Tensor d_normed2 = b.fc1.backward(bc.normed2, gelu_backward(bc.pre_act, d_act));
    add_inplace(dx, b.ln2.backward(bc.ln2, d_normed2));
    const Tensor d_attended = b.out.backward(bc.attended, dx);
    const Tensor d_normed1 = attention_backward(b, bc, d_attended);
    add_inplace(dx, b.ln1.backward(bc.ln1, d_normed1));
  }
  for (std::size_t i = 0; i < dx.rows(); ++i) {
    for (std::size_t j = 0; j < config_.dim; ++j) positions_.grad(i, j) += dx(i, j);
  }
  return dx;
}

MiniLm::LossGrad MiniLm::lm_loss_backward(const HybridSequence& seq) {
  const LossRows lr = loss_rows(seq, config_.vocab_size);
  Cache cache;
  const Forward fwd = forward_hidden(seq.embedded, &cache);
  const Tensor selected = fwd.hidden.gather_rows(lr.rows);
  const LossAndGrad ce = cross_entropy_logits(logits(selected), lr.targets);
  // Tied head: logits = H · Eᵀ.
  add_inplace(embedding_.weights.grad, matmul_tn(ce.grad, selected));
  const Tensor d_selected = matmul(ce.grad, embedding_.weights.value);
  Tensor d_hidden = Tensor::matrix(fwd.hidden.rows(), fwd.hidden.cols());
  for (std::size_t r = 0; r < lr.rows.size(); ++r) {
    auto dst = d_hidden.row(lr.rows[r]);
    auto src = d_selected.row(r);
    for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += src[j];
  }
  return LossGrad{ce.loss, backward(cache, d_hidden)};
}

void MiniLm::accumulate_token_grads(const HybridSequence& seq, const Tensor& d_embedded) {
  const std::size_t z = config_.dim;
  for (std::size_t i = 0; i < seq.length(); ++i) {
    if (seq.tags[i] == SegmentTag::kContinuous) continue;
    double* g = embedding_.weights.grad.data() + seq.token_ids[i] * z;
    for (std::size_t j = 0; j < z; ++j) g[j] += d_embedded(i, j);
  }
}

std::vector<std::size_t> MiniLm::generate_greedy(const HybridSequence& prefix, std::size_t steps) const {
  if (prefix.length() == 0) throw DataError("generation needs a non-empty prefix");
  if (prefix.length() + steps > config_.max_len + 1) {
    // The last generated token never needs to be fed back.
    throw CapacityError("prefix " + std::to_string(prefix.length()) + " + " + std::to_string(steps) +
                        " steps exceeds max length " + std::to_string(config_.max_len));
  }
  std::vector<std::size_t> generated;
  Tensor x = prefix.embedded;
  for (std::size_t s = 0; s < steps; ++s) {
    const Forward fwd = forward_hidden(x);
    const Tensor last = fwd.hidden.slice_rows(x.rows() - 1, x.rows());
    const Tensor scores = logits(last);
    auto row = scores.row(0);
    const auto best = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
    generated.push_back(best);
    if (s + 1 < steps) {
      const std::size_t id[1] = {best};
      const Tensor next = embed(id, embedding_);
      const Tensor parts[2] = {x, next};
      x = concat_rows(parts);
    }
  }
  return generated;
}

std::vector<std::size_t> MiniLm::generate_greedy(std::span<const std::size_t> prefix, std::size_t steps,
                                                 const UnifiedVocab& vocab) const {
  if (prefix.empty()) throw DataError("generation needs a non-empty prefix");
  const HybridSequence seq = HybridSequence::from_tokens(prefix, embedding_, vocab);
  std::vector<std::size_t> out(prefix.begin(), prefix.end());
  const auto gen = generate_greedy(seq, steps);
  out.insert(out.end(), gen.begin(), gen.end());
  return out;
}

// ---------------------------------------------------------------------------
// Attention export

double AttentionExport::text_to_segment_mass(SegmentTag target) const {
  const auto want = static_cast<char>(target);
  double total = 0.0;
  std::size_t rows = 0;
  for (std::size_t i = 0; i < tags.size(); ++i) {
    if (tags[i] != 'T') continue;
    double mass = 0.0;
    for (std::size_t j = 0; j < tags.size(); ++j) {
      if (tags[j] == want) mass += matrix(i, j);
    }
    total += mass;
    ++rows;
  }
  return rows ? total / static_cast<double>(rows) : 0.0;
}

AttentionExport attention_export(const HybridSequence& seq, const MiniLm& lm, std::size_t layer) {
  if (layer >= lm.config().layers) {
    throw ConfigError("layer " + std::to_string(layer) + " outside [0, " + std::to_string(lm.config().layers) + ")");
  }
  const auto fwd = lm.forward_hidden(seq);
  const auto& heads = fwd.attention[layer];
  AttentionExport out{Tensor::matrix(seq.length(), seq.length()), seq.tag_string()};
  for (const Tensor& h : heads) add_inplace(out.matrix, h);
  for (double& v : out.matrix.values()) v /= static_cast<double>(heads.size());
  return out;
}

void write_attention_export(const std::filesystem::path& stem, const AttentionExport& exported) {
  auto mvt = stem;
  mvt += ".mvt";
  auto tags = stem;
  tags += ".tags";
  write_tensor(mvt, exported.matrix);
  std::string text;
  for (char c : exported.tags) {
    text.push_back(c);
    text.push_back('\n');
  }
  write_text_atomic(tags, text);
}

AttentionExport read_attention_export(const std::filesystem::path& stem) {
  auto mvt = stem;
  mvt += ".mvt";
  auto tags_path = stem;
  tags_path += ".tags";
  AttentionExport out{read_tensor(mvt), {}};
  std::ifstream in(tags_path);
  if (!in) throw IoError("cannot open " + tags_path.string());
  std::string line;
  while (std::getline(in, line)) {
    if (line.size() != 1) throw DataError("tag line must hold one character");
    out.tags.push_back(line[0]);
  }
  if (out.tags.size() != out.matrix.rows()) throw DataError("tag count differs from attention rows");
  return out;
}

}  // namespace maven
