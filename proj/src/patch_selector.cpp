#include "maven/patch_selector.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "maven/error.hpp"
#include "maven/ops.hpp"

namespace maven {

EosSummary eos_summary(const DiscreteTokens& discrete, const MiniLm& lm, const UnifiedVocab& vocab) {
  std::vector<std::size_t> ids = to_unified(discrete.indices, vocab);
  ids.push_back(vocab.eos_id());
  const Tensor x = embed(ids, lm.embedding());
  const auto fwd = lm.forward_hidden(x);
  EosSummary out;
  out.vector = Tensor::vector(fwd.hidden.cols());
  auto last = fwd.hidden.row(ids.size() - 1);
  std::copy(last.begin(), last.end(), out.vector.values().begin());
  out.provenance = discrete.indices;
  return out;
}

SelectorMLP::SelectorMLP(std::size_t input_dim, std::size_t hidden, Rng rng)
    : layer1_("selector.layer1", input_dim, hidden, rng.split("layer1")),
      layer2_("selector.layer2", hidden, hidden, rng.split("layer2")),
      layer3_("selector.layer3", hidden, 1, rng.split("layer3")) {}

Tensor SelectorMLP::logits(const Tensor& features, Cache* cache) const {
  if (features.cols() != input_dim()) {
    throw ShapeError("selector input width " + std::to_string(features.cols()) + " vs " +
                     std::to_string(input_dim()));
  }
  Tensor pre1 = layer1_.forward(features);
  Tensor act1 = relu(pre1);
  Tensor pre2 = layer2_.forward(act1);
  Tensor act2 = relu(pre2);
  Tensor out = layer3_.forward(act2);
  if (cache) *cache = Cache{features, std::move(pre1), std::move(act1), std::move(pre2), std::move(act2)};
  return out;
}

void SelectorMLP::backward(const Cache& cache, const Tensor& d_logits) {
  const Tensor d_act2 = layer3_.backward(cache.act2, d_logits);
  const Tensor d_act1 = layer2_.backward(cache.act1, relu_backward(cache.pre2, d_act2));
  layer1_.backward(cache.input, relu_backward(cache.pre1, d_act1));
}

ParamRefs SelectorMLP::parameters() {
  ParamRefs out = layer1_.parameters();
  append(out, layer2_.parameters());
  append(out, layer3_.parameters());
  return out;
}

Tensor selector_features(const Tensor& projected_patches, const Tensor& eos) {
  const std::size_t n = projected_patches.rows();
  Tensor repeated = Tensor::matrix(n, eos.size());
  for (std::size_t i = 0; i < n; ++i) std::copy(eos.values().begin(), eos.values().end(), repeated.row(i).begin());
  return concat_cols(projected_patches, repeated);
}

std::vector<double> score_patches(const ContinuousSequence& seq, const EosSummary& eos, const Projector& projector,
                                  const SelectorMLP& mlp) {
  const Tensor features = selector_features(project_continuous(seq, projector), eos.vector);
  const Tensor logits = mlp.logits(features);
  std::vector<double> scores(logits.size());
  for (std::size_t i = 0; i < scores.size(); ++i) scores[i] = sigmoid(logits[i]);
  return scores;
}

std::size_t keep_count(std::size_t n_c, double alpha) {
  if (!(alpha > 0.0 && alpha <= 1.0)) throw ConfigError("keeping ratio must lie in (0, 1], got " + std::to_string(alpha));
  const auto m = static_cast<std::size_t>(std::floor(static_cast<double>(n_c) * alpha + 1e-9));
  if (m == 0) {
    throw ConfigError("keeping ratio " + std::to_string(alpha) + " keeps no patch out of " + std::to_string(n_c));
  }
  return std::min(m, n_c);
}

ReducedSequence select_top_m(const ContinuousSequence& seq, std::span<const double> scores, double alpha) {
  const std::size_t n = seq.length();
  if (scores.size() != n) throw ShapeError("one score per patch required");
  const std::size_t m = keep_count(n, alpha);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(m), order.end(),
                    [&](std::size_t a, std::size_t b) { return scores[a] > scores[b] || (scores[a] == scores[b] && a < b); });
  order.resize(m);
  std::sort(order.begin(), order.end());
  ReducedSequence out;
  out.tokens = seq.tokens.gather_rows(order);
  out.kept_positions = order;
  out.image_id = seq.image_id;
  for (std::size_t i : order) out.scores.push_back(scores[i]);
  return out;
}

namespace {

struct PreparedExample {
  Tensor features;
  std::vector<double> labels;
};

std::vector<PreparedExample> prepare(std::span<const SelectorExample> data, const Projector& projector) {
  std::vector<PreparedExample> out;
  out.reserve(data.size());
  for (const SelectorExample& ex : data) {
    if (ex.labels.size() != ex.sequence.length()) throw DataError("label count differs from patch count");
    out.push_back({selector_features(project_continuous(ex.sequence, projector), ex.eos.vector), ex.labels});
  }
  return out;
}

}  // namespace

SelectorTrainResult train_selector(std::span<const SelectorExample> data, const Projector& projector,
                                   SelectorMLP& mlp, const SelectorTrainConfig& config) {
  if (data.empty()) throw DataError("selector training set is empty");
  const auto prepared = prepare(data, projector);
  const ParamRefs params = mlp.parameters();
  AdamWState state;
  SelectorTrainResult result;
  const std::size_t batch = std::max<std::size_t>(1, std::min(config.batch, prepared.size()));
  std::size_t cursor = 0;
  for (std::size_t step = 0; step < config.steps; ++step) {
    std::vector<Tensor> feats;
    std::vector<double> labels;
    for (std::size_t b = 0; b < batch; ++b) {
      const PreparedExample& ex = prepared[cursor];
      cursor = (cursor + 1) % prepared.size();
      feats.push_back(ex.features);
      labels.insert(labels.end(), ex.labels.begin(), ex.labels.end());
    }
    const Tensor features = concat_rows(feats);
    zero_grads(params);
    SelectorMLP::Cache cache;
    const Tensor logits = mlp.logits(features, &cache);
    const LossAndGrad bce = bce_with_logits(logits, labels);
    if (!std::isfinite(bce.loss)) throw InvariantError("selector loss became non-finite at step " + std::to_string(step));
    mlp.backward(cache, bce.grad);
    adamw_step(params, state, config.optimizer);
    result.loss_trace.push_back(bce.loss);
  }
  return result;
}

std::vector<SelectorExample> planted_rule_examples(std::size_t count, std::size_t patches, std::size_t feature_dim,
                                                   const Projector& projector, Rng rng) {
  const std::size_t z_llm = projector.out_dim();
  Rng rule_rng = rng.split("rule");
  const Tensor w = normal_tensor({z_llm}, 1.0, rule_rng);
  const Tensor u = normal_tensor({z_llm}, 1.0, rule_rng);
  Rng data = rng.split("data");
  std::vector<SelectorExample> out;
  out.reserve(count);
  for (std::size_t e = 0; e < count; ++e) {
    SelectorExample ex;
    ex.sequence.tokens = normal_tensor({patches, feature_dim}, 1.0, data);
    ex.sequence.image_id = "planted" + std::to_string(e);
    for (std::size_t i = 0; i < patches; ++i) ex.sequence.positions.push_back({0, i});
    ex.eos.vector = normal_tensor({z_llm}, 1.0, data);
    double bias = 0.0;
    for (std::size_t c = 0; c < z_llm; ++c) bias += u[c] * ex.eos.vector[c];
    const Tensor projected = projector.forward(ex.sequence.tokens);
    for (std::size_t i = 0; i < patches; ++i) {
      double s = bias;
      for (std::size_t c = 0; c < z_llm; ++c) s += w[c] * projected(i, c);
      ex.labels.push_back(s > 0.0 ? 1.0 : 0.0);
    }
    out.push_back(std::move(ex));
  }
  return out;
}

double selector_accuracy(std::span<const SelectorExample> data, const Projector& projector, const SelectorMLP& mlp) {
  std::size_t correct = 0;
  std::size_t total = 0;
  for (const PreparedExample& ex : prepare(data, projector)) {
    const Tensor logits = mlp.logits(ex.features);
    for (std::size_t i = 0; i < ex.labels.size(); ++i) {
      const double predicted = sigmoid(logits[i]) >= 0.5 ? 1.0 : 0.0;
      correct += predicted == ex.labels[i] ? 1 : 0;
      ++total;
    }
  }
  return total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0;
}

}  // namespace maven
