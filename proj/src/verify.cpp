#include "maven/verify.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "maven/error.hpp"
#include "maven/ops.hpp"
#include "maven/pipeline.hpp"

namespace maven {

namespace {

constexpr double kGradTolerance = 1e-6;

struct GradRecorder {
  SuiteResult& result;
  nlohmann::ordered_json& rows;
  double worst = 0.0;

  void check(const std::string& module, Parameter& p, const std::function<double()>& loss) {
    const GradCheckResult r = finite_diff_check(loss, p);
    worst = std::max(worst, r.max_rel_error);
    const bool ok = r.max_rel_error <= kGradTolerance;
    result.passed = result.passed && ok;
    rows.push_back({{"module", module},
                    {"parameter", p.name},
                    {"max_rel_error", r.max_rel_error},
                    {"analytic", r.analytic},
                    {"numeric", r.numeric},
                    {"passed", ok}});
  }
};

}  // namespace

SuiteResult verify_grad(std::uint64_t seed) {
  SuiteResult result{"grad"};
  nlohmann::ordered_json rows = nlohmann::ordered_json::array();
  GradRecorder rec{result, rows};
  const Rng root(seed);

  {
    SelectorMLP mlp(16, 8, root.split("selector"));
    Rng data = root.split("selector.data");
    const Tensor features = normal_tensor({6, 16}, 1.0, data);
    std::vector<double> labels(6);
    for (double& y : labels) y = static_cast<double>(data.below(2));
    auto loss = [&] { return bce_with_logits(mlp.logits(features), labels).loss; };
    zero_grads(mlp.parameters());
    SelectorMLP::Cache cache;
    const LossAndGrad lg = bce_with_logits(mlp.logits(features, &cache), labels);
    mlp.backward(cache, lg.grad);
    for (Parameter* p : mlp.parameters()) rec.check("selector", *p, loss);
  }

  {
    Projector proj(8, 12, root.split("projector"));
    Rng data = root.split("projector.data");
    const Tensor x = normal_tensor({5, 8}, 1.0, data);
    const Tensor w = normal_tensor({5, 12}, 1.0, data);
    auto loss = [&] {
      const Tensor y = proj.forward(x);
      double s = 0.0;
      for (std::size_t i = 0; i < y.size(); ++i) s += y[i] * w[i];
      return s;
    };
    zero_grads(proj.parameters());
    Projector::Cache cache;
    proj.forward(x, &cache);
    proj.backward(cache, w);
    for (Parameter* p : proj.parameters()) rec.check("projector", *p, loss);
  }

  {
    // Tiny LM over an 8-token text/discrete sequence: covers the embedding
    // table, which doubles as the output head, positions, blocks and the
    // final norm.
    const UnifiedVocab vocab{12, 8};
    const LmConfig config{16, 2, 2, 16, vocab.unified_size(), 32};
    Rng table_rng = root.split("lm.table");
    MiniLm lm(config, expand_embeddings(normal_tensor({12, 16}, 0.5, table_rng), 8, root.split("lm.rows")),
              root.split("lm"));
    const std::vector<std::size_t> ids = {3, 14, 7, 19, 12, 1, 16, 11};
    auto loss = [&] { return lm.lm_loss(HybridSequence::from_tokens(ids, lm.embedding(), vocab)); };
    zero_grads(lm.parameters());
    const HybridSequence seq = HybridSequence::from_tokens(ids, lm.embedding(), vocab);
    const MiniLm::LossGrad lg = lm.lm_loss_backward(seq);
    lm.accumulate_token_grads(seq, lg.d_embedded);
    for (Parameter* p : lm.parameters()) rec.check("lm", *p, loss);

    // Projector gradients flowing back through the LM from continuous rows.
    Projector proj(6, 16, root.split("bridge"));
    Rng data = root.split("bridge.data");
    const Tensor patches = normal_tensor({3, 6}, 1.0, data);
    const std::vector<std::size_t> caption = {2, 5, vocab.eos_id()};
    auto build = [&](Projector::Cache* cache) {
      HybridSequence c;
      c.embedded = proj.forward(patches, cache);
      c.tags.assign(3, SegmentTag::kContinuous);
      c.token_ids.assign(3, kNoToken);
      c.targets.assign(3, kNoTarget);
      const HybridSequence parts[2] = {c, HybridSequence::from_tokens(caption, lm.embedding(), vocab)};
      return concat_sequences(parts);
    };
    auto bridge_loss = [&] { return lm.lm_loss(build(nullptr)); };
    zero_grads(proj.parameters());
    Projector::Cache cache;
    const HybridSequence hybrid = build(&cache);
    const MiniLm::LossGrad hg = lm.lm_loss_backward(hybrid);
    proj.backward(cache, hg.d_embedded.slice_rows(0, 3));
    for (Parameter* p : proj.parameters()) rec.check("projector-through-lm", *p, bridge_loss);
  }

  result.detail["threshold"] = kGradTolerance;
  result.detail["max_rel_error"] = rec.worst;
  result.detail["checks"] = rows;
  return result;
}

SuiteResult verify_freeze(std::uint64_t seed) {
  SuiteResult result{"freeze"};
  const ModelConfig config = ModelConfig::desk();
  const ToyCorpus corpus =
      build_toy_corpus(12, config.synth_config(), config.vocab(), Rng(seed).split("corpus"), {4, 4, 4, 4, 3});
  std::vector<StageConfig> stages = default_stage_configs(seed);
  for (StageConfig& s : stages) s.steps = 20;
  const RunAllResult run = run_all(seed, config, corpus, stages);
  nlohmann::ordered_json rows = nlohmann::ordered_json::array();
  for (const StageReport& r : run.reports) {
    std::size_t frozen = 0, frozen_changed = 0;
    for (const auto& [name, hash] : r.before) {
      if (stage_trainable(r.stage, name)) continue;
      ++frozen;
      if (r.after.at(name) != hash) ++frozen_changed;
    }
    const bool ok = frozen_changed == 0 && !r.changed.empty();
    result.passed = result.passed && ok;
    rows.push_back({{"stage", r.stage},
                    {"frozen_parameters", frozen},
                    {"frozen_changed", frozen_changed},
                    {"trainable_changed", r.changed.size()},
                    {"passed", ok}});
  }
  result.detail["stages"] = rows;
  return result;
}

SuiteResult verify_oracle(std::uint64_t seed) {
  SuiteResult result{"oracle"};
  const Rng root(seed);

  {
    Rng rng = root.split("selection");
    std::size_t mismatches = 0;
    for (int trial = 0; trial < 1000; ++trial) {
      const std::size_t n = 1 + rng.below(64);
      const double alpha = static_cast<double>(1 + rng.below(10)) / 10.0;
      if (static_cast<std::size_t>(std::floor(static_cast<double>(n) * alpha + 1e-9)) == 0) continue;
      ContinuousSequence seq{Tensor::matrix(n, 1), {}, "s"};
      std::vector<double> scores(n);
      for (std::size_t i = 0; i < n; ++i) {
        seq.tokens(i, 0) = static_cast<double>(i);
        scores[i] = static_cast<double>(rng.below(8)) / 8.0;  // coarse values force ties
      }
      std::vector<std::size_t> order(n);
      std::iota(order.begin(), order.end(), 0);
      std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
      order.resize(keep_count(n, alpha));
      std::sort(order.begin(), order.end());
      if (select_top_m(seq, scores, alpha).kept_positions != order) ++mismatches;
    }
    result.passed = result.passed && mismatches == 0;
    result.detail["selection_mismatches"] = mismatches;
  }

  {
    Rng rng = root.split("labels");
    std::size_t mismatches = 0;
    const std::size_t sizes[3] = {4, 8, 16};
    for (int trial = 0; trial < 500; ++trial) {
      const std::size_t p = sizes[rng.below(3)];
      const std::size_t w = p * (1 + rng.below(64 / p));
      const std::size_t h = p * (1 + rng.below(64 / p));
      MaskRaster mask = MaskRaster::zeros(w, h);
      const double density = rng.uniform() * 0.05;
      for (auto& v : mask.data) v = rng.uniform() < density ? 1 : 0;
      std::vector<std::uint8_t> expect((w / p) * (h / p), 0);
      for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
          if (mask.data[y * w + x]) expect[(y / p) * (w / p) + x / p] = 1;
        }
      }
      if (patch_labels(mask, p).labels != expect) ++mismatches;
    }
    result.passed = result.passed && mismatches == 0;
    result.detail["label_mismatches"] = mismatches;
  }

  {
    Rng rng = root.split("vq");
    const Codebook cb(normal_tensor({256, 8}, 1.0, rng));
    const DiscreteTokens t = quantize(cb.codewords(), cb);
    std::size_t wrong = 0;
    for (std::size_t i = 0; i < t.indices.size(); ++i) wrong += t.indices[i] != i ? 1 : 0;
    KMeansTrace trace;
    train_codebook(normal_tensor({1000, 4}, 1.0, rng), 16, 50, rng.split("kmeans"), &trace);
    std::size_t increases = 0;
    for (std::size_t i = 1; i < trace.objective.size(); ++i) {
      increases += trace.objective[i] > trace.objective[i - 1] ? 1 : 0;
    }
    result.passed = result.passed && wrong == 0 && increases == 0;
    result.detail["vq_self_mismatches"] = wrong;
    result.detail["kmeans_increases"] = increases;
    result.detail["kmeans_iterations"] = trace.objective.size() - 1;
  }

  {
    Rng rng = root.split("offset");
    std::size_t wrong = 0;
    for (int trial = 0; trial < 20; ++trial) {
      const UnifiedVocab vocab{3 + rng.below(10000 - 2), 1 + rng.below(10000)};
      for (std::size_t d = 0; d < vocab.visual_size; ++d) {
        const std::size_t u = to_unified(d, vocab);
        if (u != d + vocab.text_size || to_discrete(u, vocab) != d || !vocab.is_visual(u)) ++wrong;
      }
    }
    result.passed = result.passed && wrong == 0;
    result.detail["offset_mismatches"] = wrong;
  }
  return result;
}

SuiteResult verify_budget() {
  SuiteResult result{"budget"};
  nlohmann::ordered_json rows = nlohmann::ordered_json::array();
  const struct {
    double alpha;
    std::size_t m, visual;
  } expected[] = {{0.25, 144, 176}, {0.1, 57, 89}};
  for (const auto& e : expected) {
    const BudgetReport r = budget_report(Geometry::paper(), e.alpha);
    const bool ok = r.continuous_total == e.m && r.visual_total == e.visual;
    result.passed = result.passed && ok;
    rows.push_back({{"alpha", e.alpha}, {"m", r.continuous_total}, {"visual_total", r.visual_total}, {"passed", ok}});
  }
  result.detail["rows"] = rows;
  return result;
}

std::vector<SuiteResult> run_suite(const std::string& name, std::uint64_t seed) {
  if (name == "grad") return {verify_grad(seed)};
  if (name == "freeze") return {verify_freeze(seed)};
  if (name == "oracle") return {verify_oracle(seed)};
  if (name == "budget") return {verify_budget()};
  if (name == "all") return {verify_grad(seed), verify_freeze(seed), verify_oracle(seed), verify_budget()};
  throw ConfigError("unknown suite '" + name + "' (expected grad, freeze, oracle, budget or all)");
}

nlohmann::ordered_json summarize(const std::vector<SuiteResult>& results) {
  nlohmann::ordered_json out;
  bool passed = true;
  out["suites"] = nlohmann::ordered_json::array();
  for (const SuiteResult& r : results) {
    passed = passed && r.passed;
    nlohmann::ordered_json s;
    s["suite"] = r.suite;
    s["passed"] = r.passed;
    for (const auto& [k, v] : r.detail.items()) s[k] = v;
    out["suites"].push_back(s);
  }
  out["passed"] = passed;
  return out;
}

}  // namespace maven
