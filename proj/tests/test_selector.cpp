#include <doctest.h>

#include <algorithm>
#include <numeric>

#include "maven/error.hpp"
#include "maven/patch_selector.hpp"
#include "maven/rng.hpp"
#include "support.hpp"

using namespace maven;

namespace {

ContinuousSequence index_sequence(std::size_t n) {
  ContinuousSequence seq{Tensor::matrix(n, 2), {}, "seq"};
  for (std::size_t i = 0; i < n; ++i) {
    seq.tokens(i, 0) = static_cast<double>(i);
    seq.positions.push_back({0, i});
  }
  return seq;
}

MiniLm small_lm(const UnifiedVocab& vocab, std::uint64_t seed) {
  Rng rng(seed);
  const LmConfig config{16, 1, 2, 32, vocab.unified_size(), 32};
  Rng table_rng = rng.split("table");
  return MiniLm(config, expand_embeddings(normal_tensor({vocab.text_size, 16}, 0.5, table_rng), vocab.visual_size,
                                          rng.split("rows")),
                rng.split("lm"));
}

}  // namespace

TEST_CASE("keep_count") {
  CHECK(keep_count(576, 0.25) == 144);
  CHECK(keep_count(576, 0.1) == 57);
  CHECK(keep_count(20, 0.7) == 14);
  CHECK(keep_count(64, 1.0) == 64);
  CHECK_THROWS_AS(keep_count(10, 0.0), ConfigError);
  CHECK_THROWS_AS(keep_count(10, 1.5), ConfigError);
  CHECK_THROWS_AS(keep_count(5, 0.1), ConfigError);
}

TEST_CASE("select_top_m examples") {
  const ContinuousSequence seq = index_sequence(4);
  const std::vector<double> scores = {0.2, 0.9, 0.9, 0.1};
  const ReducedSequence r = select_top_m(seq, scores, 0.5);
  CHECK(r.kept_positions == std::vector<std::size_t>{1, 2});
  CHECK(r.scores == std::vector<double>{0.9, 0.9});
  CHECK(r.tokens(0, 0) == 1.0);
  CHECK(r.image_id == "seq");
  // Tie between the two 0.9 entries: the lower index wins.
  CHECK(select_top_m(seq, scores, 0.25).kept_positions == std::vector<std::size_t>{1});
  CHECK_THROWS_AS(select_top_m(seq, std::vector<double>{0.1, 0.2}, 0.5), ShapeError);
}

TEST_CASE("select_top_m matches sort-and-take") {
  Rng rng(21);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 1 + rng.below(64);
    const double alpha = static_cast<double>(1 + rng.below(10)) / 10.0;
    if (static_cast<double>(n) * alpha < 1.0 - 1e-9) continue;
    std::vector<double> scores(n);
    for (double& s : scores) s = static_cast<double>(rng.below(6)) / 6.0;
    const ContinuousSequence seq = index_sequence(n);
    const ReducedSequence r = select_top_m(seq, scores, alpha);
    const std::size_t m = keep_count(n, alpha);
    REQUIRE(r.kept_positions == testing::sort_and_take(scores, m));

    // Every kept score is at least every dropped score; kept rows are the
    // original rows in order.
    double min_kept = 2.0, max_dropped = -1.0;
    for (std::size_t i = 0; i < n; ++i) {
      const bool kept = std::binary_search(r.kept_positions.begin(), r.kept_positions.end(), i);
      (kept ? min_kept : max_dropped) = kept ? std::min(min_kept, scores[i]) : std::max(max_dropped, scores[i]);
    }
    REQUIRE(min_kept >= max_dropped);
    for (std::size_t j = 0; j < m; ++j) REQUIRE(r.tokens(j, 0) == static_cast<double>(r.kept_positions[j]));
  }
}

TEST_CASE("eos summary") {
  const UnifiedVocab vocab{10, 6};
  const MiniLm lm = small_lm(vocab, 3);
  const DiscreteTokens d{{1, 5, 0}, "a"};
  const EosSummary s = eos_summary(d, lm, vocab);
  CHECK(s.vector.size() == 16);
  CHECK(s.provenance == d.indices);
  CHECK(s.vector.all_finite());
  CHECK(eos_summary(d, lm, vocab).vector == s.vector);
  CHECK_FALSE(eos_summary(DiscreteTokens{{2, 5, 0}, "b"}, lm, vocab).vector == s.vector);
  CHECK_THROWS_AS(eos_summary(DiscreteTokens{{6}, "c"}, lm, vocab), IndexError);
}

TEST_CASE("scores are probabilities, one per patch") {
  const UnifiedVocab vocab{10, 6};
  const MiniLm lm = small_lm(vocab, 4);
  const Projector proj(8, 16, Rng(5));
  const SelectorMLP mlp(32, 16, Rng(6));
  Rng rng(7);
  ContinuousSequence seq{normal_tensor({12, 8}, 1.0, rng), {}, "x"};
  const std::vector<double> s = score_patches(seq, eos_summary({{0, 1}, "x"}, lm, vocab), proj, mlp);
  CHECK(s.size() == 12);
  for (double v : s) {
    CHECK(v > 0.0);
    CHECK(v < 1.0);
  }
  CHECK(selector_features(proj.forward(seq.tokens), Tensor::vector(16)).cols() == 32);
}

TEST_CASE("all-positive labels drive scores toward one") {
  const Projector proj(8, 16, Rng(5));
  SelectorMLP mlp(32, 16, Rng(6));
  Rng rng(8);
  std::vector<SelectorExample> data;
  for (int i = 0; i < 8; ++i) {
    SelectorExample ex;
    ex.sequence = {normal_tensor({6, 8}, 1.0, rng), {}, "x"};
    ex.eos.vector = normal_tensor({16}, 1.0, rng);
    ex.labels.assign(6, 1.0);
    data.push_back(ex);
  }
  const SelectorTrainResult r = train_selector(data, proj, mlp, {.steps = 200, .batch = 4, .optimizer = {.lr = 1e-2}});
  CHECK(r.loss_trace.size() == 200);
  double mean = 0.0;
  std::size_t n = 0;
  for (const SelectorExample& ex : data) {
    for (double s : score_patches(ex.sequence, ex.eos, proj, mlp)) {
      mean += s;
      ++n;
    }
  }
  CHECK(mean / static_cast<double>(n) > 0.9);
}

TEST_CASE("selector learns a planted half-space rule") {
  const Projector proj(8, 16, Rng(30));
  const auto data = planted_rule_examples(500, 16, 8, proj, Rng(31));
  const std::span<const SelectorExample> all(data);
  const auto train = all.first(400), test = all.subspan(400);
  std::size_t positives = 0, total = 0;
  for (const auto& ex : data) {
    for (double y : ex.labels) positives += y > 0.5 ? 1 : 0;
    total += ex.labels.size();
  }
  CHECK(positives > total / 5);
  CHECK(positives < 4 * total / 5);

  SelectorMLP mlp(32, 32, Rng(32));
  const double before = selector_accuracy(test, proj, mlp);
  train_selector(train, proj, mlp, {.steps = 1000, .batch = 8, .optimizer = {.lr = 3e-3}});
  const double after = selector_accuracy(test, proj, mlp);
  MESSAGE("held-out accuracy " << before << " -> " << after);
  CHECK(after >= 0.95);
}

TEST_CASE("selector training leaves the projector alone") {
  Projector proj(8, 16, Rng(40));
  const auto data = planted_rule_examples(8, 4, 8, proj, Rng(41));
  std::vector<Tensor> before;
  for (Parameter* p : proj.parameters()) before.push_back(p->value);
  SelectorMLP mlp(32, 8, Rng(42));
  train_selector(data, proj, mlp, {.steps = 5});
  std::size_t i = 0;
  for (Parameter* p : proj.parameters()) CHECK(p->value == before[i++]);
}
