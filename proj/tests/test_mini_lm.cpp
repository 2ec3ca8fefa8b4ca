#include <doctest.h>

#include <cmath>

#include "maven/error.hpp"
#include "maven/mini_lm.hpp"
#include "maven/optim.hpp"
#include "maven/rng.hpp"
#include "maven/verify.hpp"
#include "support.hpp"

using namespace maven;

namespace {

MiniLm make_lm(const UnifiedVocab& vocab, std::size_t dim, std::size_t layers, std::uint64_t seed,
               double table_std = 0.02, std::size_t max_len = 32) {
  const Rng root(seed);
  Rng table_rng = root.split("table");
  const LmConfig config{dim, layers, 2, max_len, vocab.unified_size(), 2 * dim};
  return MiniLm(config,
                expand_embeddings(normal_tensor({vocab.text_size, dim}, table_std, table_rng), vocab.visual_size,
                                  root.split("rows")),
                root.split("lm"));
}

std::vector<std::size_t> random_ids(std::size_t n, std::size_t vocab_size, Rng& rng) {
  std::vector<std::size_t> ids(n);
  for (auto& id : ids) id = rng.below(vocab_size);
  return ids;
}

// Fourth-order central differences on every coordinate of every parameter.
// The plain two-point rule at 1e-5 is limited by both truncation (the loss is
// strongly curved along some embedding coordinates) and float64 roundoff, so
// the oracle uses the five-point stencil and agreement is relative above a
// small absolute floor.
void check_all_grads(MiniLm& lm, const HybridSequence& seq, const UnifiedVocab& vocab) {
  zero_grads(lm.parameters());
  const MiniLm::LossGrad lg = lm.lm_loss_backward(seq);
  lm.accumulate_token_grads(seq, lg.d_embedded);
  const double h = 2e-4;
  for (Parameter* p : lm.parameters()) {
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const double saved = p->value[i];
      auto at = [&](double offset) {
        p->value[i] = saved + offset;
        return lm.lm_loss(HybridSequence::from_tokens(seq.token_ids, lm.embedding(), vocab));
      };
      const double numeric = (at(-2 * h) - 8 * at(-h) + 8 * at(h) - at(2 * h)) / (12 * h);
      p->value[i] = saved;
      const double analytic = p->grad[i];
      INFO(p->name << "[" << i << "] analytic " << analytic << " numeric " << numeric);
      REQUIRE(std::abs(analytic - numeric) <= 1e-6 * std::max(std::abs(analytic), std::abs(numeric)) + 1e-9);
    }
  }
}

}  // namespace

TEST_CASE("causal attention: zeros above the diagonal, rows sum to one") {
  const UnifiedVocab vocab{12, 8};
  const MiniLm lm = make_lm(vocab, 16, 2, 1, 0.5);
  Rng rng(2);
  for (std::size_t len = 1; len <= 12; ++len) {
    const auto ids = random_ids(len, vocab.unified_size(), rng);
    const auto fwd = lm.forward_hidden(HybridSequence::from_tokens(ids, lm.embedding(), vocab));
    REQUIRE(fwd.attention.size() == 2);
    for (const auto& layer : fwd.attention) {
      REQUIRE(layer.size() == 2);
      for (const Tensor& a : layer) {
        for (std::size_t i = 0; i < len; ++i) {
          double sum = 0.0;
          for (std::size_t j = 0; j < len; ++j) {
            if (j > i) REQUIRE(a(i, j) == 0.0);
            REQUIRE(a(i, j) >= 0.0);
            sum += a(i, j);
          }
          REQUIRE(std::abs(sum - 1.0) <= 1e-12);
        }
      }
    }
  }
}

TEST_CASE("hidden states of a prefix do not depend on later tokens") {
  const UnifiedVocab vocab{12, 8};
  const MiniLm lm = make_lm(vocab, 16, 2, 3, 0.5);
  Rng rng(4);
  const auto ids = random_ids(10, vocab.unified_size(), rng);
  auto changed = ids;
  changed[7] = (changed[7] + 1) % vocab.unified_size();
  changed[9] = (changed[9] + 3) % vocab.unified_size();
  const Tensor a = lm.forward_hidden(HybridSequence::from_tokens(ids, lm.embedding(), vocab)).hidden;
  const Tensor b = lm.forward_hidden(HybridSequence::from_tokens(changed, lm.embedding(), vocab)).hidden;
  const std::span<const std::size_t> prefix(ids.data(), 7);
  const Tensor c = lm.forward_hidden(HybridSequence::from_tokens(prefix, lm.embedding(), vocab)).hidden;
  CHECK(max_abs_diff(a.slice_rows(0, 7), b.slice_rows(0, 7)) <= 1e-12);
  CHECK(max_abs_diff(a.slice_rows(0, 7), c) <= 1e-12);
  CHECK(max_abs_diff(a.slice_rows(7, 8), b.slice_rows(7, 8)) > 0.0);
}

TEST_CASE("untrained loss is close to uniform") {
  const UnifiedVocab vocab{32, 64};
  const MiniLm lm = make_lm(vocab, 64, 2, 5);
  Rng rng(6);
  double total = 0.0;
  for (int i = 0; i < 10; ++i) {
    const auto ids = random_ids(16, vocab.unified_size(), rng);
    total += lm.lm_loss(HybridSequence::from_tokens(ids, lm.embedding(), vocab));
  }
  CHECK(total / 10 == doctest::Approx(std::log(96.0)).epsilon(0.10));
}

TEST_CASE("length and target validation") {
  const UnifiedVocab vocab{12, 8};
  const MiniLm lm = make_lm(vocab, 16, 1, 7, 0.02, 8);
  const std::vector<std::size_t> long_ids(9, 1);
  CHECK_THROWS_AS(lm.forward_hidden(HybridSequence::from_tokens(long_ids, lm.embedding(), vocab)), CapacityError);
  const std::vector<std::size_t> one = {3};
  CHECK_THROWS_AS(lm.lm_loss(HybridSequence::from_tokens(one, lm.embedding(), vocab)), DataError);
  CHECK_THROWS_AS(LmConfig({15, 1, 2, 8, 20, 0}).validate(), ConfigError);
}

TEST_CASE("memorizes one sequence and decodes it greedily") {
  const UnifiedVocab vocab{12, 8};
  MiniLm lm = make_lm(vocab, 32, 2, 8);
  const std::vector<std::size_t> ids = {3, 14, 7, 19, 5, 11};
  AdamWState state;
  double loss = 0.0;
  for (int step = 0; step < 200; ++step) {
    zero_grads(lm.parameters());
    const HybridSequence seq = HybridSequence::from_tokens(ids, lm.embedding(), vocab);
    const auto lg = lm.lm_loss_backward(seq);
    lm.accumulate_token_grads(seq, lg.d_embedded);
    loss = lg.loss;
    adamw_step(lm.parameters(), state, {.lr = 1e-2});
  }
  CHECK(loss < 0.05);
  const std::size_t first[1] = {3};
  CHECK(lm.generate_greedy(first, 5, vocab) == ids);
}

TEST_CASE("attention export") {
  const UnifiedVocab vocab{12, 8};
  const MiniLm lm = make_lm(vocab, 16, 2, 9, 0.5);
  const std::vector<std::size_t> ids = {12, 15, 3, 4, 5};
  const HybridSequence seq = HybridSequence::from_tokens(ids, lm.embedding(), vocab);
  CHECK(seq.tag_string() == "DDTTT");
  const AttentionExport e = attention_export(seq, lm, 1);
  CHECK(e.tags == "DDTTT");
  for (std::size_t i = 0; i < 5; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < 5; ++j) s += e.matrix(i, j);
    CHECK(std::abs(s - 1.0) <= 1e-12);
  }
  const double d = e.text_to_segment_mass(SegmentTag::kDiscrete);
  const double t = e.text_to_segment_mass(SegmentTag::kText);
  CHECK(d >= 0.0);
  CHECK(d <= 1.0);
  CHECK(d + t == doctest::Approx(1.0).epsilon(1e-12));
  CHECK_THROWS_AS(attention_export(seq, lm, 2), ConfigError);

  const auto dir = testing::scratch_dir("attn");
  write_attention_export(dir / "layer1", e);
  const AttentionExport back = read_attention_export(dir / "layer1");
  CHECK(back.tags == e.tags);
  CHECK(max_abs_diff(back.matrix, e.matrix) < 1e-7);
}

TEST_CASE("LM gradients agree with central differences") {
  const UnifiedVocab vocab{12, 8};
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    MiniLm lm = make_lm(vocab, 16, 2, 100 + seed, 0.5);
    Rng rng(200 + seed);
    const auto ids = random_ids(8, vocab.unified_size(), rng);
    check_all_grads(lm, HybridSequence::from_tokens(ids, lm.embedding(), vocab), vocab);
  }
}

TEST_CASE("selector and projector meet the relative threshold with no floor") {
  const SuiteResult r = verify_grad(0);
  for (const auto& row : r.detail["checks"]) {
    const std::string module = row["module"];
    if (module == "selector" || module == "projector") {
      INFO(row.dump());
      CHECK(row["max_rel_error"].get<double>() <= 1e-6);
    }
  }
}
