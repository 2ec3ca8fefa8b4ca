#include <doctest.h>

#include <string>

#include <json.hpp>

#include "maven/assembler.hpp"
#include "maven/error.hpp"
#include "maven/model.hpp"
#include "maven/rng.hpp"

using namespace maven;

namespace {

ReducedSequence reduced_rows(std::size_t m, std::size_t dim, const std::string& id) {
  ReducedSequence r;
  r.tokens = Tensor::matrix(m, dim, 1.0);
  for (std::size_t i = 0; i < m; ++i) {
    r.kept_positions.push_back(2 * i);
    r.scores.push_back(0.5);
  }
  r.image_id = id;
  return r;
}

}  // namespace

TEST_CASE("image block is continuous rows then discrete tokens") {
  const UnifiedVocab vocab{10, 6};
  const EmbeddingTable table = expand_embeddings(Tensor::matrix(10, 3, 0.5), 6, Rng(0));
  const ReducedSequence r = reduced_rows(4, 3, "img");
  const DiscreteTokens d{{0, 5, 2, 2}, "img"};
  const Tensor projected = Tensor::matrix(4, 3, 7.0);
  const HybridSequence block = assemble_image_block(r, d, projected, table, vocab);
  CHECK(block.tag_string() == "CCCCDDDD");
  CHECK(block.length() == 8);
  REQUIRE(block.spans.size() == 1);
  CHECK(block.spans[0].begin == 0);
  CHECK(block.spans[0].continuous_len == 4);
  CHECK(block.spans[0].discrete_len == 4);
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(block.token_ids[i] == kNoToken);
    CHECK(block.targets[i] == kNoTarget);
    CHECK(block.embedded(i, 0) == 7.0);
  }
  CHECK(std::vector<std::size_t>(block.token_ids.begin() + 4, block.token_ids.end()) ==
        std::vector<std::size_t>{10, 15, 12, 12});
  for (std::size_t c = 0; c < 3; ++c) CHECK(block.embedded(5, c) == table.weights.value(15, c));

  CHECK_THROWS_AS(assemble_image_block(r, DiscreteTokens{{0}, "other"}, projected, table, vocab), DataError);
  CHECK_THROWS_AS(assemble_image_block(r, d, Tensor::matrix(3, 3), table, vocab), ShapeError);
  CHECK(assemble_continuous_block(r, projected).tag_string() == "CCCC");
}

TEST_CASE("interleave follows the plan and shifts spans") {
  const UnifiedVocab vocab{10, 6};
  const EmbeddingTable table = expand_embeddings(Tensor::matrix(10, 3, 0.5), 6, Rng(0));
  const Tensor projected = Tensor::matrix(2, 3, 1.0);
  const HybridSequence b0 =
      assemble_image_block(reduced_rows(2, 3, "a"), DiscreteTokens{{1, 2}, "a"}, projected, table, vocab);
  const HybridSequence b1 =
      assemble_image_block(reduced_rows(2, 3, "b"), DiscreteTokens{{3, 4}, "b"}, projected, table, vocab);
  MultimodalInput input;
  input.image_ids = {"a", "b"};
  input.text_segments = {{4, 5}, {6}};
  using K = MultimodalInput::Kind;
  input.plan = {{K::kText, 0}, {K::kImage, 0}, {K::kImage, 1}, {K::kText, 1}};
  const HybridSequence blocks[2] = {b0, b1};

  const HybridSequence plain = interleave(input, blocks, table, vocab);
  CHECK(plain.tag_string() == "TTCCDDCCDDT");
  REQUIRE(plain.spans.size() == 2);
  CHECK(plain.spans[0].begin == 2);
  CHECK(plain.spans[1].begin == 6);
  CHECK(plain.spans[1].image_slot == 1);
  CHECK(plain.spans[1].image_id == "b");

  const HybridSequence sep = interleave(input, blocks, table, vocab, {.separators = true});
  CHECK(sep.tag_string() == "TTCCDDTCCDDTT");
  CHECK(sep.token_ids[6] == vocab.separator_id());
  CHECK(sep.spans[1].begin == 7);

  MultimodalInput twice = input;
  twice.plan.push_back({K::kImage, 0});
  CHECK_THROWS_AS(interleave(twice, blocks, table, vocab), PlanError);
  MultimodalInput missing = input;
  missing.plan.pop_back();
  CHECK_THROWS_AS(interleave(missing, blocks, table, vocab), PlanError);
  MultimodalInput bad_text = input;
  bad_text.text_segments[1] = {12};
  CHECK_THROWS_AS(interleave(bad_text, blocks, table, vocab), PlanError);
}

TEST_CASE("budget arithmetic") {
  const BudgetReport quarter = budget_report(Geometry::paper(), 0.25);
  CHECK(Geometry::paper().continuous_len() == 576);
  CHECK(quarter.continuous_total == 144);
  CHECK(quarter.discrete_total == 32);
  CHECK(quarter.visual_total == 176);
  CHECK(budget_report(Geometry::paper(), 0.1).visual_total == 89);

  const BudgetReport full = budget_report(Geometry::paper(), 1.0);
  CHECK(full.visual_total == 608);
  CHECK(full.baseline_total == 576);
  CHECK(full.quadratic_ratio == doctest::Approx((608.0 / 576.0) * (608.0 / 576.0)).epsilon(1e-15));
  CHECK(quarter.quadratic_ratio == doctest::Approx((176.0 / 576.0) * (176.0 / 576.0)).epsilon(1e-15));

  CHECK(budget_report(Geometry::desk(), 1.0).visual_total == 20);
  const BudgetReport three = budget_report(Geometry::paper(), 0.25, 3, 10);
  CHECK(three.visual_total == 3 * 176);
  CHECK(three.total == 3 * 176 + 10);
  CHECK(three.baseline_total == 3 * 576 + 10);
  CHECK(quarter.to_json_line() == R"({"alpha":0.25,"m":144,"nd":32,"visual_total":176,"quadratic_ratio":)" +
                                      nlohmann::json(quarter.quadratic_ratio).dump() + "}");
  CHECK_THROWS_AS(budget_report(Geometry{30, 32, 8, 4}, 0.5), ConfigError);
}

TEST_CASE("every assembled model block is C^m D^nd") {
  const ModelConfig config = ModelConfig::desk();
  const MavenModel model = MavenModel::initialize(config, 3);
  const auto samples = synth_masks(6, config.synth_config(), Rng(4));
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto encoded = model.encode_image(samples[i].image, "img" + std::to_string(i));
    for (int tenth = 3; tenth <= 10; ++tenth) {
      const double alpha = tenth / 10.0;
      const ReducedSequence r = model.reduce(encoded, alpha);
      const HybridSequence block = assemble_image_block(r, encoded.discrete, model.projector(),
                                                        model.lm().embedding(), model.vocab());
      const std::size_t m = keep_count(encoded.continuous.length(), alpha);
      REQUIRE(block.tag_string() == std::string(m, 'C') + std::string(config.geometry.discrete_len, 'D'));
      for (std::size_t j = m; j < block.length(); ++j) REQUIRE(model.vocab().is_visual(block.token_ids[j]));
    }
  }
}
