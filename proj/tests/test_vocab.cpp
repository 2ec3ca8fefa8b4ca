#include <doctest.h>

#include "maven/error.hpp"
#include "maven/rng.hpp"
#include "maven/vocab_bridge.hpp"
#include "support.hpp"

using namespace maven;

TEST_CASE("offset examples") {
  const UnifiedVocab v{32000, 8192};
  CHECK(v.unified_size() == 40192);
  CHECK(to_unified(0, v) == 32000);
  CHECK(to_unified(8191, v) == 40191);
  CHECK(to_discrete(32000, v) == 0);
  CHECK_THROWS_AS(to_unified(8192, v), IndexError);
  CHECK_THROWS_AS(to_discrete(31999, v), IndexError);
  CHECK_THROWS_AS(to_discrete(40192, v), IndexError);
  CHECK(v.eos_id() == 31999);
  CHECK(v.is_visual(32000));
  CHECK_FALSE(v.is_visual(31999));
  const std::size_t ds[3] = {5, 0, 7};
  CHECK(to_unified(ds, UnifiedVocab{10, 8}) == std::vector<std::size_t>{15, 10, 17});
}

TEST_CASE("offset is a bijection onto the visual range") {
  Rng rng(12);
  for (int trial = 0; trial < 20; ++trial) {
    const UnifiedVocab v{3 + rng.below(10000), 1 + rng.below(10000)};
    std::vector<bool> hit(v.unified_size(), false);
    for (std::size_t d = 0; d < v.visual_size; ++d) {
      const std::size_t u = to_unified(d, v);
      REQUIRE(u == d + v.text_size);
      REQUIRE_FALSE(hit[u]);
      hit[u] = true;
      REQUIRE(to_discrete(u, v) == d);
    }
    for (std::size_t u = 0; u < v.text_size; ++u) REQUIRE_FALSE(hit[u]);
  }
}

TEST_CASE("vocab manifest round trip") {
  const UnifiedVocab v{32, 64};
  CHECK(format_vocab_manifest(v) == "N=32\nNV=64\nEOS=31\n");
  const UnifiedVocab back = parse_vocab_manifest(format_vocab_manifest(v));
  CHECK(back.text_size == 32);
  CHECK(back.visual_size == 64);
  CHECK_THROWS(parse_vocab_manifest("N=32\nNV=64\nEOS=5\n"));
  const auto dir = testing::scratch_dir("vocab");
  write_vocab_manifest(dir / "vocab.txt", v);
  CHECK(read_vocab_manifest(dir / "vocab.txt").visual_size == 64);
}

TEST_CASE("expansion preserves the base table and appends small rows") {
  Rng rng(13);
  const Tensor base = normal_tensor({10, 6}, 1.0, rng);
  const EmbeddingTable t = expand_embeddings(base, 300, Rng(14));
  CHECK(t.vocab_size() == 310);
  CHECK(t.dim() == 6);
  CHECK(t.weights.value.slice_rows(0, 10) == base);
  double sq = 0.0;
  for (std::size_t r = 10; r < 310; ++r) {
    for (double x : t.weights.value.row(r)) sq += x * x;
  }
  CHECK(std::sqrt(sq / (300 * 6)) == doctest::Approx(0.02).epsilon(0.1));

  const EmbeddingTable none = expand_embeddings(base, 0, Rng(14));
  CHECK(none.weights.value == base);
}

TEST_CASE("embed gathers rows and scatters gradients") {
  EmbeddingTable t = expand_embeddings(Tensor::from_rows({{1, 2}, {3, 4}, {5, 6}}), 1, Rng(0));
  const std::size_t ids[3] = {2, 0, 2};
  const Tensor e = embed(ids, t);
  CHECK(e == Tensor::from_rows({{5, 6}, {1, 2}, {5, 6}}));
  const std::size_t bad[1] = {4};
  CHECK_THROWS_AS(embed(bad, t), IndexError);
  t.weights.zero_grad();
  embed_backward(ids, Tensor::from_rows({{1, 1}, {2, 2}, {3, 3}}), t);
  CHECK(t.weights.grad == Tensor::from_rows({{2, 2}, {0, 0}, {4, 4}, {0, 0}}));
}

TEST_CASE("projector maps rows independently and zero weights give zeros") {
  Projector p(5, 7, Rng(15));
  Rng rng(16);
  const Tensor x = normal_tensor({4, 5}, 1.0, rng);
  const Tensor y = p.forward(x);
  CHECK(y.rows() == 4);
  CHECK(y.cols() == 7);
  const Tensor one = p.forward(x.slice_rows(2, 3));
  for (std::size_t c = 0; c < 7; ++c) CHECK(one(0, c) == y(2, c));

  for (Parameter* param : p.parameters()) param->value.fill(0.0);
  CHECK(p.forward(x) == Tensor::matrix(4, 7));
}
