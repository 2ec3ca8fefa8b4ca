#include <doctest.h>

#include <cmath>
#include <cstring>
#include <limits>

#include "maven/error.hpp"
#include "maven/ops.hpp"
#include "maven/optim.hpp"
#include "maven/rng.hpp"
#include "maven/tensor_io.hpp"
#include "support.hpp"

using namespace maven;

TEST_CASE("matmul small cases") {
  const Tensor eye = Tensor::from_rows({{1, 0}, {0, 1}});
  const Tensor m = Tensor::from_rows({{1, 2}, {3, 4}});
  CHECK(matmul(eye, m) == m);
  CHECK(matmul(Tensor::from_rows({{1, 0}}), Tensor::from_rows({{0}, {1}})) == Tensor::from_rows({{0}}));
}

TEST_CASE("matmul family equals the triple loop exactly") {
  Rng rng(11);
  for (std::size_t m = 1; m <= 8; ++m) {
    for (std::size_t k = 1; k <= 8; ++k) {
      const std::size_t n = 1 + rng.below(8);
      const Tensor a = normal_tensor({m, k}, 1.0, rng);
      const Tensor b = normal_tensor({k, n}, 1.0, rng);
      const Tensor expect = testing::triple_loop_matmul(a, b);
      CHECK(matmul(a, b) == expect);
      CHECK(matmul_tn(testing::transpose(a), b) == expect);
      CHECK(matmul_nt(a, testing::transpose(b)) == expect);
    }
  }
}

TEST_CASE("matmul rejects inner-dimension mismatch") {
  CHECK_THROWS_AS(matmul(Tensor::matrix(2, 3), Tensor::matrix(2, 3)), ShapeError);
}

TEST_CASE("sigmoid examples and symmetry") {
  CHECK(sigmoid(0.0) == 0.5);
  const double s50 = sigmoid(50.0);
  CHECK(s50 < 1.0);
  CHECK(s50 > 1.0 - 1e-15);
  CHECK(sigmoid(-800.0) > 0.0);
  CHECK(sigmoid(std::log(3.0)) == doctest::Approx(0.75).epsilon(1e-15));
  for (double x = -30.0; x <= 30.0; x += 0.37) CHECK(std::abs(sigmoid(x) + sigmoid(-x) - 1.0) <= 1e-15);
}

TEST_CASE("bce_with_logits") {
  const double ln2 = std::log(2.0);
  CHECK(bce_with_logits(Tensor::vector(1), std::vector<double>{1.0}).loss == doctest::Approx(ln2));
  CHECK(bce_with_logits(Tensor::vector(1), std::vector<double>{0.0}).loss == doctest::Approx(ln2));
  Tensor z = Tensor::vector(2);
  z[0] = 2.0;
  z[1] = -2.0;
  const LossAndGrad lg = bce_with_logits(z, std::vector<double>{1.0, 0.0});
  CHECK(lg.loss == doctest::Approx(std::log1p(std::exp(-2.0))).epsilon(1e-14));
  CHECK(lg.loss == doctest::Approx(0.1269).epsilon(1e-3));
  // Gradient (sigmoid(z) - y) / n
  CHECK(lg.grad[0] == doctest::Approx((1.0 / (1.0 + std::exp(-2.0)) - 1.0) / 2.0));
  CHECK(std::isfinite(bce_with_logits(Tensor::vector(1, 1000.0), std::vector<double>{0.0}).loss));
  CHECK_THROWS_AS(bce_with_logits(Tensor::vector(1), std::vector<double>{0.5}), DataError);
  CHECK_THROWS_AS(bce_with_logits(Tensor::vector(2), std::vector<double>{1.0}), ShapeError);
}

TEST_CASE("cross_entropy_logits") {
  const std::size_t t0[1] = {3};
  CHECK(cross_entropy_logits(Tensor::matrix(1, 8), t0).loss == doctest::Approx(std::log(8.0)));
  Tensor peaked = Tensor::matrix(1, 4);
  peaked(0, 3) = 50.0;
  CHECK(cross_entropy_logits(peaked, t0).loss < 1e-15);
  const std::size_t t2[1] = {2};
  const double e1 = std::exp(1.0), e2 = std::exp(2.0), e3 = std::exp(3.0);
  const LossAndGrad lg = cross_entropy_logits(Tensor::from_rows({{1, 2, 3}}), t2);
  CHECK(lg.loss == doctest::Approx(-std::log(e3 / (e1 + e2 + e3))).epsilon(1e-14));
  CHECK(lg.loss == doctest::Approx(0.4076).epsilon(1e-3));
  CHECK(lg.grad(0, 2) == doctest::Approx(e3 / (e1 + e2 + e3) - 1.0));
  const std::size_t bad[1] = {3};
  CHECK_THROWS_AS(cross_entropy_logits(Tensor::from_rows({{1, 2, 3}}), bad), IndexError);
}

TEST_CASE("adamw") {
  SUBCASE("frozen parameters are untouched") {
    Parameter p("frozen", Tensor::vector(3, 1.5), false);
    p.grad.fill(7.0);
    const Tensor before = p.value;
    AdamWState state;
    adamw_step({&p}, state, AdamWConfig{.lr = 0.1, .weight_decay = 0.5});
    CHECK(p.value == before);
    CHECK(state.moments.empty());
  }
  SUBCASE("first step moves by about lr") {
    Parameter p("w", Tensor::vector(1, 1.0));
    p.grad[0] = 1.0;
    AdamWState state;
    adamw_step({&p}, state, AdamWConfig{.lr = 0.1});
    // m̂ = 1, v̂ = 1 after bias correction.
    CHECK(p.value[0] == doctest::Approx(1.0 - 0.1 / (1.0 + 1e-8)).epsilon(1e-15));
  }
  SUBCASE("decoupled decay with zero gradient") {
    Parameter p("w", Tensor::vector(1, 2.0));
    AdamWState state;
    adamw_step({&p}, state, AdamWConfig{.lr = 0.1, .weight_decay = 0.01});
    CHECK(p.value[0] == 2.0 - 0.1 * 0.01 * 2.0);
  }
}

TEST_CASE("finite_diff_check") {
  Parameter x("x", Tensor::vector(1, 3.0));
  auto square = [&] { return x.value[0] * x.value[0]; };
  x.grad[0] = 6.0;
  const GradCheckResult r = finite_diff_check(square, x);
  CHECK(r.numeric == doctest::Approx(6.0).epsilon(1e-9));
  CHECK(r.max_rel_error < 1e-9);
  CHECK(x.value[0] == 3.0);

  Parameter c("c", Tensor::vector(4, 0.25));
  const GradCheckResult rc = finite_diff_check([] { return 42.0; }, c);
  CHECK(rc.max_rel_error == 0.0);
  CHECK(rc.numeric == 0.0);
}

TEST_CASE("rng is deterministic and splits by name") {
  Rng a(5), b(5);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
  CHECK(Rng(5).split("x").next_u64() == Rng(5).split("x").next_u64());
  CHECK(Rng(5).split("x").next_u64() != Rng(5).split("y").next_u64());
  Rng u(9);
  for (int i = 0; i < 1000; ++i) {
    const double v = u.uniform();
    CHECK(v >= 0.0);
    CHECK(v < 1.0);
    CHECK(u.below(7) < 7);
  }
  Rng n(3);
  double sum = 0.0, sq = 0.0;
  const int count = 20000;
  for (int i = 0; i < count; ++i) {
    const double v = n.normal();
    sum += v;
    sq += v * v;
  }
  CHECK(std::abs(sum / count) < 0.05);
  CHECK(std::abs(sq / count - 1.0) < 0.05);
}

TEST_CASE("MVT1 round trip and validation") {
  Rng rng(2);
  const Tensor t = normal_tensor({2, 3, 4}, 1.0, rng);
  const auto bytes = encode_mvt1(t);
  CHECK(bytes.size() == 4 + 4 + 3 * 4 + 24 * 4);
  CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "MVT1");
  const Tensor back = decode_mvt1(bytes);
  CHECK(back.dims() == t.dims());
  for (std::size_t i = 0; i < t.size(); ++i) CHECK(back[i] == static_cast<double>(static_cast<float>(t[i])));

  auto corrupt = bytes;
  corrupt[0] = 'X';
  CHECK_THROWS_AS(decode_mvt1(corrupt), DataError);
  auto truncated = bytes;
  truncated.pop_back();
  CHECK_THROWS_AS(decode_mvt1(truncated), DataError);
  auto nan = bytes;
  const float q = std::numeric_limits<float>::quiet_NaN();
  std::memcpy(nan.data() + nan.size() - 4, &q, 4);
  CHECK_THROWS_AS(decode_mvt1(nan), DataError);

  Tensor inf = Tensor::vector(2);
  inf[1] = INFINITY;
  CHECK_THROWS(encode_mvt1(inf));
}

TEST_CASE("sha256 and tensor checksums") {
  CHECK(sha256_hex(std::string("abc")) == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  const Tensor a = Tensor::vector(3, 1.0);
  Tensor b = a;
  CHECK(tensor_checksum(a) == tensor_checksum(b));
  b[2] = std::nextafter(1.0, 2.0);
  CHECK(tensor_checksum(a) != tensor_checksum(b));
  CHECK(tensor_checksum(Tensor::vector(6)) != tensor_checksum(Tensor::matrix(2, 3)));
}
