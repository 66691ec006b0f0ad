#include <doctest.h>

#include <random>

#include "mia/masking.hpp"

using namespace mia;

namespace {

Tensor randn(std::vector<int> dims, std::mt19937_64& rng, real s = 1.0) {
  Tensor t(std::move(dims));
  std::normal_distribution<real> d(0.0, 1.0);
  for (auto& v : t.data) v = d(rng) * s;
  return t;
}

}  // namespace

TEST_CASE("feature_difference: identical frames, per-pixel shift, nonnegativity") {
  std::mt19937_64 rng(31);
  Tensor x = randn({4, 4, 8}, rng);
  Tensor d = feature_difference(x, x);
  for (real v : d.data) CHECK(v == 0.0);

  // adding a per-pixel constant over channels is removed by the normalization
  Tensor shifted = x;
  for (int p = 0; p < 16; ++p)
    for (int c = 0; c < 8; ++c) shifted[p * 8 + c] += 0.5 * (p + 1);
  d = feature_difference(x, shifted);
  for (real v : d.data) CHECK(v < 1e-9);

  Tensor y = randn({4, 4, 8}, rng);
  d = feature_difference(x, y);
  for (real v : d.data) CHECK(v >= 0.0);
}

TEST_CASE("mask_logits matches a dot-product oracle; zero input gives 0.5") {
  std::mt19937_64 rng(32);
  Tensor delta = randn({3, 5, 6}, rng);
  for (auto& v : delta.data) v = std::fabs(v);
  Tensor w = randn({6}, rng);
  const real b = 0.3;
  Tensor logits = mask_logits(delta, w, b);
  for (int p = 0; p < 15; ++p) {
    real acc = b;
    for (int c = 0; c < 6; ++c) acc += delta[p * 6 + c] * w[c];
    CHECK(std::fabs(logits[p] - acc) < 1e-12);
  }

  Tensor pi = mask_probabilities(mask_logits(Tensor({2, 2, 6}), w, 0.0));
  for (real v : pi.data) CHECK(v == 0.5);

  // saturation: large weighted sum pushes pi toward 1
  Tensor big = Tensor::full({1, 1, 1}, 1000.0);
  Tensor wone = Tensor::full({1}, 1.0);
  CHECK(mask_probabilities(mask_logits(big, wone, 0.0))[0] ==
        doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("gumbel gate: noiseless closed form at pi1 = 0.8, tau = 2/3") {
  // soft = sigmoid((logit(pi1) + g1 - g2) / tau); with zero noise this equals
  // pi1^(1/tau) / (pi1^(1/tau) + (1-pi1)^(1/tau))
  const real tau = 2.0 / 3.0;
  const real logits = std::log(0.8) - std::log(0.2);
  ad::Tape tape;
  ad::TVar l = tape.constant(Tensor::scalar(logits));
  ad::TVar soft = ad::sigmoid(ad::scale(ad::add_const(l, Tensor::scalar(0.0)), 1.0 / tau));
  const real expected =
      std::pow(0.8, 1.5) / (std::pow(0.8, 1.5) + std::pow(0.2, 1.5));
  CHECK(std::fabs(soft.v()[0] - expected) < 1e-9);
  CHECK(std::fabs(expected - 8.0 / 9.0) < 1e-12);  // (0.8/0.2)^1.5 = 8

  // symmetric case: pi1 = 0.5 with zero noise stays 0.5
  ad::TVar half = ad::sigmoid(ad::scale(tape.constant(Tensor::scalar(0.0)), 1.0 / tau));
  CHECK(half.v()[0] == 0.5);
}

TEST_CASE("gumbel_gate is seed-reproducible with values in (0,1)") {
  Tensor pi = Tensor::full({8, 8}, 0.7);
  std::mt19937_64 r1(99), r2(99), r3(100);
  Tensor a = gumbel_gate(pi, 2.0 / 3.0, r1);
  Tensor b = gumbel_gate(pi, 2.0 / 3.0, r2);
  Tensor c = gumbel_gate(pi, 2.0 / 3.0, r3);
  CHECK(a.data == b.data);
  CHECK(a.data != c.data);
  for (real v : a.data) {
    CHECK(v > 0.0);
    CHECK(v < 1.0);
  }
}

TEST_CASE("gumbel_gate Monte-Carlo: binarized mean approaches pi1") {
  // hard sample = [soft > 0.5] fires with probability pi1 exactly
  const real pi1 = 0.8;
  const int n = 100000;
  Tensor pi = Tensor::full({1, 1}, pi1);
  std::mt19937_64 rng(7);
  long long hits = 0;
  for (int i = 0; i < n; ++i)
    if (gumbel_gate(pi, 2.0 / 3.0, rng)[0] > 0.5) ++hits;
  const real mean = (real)hits / n;
  const real sigma = std::sqrt(pi1 * (1 - pi1) / n);
  CHECK(std::fabs(mean - pi1) < 3 * sigma);
}

TEST_CASE("binarize thresholds strictly above 0.5") {
  Tensor f({1, 3});
  f[0] = 0.6;
  f[1] = 0.4;
  f[2] = 0.5;
  BlockMask m = binarize(f);
  CHECK(m.values[0] == 1.0);
  CHECK(m.values[1] == 0.0);
  CHECK(m.values[2] == 0.0);
  CHECK(m.alpha == doctest::Approx(1.0 / 3.0).epsilon(1e-12));

  // composition: zero delta with zero predictor bias -> all-zero mask
  Tensor w = Tensor::full({4}, 0.3);
  BlockMask z = binarize(mask_probabilities(mask_logits(Tensor({2, 2, 4}), w, 0.0)));
  for (real v : z.values.data) CHECK(v == 0.0);
  CHECK(z.alpha == 0.0);
}

TEST_CASE("handcrafted_mask thresholds the channel-mean difference") {
  std::mt19937_64 rng(33);
  Tensor delta = randn({3, 3, 4}, rng);
  for (auto& v : delta.data) v = std::fabs(v) + 0.01;
  BlockMask all = handcrafted_mask(delta, 0.0);
  for (real v : all.values.data) CHECK(v == 1.0);

  BlockMask none = handcrafted_mask(Tensor({3, 3, 4}), 0.2);
  for (real v : none.values.data) CHECK(v == 0.0);

  // ones concentrate exactly on the changed region
  Tensor region({4, 4, 2});
  for (int y = 1; y <= 2; ++y)
    for (int x = 1; x <= 2; ++x)
      for (int c = 0; c < 2; ++c) region.at(y, x, c) = 1.0;
  BlockMask hm = handcrafted_mask(region, 0.2);
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x) {
      const bool inside = y >= 1 && y <= 2 && x >= 1 && x <= 2;
      CHECK(hm.values.at(y, x) == (inside ? 1.0 : 0.0));
    }
  CHECK(hm.alpha == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("masked_blend trivial masks and checkerboard oracle") {
  std::mt19937_64 rng(34);
  Tensor cur = randn({4, 4, 3}, rng), cached = randn({4, 4, 3}, rng);
  CHECK(masked_blend(cur, cached, Tensor::full({4, 4}, 1.0)).data == cur.data);
  CHECK(masked_blend(cur, cached, Tensor({4, 4})).data == cached.data);

  Tensor checker({4, 4});
  for (int i = 0; i < 16; ++i) checker[i] = (i / 4 + i % 4) % 2;
  Tensor out = masked_blend(cur, cached, checker);
  for (int p = 0; p < 16; ++p)
    for (int c = 0; c < 3; ++c)
      CHECK(out[p * 3 + c] == (checker[p] == 1.0 ? cur[p * 3 + c] : cached[p * 3 + c]));

  // idempotent in the mask: re-applying the blend changes nothing
  CHECK(masked_blend(out, cached, checker).data == out.data);
}

TEST_CASE("sparsity_loss trivial values") {
  CHECK(sparsity_loss({Tensor::full({2, 3}, 1.0)}) == 1.0);
  CHECK(sparsity_loss({Tensor({2, 3})}) == 0.0);
  Tensor half({1, 4});
  half[0] = half[1] = 1.0;
  CHECK(sparsity_loss({half}) == 0.5);
  CHECK_THROWS_AS(sparsity_loss({}), std::invalid_argument);
}

TEST_CASE("make_block_mask validates binary input and reports alpha") {
  Tensor good({2, 2});
  good[0] = 1.0;
  BlockMask m = make_block_mask(good);
  CHECK(m.alpha == 0.25);
  Tensor bad({1, 2});
  bad[0] = 0.5;
  CHECK_THROWS_AS(make_block_mask(bad), std::invalid_argument);
}
