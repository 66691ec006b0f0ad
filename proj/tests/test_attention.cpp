#include <doctest.h>

#include <random>

#include "mia/attention.hpp"
#include "mia/kernels.hpp"

using namespace mia;
using ad::TVar;

namespace {

Tensor randn(std::vector<int> dims, std::mt19937_64& rng, real s = 0.5) {
  Tensor t(std::move(dims));
  std::normal_distribution<real> d(0.0, 1.0);
  for (auto& v : t.data) v = d(rng) * s;
  return t;
}

ad::ParamStore iiab_store(int C, int heads, int w, std::mt19937_64& rng) {
  ad::ParamStore store;
  init_iiab_params(store, "b.", C, heads, w, 2, rng, 0.1);
  // Exercise real (nonzero) residual branches and bias tables.
  store.params["b.wo"] = randn({C, C}, rng, 0.1);
  store.params["b.ffn.w2"] = randn({store.params["b.ffn.w2"].dims[0], C}, rng, 0.1);
  store.params["b.bias_table"] = randn(store.params["b.bias_table"].dims, rng, 0.1);
  return store;
}

}  // namespace

TEST_CASE("make_qkv row counts: w^2 queries, 3w^2 keys per window") {
  const int C = 8, w = 4, H = 8, W = 8;
  std::mt19937_64 rng(21);
  ad::ParamStore store = iiab_store(C, 2, w, rng);
  ad::Tape tape;
  ad::ParamBinding bind = ad::bind_params(tape, store);
  IiabParamRefs p = bind_iiab(bind, "b.");

  auto map = kernels::build_window_index(H, W, w, 0, 0);
  Tensor x = randn({H, W, C}, rng);
  auto as_var = [&](const Tensor& t) {
    WindowBatch wb = kernels::window_partition(t, map);
    return tape.constant(wb.data);
  };
  TVar xw = as_var(x), p1 = as_var(randn({H, W, C}, rng)),
       p2 = as_var(randn({H, W, C}, rng));

  WindowedQkv qkv = make_qkv(xw, p1, p2, p, nullptr);
  CHECK(qkv.n_windows == 4);
  for (int win = 0; win < 4; ++win) CHECK(qkv.q_count[(size_t)win] == w * w);
  CHECK(qkv.q.v().rows() == 4 * w * w);
  CHECK(qkv.k.v().rows() == 4 * 3 * w * w);  // [intra; past1; past2]
  CHECK(qkv.v.v().rows() == 4 * 3 * w * w);

  // mask one window fully off: it emits zero query rows, K/V unchanged
  std::vector<real> mask((size_t)4 * w * w, 1.0);
  for (int tok = 0; tok < w * w; ++tok) mask[(size_t)2 * w * w + tok] = 0.0;
  WindowedQkv masked = make_qkv(xw, p1, p2, p, &mask);
  CHECK(masked.q_count[2] == 0);
  CHECK(masked.n_unmasked == 3 * w * w);
  CHECK(masked.k.v().rows() == 4 * 3 * w * w);
}

TEST_CASE("degenerate equality: past1 == past2 == current gives triplicate keys") {
  const int C = 8, w = 2, H = 4, W = 4;
  std::mt19937_64 rng(22);
  ad::ParamStore store = iiab_store(C, 2, w, rng);
  ad::Tape tape;
  ad::ParamBinding bind = ad::bind_params(tape, store);
  IiabParamRefs p = bind_iiab(bind, "b.");

  auto map = kernels::build_window_index(H, W, w, 0, 0);
  Tensor x = randn({H, W, C}, rng);
  WindowBatch wb = kernels::window_partition(x, map);
  TVar xw = tape.constant(wb.data);
  WindowedQkv qkv = make_qkv(xw, xw, xw, p, nullptr);
  const Tensor& k = qkv.k.v();
  const int rows = wb.n_windows * wb.tokens_per_window;
  for (int i = 0; i < rows; ++i)
    for (int c = 0; c < C; ++c) {
      CHECK(k.at(i, c) == k.at(rows + i, c));
      CHECK(k.at(i, c) == k.at(2 * rows + i, c));
    }
}

TEST_CASE("iiab_attention: one-key case and uniform softmax") {
  std::mt19937_64 rng(23);
  ad::Tape tape;
  {
    TVar q = tape.constant(randn({1, 4}, rng));
    Tensor vrow = randn({1, 4}, rng);
    TVar k = tape.constant(randn({1, 4}, rng));
    TVar bias = tape.constant(randn({1, 1, 1}, rng));
    TVar out = iiab_attention(q, k, tape.constant(vrow), bias, 1);
    for (int c = 0; c < 4; ++c)
      CHECK(out.v()[c] == doctest::Approx(vrow[c]).epsilon(1e-12));
  }
  {
    // zero queries, zero bias: uniform weights, output = column mean of V
    TVar q = tape.constant(Tensor({2, 4}));
    Tensor vv = randn({5, 4}, rng);
    TVar out = iiab_attention(q, tape.constant(randn({5, 4}, rng)),
                              tape.constant(vv), tape.constant(Tensor({1, 2, 5})), 1);
    for (int i = 0; i < 2; ++i)
      for (int c = 0; c < 4; ++c) {
        real mean = 0;
        for (int r = 0; r < 5; ++r) mean += vv.at(r, c);
        mean /= 5;
        CHECK(std::fabs(out.v().at(i, c) - mean) < 1e-10);
      }
  }
}

TEST_CASE("iiab_attention matches a dense single-head oracle to 1e-10") {
  std::mt19937_64 rng(24);
  const int rq = 4, nk = 6, C = 8;
  Tensor q = randn({rq, C}, rng), k = randn({nk, C}, rng), v = randn({nk, C}, rng);
  Tensor bias = randn({1, rq, nk}, rng);

  ad::Tape tape;
  TVar out = iiab_attention(tape.constant(q), tape.constant(k), tape.constant(v),
                            tape.constant(bias), 1);

  const real inv_sqrt_d = 1.0 / std::sqrt((real)C);
  for (int i = 0; i < rq; ++i) {
    std::vector<real> logits((size_t)nk);
    real mx = -1e300;
    for (int j = 0; j < nk; ++j) {
      real dot = 0;
      for (int c = 0; c < C; ++c) dot += q.at(i, c) * k.at(j, c);
      logits[(size_t)j] = dot * inv_sqrt_d + bias.at(0, i, j);
      mx = std::max(mx, logits[(size_t)j]);
    }
    real z = 0;
    for (real l : logits) z += std::exp(l - mx);
    for (int c = 0; c < C; ++c) {
      real acc = 0;
      for (int j = 0; j < nk; ++j)
        acc += std::exp(logits[(size_t)j] - mx) / z * v.at(j, c);
      CHECK(std::fabs(out.v().at(i, c) - acc) < 1e-10);
    }
  }
}

TEST_CASE("relative_position_bias structure") {
  const int heads = 2;
  std::mt19937_64 rng(25);

  {
    // w = 1: one scalar per frame group per head
    Tensor table = randn({heads, 3, 1}, rng);
    ad::Tape tape;
    TVar b = relative_position_bias(tape.constant(table), 1, heads);
    REQUIRE(b.v().dims == std::vector<int>{heads, 1, 3});
    for (int h = 0; h < heads; ++h)
      for (int g = 0; g < 3; ++g) CHECK(b.v().at(h, 0, g) == table.at(h, g, 0));
  }
  {
    // zero table degenerates to unbiased attention
    ad::Tape tape;
    TVar b = relative_position_bias(tape.constant(Tensor({heads, 3, 9})), 2, heads);
    for (real v : b.v().data) CHECK(v == 0.0);
  }
  {
    // equal relative offsets share one table entry
    const int w = 2, t = w * w;
    auto map = bias_index_map(w, heads);
    // same relative offset, same frame group -> same table entry:
    // tokens for w=2 are 0=(0,0) 1=(0,1) 2=(1,0) 3=(1,1); both pairs below
    // have offset (0,+1) in group 0 (intra)
    const long long p1 = (*map)[(long long)1 * 3 * t + 0];  // q=1, k=0
    const long long p2 = (*map)[(long long)3 * 3 * t + 2];  // q=3, k=2
    CHECK(p1 == p2);
    // same offset in different groups addresses distinct sub-tables
    const long long a = (*map)[3];          // q=0, k=3 intra, offset (-1,-1)
    const long long b = (*map)[t + 3];      // same offset, past-1 group
    const long long c = (*map)[2 * t + 3];  // same offset, past-2 group
    CHECK(b - a == 9);  // adjacent group tables are span^2 = 9 entries apart
    CHECK(c - b == 9);
  }
}

TEST_CASE("iiab_block: cache invariance, full reuse, half-masked blend oracle") {
  const int C = 8, heads = 2, w = 2, H = 4, W = 4;
  std::mt19937_64 rng(26);
  ad::ParamStore store = iiab_store(C, heads, w, rng);
  Tensor x = randn({H, W, C}, rng);
  Tensor past1 = randn({H, W, C}, rng), past2 = randn({H, W, C}, rng);
  IiabConfig cfg;
  cfg.C = C;
  cfg.heads = heads;
  cfg.window_side = w;

  auto run = [&](const Tensor& mask, BlockCache& cache, int shift) {
    ad::Tape tape;
    ad::ParamBinding bind = ad::bind_params(tape, store);
    IiabParamRefs p = bind_iiab(bind, "b.");
    TVar out = iiab_block(cfg, tape.constant(x), p, past1, past2,
                          tape.constant(mask), cache, shift);
    return out.v();
  };

  const Tensor ones = Tensor::full({H, W}, 1.0);

  // all-ones mask: output invariant to cache contents, bitwise
  BlockCache empty_cache;
  Tensor out_plain = run(ones, empty_cache, 0);
  BlockCache junk_cache;
  junk_cache.x_attn = randn({H, W, C}, rng);
  junk_cache.x_ffn = randn({H, W, C}, rng);
  junk_cache.valid = true;
  Tensor out_junk = run(ones, junk_cache, 0);
  CHECK(out_plain.data == out_junk.data);

  // all-zero mask with cache from an identical previous frame: full reuse
  BlockCache cache;
  Tensor prev_out = run(ones, cache, 0);
  Tensor reused = run(Tensor({H, W}), cache, 0);
  CHECK(reused.data == prev_out.data);

  // half-masked: unmasked pixels match the all-ones run, masked pixels match
  // the cached hidden state (Eq. 3 blend, elementwise)
  BlockCache cache2;
  run(ones, cache2, 0);
  Tensor cached_ffn = cache2.x_ffn;
  Tensor half({H, W});
  for (int i = 0; i < H * W; ++i) half[i] = i % 2;
  Tensor mixed = run(half, cache2, 0);
  for (int pix = 0; pix < H * W; ++pix)
    for (int c = 0; c < C; ++c) {
      const real want =
          half[pix] == 1.0 ? out_plain[pix * C + c] : cached_ffn[pix * C + c];
      CHECK(std::fabs(mixed[pix * C + c] - want) < 1e-12);
    }
}

TEST_CASE("iiab_block refuses a non-trivial mask without a cache") {
  const int C = 8, heads = 2, w = 2, H = 4, W = 4;
  std::mt19937_64 rng(27);
  ad::ParamStore store = iiab_store(C, heads, w, rng);
  ad::Tape tape;
  ad::ParamBinding bind = ad::bind_params(tape, store);
  IiabParamRefs p = bind_iiab(bind, "b.");
  IiabConfig cfg;
  cfg.C = C;
  cfg.heads = heads;
  cfg.window_side = w;
  BlockCache cache;
  Tensor zeros_mask({H, W});
  CHECK_THROWS_AS(iiab_block(cfg, tape.constant(randn({H, W, C}, rng)), p,
                             Tensor({H, W, C}), Tensor({H, W, C}),
                             tape.constant(zeros_mask), cache, 0),
                  std::invalid_argument);
}
