#include "mia/attention.hpp"

#include <cmath>
#include <map>
#include <tuple>

#include "mia/flops.hpp"

namespace mia {

using ad::TVar;

namespace {

Tensor randn(std::vector<int> dims, std::mt19937_64& rng, real std_dev) {
  Tensor t(std::move(dims));
  std::normal_distribution<real> dist(0.0, 1.0);
  for (auto& v : t.data) v = dist(rng) * std_dev;
  return t;
}

}  // namespace

void init_iiab_params(ad::ParamStore& store, const std::string& prefix, int C,
                      int heads, int window_side, int ffn_ratio,
                      std::mt19937_64& rng, real init_std) {
  require(C % heads == 0, "init_iiab_params: C not divisible by heads");
  auto& p = store.params;
  p[prefix + "wq"] = randn({C, C}, rng, init_std);
  p[prefix + "wk"] = randn({C, C}, rng, init_std);
  p[prefix + "wv"] = randn({C, C}, rng, init_std);
  // Residual branches start at identity: zero output layers keep an untrained
  // model's refinement inert, so cached reuse is exact from step zero.
  p[prefix + "wo"] = Tensor::zeros({C, C});
  p[prefix + "ffn.w1"] = randn({C, ffn_ratio * C}, rng, init_std);
  p[prefix + "ffn.b1"] = Tensor::zeros({ffn_ratio * C});
  p[prefix + "ffn.w2"] = Tensor::zeros({ffn_ratio * C, C});
  p[prefix + "ffn.b2"] = Tensor::zeros({C});
  p[prefix + "ln1.g"] = Tensor::full({C}, 1.0);
  p[prefix + "ln1.b"] = Tensor::zeros({C});
  p[prefix + "ln2.g"] = Tensor::full({C}, 1.0);
  p[prefix + "ln2.b"] = Tensor::zeros({C});
  const int span = 2 * window_side - 1;
  p[prefix + "bias_table"] = Tensor::zeros({heads, 3, span * span});
}

IiabParamRefs bind_iiab(const ad::ParamBinding& bind, const std::string& prefix) {
  IiabParamRefs r;
  r.wq = bind.at(prefix + "wq");
  r.wk = bind.at(prefix + "wk");
  r.wv = bind.at(prefix + "wv");
  r.wo = bind.at(prefix + "wo");
  r.ffn_w1 = bind.at(prefix + "ffn.w1");
  r.ffn_b1 = bind.at(prefix + "ffn.b1");
  r.ffn_w2 = bind.at(prefix + "ffn.w2");
  r.ffn_b2 = bind.at(prefix + "ffn.b2");
  r.ln1_g = bind.at(prefix + "ln1.g");
  r.ln1_b = bind.at(prefix + "ln1.b");
  r.ln2_g = bind.at(prefix + "ln2.g");
  r.ln2_b = bind.at(prefix + "ln2.b");
  r.bias_table = bind.at(prefix + "bias_table");
  return r;
}

ad::IndexMap bias_index_map(int window_side, int heads) {
  // These maps depend only on (w, heads); cache them across blocks and steps.
  static std::map<std::pair<int, int>, ad::IndexMap> cache;
  if (auto it = cache.find({window_side, heads}); it != cache.end()) return it->second;
  const int w = window_side;
  const int t = w * w;
  const int span = 2 * w - 1;
  auto map = std::make_shared<std::vector<long long>>();
  map->reserve((size_t)heads * t * 3 * t);
  for (int h = 0; h < heads; ++h)
    for (int i = 0; i < t; ++i) {
      const int yi = i / w, xi = i % w;
      for (int j = 0; j < 3 * t; ++j) {
        const int group = j / t;
        const int jj = j % t;
        const int yj = jj / w, xj = jj % w;
        const int off = (yi - yj + w - 1) * span + (xi - xj + w - 1);
        map->push_back(((long long)h * 3 + group) * span * span + off);
      }
    }
  cache[{window_side, heads}] = map;
  return map;
}

TVar relative_position_bias(TVar table, int window_side, int heads) {
  const int t = window_side * window_side;
  return ad::gather_elems(table, bias_index_map(window_side, heads),
                          {heads, t, 3 * t});
}

std::vector<real> mask_to_window_layout(const Tensor& mask,
                                        const kernels::WindowIndexMap& map) {
  std::vector<real> out((size_t)map.n_windows * map.tokens);
  for (size_t i = 0; i < out.size(); ++i)
    out[i] = mask.data[(size_t)map.gather[i]];
  return out;
}

WindowedQkv make_qkv(TVar xw, TVar p1w, TVar p2w, const IiabParamRefs& p,
                     const std::vector<real>* mask_in_window) {
  const Tensor& xv = xw.v();
  require(xv.rank() == 3, "make_qkv: expect {windows, tokens, C}");
  require(xv.same_shape(p1w.v()) && xv.same_shape(p2w.v()),
          "make_qkv: mask/feature shape mismatch");
  WindowedQkv out;
  out.n_windows = xv.dim(0);
  out.tokens = xv.dim(1);
  const int nw = out.n_windows, t = out.tokens;
  if (mask_in_window)
    require((int)mask_in_window->size() == nw * t, "make_qkv: mask layout mismatch");

  out.q_rows = std::make_shared<std::vector<int>>();
  out.q_offset.resize((size_t)nw);
  out.q_count.resize((size_t)nw);
  out.q_tokens.resize((size_t)nw);
  for (int win = 0; win < nw; ++win) {
    out.q_offset[(size_t)win] = (int)out.q_rows->size();
    for (int tok = 0; tok < t; ++tok) {
      const bool on = !mask_in_window || (*mask_in_window)[(size_t)win * t + tok] != 0.0;
      if (on) {
        out.q_rows->push_back(win * t + tok);
        out.q_tokens[(size_t)win].push_back(tok);
      }
    }
    out.q_count[(size_t)win] = (int)out.q_rows->size() - out.q_offset[(size_t)win];
  }
  out.n_unmasked = (long long)out.q_rows->size();

  KindScope ks(OpKind::qkv);
  TVar q_src = out.n_unmasked == (long long)nw * t
                   ? xw
                   : ad::gather_rows(xw, out.q_rows);
  if (out.n_unmasked > 0) out.q = ad::linear(q_src, p.wq, TVar{});
  TVar cat = ad::concat_rows({xw, p1w, p2w});
  out.k = ad::linear(cat, p.wk, TVar{});
  out.v = ad::linear(cat, p.wv, TVar{});
  return out;
}

TVar iiab_block(const IiabConfig& cfg, TVar x, const IiabParamRefs& p,
                const Tensor& past1, const Tensor& past2, TVar mask_var,
                BlockCache& cache, int shift) {
  ad::Tape& tape = *x.tape;
  const Tensor& xv = x.v();
  require(xv.rank() == 3, "iiab_block: expect H×W×C");
  const int H = xv.dim(0), W = xv.dim(1), C = xv.dim(2);
  require(xv.same_shape(past1) && xv.same_shape(past2), "iiab_block: past dims differ");
  // Copy: recording below may reallocate tape storage and invalidate v().
  const Tensor mv = mask_var.v();
  require(mv.rows() * mv.cols() == H * W || (mv.rank() == 1 && mv.numel() == H * W),
          "iiab_block: mask shape mismatch");

  bool all_ones = true;
  for (real m : mv.data)
    if (m != 1.0) {
      all_ones = false;
      break;
    }
  require(all_ones || cache.valid, "iiab_block: missing cache with a non-trivial mask");

  const int w = cfg.window_side, t = w * w;

  // Window layout and the channel-expanded gather maps depend only on the
  // geometry, so cache them across blocks, frames and steps.
  struct LayoutEntry {
    kernels::WindowIndexMap map;
    std::shared_ptr<std::vector<long long>> partition, reverse;
  };
  static std::map<std::tuple<int, int, int, int, int>, LayoutEntry> layout_cache;
  const auto key = std::make_tuple(H, W, w, shift, C);
  auto it = layout_cache.find(key);
  if (it == layout_cache.end()) {
    LayoutEntry e;
    e.map = kernels::build_window_index(H, W, w, shift, shift);
    const int nw0 = e.map.n_windows;
    e.partition = std::make_shared<std::vector<long long>>();
    e.partition->reserve((size_t)nw0 * t * C);
    for (int i = 0; i < nw0 * t; ++i)
      for (int c = 0; c < C; ++c)
        e.partition->push_back((long long)e.map.gather[(size_t)i] * C + c);
    e.reverse = std::make_shared<std::vector<long long>>();
    e.reverse->reserve((size_t)H * W * C);
    for (int pix = 0; pix < H * W; ++pix)
      for (int c = 0; c < C; ++c)
        e.reverse->push_back((long long)e.map.primary[(size_t)pix] * C + c);
    it = layout_cache.emplace(key, std::move(e)).first;
  }
  const auto& map = it->second.map;
  const int nw = map.n_windows;
  const auto& partition_map = it->second.partition;
  const auto& reverse_map = it->second.reverse;

  // ---- attention sub-layer (pre-norm)
  TVar xn = ad::layer_norm(x, p.ln1_g, p.ln1_b, cfg.ln_eps);
  TVar p1n = ad::layer_norm(tape.constant(past1), p.ln1_g, p.ln1_b, cfg.ln_eps);
  TVar p2n = ad::layer_norm(tape.constant(past2), p.ln1_g, p.ln1_b, cfg.ln_eps);
  TVar xw = ad::gather_elems(xn, partition_map, {nw, t, C});
  TVar p1w = ad::gather_elems(p1n, partition_map, {nw, t, C});
  TVar p2w = ad::gather_elems(p2n, partition_map, {nw, t, C});

  std::vector<real> mask_layout;
  const std::vector<real>* mask_ptr = nullptr;
  if (!all_ones) {
    Tensor mask2d = mv.rank() == 2 ? mv : mv.reshaped({H, W});
    mask_layout = mask_to_window_layout(mask2d.reshaped({H, W}), map);
    mask_ptr = &mask_layout;
  }
  WindowedQkv qkv = make_qkv(xw, p1w, p2w, p, mask_ptr);

  TVar bias = relative_position_bias(p.bias_table, w, cfg.heads);

  TVar x1;
  if (qkv.n_unmasked > 0) {
    std::vector<TVar> window_outs;
    for (int win = 0; win < nw; ++win) {
      const int rq = qkv.q_count[(size_t)win];
      if (rq == 0) continue;
      TVar qw = (qkv.n_unmasked == (long long)nw * t && nw == 1)
                    ? qkv.q
                    : ad::slice_rows(qkv.q, qkv.q_offset[(size_t)win], rq);
      auto kidx = std::make_shared<std::vector<int>>();
      kidx->reserve((size_t)3 * t);
      for (int part = 0; part < 3; ++part)
        for (int tok = 0; tok < t; ++tok) kidx->push_back(part * nw * t + win * t + tok);
      TVar kw = ad::gather_rows(qkv.k, kidx);
      TVar vw = ad::gather_rows(qkv.v, kidx);
      TVar bsel = bias;
      if (rq != t) {
        auto bmap = std::make_shared<std::vector<long long>>();
        bmap->reserve((size_t)cfg.heads * rq * 3 * t);
        for (int h = 0; h < cfg.heads; ++h)
          for (int qi = 0; qi < rq; ++qi) {
            const long long base =
                ((long long)h * t + qkv.q_tokens[(size_t)win][(size_t)qi]) * 3 * t;
            for (int j = 0; j < 3 * t; ++j) bmap->push_back(base + j);
          }
        bsel = ad::gather_elems(bias, bmap, {cfg.heads, rq, 3 * t});
      }
      KindScope ks(OpKind::attn_matmul);
      window_outs.push_back(iiab_attention(qw, kw, vw, bsel, cfg.heads));
    }
    TVar attn_all = window_outs.size() == 1 ? window_outs[0] : ad::concat_rows(window_outs);
    TVar proj;
    {
      KindScope ks(OpKind::proj);
      proj = ad::linear(attn_all, p.wo, TVar{});
    }
    TVar scat = qkv.n_unmasked == (long long)nw * t
                    ? ad::reshape(proj, {nw, t, C})
                    : ad::scatter_rows(proj, qkv.q_rows, {nw, t, C});
    TVar y = ad::gather_elems(scat, reverse_map, {H, W, C});
    x1 = ad::add(x, y);
  } else {
    x1 = x;  // every query skipped, attention contributes nothing
  }
  if (!all_ones) x1 = ad::masked_blend(x1, cache.x_attn, mask_var);

  // ---- FFN sub-layer (pre-norm), same mask, rows physically omitted
  TVar x1n = ad::layer_norm(x1, p.ln2_g, p.ln2_b, cfg.ln_eps);
  TVar x2;
  auto pixel_rows = std::make_shared<std::vector<int>>();
  if (all_ones) {
    KindScope ks(OpKind::ffn);
    TVar f = ad::linear(x1n, p.ffn_w1, p.ffn_b1);
    f = ad::gelu(f);
    f = ad::linear(f, p.ffn_w2, p.ffn_b2);
    x2 = ad::add(x1, ad::reshape(f, {H, W, C}));
  } else {
    for (int pix = 0; pix < H * W; ++pix)
      if (mv.data[(size_t)pix] != 0.0) pixel_rows->push_back(pix);
    if (!pixel_rows->empty()) {
      TVar rows = ad::gather_rows(x1n, pixel_rows);
      KindScope ks(OpKind::ffn);
      TVar f = ad::linear(rows, p.ffn_w1, p.ffn_b1);
      f = ad::gelu(f);
      f = ad::linear(f, p.ffn_w2, p.ffn_b2);
      TVar fscat = ad::scatter_rows(f, pixel_rows, {H, W, C});
      x2 = ad::add(x1, fscat);
    } else {
      x2 = x1;
    }
    x2 = ad::masked_blend(x2, cache.x_ffn, mask_var);
  }

  cache.x_attn = x1.v();
  cache.x_ffn = x2.v();
  cache.valid = true;
  return x2;
}

}  // namespace mia
