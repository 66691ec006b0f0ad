#include "mia/gradcheck.hpp"

#include <random>

#include "mia/attention.hpp"
#include "mia/kernels.hpp"
#include "mia/model.hpp"

namespace mia {

namespace {

Tensor randn(std::vector<int> dims, std::mt19937_64& rng, real s = 0.5) {
  Tensor t(std::move(dims));
  std::normal_distribution<real> d(0.0, 1.0);
  for (auto& v : t.data) v = d(rng) * s;
  return t;
}

// Smooth scalarization: mean of squares.
ad::TVar sq_mean(ad::TVar y) { return ad::mean(ad::mul(y, y)); }

}  // namespace

std::map<std::string, ad::GradCheckResult> run_standard_grad_checks(real h,
                                                                    real abs_floor) {
  std::map<std::string, ad::GradCheckResult> out;
  std::mt19937_64 rng(2024);

  {
    ad::ParamStore p;
    p.params["x"] = randn({3, 4}, rng);
    p.params["w"] = randn({4, 5}, rng);
    p.params["b"] = randn({5}, rng);
    out["linear"] = ad::finite_diff_check(
        [](ad::Tape&, const ad::ParamBinding& b) {
          return sq_mean(ad::linear(b.at("x"), b.at("w"), b.at("b")));
        },
        p, h, abs_floor);
  }

  {
    ad::ParamStore p;
    p.params["x"] = randn({5, 6, 3}, rng);
    p.params["k"] = randn({3, 3, 3, 2}, rng);
    p.params["b"] = randn({2}, rng);
    out["conv"] = ad::finite_diff_check(
        [](ad::Tape&, const ad::ParamBinding& b) {
          return sq_mean(ad::conv2d(b.at("x"), b.at("k"), b.at("b")));
        },
        p, h, abs_floor);
  }

  {
    ad::ParamStore p;
    p.params["x"] = randn({4, 6}, rng);
    p.params["g"] = randn({6}, rng, 0.2);
    p.params["bt"] = randn({6}, rng, 0.2);
    for (auto& v : p.params["g"].data) v += 1.0;
    out["layernorm"] = ad::finite_diff_check(
        [](ad::Tape&, const ad::ParamBinding& b) {
          return sq_mean(ad::layer_norm(b.at("x"), b.at("g"), b.at("bt"), 1e-5));
        },
        p, h, abs_floor);
  }

  {
    ad::ParamStore p;
    p.params["q"] = randn({4, 8}, rng);
    p.params["k"] = randn({6, 8}, rng);
    p.params["v"] = randn({6, 8}, rng);
    p.params["bias"] = randn({2, 4, 6}, rng, 0.2);
    out["softmax_attention"] = ad::finite_diff_check(
        [](ad::Tape&, const ad::ParamBinding& b) {
          return sq_mean(ad::mha(b.at("q"), b.at("k"), b.at("v"), b.at("bias"), 2));
        },
        p, h, abs_floor);
  }

  {
    ad::ParamStore p;
    p.params["x"] = randn({4, 4, 3}, rng);
    p.params["k"] = randn({3, 3, 3, 8}, rng);
    p.params["b"] = randn({8}, rng);
    Tensor target = randn({8, 8, 2}, rng);
    auto map = std::make_shared<std::vector<long long>>(
        kernels::pixel_shuffle_index(4, 4, 8, 2));
    out["pixel_shuffle_path"] = ad::finite_diff_check(
        [target, map](ad::Tape&, const ad::ParamBinding& b) {
          ad::TVar r = ad::conv2d(b.at("x"), b.at("k"), b.at("b"));
          ad::TVar up = ad::gather_elems(r, map, {8, 8, 2});
          return ad::charbonnier(up, target, 1e-3);
        },
        p, h, abs_floor);
  }

  {
    ad::ParamStore p;
    p.params["pred"] = randn({5, 3}, rng);
    Tensor target = randn({5, 3}, rng);
    out["charbonnier"] = ad::finite_diff_check(
        [target](ad::Tape&, const ad::ParamBinding& b) {
          return ad::charbonnier(b.at("pred"), target, 1e-3);
        },
        p, h, abs_floor);
  }

  {
    // Soft masks are sigmoids, strictly positive, so mean |.| stays smooth.
    ad::ParamStore p;
    p.params["logits"] = randn({4, 4}, rng);
    out["sparsity_loss"] = ad::finite_diff_check(
        [](ad::Tape&, const ad::ParamBinding& b) {
          return ad::mean_abs(ad::sigmoid(b.at("logits")));
        },
        p, h, abs_floor);
  }

  {
    // Full IIAB block, all-ones mask, no shift.
    const int C = 8, heads = 2, w = 2, H = 4, W = 4;
    ad::ParamStore p;
    init_iiab_params(p, "b.", C, heads, w, 2, rng, 0.2);
    // Randomize the zero-initialized leaves so every gradient path is live.
    p.params["b.bias_table"] = randn(p.params["b.bias_table"].dims, rng, 0.2);
    p.params["b.wo"] = randn(p.params["b.wo"].dims, rng, 0.2);
    p.params["b.ffn.w2"] = randn(p.params["b.ffn.w2"].dims, rng, 0.2);
    p.params["x"] = randn({H, W, C}, rng);
    Tensor past1 = randn({H, W, C}, rng), past2 = randn({H, W, C}, rng);
    IiabConfig cfg;
    cfg.C = C;
    cfg.heads = heads;
    cfg.window_side = w;
    out["iiab_block"] = ad::finite_diff_check(
        [past1, past2, cfg](ad::Tape& tape, const ad::ParamBinding& b) {
          IiabParamRefs refs = bind_iiab(b, "b.");
          BlockCache cache;
          ad::TVar ones = tape.constant(Tensor::full({4, 4}, 1.0));
          return sq_mean(iiab_block(cfg, b.at("x"), refs, past1, past2, ones, cache, 0));
        },
        p, h, abs_floor);

    // Masked variant with a shifted window and a fixed (constant) cache.
    Tensor mask({H, W});
    for (long long i = 0; i < mask.numel(); ++i) mask[i] = (i % 2 == 0) ? 1.0 : 0.0;
    Tensor cx1 = randn({H, W, C}, rng), cx2 = randn({H, W, C}, rng);
    out["iiab_block_masked"] = ad::finite_diff_check(
        [past1, past2, cfg, mask, cx1, cx2](ad::Tape& tape, const ad::ParamBinding& b) {
          IiabParamRefs refs = bind_iiab(b, "b.");
          BlockCache cache;
          cache.x_attn = cx1;
          cache.x_ffn = cx2;
          cache.valid = true;
          ad::TVar mv = tape.constant(mask);
          return sq_mean(iiab_block(cfg, b.at("x"), refs, past1, past2, mv, cache, 1));
        },
        p, h, abs_floor);
  }

  {
    // One-frame end-to-end forward (no recurrence, so no truncation).
    ModelConfig cfg;
    cfg.scale = 2;
    cfg.channels = 8;
    cfg.heads = 2;
    cfg.window_side = 2;
    cfg.M = 1;
    cfg.N = 2;
    cfg.skip_interval = 2;
    Model model(cfg, 5);
    // Zero-initialized residual output layers would hide upstream gradients;
    // perturb them so the whole path is live.
    for (auto& [name, t] : model.params().params)
      if (name.ends_with(".wo") || name.ends_with(".ffn.w2"))
        t = randn(t.dims, rng, 0.05);
    std::vector<Tensor> lr{randn({4, 4, 3}, rng, 0.2)};
    for (auto& v : lr[0].data) v = std::min(std::max(v + 0.5, 0.0), 1.0);
    std::vector<Tensor> hr{randn({8, 8, 3}, rng, 0.2)};
    out["model_single_frame"] = ad::finite_diff_check(
        [&model, lr, hr](ad::Tape& tape, const ad::ParamBinding& b) {
          ForwardOptions opts;
          opts.mode = RunMode::unmasked;
          opts.targets = &hr;
          ForwardResult res;
          return model.forward_on_tape(tape, b, lr, opts, res);
        },
        // Most of this model's gradients are near zero; a 1e-7 floor would
        // measure central-difference round-off instead of gradient error.
        model.params(), h, std::max(abs_floor, 1e-6));
  }

  return out;
}

}  // namespace mia
