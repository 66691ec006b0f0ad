#include "mia/model.hpp"

#include <cmath>

#include "mia/kernels.hpp"

namespace mia {

using ad::TVar;

void ModelConfig::validate() const {
  require(scale == 2 || scale == 3 || scale == 4, "config: scale must be 2, 3 or 4");
  require(channels % heads == 0, "config: channels not divisible by heads");
  schedule().validate();
  require(tau > 0, "config: tau must be positive");
  require(lambda >= 0, "config: lambda must be nonnegative");
  require(charbonnier_eps > 0, "config: charbonnier_eps must be positive");
}

ScheduleConfig ModelConfig::schedule() const {
  ScheduleConfig s;
  s.M = M;
  s.N = N;
  s.skip_interval = skip_interval;
  s.window_side = window_side;
  s.heads = heads;
  s.channels = channels;
  s.ffn_ratio = ffn_ratio;
  s.ln_eps = ln_eps;
  return s;
}

namespace {

Tensor randn(std::vector<int> dims, std::mt19937_64& rng, real std_dev) {
  Tensor t(std::move(dims));
  std::normal_distribution<real> dist(0.0, 1.0);
  for (auto& v : t.data) v = dist(rng) * std_dev;
  return t;
}

}  // namespace

Model::Model(ModelConfig cfg, uint64_t init_seed) : cfg_(cfg) {
  cfg_.validate();
  std::mt19937_64 rng(init_seed);
  auto& p = params_.params;
  const int C = cfg_.channels;
  p["shallow.w"] = randn({3, 3, 3, C}, rng, cfg_.init_std);
  p["shallow.b"] = Tensor::zeros({C});
  p["recon.w"] = randn({3, 3, C, 3 * cfg_.scale * cfg_.scale}, rng, cfg_.init_std);
  p["recon.b"] = Tensor::zeros({3 * cfg_.scale * cfg_.scale});
  for (int m = 0; m < cfg_.M; ++m)
    for (int n = 0; n < cfg_.N; ++n) {
      const std::string prefix = iiab_prefix(m, n);
      init_iiab_params(params_, prefix, C, cfg_.heads, cfg_.window_side,
                       cfg_.ffn_ratio, rng, cfg_.init_std);
      p[prefix + "mask.w"] = randn({C, 1}, rng, cfg_.init_std);
      p[prefix + "mask.b"] = Tensor::zeros({1});
    }
}

TVar Model::shallow_extract(TVar frame, const ad::ParamBinding& bind) const {
  require(frame.v().rank() == 3 && frame.v().dim(2) == 3,
          "shallow_extract: expect H×W×3");
  KindScope ks(OpKind::conv);
  return ad::conv2d(frame, bind.at("shallow.w"), bind.at("shallow.b"));
}

TVar Model::reconstruct(TVar feat, const Tensor& lr_frame,
                        const ad::ParamBinding& bind) const {
  const int H = feat.v().dim(0), W = feat.v().dim(1);
  const int s = cfg_.scale;
  TVar r;
  {
    KindScope ks(OpKind::conv);
    r = ad::conv2d(feat, bind.at("recon.w"), bind.at("recon.b"));
  }
  auto map = std::make_shared<std::vector<long long>>(
      kernels::pixel_shuffle_index(H, W, 3 * s * s, s));
  TVar up = ad::gather_elems(r, map, {H * s, W * s, 3});
  if (cfg_.global_residual)
    up = ad::add_const(up, kernels::upsample_bilinear(lr_frame, s));
  return up;
}

TVar Model::forward_on_tape(ad::Tape& tape, const ad::ParamBinding& bind,
                            const std::vector<Tensor>& lr_frames,
                            const ForwardOptions& opts, ForwardResult& out) const {
  require(!lr_frames.empty(), "forward_sequence: empty sequence");
  const int T = static_cast<int>(lr_frames.size());
  for (auto& f : lr_frames)
    require(f.rank() == 3 && f.dim(2) == 3, "forward_sequence: frames must be H×W×3");

  std::mt19937_64 rng(opts.seed);
  PropagationOptions popts;
  popts.tau = cfg_.tau;
  popts.hm_threshold = opts.hm_threshold;
  popts.rng = &rng;
  popts.align = opts.align;
  if (opts.forced_mask) {
    popts.mask_mode = MaskMode::forced;
    popts.forced_mask = *opts.forced_mask;
  } else if (opts.mode == RunMode::unmasked || opts.saturate_masks) {
    popts.mask_mode = MaskMode::all_ones;
  } else if (opts.mode == RunMode::handcrafted) {
    popts.mask_mode = MaskMode::handcrafted;
  } else {
    popts.mask_mode = opts.training ? MaskMode::adaptive_gumbel : MaskMode::adaptive_hard;
  }

  std::vector<TVar> shallow;
  shallow.reserve(static_cast<size_t>(T));
  for (int t = 0; t < T; ++t) {
    if (FlopLedger* l = active_ledger()) l->set_scope(t, -1, -1);
    shallow.push_back(shallow_extract(tape.constant(lr_frames[static_cast<size_t>(t)]), bind));
  }

  PropagationResult prop = propagate_bidirectional(shallow, bind, cfg_.schedule(), popts);

  out.hr.clear();
  out.records = std::move(prop.records);
  for (int t = 0; t < T; ++t) {
    if (FlopLedger* l = active_ledger()) l->set_scope(t, -1, -1);
    TVar hr = reconstruct(prop.refined[static_cast<size_t>(t)],
                          lr_frames[static_cast<size_t>(t)], bind);
    out.hr.push_back(hr.v());
    prop.refined[static_cast<size_t>(t)] = hr;  // keep the node for losses
  }

  // Alpha statistics cover live mask decisions only; boundary all-ones masks
  // (missing caches, unmasked runs) are not decisions and would bias the mean.
  out.frame_alpha.assign(static_cast<size_t>(T), 1.0);
  real alpha_sum = 0;
  long long alpha_n = 0;
  for (int t = 0; t < T; ++t) {
    real s = 0;
    long long n = 0;
    for (const auto& r : out.records[static_cast<size_t>(t)]) {
      if (!r.live) continue;
      s += r.mask.alpha;
      ++n;
    }
    if (n > 0) out.frame_alpha[static_cast<size_t>(t)] = s / n;
    alpha_sum += s;
    alpha_n += n;
  }
  out.mean_alpha = alpha_n > 0 ? alpha_sum / alpha_n : 1.0;

  if (!opts.targets) return TVar{};

  require(static_cast<int>(opts.targets->size()) == T,
          "forward_sequence: target count mismatch");
  std::vector<TVar> frame_losses;
  for (int t = 0; t < T; ++t)
    frame_losses.push_back(ad::charbonnier(prop.refined[static_cast<size_t>(t)],
                                           (*opts.targets)[static_cast<size_t>(t)],
                                           cfg_.charbonnier_eps));
  TVar l_sr = ad::average(frame_losses);

  std::vector<TVar> soft;
  for (auto& frame_recs : out.records)
    for (auto& r : frame_recs)
      if (r.has_soft) soft.push_back(ad::mean_abs(r.soft_mask));
  TVar total;
  LossBreakdown lb;
  lb.l_sr = l_sr.v()[0];
  lb.mean_alpha = out.mean_alpha;
  if (!soft.empty()) {
    TVar l_mask = ad::average(soft);
    lb.l_mask = l_mask.v()[0];
    total = ad::add(l_sr, ad::scale(l_mask, cfg_.lambda));
  } else {
    lb.l_mask = 0;
    total = l_sr;
  }
  lb.total = total.v()[0];
  out.loss = lb;
  return total;
}

ForwardResult Model::forward_sequence(const std::vector<Tensor>& lr_frames,
                                      const ForwardOptions& opts) const {
  ForwardResult out;
  LedgerScope ls(&out.ledger);
  ad::Tape tape;
  ad::ParamBinding bind = ad::bind_params(tape, params_);
  forward_on_tape(tape, bind, lr_frames, opts, out);
  return out;
}

real charbonnier_loss(const Tensor& pred, const Tensor& target, real eps) {
  require(pred.same_shape(target), "charbonnier_loss: shape mismatch");
  require(eps > 0, "charbonnier_loss: eps must be positive");
  const int rows = pred.rows(), C = pred.cols();
  // Same accumulation trick as ad::charbonnier: zero residual gives exactly eps.
  real acc = 0;
  for (int i = 0; i < rows; ++i) {
    real q = eps * eps;
    for (int c = 0; c < C; ++c) {
      const real d = pred.data[(size_t)i * C + c] - target.data[(size_t)i * C + c];
      q += d * d;
    }
    acc += std::sqrt(q) - eps;
  }
  return eps + acc / rows;
}

LossBreakdown total_loss(real l_sr, real l_mask, real lambda, real mean_alpha) {
  require(lambda >= 0, "total_loss: lambda must be nonnegative");
  LossBreakdown lb;
  lb.l_sr = l_sr;
  lb.l_mask = l_mask;
  lb.total = l_sr + lambda * l_mask;
  lb.mean_alpha = mean_alpha;
  return lb;
}

TrainStats train_step(Model& model, const std::vector<Tensor>& lr_frames,
                      const std::vector<Tensor>& hr_frames, uint64_t step_seed,
                      const ad::AdamConfig& adam, ad::AdamState& state) {
  ad::Tape tape;
  ad::ParamBinding bind = ad::bind_params(tape, model.params());
  ForwardOptions opts;
  opts.mode = RunMode::masked;
  opts.training = true;
  opts.seed = step_seed;
  opts.targets = &hr_frames;
  ForwardResult res;
  TVar loss = model.forward_on_tape(tape, bind, lr_frames, opts, res);
  tape.backward(loss);
  std::map<std::string, Tensor> grads;
  for (auto& [name, var] : bind.vars)
    if (tape.has_grad(var.id)) grads[name] = tape.grad(var.id);
  adam_step(model.params(), grads, adam, state);
  TrainStats s;
  s.total = res.loss->total;
  s.l_sr = res.loss->l_sr;
  s.l_mask = res.loss->l_mask;
  s.mean_alpha = res.loss->mean_alpha;
  return s;
}

}  // namespace mia
