#include "mia/propagation.hpp"

#include <cmath>

namespace mia {

using ad::TVar;

Tensor align(const Tensor& feature, const AlignPolicy& policy) {
  if (policy.kind == AlignPolicy::Kind::identity) return feature;
  if (policy.kind != AlignPolicy::Kind::translate)
    throw std::invalid_argument("align: unknown policy");
  require(feature.rank() == 3, "align: expect H×W×C");
  const int H = feature.dim(0), W = feature.dim(1), C = feature.dim(2);
  Tensor out(feature.dims);
  auto mod = [](int i, int n) { return ((i % n) + n) % n; };
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      const int sy = mod(y - policy.dy, H), sx = mod(x - policy.dx, W);
      for (int c = 0; c < C; ++c) out.at(y, x, c) = feature.at(sy, sx, c);
    }
  return out;
}

void ScheduleConfig::validate() const {
  require(M >= 1 && N >= 1, "schedule: M, N must be >= 1");
  require(skip_interval >= 1 && N % skip_interval == 0,
          "schedule: N must be divisible by skip_interval");
  require(channels % heads == 0, "schedule: channels not divisible by heads");
  require(window_side >= 1, "schedule: window_side must be >= 1");
}

std::string iiab_prefix(int module_index, int block_index) {
  return "m" + std::to_string(module_index) + ".n" + std::to_string(block_index) + ".";
}

namespace {

// Mask decision for one block. Returns the mask TVar (exact {0,1} values) and
// fills the record; updates cache.norm_input for the next frame's delta.
TVar block_mask(ad::Tape& tape, TVar x, int m, int n, const ad::ParamBinding& bind,
                const ScheduleConfig& sched, const PropagationOptions& opts,
                BlockCache& cache, BlockRecord& rec) {
  const int H = x.v().dim(0), W = x.v().dim(1);
  auto all_ones = [&] {
    rec.mask = make_block_mask(Tensor::full({H, W}, 1.0));
    return tape.constant(rec.mask.values);
  };
  const bool needs_delta = opts.mask_mode == MaskMode::adaptive_hard ||
                           opts.mask_mode == MaskMode::adaptive_gumbel ||
                           opts.mask_mode == MaskMode::handcrafted;
  if (!needs_delta && opts.mask_mode != MaskMode::forced) return all_ones();

  TVar norm_cur;
  if (needs_delta) {
    // Ledger: the delta normalization exists only to drive the mask decision.
    KindScope ks(OpKind::mask_predictor);
    norm_cur = ad::layer_norm_noaffine(x, sched.ln_eps);
  }
  const bool first_frame = !cache.valid;
  TVar mask_var;
  if (first_frame || opts.mask_mode == MaskMode::forced) {
    if (first_frame) {
      mask_var = all_ones();
    } else {
      rec.mask = make_block_mask(opts.forced_mask);
      rec.live = true;
      mask_var = tape.constant(rec.mask.values);
    }
  } else if (opts.mask_mode == MaskMode::handcrafted) {
    Tensor delta = norm_cur.v();
    for (long long i = 0; i < delta.numel(); ++i)
      delta[i] = std::fabs(delta[i] - cache.norm_input[i]);
    rec.mask = handcrafted_mask(delta, opts.hm_threshold);
    rec.live = true;
    mask_var = tape.constant(rec.mask.values);
  } else {
    // adaptive: delta through the 1x1 conv predictor
    KindScope ks(OpKind::mask_predictor);
    TVar delta = ad::abs_val(ad::sub(norm_cur, tape.constant(cache.norm_input)));
    TVar logits = ad::linear(delta, bind.at(iiab_prefix(m, n) + "mask.w"),
                             bind.at(iiab_prefix(m, n) + "mask.b"));
    logits = ad::reshape(logits, {H, W});
    rec.live = true;
    if (opts.mask_mode == MaskMode::adaptive_hard) {
      // inference: no noise, sigmoid(logits) > 0.5 <=> logits > 0
      Tensor hard({H, W});
      for (long long i = 0; i < hard.numel(); ++i)
        hard[i] = logits.v()[i] > 0.0 ? 1.0 : 0.0;
      rec.mask = make_block_mask(std::move(hard));
      mask_var = tape.constant(rec.mask.values);
    } else {
      require(opts.rng != nullptr, "adaptive_gumbel needs an rng");
      Tensor noise = gumbel_noise_diff(H, W, *opts.rng);
      TVar soft = ad::sigmoid(ad::scale(ad::add_const(logits, noise), 1.0 / opts.tau));
      rec.soft_mask = soft;
      rec.has_soft = true;
      mask_var = ad::straight_through(soft);
      rec.mask = make_block_mask(mask_var.v());
    }
  }
  if (needs_delta) cache.norm_input = norm_cur.v();
  return mask_var;
}

}  // namespace

TVar fpm_forward(TVar x_in, int module_index, int frame_index,
                 const ad::ParamBinding& bind, const ScheduleConfig& sched,
                 const PropagationOptions& opts, PropagationState& state,
                 std::vector<BlockRecord>& records) {
  sched.validate();
  ad::Tape& tape = *x_in.tape;
  // Tape recording may reallocate node storage, so keep a copy of the input
  // shape instead of a reference into the tape.
  const std::vector<int> in_dims = x_in.v().dims;
  require(in_dims.size() == 3 && in_dims[2] == sched.channels,
          "fpm_forward: bad input shape");
  if (state.caches.empty()) state.caches.resize(static_cast<size_t>(sched.N));
  require(static_cast<int>(state.caches.size()) == sched.N,
          "fpm_forward: inconsistent state");
  Tensor past1 = state.has_past && state.past1.numel() > 0 ? state.past1
                                                           : Tensor::zeros(in_dims);
  Tensor past2 = state.has_past && state.past2.numel() > 0 ? state.past2
                                                           : Tensor::zeros(in_dims);
  require(past1.dims == in_dims && past2.dims == in_dims,
          "fpm_forward: state shape mismatch");
  past1 = align(past1, opts.align);
  past2 = align(past2, opts.align);

  IiabConfig icfg;
  icfg.C = sched.channels;
  icfg.heads = sched.heads;
  icfg.window_side = sched.window_side;
  icfg.ffn_ratio = sched.ffn_ratio;
  icfg.ln_eps = sched.ln_eps;

  TVar x = x_in;
  TVar group_start = x;
  for (int n = 0; n < sched.N; ++n) {
    if (FlopLedger* l = active_ledger()) l->set_scope(frame_index, module_index, n);
    if (n % sched.skip_interval == 0) group_start = x;
    BlockRecord rec;
    rec.frame = frame_index;
    rec.module = module_index;
    rec.block = n;
    BlockCache& cache = state.caches[static_cast<size_t>(n)];
    TVar mask_var = block_mask(tape, x, module_index, n, bind, sched, opts, cache, rec);
    const IiabParamRefs p = bind_iiab(bind, iiab_prefix(module_index, n));
    const int shift = (n % 2 == 1) ? sched.window_side / 2 : 0;
    x = iiab_block(icfg, x, p, past1, past2, mask_var, cache, shift);
    if ((n + 1) % sched.skip_interval == 0) x = ad::add(x, group_start);
    records.push_back(std::move(rec));
  }

  // second-order state handoff, truncated: the next frame sees detached values
  state.past2 = state.past1.numel() > 0 ? state.past1 : Tensor::zeros(in_dims);
  state.past1 = x.v();
  state.has_past = true;
  return x;
}

PropagationResult propagate_bidirectional(const std::vector<TVar>& shallow,
                                          const ad::ParamBinding& bind,
                                          const ScheduleConfig& sched,
                                          const PropagationOptions& opts) {
  require(!shallow.empty(), "propagate_bidirectional: empty sequence");
  sched.validate();
  const int T = static_cast<int>(shallow.size());
  PropagationResult res;
  res.refined = shallow;
  res.records.resize(static_cast<size_t>(T));
  for (int m = 0; m < sched.M; ++m) {
    const bool fwd = (m % 2 == 0);
    PropagationState state;
    for (int step = 0; step < T; ++step) {
      const int t = fwd ? step : T - 1 - step;
      res.refined[static_cast<size_t>(t)] =
          fpm_forward(res.refined[static_cast<size_t>(t)], m, t, bind, sched, opts,
                      state, res.records[static_cast<size_t>(t)]);
    }
  }
  return res;
}

}  // namespace mia
