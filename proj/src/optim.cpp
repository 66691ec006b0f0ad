#include "mia/optim.hpp"

#include <cmath>

namespace mia::ad {

void adam_step(ParamStore& params, const std::map<std::string, Tensor>& grads,
               const AdamConfig& cfg, AdamState& state) {
  state.step += 1;
  const real bc1 = 1.0 - std::pow(cfg.beta1, static_cast<real>(state.step));
  const real bc2 = 1.0 - std::pow(cfg.beta2, static_cast<real>(state.step));
  for (auto& [name, g] : grads) {
    Tensor& p = params.at(name);
    require(p.numel() == g.numel(), "adam_step: grad shape mismatch for " + name);
    Tensor& m = state.m[name];
    Tensor& v = state.v[name];
    if (m.data.empty()) m = Tensor::zeros(p.dims);
    if (v.data.empty()) v = Tensor::zeros(p.dims);
    for (long long i = 0; i < p.numel(); ++i) {
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
      const real mhat = m[i] / bc1;
      const real vhat = v[i] / bc2;
      p[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
  }
}

GradCheckResult finite_diff_check(
    const std::function<TVar(Tape&, const ParamBinding&)>& forward,
    const ParamStore& params, real h, real abs_floor) {
  // Tape gradients once.
  std::map<std::string, Tensor> ad_grads;
  {
    Tape tape;
    ParamBinding bind = bind_params(tape, params);
    TVar loss = forward(tape, bind);
    tape.backward(loss);
    for (auto& [name, var] : bind.vars)
      ad_grads[name] = tape.has_grad(var.id) ? tape.grad(var.id)
                                             : Tensor::zeros(var.v().dims);
  }

  auto eval = [&](const ParamStore& p) {
    Tape tape;
    ParamBinding bind = bind_params(tape, p);
    TVar loss = forward(tape, bind);
    const real v = loss.v()[0];
    if (!std::isfinite(v)) throw std::runtime_error("finite_diff_check: non-finite loss");
    return v;
  };

  GradCheckResult res;
  ParamStore work = params;
  for (auto& [name, g] : ad_grads) {
    real worst = 0;
    Tensor& p = work.at(name);
    for (long long i = 0; i < p.numel(); ++i) {
      const real orig = p[i];
      p[i] = orig + h;
      const real fp = eval(work);
      p[i] = orig - h;
      const real fm = eval(work);
      p[i] = orig;
      const real fd = (fp - fm) / (2.0 * h);
      const real ad = g[i];
      const real denom = std::max({std::fabs(fd), std::fabs(ad), abs_floor});
      worst = std::max(worst, std::fabs(fd - ad) / denom);
    }
    res.max_rel_err[name] = worst;
    res.worst = std::max(res.worst, worst);
  }
  return res;
}

}  // namespace mia::ad
