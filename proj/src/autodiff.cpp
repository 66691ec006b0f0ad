#include "mia/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "mia/flops.hpp"
#include "mia/kernels.hpp"

namespace mia::ad {

const Tensor& TVar::v() const { return tape->val(id); }

TVar Tape::constant(Tensor v) {
  nodes_.push_back(Node{std::move(v), {}, nullptr, nullptr});
  return TVar{this, static_cast<int>(nodes_.size()) - 1};
}

TVar Tape::record(Tensor v, std::vector<int> parents, FwdFn fwd, BwdFn bwd) {
  nodes_.push_back(Node{std::move(v), std::move(parents), std::move(fwd), std::move(bwd)});
  return TVar{this, static_cast<int>(nodes_.size()) - 1};
}

Tensor& Tape::grad(int id) {
  if (grads_.size() < nodes_.size()) grads_.resize(nodes_.size());
  Tensor& g = grads_[static_cast<size_t>(id)];
  if (g.data.empty()) g = Tensor::zeros(nodes_[static_cast<size_t>(id)].value.dims);
  return g;
}

bool Tape::has_grad(int id) const {
  return static_cast<size_t>(id) < grads_.size() &&
         !grads_[static_cast<size_t>(id)].data.empty();
}

void Tape::zero_grads() {
  grads_.clear();
}

void Tape::backward(int loss_id) {
  if (loss_id < 0 || static_cast<size_t>(loss_id) >= nodes_.size())
    throw std::invalid_argument("backward: bad loss id");
  if (nodes_[static_cast<size_t>(loss_id)].value.numel() != 1)
    throw std::invalid_argument("backward: loss must be scalar");
  zero_grads();
  grad(loss_id).data[0] = 1.0;
  for (int i = loss_id; i >= 0; --i) {
    auto& n = nodes_[static_cast<size_t>(i)];
    if (n.bwd && has_grad(i)) n.bwd(*this, i);
  }
}

bool Tape::replay() {
  bool ok = true;
  for (size_t i = 0; i < nodes_.size(); ++i) {
    auto& n = nodes_[i];
    if (!n.fwd) continue;
    Tensor v = n.fwd(*this);
    if (v.dims != n.value.dims || v.data != n.value.data) ok = false;
    n.value = std::move(v);
  }
  return ok;
}

Tensor& ParamStore::at(const std::string& name) {
  auto it = params.find(name);
  if (it == params.end()) throw std::out_of_range("unknown parameter " + name);
  return it->second;
}
const Tensor& ParamStore::at(const std::string& name) const {
  auto it = params.find(name);
  if (it == params.end()) throw std::out_of_range("unknown parameter " + name);
  return it->second;
}

TVar ParamBinding::at(const std::string& name) const {
  auto it = vars.find(name);
  if (it == vars.end()) throw std::out_of_range("unbound parameter " + name);
  return it->second;
}

ParamBinding bind_params(Tape& tape, const ParamStore& store) {
  ParamBinding b;
  for (auto& [name, t] : store.params) b.vars[name] = tape.constant(t);
  return b;
}

namespace {

void check_same_tape(TVar a, TVar b) {
  require(a.tape == b.tape, "op: operands live on different tapes");
}

}  // namespace

// ----------------------------------------------------------- elementwise

TVar add(TVar a, TVar b) {
  check_same_tape(a, b);
  require(a.v().same_shape(b.v()), "add: shape mismatch");
  Tensor out = a.v();
  for (long long i = 0; i < out.numel(); ++i) out[i] += b.v()[i];
  const int ai = a.id, bi = b.id;
  return a.tape->record(
      std::move(out), {ai, bi},
      [ai, bi](const Tape& t) {
        Tensor o = t.val(ai);
        for (long long i = 0; i < o.numel(); ++i) o[i] += t.val(bi)[i];
        return o;
      },
      [ai, bi](Tape& t, int id) {
        const Tensor& g = t.grad(id);
        Tensor& ga = t.grad(ai);
        Tensor& gb = t.grad(bi);
        for (long long i = 0; i < g.numel(); ++i) {
          ga[i] += g[i];
          gb[i] += g[i];
        }
      });
}

TVar sub(TVar a, TVar b) {
  check_same_tape(a, b);
  require(a.v().same_shape(b.v()), "sub: shape mismatch");
  Tensor out = a.v();
  for (long long i = 0; i < out.numel(); ++i) out[i] -= b.v()[i];
  const int ai = a.id, bi = b.id;
  return a.tape->record(
      std::move(out), {ai, bi},
      [ai, bi](const Tape& t) {
        Tensor o = t.val(ai);
        for (long long i = 0; i < o.numel(); ++i) o[i] -= t.val(bi)[i];
        return o;
      },
      [ai, bi](Tape& t, int id) {
        const Tensor& g = t.grad(id);
        Tensor& ga = t.grad(ai);
        Tensor& gb = t.grad(bi);
        for (long long i = 0; i < g.numel(); ++i) {
          ga[i] += g[i];
          gb[i] -= g[i];
        }
      });
}

TVar mul(TVar a, TVar b) {
  check_same_tape(a, b);
  require(a.v().same_shape(b.v()), "mul: shape mismatch");
  Tensor out = a.v();
  for (long long i = 0; i < out.numel(); ++i) out[i] *= b.v()[i];
  const int ai = a.id, bi = b.id;
  return a.tape->record(
      std::move(out), {ai, bi},
      [ai, bi](const Tape& t) {
        Tensor o = t.val(ai);
        for (long long i = 0; i < o.numel(); ++i) o[i] *= t.val(bi)[i];
        return o;
      },
      [ai, bi](Tape& t, int id) {
        const Tensor& g = t.grad(id);
        Tensor& ga = t.grad(ai);
        Tensor& gb = t.grad(bi);
        for (long long i = 0; i < g.numel(); ++i) {
          ga[i] += g[i] * t.val(bi)[i];
          gb[i] += g[i] * t.val(ai)[i];
        }
      });
}

TVar scale(TVar a, real s) {
  Tensor out = a.v();
  for (auto& v : out.data) v *= s;
  const int ai = a.id;
  return a.tape->record(
      std::move(out), {ai},
      [ai, s](const Tape& t) {
        Tensor o = t.val(ai);
        for (auto& v : o.data) v *= s;
        return o;
      },
      [ai, s](Tape& t, int id) {
        const Tensor& g = t.grad(id);
        Tensor& ga = t.grad(ai);
        for (long long i = 0; i < g.numel(); ++i) ga[i] += s * g[i];
      });
}

TVar add_const(TVar a, const Tensor& c) {
  require(a.v().same_shape(c), "add_const: shape mismatch");
  Tensor out = a.v();
  for (long long i = 0; i < out.numel(); ++i) out[i] += c[i];
  const int ai = a.id;
  Tensor cc = c;
  return a.tape->record(
      std::move(out), {ai},
      [ai, cc](const Tape& t) {
        Tensor o = t.val(ai);
        for (long long i = 0; i < o.numel(); ++i) o[i] += cc[i];
        return o;
      },
      [ai](Tape& t, int id) {
        const Tensor& g = t.grad(id);
        Tensor& ga = t.grad(ai);
        for (long long i = 0; i < g.numel(); ++i) ga[i] += g[i];
      });
}

TVar abs_val(TVar a) {
  Tensor out = a.v();
  for (auto& v : out.data) v = std::fabs(v);
  const int ai = a.id;
  return a.tape->record(
      std::move(out), {ai},
      [ai](const Tape& t) {
        Tensor o = t.val(ai);
        for (auto& v : o.data) v = std::fabs(v);
        return o;
      },
      [ai](Tape& t, int id) {
        const Tensor& g = t.grad(id);
        const Tensor& x = t.val(ai);
        Tensor& ga = t.grad(ai);
        for (long long i = 0; i < g.numel(); ++i)
          ga[i] += g[i] * (x[i] > 0 ? 1.0 : (x[i] < 0 ? -1.0 : 0.0));
      });
}

TVar sigmoid(TVar a) {
  Tensor out = a.v();
  for (auto& v : out.data) v = 1.0 / (1.0 + std::exp(-v));
  const int ai = a.id;
  return a.tape->record(
      std::move(out), {ai},
      [ai](const Tape& t) {
        Tensor o = t.val(ai);
        for (auto& v : o.data) v = 1.0 / (1.0 + std::exp(-v));
        return o;
      },
      [ai](Tape& t, int id) {
        const Tensor& g = t.grad(id);
        const Tensor& y = t.val(id);
        Tensor& ga = t.grad(ai);
        for (long long i = 0; i < g.numel(); ++i) ga[i] += g[i] * y[i] * (1.0 - y[i]);
      });
}

TVar gelu(TVar a) {
  Tensor out = a.v();
  for (auto& v : out.data) v = kernels::gelu(v);
  const int ai = a.id;
  return a.tape->record(
      std::move(out), {ai},
      [ai](const Tape& t) {
        Tensor o = t.val(ai);
        for (auto& v : o.data) v = kernels::gelu(v);
        return o;
      },
      [ai](Tape& t, int id) {
        const Tensor& g = t.grad(id);
        const Tensor& x = t.val(ai);
        Tensor& ga = t.grad(ai);
        for (long long i = 0; i < g.numel(); ++i) ga[i] += g[i] * kernels::gelu_grad(x[i]);
      });
}

TVar sum(TVar a) {
  real s = 0;
  for (real v : a.v().data) s += v;
  const int ai = a.id;
  return a.tape->record(
      Tensor::scalar(s), {ai},
      [ai](const Tape& t) {
        real acc = 0;
        for (real v : t.val(ai).data) acc += v;
        return Tensor::scalar(acc);
      },
      [ai](Tape& t, int id) {
        const real g = t.grad(id)[0];
        Tensor& ga = t.grad(ai);
        for (auto& v : ga.data) v += g;
      });
}

TVar mean(TVar a) { return scale(sum(a), 1.0 / static_cast<real>(a.v().numel())); }

TVar mean_abs(TVar a) { return mean(abs_val(a)); }

TVar average(const std::vector<TVar>& scalars) {
  require(!scalars.empty(), "average: empty input");
  TVar acc = scalars[0];
  for (size_t i = 1; i < scalars.size(); ++i) acc = add(acc, scalars[i]);
  return scale(acc, 1.0 / static_cast<real>(scalars.size()));
}

// --------------------------------------------------------------- linear

TVar linear(TVar x, TVar w, TVar b) {
  check_same_tape(x, w);
  require(x.v().cols() == w.v().dim(0), "linear: inner dims disagree");
  const int rows = x.v().rows(), cin = x.v().cols(), cout = w.v().dim(1);
  ledger_add(static_cast<long long>(rows) * cin * cout);
  const bool has_bias = b.valid();
  const int xi = x.id, wi = w.id, bi = has_bias ? b.id : -1;
  auto fwd = [xi, wi, bi, has_bias](const Tape& t) {
    // matmul reads rows()/cols(), which collapse leading dims, so rank-3
    // feature maps need no reshape copy.
    const Tensor& xv = t.val(xi);
    Tensor y = kernels::matmul(xv, t.val(wi));
    if (has_bias) {
      const Tensor& bv = t.val(bi);
      const int n = y.cols();
      for (int i = 0; i < y.rows(); ++i)
        for (int j = 0; j < n; ++j) y.at(i, j) += bv[j];
    }
    return y;
  };
  Tensor out = fwd(*x.tape);
  check_finite(out, "linear");
  std::vector<int> parents = {xi, wi};
  if (has_bias) parents.push_back(bi);
  return x.tape->record(
      std::move(out), std::move(parents), fwd,
      [xi, wi, bi, has_bias](Tape& t, int id) {
        const Tensor& g = t.grad(id);
        const Tensor& xv = t.val(xi);
        Tensor gx = kernels::matmul_nt(g, t.val(wi));  // rows×cin
        Tensor& gxa = t.grad(xi);
        for (long long i = 0; i < gx.numel(); ++i) gxa[i] += gx[i];
        Tensor gw = kernels::matmul_tn(xv, g);
        Tensor& gwa = t.grad(wi);
        for (long long i = 0; i < gw.numel(); ++i) gwa[i] += gw[i];
        if (has_bias) {
          Tensor& gb = t.grad(bi);
          const int n = g.cols();
          for (int i = 0; i < g.rows(); ++i)
            for (int j = 0; j < n; ++j) gb[j] += g.at(i, j);
        }
      });
}

// --------------------------------------------------------------- conv2d

TVar conv2d(TVar x, TVar k, TVar b) {
  check_same_tape(x, k);
  const Tensor& xv = x.v();
  const Tensor& kv = k.v();
  require(xv.rank() == 3 && kv.rank() == 4, "conv2d: bad ranks");
  require(xv.dim(2) == kv.dim(2), "conv2d: channel mismatch");
  const int H = xv.dim(0), W = xv.dim(1);
  ledger_add(static_cast<long long>(H) * W * kv.dim(0) * kv.dim(1) * kv.dim(2) * kv.dim(3));
  const bool has_bias = b.valid();
  const int xi = x.id, ki = k.id, bi = has_bias ? b.id : -1;
  auto fwd = [xi, ki, bi, has_bias](const Tape& t) {
    static const Tensor empty;
    return kernels::conv2d(t.val(xi), t.val(ki), has_bias ? t.val(bi) : empty);
  };
  Tensor out = fwd(*x.tape);
  check_finite(out, "conv2d");
  std::vector<int> parents = {xi, ki};
  if (has_bias) parents.push_back(bi);
  return x.tape->record(
      std::move(out), std::move(parents), fwd,
      [xi, ki, bi, has_bias](Tape& t, int id) {
        const Tensor& g = t.grad(id);
        const Tensor& xv = t.val(xi);
        const Tensor& kv = t.val(ki);
        const int H = xv.dim(0), W = xv.dim(1), Cin = xv.dim(2);
        const int kh = kv.dim(0), kw = kv.dim(1), Cout = kv.dim(3);
        const int ph = kh / 2, pw = kw / 2;
        Tensor& gx = t.grad(xi);
        Tensor& gk = t.grad(ki);
        // co-inner loops keep every access unit-stride over the output
        // channel axis of g and kv.
        for (int y = 0; y < H; ++y)
          for (int x0 = 0; x0 < W; ++x0) {
            const real* gr = &g.data[((size_t)y * W + x0) * Cout];
            for (int dy = 0; dy < kh; ++dy) {
              const int sy = y + dy - ph;
              if (sy < 0 || sy >= H) continue;
              for (int dx = 0; dx < kw; ++dx) {
                const int sx = x0 + dx - pw;
                if (sx < 0 || sx >= W) continue;
                for (int ci = 0; ci < Cin; ++ci) {
                  const real xvv = xv.at(sy, sx, ci);
                  const real* kr = &kv.data[(((size_t)dy * kw + dx) * Cin + ci) * Cout];
                  real* gkr = &gk.data[(((size_t)dy * kw + dx) * Cin + ci) * Cout];
                  real acc = 0;
                  for (int co = 0; co < Cout; ++co) {
                    acc += gr[co] * kr[co];
                    gkr[co] += gr[co] * xvv;
                  }
                  gx.at(sy, sx, ci) += acc;
                }
              }
            }
          }
        if (has_bias) {
          Tensor& gb = t.grad(bi);
          for (int y = 0; y < H; ++y)
            for (int x0 = 0; x0 < W; ++x0)
              for (int co = 0; co < Cout; ++co) gb[co] += g.at(y, x0, co);
        }
      });
}

// ------------------------------------------------------------ layer norm

namespace {

void layer_norm_backward(const Tensor& x, const Tensor& g, const Tensor* gamma,
                         real eps, Tensor& gx, Tensor* ggamma, Tensor* gbeta) {
  const int rows = x.rows(), C = x.cols();
  std::vector<real> xhat((size_t)C), ghat((size_t)C);  // hoisted row scratch
  for (int i = 0; i < rows; ++i) {
    const real* xr = &x.data[(size_t)i * C];
    const real* gr = &g.data[(size_t)i * C];
    real mean = 0;
    for (int j = 0; j < C; ++j) mean += xr[j];
    mean /= C;
    real var = 0;
    for (int j = 0; j < C; ++j) var += (xr[j] - mean) * (xr[j] - mean);
    var /= C;
    const real inv = 1.0 / std::sqrt(var + eps);
    // ghat = g * gamma; gx = inv*(ghat - mean(ghat) - xhat*mean(ghat*xhat))
    real m1 = 0, m2 = 0;
    for (int j = 0; j < C; ++j) {
      xhat[(size_t)j] = (xr[j] - mean) * inv;
      ghat[(size_t)j] = gamma ? gr[j] * gamma->data[(size_t)j] : gr[j];
      m1 += ghat[(size_t)j];
      m2 += ghat[(size_t)j] * xhat[(size_t)j];
    }
    m1 /= C;
    m2 /= C;
    for (int j = 0; j < C; ++j) {
      gx.data[(size_t)i * C + j] += inv * (ghat[(size_t)j] - m1 - xhat[(size_t)j] * m2);
      if (ggamma) ggamma->data[(size_t)j] += gr[j] * xhat[(size_t)j];
      if (gbeta) gbeta->data[(size_t)j] += gr[j];
    }
  }
}

}  // namespace

TVar layer_norm(TVar x, TVar gamma, TVar beta, real eps) {
  check_same_tape(x, gamma);
  const int xi = x.id, gi = gamma.id, bi = beta.id;
  auto fwd = [xi, gi, bi, eps](const Tape& t) {
    return kernels::layer_norm(t.val(xi), t.val(gi), t.val(bi), eps);
  };
  Tensor out = fwd(*x.tape);
  ledger_add(2LL * x.v().numel());  // documented norm_misc convention
  return x.tape->record(
      std::move(out), {xi, gi, bi}, fwd,
      [xi, gi, bi, eps](Tape& t, int id) {
        layer_norm_backward(t.val(xi), t.grad(id), &t.val(gi), eps, t.grad(xi),
                            &t.grad(gi), &t.grad(bi));
      });
}

TVar layer_norm_noaffine(TVar x, real eps) {
  const int xi = x.id;
  auto fwd = [xi, eps](const Tape& t) {
    static const Tensor empty;
    return kernels::layer_norm(t.val(xi), empty, empty, eps);
  };
  Tensor out = fwd(*x.tape);
  ledger_add(2LL * x.v().numel());
  return x.tape->record(std::move(out), {xi}, fwd, [xi, eps](Tape& t, int id) {
    layer_norm_backward(t.val(xi), t.grad(id), nullptr, eps, t.grad(xi), nullptr, nullptr);
  });
}

TVar softmax_rows(TVar x) {
  const int xi = x.id;
  auto fwd = [xi](const Tape& t) { return kernels::softmax_rows(t.val(xi)); };
  Tensor out = fwd(*x.tape);
  ledger_add(x.v().numel());
  return x.tape->record(std::move(out), {xi}, fwd, [xi](Tape& t, int id) {
    const Tensor& y = t.val(id);
    const Tensor& g = t.grad(id);
    Tensor& gx = t.grad(xi);
    const int rows = y.rows(), C = y.cols();
    for (int i = 0; i < rows; ++i) {
      real dot = 0;
      for (int j = 0; j < C; ++j) dot += g.at(i, j) * y.at(i, j);
      for (int j = 0; j < C; ++j)
        gx.data[(size_t)i * C + j] += y.at(i, j) * (g.at(i, j) - dot);
    }
  });
}

// ------------------------------------------------------------------- mha

namespace {

// Per-head logits and softmax for q rows [0,rq) against nk keys, written to
// the rq*nk buffer attn.
void mha_head_softmax(const Tensor& q, const Tensor& k, const Tensor& bias, int h,
                      int d, real* attn) {
  const int rq = q.rows(), nk = k.rows(), C = q.cols();
  const real inv_sqrt_d = 1.0 / std::sqrt(static_cast<real>(d));
  for (int i = 0; i < rq; ++i) {
    real* ar = attn + (size_t)i * nk;
    for (int j = 0; j < nk; ++j) {
      real s = 0;
      for (int p = 0; p < d; ++p)
        s += q.data[(size_t)i * C + h * d + p] * k.data[(size_t)j * C + h * d + p];
      ar[j] = s * inv_sqrt_d + bias.at(h, i, j);
    }
    real mx = ar[0];
    for (int j = 1; j < nk; ++j) mx = std::max(mx, ar[j]);
    real sum = 0;
    for (int j = 0; j < nk; ++j) {
      ar[j] = std::exp(ar[j] - mx);
      sum += ar[j];
    }
    for (int j = 0; j < nk; ++j) ar[j] /= sum;
  }
}

}  // namespace

TVar mha(TVar q, TVar k, TVar v, TVar bias, int heads) {
  check_same_tape(q, k);
  check_same_tape(q, v);
  check_same_tape(q, bias);
  const Tensor& qv = q.v();
  const Tensor& kv = k.v();
  const Tensor& vv = v.v();
  const Tensor& bv = bias.v();
  const int rq = qv.rows(), nk = kv.rows(), C = qv.cols();
  require(kv.rows() == vv.rows(), "mha: K/V row counts differ");
  require(kv.cols() == C && vv.cols() == C, "mha: channel mismatch");
  require(C % heads == 0 && heads > 0, "mha: C not divisible by heads");
  require(bv.rank() == 3 && bv.dim(0) == heads && bv.dim(1) == rq && bv.dim(2) == nk,
          "mha: bias shape mismatch");
  const int d = C / heads;
  ledger_add(2LL * rq * nk * C);  // QK^T and AV
  const int qi = q.id, ki = k.id, vi = v.id, bi = bias.id;
  // The forward pass stashes the softmax weights here so backward does not
  // recompute them; replay() refreshes the stash through the same closure.
  auto attn_cache = std::make_shared<Tensor>();
  auto fwd = [qi, ki, vi, bi, heads, d, attn_cache](const Tape& t) {
    const Tensor& Q = t.val(qi);
    const Tensor& K = t.val(ki);
    const Tensor& V = t.val(vi);
    const Tensor& B = t.val(bi);
    const int rq2 = Q.rows(), nk2 = K.rows(), C2 = Q.cols();
    if (rq2 == 0) return Tensor({1, C2});
    Tensor out = Tensor::uninit({rq2, C2});
    Tensor attn = Tensor::uninit({heads, rq2, nk2});
    for (int h = 0; h < heads; ++h) {
      real* ah = &attn.data[(size_t)h * rq2 * nk2];
      mha_head_softmax(Q, K, B, h, d, ah);
      // j-outer, p-inner: unit stride over V, same ascending-j accumulation.
      for (int i = 0; i < rq2; ++i) {
        real* o = &out.data[(size_t)i * C2 + h * d];
        const real* ar = ah + (size_t)i * nk2;
        for (int p = 0; p < d; ++p) o[p] = 0;
        for (int j = 0; j < nk2; ++j) {
          const real aij = ar[j];
          const real* vr = &V.data[(size_t)j * C2 + h * d];
          for (int p = 0; p < d; ++p) o[p] += aij * vr[p];
        }
      }
    }
    *attn_cache = std::move(attn);
    return out;
  };
  Tensor out = fwd(*q.tape);
  check_finite(out, "mha");
  return q.tape->record(
      std::move(out), {qi, ki, vi, bi}, fwd,
      [qi, ki, vi, bi, heads, d, attn_cache](Tape& t, int id) {
        const Tensor& Q = t.val(qi);
        const Tensor& K = t.val(ki);
        const Tensor& V = t.val(vi);
        const Tensor& g = t.grad(id);
        Tensor& gq = t.grad(qi);
        Tensor& gk = t.grad(ki);
        Tensor& gv = t.grad(vi);
        Tensor& gb = t.grad(bi);
        const int rq2 = Q.rows(), nk2 = K.rows(), C2 = Q.cols();
        const real inv_sqrt_d = 1.0 / std::sqrt(static_cast<real>(d));
        const Tensor& attn = *attn_cache;  // stashed by the forward pass
        std::vector<real> dA((size_t)nk2);  // hoisted row scratch
        for (int h = 0; h < heads; ++h) {
          const real* ah = &attn.data[(size_t)h * rq2 * nk2];
          for (int i = 0; i < rq2; ++i) {
            const real* ar = ah + (size_t)i * nk2;
            // dA then dS for this row
            for (int j = 0; j < nk2; ++j) {
              real acc = 0;
              for (int p = 0; p < d; ++p)
                acc += g.data[(size_t)i * C2 + h * d + p] * V.data[(size_t)j * C2 + h * d + p];
              dA[(size_t)j] = acc;
            }
            real dot = 0;
            for (int j = 0; j < nk2; ++j) dot += dA[(size_t)j] * ar[j];
            for (int j = 0; j < nk2; ++j) {
              const real dS = ar[j] * (dA[(size_t)j] - dot);
              gb.at(h, i, j) += dS;
              for (int p = 0; p < d; ++p) {
                gq.data[(size_t)i * C2 + h * d + p] +=
                    dS * K.data[(size_t)j * C2 + h * d + p] * inv_sqrt_d;
                gk.data[(size_t)j * C2 + h * d + p] +=
                    dS * Q.data[(size_t)i * C2 + h * d + p] * inv_sqrt_d;
                gv.data[(size_t)j * C2 + h * d + p] +=
                    ar[j] * g.data[(size_t)i * C2 + h * d + p];
              }
            }
          }
        }
      });
}

// ------------------------------------------------------------- index ops

TVar gather_elems(TVar x, IndexMap map, std::vector<int> out_dims) {
  require(static_cast<long long>(map->size()) == Tensor::numel_of(out_dims),
          "gather_elems: map/dims mismatch");
  const int xi = x.id;
  auto fwd = [xi, map, out_dims](const Tape& t) {
    const Tensor& xv = t.val(xi);
    Tensor o = Tensor::uninit(out_dims);
    for (size_t i = 0; i < map->size(); ++i) o.data[i] = xv[(*map)[i]];
    return o;
  };
  Tensor out = fwd(*x.tape);
  return x.tape->record(std::move(out), {xi}, fwd, [xi, map](Tape& t, int id) {
    const Tensor& g = t.grad(id);
    Tensor& gx = t.grad(xi);
    for (size_t i = 0; i < map->size(); ++i) gx[(*map)[i]] += g.data[i];
  });
}

TVar gather_rows(TVar x, std::shared_ptr<const std::vector<int>> idx) {
  const int C = x.v().cols();
  const int n = static_cast<int>(idx->size());
  const int xi = x.id;
  auto fwd = [xi, idx, C, n](const Tape& t) {
    const Tensor& xv = t.val(xi);
    Tensor o = n > 0 ? Tensor::uninit({n, C}) : Tensor({1, C});
    for (int r = 0; r < n; ++r)
      std::copy(&xv.data[(size_t)(*idx)[(size_t)r] * C],
                &xv.data[(size_t)(*idx)[(size_t)r] * C] + C, &o.data[(size_t)r * C]);
    return o;
  };
  Tensor out = fwd(*x.tape);
  return x.tape->record(std::move(out), {xi}, fwd, [xi, idx, C, n](Tape& t, int id) {
    const Tensor& g = t.grad(id);
    Tensor& gx = t.grad(xi);
    for (int r = 0; r < n; ++r)
      for (int c = 0; c < C; ++c) gx.data[(size_t)(*idx)[(size_t)r] * C + c] += g.at(r, c);
  });
}

TVar scatter_rows(TVar rows, std::shared_ptr<const std::vector<int>> idx,
                  std::vector<int> out_dims) {
  Tensor probe(out_dims);
  const int C = probe.cols();
  require(rows.v().cols() == C, "scatter_rows: channel mismatch");
  const int n = static_cast<int>(idx->size());
  const int ri = rows.id;
  auto fwd = [ri, idx, out_dims, C, n](const Tape& t) {
    const Tensor& rv = t.val(ri);
    Tensor o(out_dims);
    for (int r = 0; r < n; ++r)
      std::copy(&rv.data[(size_t)r * C], &rv.data[(size_t)r * C] + C,
                &o.data[(size_t)(*idx)[(size_t)r] * C]);
    return o;
  };
  Tensor out = fwd(*rows.tape);
  return rows.tape->record(std::move(out), {ri}, fwd, [ri, idx, C, n](Tape& t, int id) {
    const Tensor& g = t.grad(id);
    Tensor& gr = t.grad(ri);
    for (int r = 0; r < n; ++r)
      for (int c = 0; c < C; ++c) gr.at(r, c) += g.data[(size_t)(*idx)[(size_t)r] * C + c];
  });
}

TVar slice_rows(TVar x, int start, int count) {
  const int C = x.v().cols();
  require(start >= 0 && count >= 0 && start + count <= x.v().rows(),
          "slice_rows: out of range");
  const int xi = x.id;
  auto fwd = [xi, start, count, C](const Tape& t) {
    const Tensor& xv = t.val(xi);
    Tensor o = count > 0 ? Tensor::uninit({count, C}) : Tensor({1, C});
    if (count > 0)
      std::copy(&xv.data[(size_t)start * C], &xv.data[(size_t)(start + count) * C],
                o.data.begin());
    return o;
  };
  Tensor out = fwd(*x.tape);
  return x.tape->record(std::move(out), {xi}, fwd, [xi, start, count, C](Tape& t, int id) {
    const Tensor& g = t.grad(id);
    Tensor& gx = t.grad(xi);
    for (int r = 0; r < count; ++r)
      for (int c = 0; c < C; ++c) gx.data[(size_t)(start + r) * C + c] += g.at(r, c);
  });
}

TVar concat_rows(const std::vector<TVar>& parts) {
  require(!parts.empty(), "concat_rows: empty input");
  const int C = parts[0].v().cols();
  int total = 0;
  std::vector<int> ids;
  std::vector<int> offsets;
  for (auto& p : parts) {
    require(p.v().cols() == C, "concat_rows: channel mismatch");
    offsets.push_back(total);
    total += p.v().rows();
    ids.push_back(p.id);
  }
  auto fwd = [ids, C, total](const Tape& t) {
    Tensor o = Tensor::uninit({total, C});
    int off = 0;
    for (int id2 : ids) {
      const Tensor& p = t.val(id2);
      std::copy(p.data.begin(), p.data.end(), &o.data[(size_t)off * C]);
      off += p.rows();
    }
    return o;
  };
  Tensor out = fwd(*parts[0].tape);
  return parts[0].tape->record(
      std::move(out), ids, fwd, [ids, offsets, C](Tape& t, int id) {
        const Tensor& g = t.grad(id);
        for (size_t k = 0; k < ids.size(); ++k) {
          Tensor& gp = t.grad(ids[k]);
          const int rows = gp.rows();
          for (int r = 0; r < rows; ++r)
            for (int c = 0; c < C; ++c) gp.data[(size_t)r * C + c] += g.at(offsets[k] + r, c);
        }
      });
}

TVar reshape(TVar x, std::vector<int> dims) {
  const int xi = x.id;
  Tensor out = x.v().reshaped(dims);
  return x.tape->record(
      std::move(out), {xi},
      [xi, dims](const Tape& t) { return t.val(xi).reshaped(dims); },
      [xi](Tape& t, int id) {
        const Tensor& g = t.grad(id);
        Tensor& gx = t.grad(xi);
        for (long long i = 0; i < g.numel(); ++i) gx[i] += g[i];
      });
}

// ---------------------------------------------------------- losses, gates

TVar charbonnier(TVar pred, const Tensor& target, real eps) {
  require(pred.v().same_shape(target), "charbonnier: shape mismatch");
  const int rows = pred.v().rows(), C = pred.v().cols();
  const int pi = pred.id;
  Tensor tgt = target;
  auto fwd = [pi, tgt, eps, rows, C](const Tape& t) {
    const Tensor& p = t.val(pi);
    // Accumulate (sqrt(q) - eps) so a zero residual yields exactly eps; the
    // plain mean of identical sqrt(eps^2) terms picks up summation rounding.
    real acc = 0;
    for (int i = 0; i < rows; ++i) {
      real q = eps * eps;
      for (int c = 0; c < C; ++c) {
        const real d = p.data[(size_t)i * C + c] - tgt.data[(size_t)i * C + c];
        q += d * d;
      }
      acc += std::sqrt(q) - eps;
    }
    return Tensor::scalar(eps + acc / rows);
  };
  Tensor out = fwd(*pred.tape);
  return pred.tape->record(
      std::move(out), {pi}, fwd, [pi, tgt, eps, rows, C](Tape& t, int id) {
        const real g = t.grad(id)[0];
        const Tensor& p = t.val(pi);
        Tensor& gp = t.grad(pi);
        for (int i = 0; i < rows; ++i) {
          real q = eps * eps;
          for (int c = 0; c < C; ++c) {
            const real d = p.data[(size_t)i * C + c] - tgt.data[(size_t)i * C + c];
            q += d * d;
          }
          const real inv = 1.0 / std::sqrt(q);
          for (int c = 0; c < C; ++c) {
            const real d = p.data[(size_t)i * C + c] - tgt.data[(size_t)i * C + c];
            gp.data[(size_t)i * C + c] += g * d * inv / rows;
          }
        }
      });
}

TVar straight_through(TVar soft) {
  Tensor out = soft.v();
  for (auto& v : out.data) v = v > 0.5 ? 1.0 : 0.0;
  const int si = soft.id;
  return soft.tape->record(
      std::move(out), {si},
      [si](const Tape& t) {
        Tensor o = t.val(si);
        for (auto& v : o.data) v = v > 0.5 ? 1.0 : 0.0;
        return o;
      },
      [si](Tape& t, int id) {
        const Tensor& g = t.grad(id);
        Tensor& gs = t.grad(si);
        for (long long i = 0; i < g.numel(); ++i) gs[i] += g[i];
      });
}

TVar masked_blend(TVar cur, const Tensor& cached, TVar mask) {
  check_same_tape(cur, mask);
  require(cur.v().same_shape(cached), "masked_blend: shape mismatch");
  const int HW = mask.v().rows() * (mask.v().rank() == 1 ? 1 : mask.v().cols());
  require(static_cast<long long>(HW) * cur.v().cols() == cur.v().numel() &&
              HW == cur.v().rows(),
          "masked_blend: mask does not broadcast over channels");
  const int C = cur.v().cols();
  const int ci = cur.id, mi = mask.id;
  Tensor cach = cached;
  auto fwd = [ci, mi, cach, HW, C](const Tape& t) {
    const Tensor& cv = t.val(ci);
    const Tensor& mv = t.val(mi);
    Tensor o = Tensor::uninit(cv.dims);  // every element written below
    for (int p = 0; p < HW; ++p) {
      const real m = mv[p];
      for (int c = 0; c < C; ++c) {
        const size_t i = (size_t)p * C + c;
        o.data[i] = m * cv.data[i] + (1.0 - m) * cach.data[i];
      }
    }
    return o;
  };
  Tensor out = fwd(*cur.tape);
  return cur.tape->record(
      std::move(out), {ci, mi}, fwd, [ci, mi, cach, HW, C](Tape& t, int id) {
        const Tensor& g = t.grad(id);
        const Tensor& cv = t.val(ci);
        const Tensor& mv = t.val(mi);
        Tensor& gc = t.grad(ci);
        Tensor& gm = t.grad(mi);
        for (int p = 0; p < HW; ++p) {
          const real m = mv[p];
          real acc = 0;
          for (int c = 0; c < C; ++c) {
            const size_t i = (size_t)p * C + c;
            gc.data[i] += m * g.data[i];
            acc += g.data[i] * (cv.data[i] - cach.data[i]);
          }
          gm[p] += acc;
        }
      });
}

}  // namespace mia::ad
