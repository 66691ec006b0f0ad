#pragma once

#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "mia/tensor.hpp"

namespace mia::ad {

class Tape;

struct TVar {
  Tape* tape = nullptr;
  int id = -1;
  const Tensor& v() const;
  bool valid() const { return tape != nullptr && id >= 0; }
};

// Reverse-mode tape. Each node stores its value, a forward closure (used by
// replay()) and a backward closure that scatters into parent gradient slots.
class Tape {
 public:
  using FwdFn = std::function<Tensor(const Tape&)>;
  using BwdFn = std::function<void(Tape&, int)>;

  TVar constant(Tensor v);
  TVar record(Tensor v, std::vector<int> parents, FwdFn fwd, BwdFn bwd);

  // Seeds d(loss)/d(loss)=1 and sweeps the tape in reverse. loss must be scalar.
  void backward(int loss_id);
  void backward(const TVar& loss) { backward(loss.id); }

  // Recomputes every non-leaf value from its parents in order. Returns true
  // if every recomputed value is bitwise identical to the recorded one.
  bool replay();

  const Tensor& val(int id) const { return nodes_[static_cast<size_t>(id)].value; }
  Tensor& grad(int id);
  bool has_grad(int id) const;
  void zero_grads();

  size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    std::vector<int> parents;
    FwdFn fwd;  // empty for leaves
    BwdFn bwd;
  };
  std::vector<Node> nodes_;
  std::vector<Tensor> grads_;
};

// Named parameter set plus Adam state for the trainer.
struct ParamStore {
  std::map<std::string, Tensor> params;

  Tensor& at(const std::string& name);
  const Tensor& at(const std::string& name) const;
  bool has(const std::string& name) const { return params.count(name) > 0; }
};

// Per-step mapping of parameter names to tape leaves.
struct ParamBinding {
  std::map<std::string, TVar> vars;
  TVar at(const std::string& name) const;
};

ParamBinding bind_params(Tape& tape, const ParamStore& store);

// ------------------------------------------------------------- primitive ops
// Elementwise / reductions
TVar add(TVar a, TVar b);
TVar sub(TVar a, TVar b);
TVar mul(TVar a, TVar b);
TVar scale(TVar a, real s);
TVar add_const(TVar a, const Tensor& c);
TVar abs_val(TVar a);
TVar sigmoid(TVar a);
TVar gelu(TVar a);
TVar sum(TVar a);
TVar mean(TVar a);
TVar mean_abs(TVar a);
TVar average(const std::vector<TVar>& scalars);

// Neural primitives. Linear/conv/mha record MACs to the active FLOP ledger
// under the caller-selected op kind.
TVar linear(TVar x, TVar w, TVar b);         // b may be invalid (no bias)
TVar conv2d(TVar x, TVar k, TVar b);
TVar layer_norm(TVar x, TVar gamma, TVar beta, real eps);
TVar layer_norm_noaffine(TVar x, real eps);
TVar softmax_rows(TVar x);

// Multi-head attention over one window.
//   q: rq×C, k/v: nk×C, bias: {heads, rq, nk}
TVar mha(TVar q, TVar k, TVar v, TVar bias, int heads);

// Index ops. Maps are shared so closures stay cheap to copy.
using IndexMap = std::shared_ptr<const std::vector<long long>>;
TVar gather_elems(TVar x, IndexMap map, std::vector<int> out_dims);
TVar gather_rows(TVar x, std::shared_ptr<const std::vector<int>> idx);
TVar scatter_rows(TVar rows, std::shared_ptr<const std::vector<int>> idx,
                  std::vector<int> out_dims);
TVar slice_rows(TVar x, int start, int count);
TVar concat_rows(const std::vector<TVar>& parts);
TVar reshape(TVar x, std::vector<int> dims);

// Losses and gating
TVar charbonnier(TVar pred, const Tensor& target, real eps);
// Forward thresholds at 0.5 into exact {0,1}; backward passes gradients through.
TVar straight_through(TVar soft);
// out = mask⊙cur + (1-mask)⊙cached, mask H×W broadcast over channels,
// cached is a constant (detached) map.
TVar masked_blend(TVar cur, const Tensor& cached, TVar mask);

}  // namespace mia::ad
