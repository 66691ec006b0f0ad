#pragma once

#include <array>
#include <cstdint>
#include <stdexcept>
#include <map>
#include <string>
#include <tuple>
#include <vector>

namespace mia {

// Leaf counter kinds for the instrumented ledger.
enum class OpKind : int {
  qkv = 0,         // Q/K/V projections
  attn_matmul,     // QK^T and AV
  proj,            // attention output projection
  ffn,             // feed-forward linears
  norm_misc,       // layernorm, softmax, residual adds, bias adds
  conv,            // shallow/reconstruction convolutions
  mask_predictor,  // 1x1 mask conv
  kCount
};

const char* op_kind_name(OpKind k);

// Hierarchical multiply-accumulate counter keyed by (frame, module, block, kind).
// Counts MACs; oracle-convention FLOPs are 2*macs. Accumulation is integer
// addition, so merge order never changes totals.
class FlopLedger {
 public:
  struct Key {
    int frame = -1;
    int module = -1;
    int block = -1;
    OpKind kind = OpKind::norm_misc;
    auto operator<=>(const Key&) const = default;
  };

  void set_scope(int frame, int module, int block) {
    frame_ = frame;
    module_ = module;
    block_ = block;
  }
  void set_kind(OpKind k) { kind_ = k; }
  OpKind kind() const { return kind_; }

  void add(long long macs) { add(kind_, macs); }
  void add(OpKind k, long long macs) {
    if (macs < 0) throw std::invalid_argument("FlopLedger: negative count");
    counters_[Key{frame_, module_, block_, k}] += macs;
  }

  long long total_macs() const;
  long long frame_macs(int frame) const;
  // Sum over counters matching the given fields; -1 wildcards frame/module/block.
  long long macs(int frame, int module, int block, OpKind kind) const;
  long long macs_kind(OpKind kind) const;

  void merge(const FlopLedger& other);

  const std::map<Key, long long>& counters() const { return counters_; }

  std::vector<int> frames() const;

 private:
  std::map<Key, long long> counters_;
  int frame_ = -1, module_ = -1, block_ = -1;
  OpKind kind_ = OpKind::norm_misc;
};

// Active-ledger scope. Kernels record into the innermost active ledger.
FlopLedger* active_ledger();

class LedgerScope {
 public:
  explicit LedgerScope(FlopLedger* l);
  ~LedgerScope();
  LedgerScope(const LedgerScope&) = delete;
  LedgerScope& operator=(const LedgerScope&) = delete;

 private:
  FlopLedger* prev_;
};

class KindScope {
 public:
  explicit KindScope(OpKind k);
  ~KindScope();
  KindScope(const KindScope&) = delete;
  KindScope& operator=(const KindScope&) = delete;

 private:
  OpKind prev_;
  bool active_;
};

inline void ledger_add(long long macs) {
  if (FlopLedger* l = active_ledger()) l->add(macs);
}

// Analytic per-IIAB cost, paper counting convention:
//   masked:   (6+6a)HWC^2 + (3a w^2 + 9 w^2 + 4)HWC
//   unmasked: 12HWC^2 + (12 w^2 + 4)HWC   (the a=1 case)
// `alpha_num/alpha_den` give a as an exact rational (unmasked pixels / HW) so
// the result is an exact integer whenever a*HW and a*w^2*HW*C are integral.
double analytic_iiab_flops(int H, int W, int C, int window_side, double alpha);
long long analytic_iiab_linear_macs(int H, int W, int C, long long n_unmasked);

// Joint self-attention reference: 3w^2 queries x 3w^2 keys per window.
// Returns attention-matmul MACs per H x W frame-block.
long long msab_attention_macs(int H, int W, int C, int window_side);
long long iiab_attention_macs(int H, int W, int C, int window_side, long long n_unmasked);

// Per-block comparison row for the `flops` report.
struct FlopReportRow {
  int module = 0, block = 0;
  double alpha = 1.0;
  long long instrumented_linear_macs = 0;  // qkv + proj + ffn
  long long analytic_linear_macs = 0;      // (6+6a)HWC^2 with exact rational a
  long long instrumented_attn_macs = 0;    // true count, AV scales with a
  double paper_convention_flops = 0;       // full printed formula value
  long long deviation = 0;                 // instrumented - analytic (linear terms)
};

std::vector<FlopReportRow> instrumented_vs_analytic(
    const FlopLedger& ledger, int frame, int H, int W, int C, int window_side,
    const std::map<std::pair<int, int>, long long>& unmasked_counts);

std::string flop_report_csv(const std::vector<FlopReportRow>& rows);

}  // namespace mia
