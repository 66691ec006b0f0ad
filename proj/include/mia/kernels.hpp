#pragma once

#include <utility>
#include <vector>

#include "mia/tensor.hpp"

namespace mia::kernels {

// Backend switch. The parallel kernels split work only across independent
// output elements (rows / pixels / windows); every inner accumulation stays
// serial, so both backends produce bitwise-identical results.
void set_parallel(bool on);
bool parallel_enabled();

// Serial reference implementations, used directly by tests and the benchmark.
namespace serial {
void matmul(const Tensor& a, const Tensor& b, Tensor& out);          // m×k · k×n
void matmul_nt(const Tensor& a, const Tensor& b, Tensor& out);       // m×k · (n×k)^T
void matmul_tn(const Tensor& a, const Tensor& b, Tensor& out);       // (k×m)^T · k×n
void conv2d(const Tensor& x, const Tensor& k, const Tensor& bias, Tensor& out);
}  // namespace serial

namespace par {
void matmul(const Tensor& a, const Tensor& b, Tensor& out);
void matmul_nt(const Tensor& a, const Tensor& b, Tensor& out);
void matmul_tn(const Tensor& a, const Tensor& b, Tensor& out);
void conv2d(const Tensor& x, const Tensor& k, const Tensor& bias, Tensor& out);
}  // namespace par

// Dispatching kernels. These do NOT touch the FLOP ledger; instrumentation
// happens at the op layer where the semantic op kind is known.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor matmul_nt(const Tensor& a, const Tensor& b);
Tensor matmul_tn(const Tensor& a, const Tensor& b);

// y = x·W + b, x: tokens×C_in, W: C_in×C_out, b: C_out (may be empty).
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);

// Same-padding (zeros) cross-correlation. x: H×W×C_in, k: kh×kw×C_in×C_out.
Tensor conv2d(const Tensor& x, const Tensor& k, const Tensor& bias);

// Per-token normalization over the last axis, population variance.
// gamma/beta may be empty (no affine). Also returns nothing extra; the
// autodiff layer recomputes statistics for the backward pass.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, real eps);

// Row-wise softmax with max subtraction, rows collapse all leading dims.
Tensor softmax_rows(const Tensor& x);

// Channel-to-space: H×W×(s²·c) -> sH×sW×c and its inverse.
Tensor pixel_shuffle(const Tensor& x, int s);
Tensor pixel_unshuffle(const Tensor& x, int s);

// Index map realizing reflect-pad (to multiples of w), cyclic shift by
// (-dy,-dx), then window partition. map[win*w²+tok] = source pixel index
// in the original H×W grid. `primary[p]` = (window,token) slot that
// window_reverse reads pixel p back from.
struct WindowIndexMap {
  int H = 0, W = 0, Hp = 0, Wp = 0, window_side = 0;
  int n_windows = 0, tokens = 0;
  std::vector<int> gather;   // size n_windows*tokens -> pixel index in H*W
  std::vector<int> primary;  // size H*W -> flat (window*tokens + token)
};
WindowIndexMap build_window_index(int H, int W, int window_side, int shift_y, int shift_x);

WindowBatch window_partition(const Tensor& x, const WindowIndexMap& map);
Tensor window_reverse(const WindowBatch& wb, const WindowIndexMap& map, int C);

// Element permutation map for pixel_shuffle (dst index -> src index).
std::vector<long long> pixel_shuffle_index(int H, int W, int C, int s);

// Bilinear s× upsampling of an H×W×C map (half-pixel centers, edge clamp).
Tensor upsample_bilinear(const Tensor& x, int s);

// Box s× downsampling (mean over s×s cells); H, W divisible by s.
Tensor downsample_box(const Tensor& x, int s);

real gelu(real v);
real gelu_grad(real v);

}  // namespace mia::kernels
