#include "mia/kernels.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace mia::kernels {

namespace {
std::atomic<bool> g_parallel{true};
}

void set_parallel(bool on) { g_parallel.store(on); }
bool parallel_enabled() { return g_parallel.load(); }

// ---------------------------------------------------------------- matmul

namespace serial {

void matmul(const Tensor& a, const Tensor& b, Tensor& out) {
  // i-p-j order: unit-stride inner loop, and each out element still
  // accumulates over p in ascending order, so results match the naive
  // i-j-p triple loop bitwise.
  const int m = a.rows(), k = a.cols(), n = b.cols();
  for (int i = 0; i < m; ++i) {
    real* o = &out.data[(size_t)i * n];
    for (int j = 0; j < n; ++j) o[j] = 0;
    for (int p = 0; p < k; ++p) {
      const real av = a.data[(size_t)i * k + p];
      const real* br = &b.data[(size_t)p * n];
      for (int j = 0; j < n; ++j) o[j] += av * br[j];
    }
  }
}

void matmul_nt(const Tensor& a, const Tensor& b, Tensor& out) {
  // Transposing b up front turns the kernel into the same unit-stride i-p-j
  // sweep as matmul; each out element still accumulates over p in ascending
  // order, so results match the naive i-j-p dot-product loop bitwise.
  const int m = a.rows(), k = a.cols(), n = b.rows();
  std::vector<real> bt((size_t)k * n);
  for (int j = 0; j < n; ++j)
    for (int p = 0; p < k; ++p) bt[(size_t)p * n + j] = b.data[(size_t)j * k + p];
  for (int i = 0; i < m; ++i) {
    real* o = &out.data[(size_t)i * n];
    for (int j = 0; j < n; ++j) o[j] = 0;
    for (int p = 0; p < k; ++p) {
      const real av = a.data[(size_t)i * k + p];
      const real* br = &bt[(size_t)p * n];
      for (int j = 0; j < n; ++j) o[j] += av * br[j];
    }
  }
}

void matmul_tn(const Tensor& a, const Tensor& b, Tensor& out) {
  // i-p-j order, same ascending-p accumulation as the naive loop.
  const int k = a.rows(), m = a.cols(), n = b.cols();
  for (int i = 0; i < m; ++i) {
    real* o = &out.data[(size_t)i * n];
    for (int j = 0; j < n; ++j) o[j] = 0;
    for (int p = 0; p < k; ++p) {
      const real av = a.data[(size_t)p * m + i];
      const real* br = &b.data[(size_t)p * n];
      for (int j = 0; j < n; ++j) o[j] += av * br[j];
    }
  }
}

void conv2d(const Tensor& x, const Tensor& k, const Tensor& bias, Tensor& out) {
  // co-inner form: unit stride over the output-channel axis of k and out.
  // Per output element the accumulation still runs over (dy, dx, ci) in
  // ascending order, so results match the scalar co-outer loop bitwise.
  const int H = x.dim(0), W = x.dim(1), Cin = x.dim(2);
  const int kh = k.dim(0), kw = k.dim(1), Cout = k.dim(3);
  const int ph = kh / 2, pw = kw / 2;
  for (int y = 0; y < H; ++y)
    for (int x0 = 0; x0 < W; ++x0) {
      real* o = &out.data[((size_t)y * W + x0) * Cout];
      if (bias.data.empty())
        for (int co = 0; co < Cout; ++co) o[co] = 0.0;
      else
        for (int co = 0; co < Cout; ++co) o[co] = bias.data[(size_t)co];
      for (int dy = 0; dy < kh; ++dy) {
        const int sy = y + dy - ph;
        if (sy < 0 || sy >= H) continue;
        for (int dx = 0; dx < kw; ++dx) {
          const int sx = x0 + dx - pw;
          if (sx < 0 || sx >= W) continue;
          const real* xp = &x.data[((size_t)sy * W + sx) * Cin];
          for (int ci = 0; ci < Cin; ++ci) {
            const real xv = xp[ci];
            const real* kr = &k.data[(((size_t)dy * kw + dx) * Cin + ci) * Cout];
            for (int co = 0; co < Cout; ++co) o[co] += xv * kr[co];
          }
        }
      }
    }
}

}  // namespace serial

namespace par {

void matmul(const Tensor& a, const Tensor& b, Tensor& out) {
  const int m = a.rows(), k = a.cols(), n = b.cols();
#pragma omp parallel for schedule(static)
  for (int i = 0; i < m; ++i) {
    real* o = &out.data[(size_t)i * n];
    for (int j = 0; j < n; ++j) o[j] = 0;
    for (int p = 0; p < k; ++p) {
      const real av = a.data[(size_t)i * k + p];
      const real* br = &b.data[(size_t)p * n];
      for (int j = 0; j < n; ++j) o[j] += av * br[j];
    }
  }
}

void matmul_nt(const Tensor& a, const Tensor& b, Tensor& out) {
  // Same transposed layout as the serial kernel; the shared transpose runs
  // before the parallel region, rows split across threads.
  const int m = a.rows(), k = a.cols(), n = b.rows();
  std::vector<real> bt((size_t)k * n);
  for (int j = 0; j < n; ++j)
    for (int p = 0; p < k; ++p) bt[(size_t)p * n + j] = b.data[(size_t)j * k + p];
#pragma omp parallel for schedule(static)
  for (int i = 0; i < m; ++i) {
    real* o = &out.data[(size_t)i * n];
    for (int j = 0; j < n; ++j) o[j] = 0;
    for (int p = 0; p < k; ++p) {
      const real av = a.data[(size_t)i * k + p];
      const real* br = &bt[(size_t)p * n];
      for (int j = 0; j < n; ++j) o[j] += av * br[j];
    }
  }
}

void matmul_tn(const Tensor& a, const Tensor& b, Tensor& out) {
  const int k = a.rows(), m = a.cols(), n = b.cols();
#pragma omp parallel for schedule(static)
  for (int i = 0; i < m; ++i) {
    real* o = &out.data[(size_t)i * n];
    for (int j = 0; j < n; ++j) o[j] = 0;
    for (int p = 0; p < k; ++p) {
      const real av = a.data[(size_t)p * m + i];
      const real* br = &b.data[(size_t)p * n];
      for (int j = 0; j < n; ++j) o[j] += av * br[j];
    }
  }
}

void conv2d(const Tensor& x, const Tensor& k, const Tensor& bias, Tensor& out) {
  // Same co-inner body as the serial kernel, rows split across threads.
  const int H = x.dim(0), W = x.dim(1), Cin = x.dim(2);
  const int kh = k.dim(0), kw = k.dim(1), Cout = k.dim(3);
  const int ph = kh / 2, pw = kw / 2;
#pragma omp parallel for schedule(static)
  for (int y = 0; y < H; ++y)
    for (int x0 = 0; x0 < W; ++x0) {
      real* o = &out.data[((size_t)y * W + x0) * Cout];
      if (bias.data.empty())
        for (int co = 0; co < Cout; ++co) o[co] = 0.0;
      else
        for (int co = 0; co < Cout; ++co) o[co] = bias.data[(size_t)co];
      for (int dy = 0; dy < kh; ++dy) {
        const int sy = y + dy - ph;
        if (sy < 0 || sy >= H) continue;
        for (int dx = 0; dx < kw; ++dx) {
          const int sx = x0 + dx - pw;
          if (sx < 0 || sx >= W) continue;
          const real* xp = &x.data[((size_t)sy * W + sx) * Cin];
          for (int ci = 0; ci < Cin; ++ci) {
            const real xv = xp[ci];
            const real* kr = &k.data[(((size_t)dy * kw + dx) * Cin + ci) * Cout];
            for (int co = 0; co < Cout; ++co) o[co] += xv * kr[co];
          }
        }
      }
    }
}

}  // namespace par

Tensor matmul(const Tensor& a, const Tensor& b) {
  require(a.cols() == b.rows(), "matmul: inner dims disagree");
  Tensor out = Tensor::uninit({a.rows(), b.cols()});
  if (parallel_enabled())
    par::matmul(a, b, out);
  else
    serial::matmul(a, b, out);
  return out;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  require(a.cols() == b.cols(), "matmul_nt: inner dims disagree");
  Tensor out = Tensor::uninit({a.rows(), b.rows()});
  if (parallel_enabled())
    par::matmul_nt(a, b, out);
  else
    serial::matmul_nt(a, b, out);
  return out;
}

Tensor matmul_tn(const Tensor& a, const Tensor& b) {
  require(a.rows() == b.rows(), "matmul_tn: inner dims disagree");
  Tensor out = Tensor::uninit({a.cols(), b.cols()});
  if (parallel_enabled())
    par::matmul_tn(a, b, out);
  else
    serial::matmul_tn(a, b, out);
  return out;
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  require(x.cols() == w.dim(0), "linear: inner dims disagree");
  Tensor y = matmul(x, w);  // matmul reads rows()/cols(); no reshape copy needed
  if (!b.data.empty()) {
    require(b.numel() == w.dim(1), "linear: bias length mismatch");
    const int n = y.cols();
    for (int i = 0; i < y.rows(); ++i)
      for (int j = 0; j < n; ++j) y.at(i, j) += b.data[(size_t)j];
  }
  return y;
}

Tensor conv2d(const Tensor& x, const Tensor& k, const Tensor& bias) {
  require(x.rank() == 3 && k.rank() == 4, "conv2d: x must be H×W×C, k kh×kw×Cin×Cout");
  require(x.dim(2) == k.dim(2), "conv2d: channel mismatch");
  require(k.dim(0) % 2 == 1 && k.dim(1) % 2 == 1, "conv2d: kernel side must be odd");
  Tensor out = Tensor::uninit({x.dim(0), x.dim(1), k.dim(3)});
  if (parallel_enabled())
    par::conv2d(x, k, bias, out);
  else
    serial::conv2d(x, k, bias, out);
  return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, real eps) {
  require(eps > 0, "layer_norm: eps must be positive");
  const int rows = x.rows(), C = x.cols();
  if (!gamma.data.empty()) require(gamma.numel() == C, "layer_norm: gamma length");
  if (!beta.data.empty()) require(beta.numel() == C, "layer_norm: beta length");
  Tensor y = x;
#pragma omp parallel for schedule(static) if (parallel_enabled())
  for (int i = 0; i < rows; ++i) {
    real* r = &y.data[(size_t)i * C];
    real mean = 0;
    for (int j = 0; j < C; ++j) mean += r[j];
    mean /= C;
    real var = 0;
    for (int j = 0; j < C; ++j) var += (r[j] - mean) * (r[j] - mean);
    var /= C;
    const real inv = 1.0 / std::sqrt(var + eps);
    for (int j = 0; j < C; ++j) {
      real v = (r[j] - mean) * inv;
      if (!gamma.data.empty()) v = v * gamma.data[(size_t)j] + beta.data[(size_t)j];
      r[j] = v;
    }
  }
  return y;
}

Tensor softmax_rows(const Tensor& x) {
  const int rows = x.rows(), C = x.cols();
  Tensor y = x;
#pragma omp parallel for schedule(static) if (parallel_enabled())
  for (int i = 0; i < rows; ++i) {
    real* r = &y.data[(size_t)i * C];
    real mx = r[0];
    for (int j = 1; j < C; ++j) mx = std::max(mx, r[j]);
    real sum = 0;
    for (int j = 0; j < C; ++j) {
      r[j] = std::exp(r[j] - mx);
      sum += r[j];
    }
    for (int j = 0; j < C; ++j) r[j] /= sum;
  }
  return y;
}

std::vector<long long> pixel_shuffle_index(int H, int W, int C, int s) {
  require(C % (s * s) == 0, "pixel_shuffle: channels not divisible by s^2");
  const int c = C / (s * s);
  std::vector<long long> map((size_t)H * W * C);
  // dst (sy, sx, co) <- src (sy/s, sx/s, (dy*s+dx)*c + co)
  for (int y = 0; y < H * s; ++y)
    for (int x = 0; x < W * s; ++x)
      for (int co = 0; co < c; ++co) {
        const int dy = y % s, dx = x % s;
        const long long src = ((long long)(y / s) * W + (x / s)) * C + ((dy * s + dx) * c + co);
        map[((long long)y * W * s + x) * c + co] = src;
      }
  return map;
}

Tensor pixel_shuffle(const Tensor& x, int s) {
  require(x.rank() == 3, "pixel_shuffle: expect H×W×C");
  const int H = x.dim(0), W = x.dim(1), C = x.dim(2);
  auto map = pixel_shuffle_index(H, W, C, s);
  Tensor y = Tensor::uninit({H * s, W * s, C / (s * s)});
  for (size_t i = 0; i < map.size(); ++i) y.data[i] = x.data[(size_t)map[i]];
  return y;
}

Tensor pixel_unshuffle(const Tensor& x, int s) {
  require(x.rank() == 3, "pixel_unshuffle: expect H×W×C");
  const int Hs = x.dim(0), Ws = x.dim(1), c = x.dim(2);
  require(Hs % s == 0 && Ws % s == 0, "pixel_unshuffle: dims not divisible by s");
  const int H = Hs / s, W = Ws / s, C = c * s * s;
  auto map = pixel_shuffle_index(H, W, C, s);
  Tensor y = Tensor::uninit({H, W, C});
  for (size_t i = 0; i < map.size(); ++i) y.data[(size_t)map[i]] = x.data[i];
  return y;
}

namespace {
// reflect index into [0, n): ... 2 1 | 0 1 2 ... n-1 | n-2 n-3 ...
int reflect(int i, int n) {
  if (n == 1) return 0;
  const int period = 2 * n - 2;
  i = ((i % period) + period) % period;
  return i < n ? i : period - i;
}
int mod(int i, int n) { return ((i % n) + n) % n; }
}  // namespace

WindowIndexMap build_window_index(int H, int W, int window_side, int shift_y, int shift_x) {
  require(window_side >= 1, "window_partition: window_side must be >= 1");
  WindowIndexMap m;
  m.H = H;
  m.W = W;
  m.window_side = window_side;
  m.Hp = ((H + window_side - 1) / window_side) * window_side;
  m.Wp = ((W + window_side - 1) / window_side) * window_side;
  const int nwy = m.Hp / window_side, nwx = m.Wp / window_side;
  m.n_windows = nwy * nwx;
  m.tokens = window_side * window_side;
  m.gather.assign((size_t)m.n_windows * m.tokens, 0);
  m.primary.assign((size_t)H * W, -1);
  for (int wy = 0; wy < nwy; ++wy)
    for (int wx = 0; wx < nwx; ++wx)
      for (int ty = 0; ty < window_side; ++ty)
        for (int tx = 0; tx < window_side; ++tx) {
          const int py = wy * window_side + ty;  // padded-grid position
          const int px = wx * window_side + tx;
          // cyclic shift by (-shift) applied before partitioning
          const int sy = mod(py + shift_y, m.Hp);
          const int sx = mod(px + shift_x, m.Wp);
          const int oy = reflect(sy, H);  // reflect-pad source
          const int ox = reflect(sx, W);
          const int win = wy * nwx + wx;
          const int tok = ty * window_side + tx;
          m.gather[(size_t)win * m.tokens + tok] = oy * W + ox;
          // primary slot: the unpadded position of this pixel
          if (sy < H && sx < W && m.primary[(size_t)sy * W + sx] < 0)
            m.primary[(size_t)sy * W + sx] = win * m.tokens + tok;
        }
  for (int p = 0; p < H * W; ++p)
    if (m.primary[(size_t)p] < 0)
      throw std::logic_error("window index: pixel without primary slot");
  return m;
}

WindowBatch window_partition(const Tensor& x, const WindowIndexMap& map) {
  require(x.rank() == 3 && x.dim(0) == map.H && x.dim(1) == map.W,
          "window_partition: map/feature shape mismatch");
  const int C = x.dim(2);
  WindowBatch wb;
  wb.n_windows = map.n_windows;
  wb.tokens_per_window = map.tokens;
  wb.channels = C;
  wb.data = Tensor::uninit({map.n_windows, map.tokens, C});
  const long long n = (long long)map.n_windows * map.tokens;
  for (long long i = 0; i < n; ++i) {
    const real* src = &x.data[(size_t)map.gather[(size_t)i] * C];
    real* dst = &wb.data.data[(size_t)i * C];
    std::copy(src, src + C, dst);
  }
  return wb;
}

Tensor window_reverse(const WindowBatch& wb, const WindowIndexMap& map, int C) {
  require(wb.n_windows == map.n_windows && wb.tokens_per_window == map.tokens,
          "window_reverse: map/batch mismatch");
  Tensor x = Tensor::uninit({map.H, map.W, C});
  for (int p = 0; p < map.H * map.W; ++p) {
    const real* src = &wb.data.data[(size_t)map.primary[(size_t)p] * C];
    std::copy(src, src + C, &x.data[(size_t)p * C]);
  }
  return x;
}

Tensor upsample_bilinear(const Tensor& x, int s) {
  require(x.rank() == 3, "upsample_bilinear: expect H×W×C");
  const int H = x.dim(0), W = x.dim(1), C = x.dim(2);
  Tensor y = Tensor::uninit({H * s, W * s, C});
#pragma omp parallel for schedule(static) if (parallel_enabled())
  for (int oy = 0; oy < H * s; ++oy) {
    const real fy = (oy + 0.5) / s - 0.5;
    const int y0 = std::clamp((int)std::floor(fy), 0, H - 1);
    const int y1 = std::min(y0 + 1, H - 1);
    const real wy = std::clamp(fy - y0, 0.0, 1.0);
    for (int ox = 0; ox < W * s; ++ox) {
      const real fx = (ox + 0.5) / s - 0.5;
      const int x0 = std::clamp((int)std::floor(fx), 0, W - 1);
      const int x1 = std::min(x0 + 1, W - 1);
      const real wx = std::clamp(fx - x0, 0.0, 1.0);
      for (int c = 0; c < C; ++c) {
        const real top = x.at(y0, x0, c) * (1 - wx) + x.at(y0, x1, c) * wx;
        const real bot = x.at(y1, x0, c) * (1 - wx) + x.at(y1, x1, c) * wx;
        y.at(oy, ox, c) = top * (1 - wy) + bot * wy;
      }
    }
  }
  return y;
}

Tensor downsample_box(const Tensor& x, int s) {
  require(x.rank() == 3, "downsample_box: expect H×W×C");
  const int H = x.dim(0), W = x.dim(1), C = x.dim(2);
  require(H % s == 0 && W % s == 0, "downsample_box: dims not divisible by s");
  Tensor y = Tensor::uninit({H / s, W / s, C});
  const real inv = 1.0 / (s * s);
  for (int oy = 0; oy < H / s; ++oy)
    for (int ox = 0; ox < W / s; ++ox)
      for (int c = 0; c < C; ++c) {
        real acc = 0;
        for (int dy = 0; dy < s; ++dy)
          for (int dx = 0; dx < s; ++dx) acc += x.at(oy * s + dy, ox * s + dx, c);
        y.at(oy, ox, c) = acc * inv;
      }
  return y;
}

real gelu(real v) { return 0.5 * v * (1.0 + std::erf(v / std::sqrt(2.0))); }

real gelu_grad(real v) {
  const real cdf = 0.5 * (1.0 + std::erf(v / std::sqrt(2.0)));
  const real pdf = std::exp(-0.5 * v * v) / std::sqrt(2.0 * M_PI);
  return cdf + v * pdf;
}

}  // namespace mia::kernels
