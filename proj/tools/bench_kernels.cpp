// Timing comparison of the serial and OpenMP kernel backends. Both must be
// bitwise identical; this binary reports wall time and verifies equality.
#include <chrono>
#include <cstdio>
#include <random>

#include "mia/kernels.hpp"

using namespace mia;
using clk = std::chrono::steady_clock;

namespace {

Tensor rand_tensor(std::vector<int> dims, std::mt19937_64& rng) {
  Tensor t(std::move(dims));
  std::uniform_real_distribution<real> u(-1.0, 1.0);
  for (auto& v : t.data) v = u(rng);
  return t;
}

double ms_since(clk::time_point t0) {
  return std::chrono::duration<double, std::milli>(clk::now() - t0).count();
}

}  // namespace

int main() {
  std::mt19937_64 rng(42);
  const int reps = 5;

  {
    Tensor a = rand_tensor({512, 512}, rng), b = rand_tensor({512, 512}, rng);
    Tensor out_s({512, 512}), out_p({512, 512});
    auto t0 = clk::now();
    for (int r = 0; r < reps; ++r) kernels::serial::matmul(a, b, out_s);
    const double ts = ms_since(t0) / reps;
    t0 = clk::now();
    for (int r = 0; r < reps; ++r) kernels::par::matmul(a, b, out_p);
    const double tp = ms_since(t0) / reps;
    const bool same = out_s.data == out_p.data;
    std::printf("matmul 512x512      serial %8.2f ms  omp %8.2f ms  speedup %5.2fx  bitwise %s\n",
                ts, tp, ts / tp, same ? "OK" : "MISMATCH");
    if (!same) return 1;
  }

  {
    Tensor x = rand_tensor({256, 256, 16}, rng), k = rand_tensor({3, 3, 16, 16}, rng);
    Tensor bias = rand_tensor({16}, rng);
    Tensor out_s({256, 256, 16}), out_p({256, 256, 16});
    auto t0 = clk::now();
    for (int r = 0; r < reps; ++r) kernels::serial::conv2d(x, k, bias, out_s);
    const double ts = ms_since(t0) / reps;
    t0 = clk::now();
    for (int r = 0; r < reps; ++r) kernels::par::conv2d(x, k, bias, out_p);
    const double tp = ms_since(t0) / reps;
    const bool same = out_s.data == out_p.data;
    std::printf("conv2d 256x256x16   serial %8.2f ms  omp %8.2f ms  speedup %5.2fx  bitwise %s\n",
                ts, tp, ts / tp, same ? "OK" : "MISMATCH");
    if (!same) return 1;
  }

  {
    Tensor x = rand_tensor({4096, 64}, rng);
    kernels::set_parallel(false);
    auto t0 = clk::now();
    Tensor out_s;
    for (int r = 0; r < reps; ++r)
      out_s = kernels::layer_norm(x, Tensor{}, Tensor{}, 1e-5);
    const double ts = ms_since(t0) / reps;
    kernels::set_parallel(true);
    t0 = clk::now();
    Tensor out_p;
    for (int r = 0; r < reps; ++r)
      out_p = kernels::layer_norm(x, Tensor{}, Tensor{}, 1e-5);
    const double tp = ms_since(t0) / reps;
    const bool same = out_s.data == out_p.data;
    std::printf("layernorm 4096x64   serial %8.2f ms  omp %8.2f ms  speedup %5.2fx  bitwise %s\n",
                ts, tp, ts / tp, same ? "OK" : "MISMATCH");
    if (!same) return 1;
  }

  return 0;
}
