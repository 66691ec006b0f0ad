#include "mia/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "mia/kernels.hpp"

namespace mia::synth {

void SyntheticSpec::validate() const {
  require(T >= 1, "synthetic: T must be >= 1");
  require(scale >= 1, "synthetic: scale must be >= 1");
  require(H >= scale && W >= scale, "synthetic: frame smaller than scale");
  require(H % scale == 0 && W % scale == 0, "synthetic: H, W must be divisible by scale");
  require(fraction >= 0.0 && fraction <= 1.0, "synthetic: fraction must be in [0,1]");
  require(noise_std >= 0.0, "synthetic: noise stddev must be nonnegative");
}

namespace {

Tensor random_frame(int H, int W, std::mt19937_64& rng) {
  Tensor f({H, W, 3});
  std::uniform_real_distribution<real> u(0.0, 1.0);
  for (auto& v : f.data) v = u(rng);
  return f;
}

Tensor cyclic_shift(const Tensor& f, int dy, int dx) {
  const int H = f.dim(0), W = f.dim(1), C = f.dim(2);
  auto mod = [](int i, int n) { return ((i % n) + n) % n; };
  Tensor out(f.dims);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x)
      for (int c = 0; c < C; ++c)
        out.at(y, x, c) = f.at(mod(y - dy, H), mod(x - dx, W), c);
  return out;
}

}  // namespace

Sequence gen_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  const int H = spec.H, W = spec.W;
  std::vector<Tensor> hr;
  hr.reserve(static_cast<size_t>(spec.T));

  switch (spec.pattern) {
    case Pattern::static_scene: {
      Tensor base = random_frame(H, W, rng);
      for (int t = 0; t < spec.T; ++t) hr.push_back(base);
      break;
    }
    case Pattern::moving_square: {
      // Smooth background with a bright square; the whole frame translates.
      Tensor base({H, W, 3});
      for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
          base.at(y, x, 0) = 0.25 + 0.2 * std::sin(2.0 * M_PI * x / W);
          base.at(y, x, 1) = 0.25 + 0.2 * std::cos(2.0 * M_PI * y / H);
          base.at(y, x, 2) = 0.2;
        }
      const int side = std::max(1, std::min(H, W) / 4);
      const int oy = H / 4, ox = W / 4;
      for (int y = 0; y < side; ++y)
        for (int x = 0; x < side; ++x)
          for (int c = 0; c < 3; ++c) base.at(oy + y, ox + x, c) = 0.95;
      hr.push_back(base);
      for (int t = 1; t < spec.T; ++t)
        hr.push_back(cyclic_shift(hr.back(), spec.vy, spec.vx));
      break;
    }
    case Pattern::mixed: {
      // Fixed random background; a chosen pixel set cycles its value every
      // frame by a constant phase step, so exactly that set changes.
      Tensor base = random_frame(H, W, rng);
      const long long n_change =
          static_cast<long long>(std::llround(spec.fraction * H * W));
      std::vector<int> pix(static_cast<size_t>(H) * W);
      for (size_t i = 0; i < pix.size(); ++i) pix[i] = static_cast<int>(i);
      std::shuffle(pix.begin(), pix.end(), rng);
      pix.resize(static_cast<size_t>(n_change));
      for (int t = 0; t < spec.T; ++t) {
        Tensor f = base;
        for (int p : pix)
          for (int c = 0; c < 3; ++c) {
            real v = base.data[static_cast<size_t>(p) * 3 + c] + 0.31 * t;
            f.data[static_cast<size_t>(p) * 3 + c] = v - std::floor(v);
          }
        hr.push_back(std::move(f));
      }
      break;
    }
  }

  if (spec.noise_std > 0) {
    std::normal_distribution<real> nd(0.0, spec.noise_std);
    for (auto& f : hr)
      for (auto& v : f.data) v = std::clamp(v + nd(rng), 0.0, 1.0);
  }

  Sequence seq;
  seq.hr = std::move(hr);
  for (const auto& f : seq.hr)
    seq.lr.push_back(kernels::downsample_box(f, spec.scale));
  return seq;
}

}  // namespace mia::synth
