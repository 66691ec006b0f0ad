#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include "mia/io.hpp"
#include "mia/metrics.hpp"

using namespace mia;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir() {
  fs::path p = fs::temp_directory_path() / "mia_io_tests";
  fs::create_directories(p);
  return p;
}

Tensor uniform(std::vector<int> dims, std::mt19937_64& rng) {
  Tensor t(std::move(dims));
  std::uniform_real_distribution<real> d(0.0, 1.0);
  for (auto& v : t.data) v = d(rng);
  return t;
}

std::string file_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

}  // namespace

TEST_CASE("MIAT roundtrip preserves 32-bit values for every rank") {
  std::mt19937_64 rng(81);
  fs::path dir = temp_dir();
  std::vector<std::vector<int>> shapes{{7}, {3, 4}, {2, 3, 4}, {2, 2, 3, 2}};
  for (auto& shape : shapes) {
    Tensor t = uniform(shape, rng);
    fs::path p = dir / "t.miat";
    io::write_miat(p, t);
    Tensor back = io::read_miat(p);
    REQUIRE(back.dims == t.dims);
    for (long long i = 0; i < t.numel(); ++i)
      CHECK(back[i] == (real)(float)t[i]);  // stored as little-endian f32
  }

  // file header: magic, ndim, u32 dims
  Tensor t = uniform({3, 4}, rng);
  io::write_miat(dir / "h.miat", t);
  std::string bytes = file_bytes(dir / "h.miat");
  REQUIRE(bytes.size() == 4 + 1 + 8 + 12 * 4);
  CHECK(bytes.substr(0, 4) == "MIAT");
  CHECK((unsigned char)bytes[4] == 2);
  CHECK((unsigned char)bytes[5] == 3);  // dim 0 = 3, little-endian
  CHECK((unsigned char)bytes[9] == 4);  // dim 1 = 4
}

TEST_CASE("PGM masks serialize as P5 with {0,255} payload") {
  fs::path dir = temp_dir();
  Tensor mask({2, 3});
  mask[0] = 1;
  mask[4] = 1;
  io::write_pgm_mask(dir / "m.pgm", mask);
  std::string bytes = file_bytes(dir / "m.pgm");
  CHECK(bytes.rfind("P5", 0) == 0);
  REQUIRE(bytes.size() >= 6);
  std::string payload = bytes.substr(bytes.size() - 6);
  CHECK((unsigned char)payload[0] == 255);
  CHECK((unsigned char)payload[1] == 0);
  CHECK((unsigned char)payload[4] == 255);
}

TEST_CASE("PPM roundtrip quantizes to 8 bits") {
  std::mt19937_64 rng(82);
  fs::path dir = temp_dir();
  Tensor img = uniform({5, 4, 3}, rng);
  io::write_ppm(dir / "i.ppm", img);
  Tensor back = io::read_ppm(dir / "i.ppm");
  REQUIRE(back.dims == img.dims);
  for (long long i = 0; i < img.numel(); ++i)
    CHECK(std::fabs(back[i] - img[i]) <= 0.5 / 255.0 + 1e-9);
}

TEST_CASE("frame listing is lexicographically sorted") {
  fs::path dir = temp_dir() / "frames";
  fs::create_directories(dir);
  for (const char* name : {"frame_002.miat", "frame_000.miat", "frame_001.miat"})
    io::write_miat(dir / name, Tensor::scalar(1.0));
  auto files = io::list_frame_files(dir);
  REQUIRE(files.size() == 3);
  CHECK(files[0].filename() == "frame_000.miat");
  CHECK(files[2].filename() == "frame_002.miat");
}

TEST_CASE("checkpoint save/load roundtrip") {
  std::mt19937_64 rng(83);
  fs::path dir = temp_dir() / "ckpt";
  ad::ParamStore store;
  store.params["a.w"] = uniform({3, 4}, rng);
  store.params["b.bias"] = uniform({5}, rng);
  io::save_checkpoint(dir, store);

  ad::ParamStore loaded;
  loaded.params["a.w"] = Tensor({3, 4});
  loaded.params["b.bias"] = Tensor({5});
  io::load_checkpoint(dir, loaded);
  for (auto& [name, t] : store.params)
    for (long long i = 0; i < t.numel(); ++i)
      CHECK(loaded.at(name)[i] == (real)(float)t[i]);
}

TEST_CASE("psnr: cap, closed form, zero case") {
  std::mt19937_64 rng(84);
  Tensor a = uniform({16, 16, 3}, rng);
  CHECK(metrics::psnr(a, a) == 99.0);

  Tensor b = a;
  for (auto& v : b.data) v += 0.1;  // MSE exactly 0.01
  CHECK(metrics::psnr(a, b) == doctest::Approx(20.0).epsilon(1e-9));

  CHECK(metrics::psnr(Tensor({8, 8, 3}), Tensor::full({8, 8, 3}, 1.0)) ==
        doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("ssim: identity, negation, symmetry, range") {
  std::mt19937_64 rng(85);
  Tensor a = uniform({16, 16, 3}, rng);
  CHECK(metrics::ssim(a, a) == doctest::Approx(1.0).epsilon(1e-9));

  // high-contrast image vs its negation
  Tensor checker({16, 16});
  for (int y = 0; y < 16; ++y)
    for (int x = 0; x < 16; ++x) checker.at(y, x) = (real)((x / 4 + y / 4) % 2);
  Tensor neg = checker;
  for (auto& v : neg.data) v = 1.0 - v;
  CHECK(metrics::ssim(checker, neg) <= 0.0);

  Tensor b = uniform({16, 16, 3}, rng);
  const real s = metrics::ssim(a, b);
  CHECK(s == metrics::ssim(b, a));
  CHECK(s >= -1.0);
  CHECK(s <= 1.0);

  CHECK_THROWS_AS(metrics::ssim(Tensor({8, 8}), Tensor({8, 8})),
                  std::invalid_argument);
}

TEST_CASE("ssim matches an independent reference implementation to 1e-6") {
  std::mt19937_64 rng(86);
  Tensor a = uniform({14, 13}, rng), b = uniform({14, 13}, rng);

  // straightforward reference: 11x11 Gaussian window, sigma 1.5, valid only
  const int win = 11, half = 5;
  std::vector<real> g((size_t)win * win);
  real gsum = 0;
  for (int y = 0; y < win; ++y)
    for (int x = 0; x < win; ++x) {
      const real dy = y - half, dx = x - half;
      g[(size_t)y * win + x] = std::exp(-(dy * dy + dx * dx) / (2.0 * 1.5 * 1.5));
      gsum += g[(size_t)y * win + x];
    }
  for (auto& v : g) v /= gsum;
  const real c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  real total = 0;
  int count = 0;
  for (int cy = half; cy < 14 - half; ++cy)
    for (int cx = half; cx < 13 - half; ++cx) {
      real mu_a = 0, mu_b = 0;
      for (int y = 0; y < win; ++y)
        for (int x = 0; x < win; ++x) {
          const real w = g[(size_t)y * win + x];
          mu_a += w * a.at(cy + y - half, cx + x - half);
          mu_b += w * b.at(cy + y - half, cx + x - half);
        }
      real va = 0, vb = 0, cov = 0;
      for (int y = 0; y < win; ++y)
        for (int x = 0; x < win; ++x) {
          const real w = g[(size_t)y * win + x];
          const real da = a.at(cy + y - half, cx + x - half) - mu_a;
          const real db = b.at(cy + y - half, cx + x - half) - mu_b;
          va += w * da * da;
          vb += w * db * db;
          cov += w * da * db;
        }
      total += ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) /
               ((mu_a * mu_a + mu_b * mu_b + c1) * (va + vb + c2));
      ++count;
    }
  CHECK(std::fabs(metrics::ssim(a, b) - total / count) < 1e-6);
}

TEST_CASE("bt601 luma coefficients") {
  Tensor rgb({1, 1, 3});
  rgb[0] = 1.0;
  CHECK(metrics::bt601_luma(rgb)[0] == doctest::Approx(0.299).epsilon(1e-12));
  rgb[0] = 0.0;
  rgb[1] = 1.0;
  CHECK(metrics::bt601_luma(rgb)[0] == doctest::Approx(0.587).epsilon(1e-12));
  rgb[1] = 0.0;
  rgb[2] = 1.0;
  CHECK(metrics::bt601_luma(rgb)[0] == doctest::Approx(0.114).epsilon(1e-12));
}
