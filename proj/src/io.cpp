#include "mia/io.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>

#include <json.hpp>

namespace mia::io {

namespace fs = std::filesystem;

namespace {

void put_u32(std::ostream& os, uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  os.write(reinterpret_cast<char*>(b), 4);
}

uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  return uint32_t(b[0]) | (uint32_t(b[1]) << 8) | (uint32_t(b[2]) << 16) |
         (uint32_t(b[3]) << 24);
}

void put_f32(std::ostream& os, float v) {
  uint32_t u;
  std::memcpy(&u, &v, 4);
  put_u32(os, u);
}

float get_f32(std::istream& is) {
  uint32_t u = get_u32(is);
  float v;
  std::memcpy(&v, &u, 4);
  return v;
}

}  // namespace

void write_miat(const fs::path& path, const Tensor& t) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open for write: " + path.string());
  os.write("MIAT", 4);
  const unsigned char nd = static_cast<unsigned char>(t.rank());
  os.write(reinterpret_cast<const char*>(&nd), 1);
  for (int d : t.dims) put_u32(os, static_cast<uint32_t>(d));
  for (real v : t.data) put_f32(os, static_cast<float>(v));
  if (!os) throw std::runtime_error("write failed: " + path.string());
}

Tensor read_miat(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open: " + path.string());
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "MIAT", 4) != 0)
    throw std::runtime_error("bad MIAT magic in " + path.string());
  unsigned char nd = 0;
  is.read(reinterpret_cast<char*>(&nd), 1);
  if (nd < 1 || nd > 4) throw std::runtime_error("bad MIAT rank in " + path.string());
  std::vector<int> dims(nd);
  for (auto& d : dims) d = static_cast<int>(get_u32(is));
  Tensor t(dims);
  for (auto& v : t.data) v = static_cast<real>(get_f32(is));
  if (!is) throw std::runtime_error("truncated MIAT file " + path.string());
  return t;
}

void write_pgm_mask(const fs::path& path, const Tensor& mask) {
  require(mask.rank() == 2, "write_pgm_mask: expect H×W");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open for write: " + path.string());
  os << "P5\n" << mask.dim(1) << ' ' << mask.dim(0) << "\n255\n";
  for (real v : mask.data) {
    const unsigned char b = v != 0.0 ? 255 : 0;
    os.write(reinterpret_cast<const char*>(&b), 1);
  }
}

void write_ppm(const fs::path& path, const Tensor& image) {
  require(image.rank() == 3 && image.dim(2) == 3, "write_ppm: expect H×W×3");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open for write: " + path.string());
  os << "P6\n" << image.dim(1) << ' ' << image.dim(0) << "\n255\n";
  for (real v : image.data) {
    const real c = std::clamp(v, 0.0, 1.0);
    const unsigned char b = static_cast<unsigned char>(std::lround(c * 255.0));
    os.write(reinterpret_cast<const char*>(&b), 1);
  }
}

Tensor read_ppm(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open: " + path.string());
  std::string magic;
  is >> magic;
  if (magic != "P6") throw std::runtime_error("not a P6 PPM: " + path.string());
  int w = 0, h = 0, maxval = 0;
  is >> w >> h >> maxval;
  if (maxval != 255) throw std::runtime_error("unsupported PPM maxval");
  is.get();  // single whitespace after header
  Tensor t({h, w, 3});
  std::vector<unsigned char> buf(static_cast<size_t>(w) * h * 3);
  is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (!is) throw std::runtime_error("truncated PPM " + path.string());
  for (size_t i = 0; i < buf.size(); ++i) t.data[i] = buf[i] / 255.0;
  return t;
}

std::vector<fs::path> list_frame_files(const fs::path& dir) {
  std::vector<fs::path> out;
  for (auto& e : fs::directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    const auto ext = e.path().extension();
    if (ext == ".miat" || ext == ".ppm") out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

Tensor read_frame(const fs::path& path) {
  return path.extension() == ".ppm" ? read_ppm(path) : read_miat(path);
}

void save_checkpoint(const fs::path& dir, const ad::ParamStore& params) {
  fs::create_directories(dir);
  nlohmann::json manifest;
  for (auto& [name, t] : params.params) {
    std::string file = name + ".miat";
    std::replace(file.begin(), file.end(), '/', '_');
    write_miat(dir / file, t);
    manifest[name] = file;
  }
  std::ofstream os(dir / "manifest.json");
  os << manifest.dump(2) << '\n';
}

void load_checkpoint(const fs::path& dir, ad::ParamStore& params) {
  std::ifstream is(dir / "manifest.json");
  if (!is) throw std::runtime_error("no manifest.json in " + dir.string());
  nlohmann::json manifest = nlohmann::json::parse(is);
  for (auto& [name, file] : manifest.items())
    params.params[name] = read_miat(dir / file.get<std::string>());
}

void write_text_file(const fs::path& path, const std::string& content) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open for write: " + path.string());
  os << content;
}

}  // namespace mia::io
