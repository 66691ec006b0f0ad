#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "mia/autodiff.hpp"
#include "mia/tensor.hpp"

namespace mia::io {

// Binary tensor file: magic "MIAT", u8 ndim, ndim×u32 little-endian dims,
// then raw little-endian 32-bit floats.
void write_miat(const std::filesystem::path& path, const Tensor& t);
Tensor read_miat(const std::filesystem::path& path);

// Binary PGM (P5), maxval 255. Mask values {0,1} are written as {0,255}.
void write_pgm_mask(const std::filesystem::path& path, const Tensor& mask);

// 8-bit binary PPM (P6); values clamped to [0,1] on write.
void write_ppm(const std::filesystem::path& path, const Tensor& image);
Tensor read_ppm(const std::filesystem::path& path);

// Lexicographically sorted *.miat / *.ppm files in a directory.
std::vector<std::filesystem::path> list_frame_files(const std::filesystem::path& dir);
Tensor read_frame(const std::filesystem::path& path);

// Checkpoint: manifest.json mapping parameter names to MIAT files.
void save_checkpoint(const std::filesystem::path& dir, const ad::ParamStore& params);
void load_checkpoint(const std::filesystem::path& dir, ad::ParamStore& params);

void write_text_file(const std::filesystem::path& path, const std::string& content);

}  // namespace mia::io
