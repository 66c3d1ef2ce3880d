#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "sigcn/tensor.hpp"

namespace sigcn {

// STNSR1 layout (little-endian):
//   "STNSR1" | u8 rank | rank x u32 dims | f32 payload, row-major.
// Values are narrowed to f32 on write and widened back to f64 on read.
inline constexpr char kTensorMagic[] = "STNSR1";

std::vector<unsigned char> encode_tensor(const Tensor& t);
Tensor decode_tensor(const std::vector<unsigned char>& bytes,
                     const std::string& origin = "<memory>");

void write_tensor(const std::filesystem::path& path, const Tensor& t);
Tensor read_tensor(const std::filesystem::path& path);

// Rounds every value to the nearest f32, the precision STNSR1 stores.
Tensor round_to_f32(const Tensor& t);

// Binary PGM (P5) of an H x W map; values are clamped to [0, 1] and written
// as round(value * 255).
void write_pgm(const std::filesystem::path& path, const Tensor& map);
// Reads a P5 PGM back as an H x W map with values byte / 255.
Tensor read_pgm(const std::filesystem::path& path);

std::vector<unsigned char> read_file_bytes(const std::filesystem::path& path);

}  // namespace sigcn
