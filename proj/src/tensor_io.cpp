#include "sigcn/tensor_io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include "sigcn/errors.hpp"

namespace sigcn {

namespace {

constexpr std::size_t kMagicLen = 6;

void put_u32(std::vector<unsigned char>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<unsigned char>(v >> (8 * i)));
}

std::uint32_t get_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | static_cast<std::uint32_t>(p[1]) << 8 |
         static_cast<std::uint32_t>(p[2]) << 16 | static_cast<std::uint32_t>(p[3]) << 24;
}

void write_bytes(const std::filesystem::path& path,
                 const std::vector<unsigned char>& bytes) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw MissingFileError("cannot open for writing: " + path.string());
  f.write(reinterpret_cast<const char*>(bytes.data()),
          static_cast<std::streamsize>(bytes.size()));
  if (!f) throw FormatError("write failed: " + path.string());
}

}  // namespace

std::vector<unsigned char> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw MissingFileError("cannot open: " + path.string());
  return std::vector<unsigned char>(std::istreambuf_iterator<char>(f), {});
}

std::vector<unsigned char> encode_tensor(const Tensor& t) {
  std::vector<unsigned char> out(kTensorMagic, kTensorMagic + kMagicLen);
  out.push_back(static_cast<unsigned char>(t.rank()));
  for (auto d : t.dims()) put_u32(out, static_cast<std::uint32_t>(d));
  for (double v : t.data()) {
    put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  }
  return out;
}

Tensor decode_tensor(const std::vector<unsigned char>& bytes,
                     const std::string& origin) {
  if (bytes.size() < kMagicLen ||
      std::memcmp(bytes.data(), kTensorMagic, kMagicLen) != 0) {
    throw BadMagicError(origin + ": not an STNSR1 tensor");
  }
  if (bytes.size() < kMagicLen + 1) throw DimMismatchError(origin + ": missing rank");
  const std::size_t rank = bytes[kMagicLen];
  if (rank < 1 || rank > 4) {
    throw FormatError(origin + ": unsupported rank " + std::to_string(rank));
  }
  std::size_t pos = kMagicLen + 1;
  if (bytes.size() < pos + 4 * rank) throw DimMismatchError(origin + ": truncated header");
  Shape dims;
  for (std::size_t i = 0; i < rank; ++i, pos += 4) {
    const auto d = get_u32(&bytes[pos]);
    if (d == 0) throw FormatError(origin + ": zero-sized dimension");
    dims.push_back(d);
  }
  const std::size_t n = shape_numel(dims);
  if (bytes.size() - pos != 4 * n) {
    throw DimMismatchError(origin + ": dims " + shape_str(dims) + " need " +
                           std::to_string(4 * n) + " payload bytes, found " +
                           std::to_string(bytes.size() - pos));
  }
  std::vector<double> data(n);
  for (std::size_t i = 0; i < n; ++i, pos += 4) {
    data[i] = static_cast<double>(std::bit_cast<float>(get_u32(&bytes[pos])));
  }
  return Tensor(std::move(dims), std::move(data));
}

void write_tensor(const std::filesystem::path& path, const Tensor& t) {
  write_bytes(path, encode_tensor(t));
}

Tensor read_tensor(const std::filesystem::path& path) {
  return decode_tensor(read_file_bytes(path), path.string());
}

Tensor round_to_f32(const Tensor& t) {
  Tensor out = t;
  for (auto& v : out.data()) v = static_cast<double>(static_cast<float>(v));
  return out;
}

void write_pgm(const std::filesystem::path& path, const Tensor& map) {
  if (map.rank() != 2) throw ShapeError("write_pgm expects an H x W map");
  const std::string header = "P5\n" + std::to_string(map.dim(1)) + " " +
                             std::to_string(map.dim(0)) + "\n255\n";
  std::vector<unsigned char> bytes(header.begin(), header.end());
  for (double v : map.data()) {
    const double c = std::clamp(std::isfinite(v) ? v : 0.0, 0.0, 1.0);
    bytes.push_back(static_cast<unsigned char>(std::lround(c * 255.0)));
  }
  write_bytes(path, bytes);
}

Tensor read_pgm(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  std::string head(bytes.begin(), bytes.begin() + std::min<std::size_t>(bytes.size(), 64));
  std::istringstream in(head);
  std::string magic;
  std::size_t w = 0, h = 0, maxval = 0;
  in >> magic >> w >> h >> maxval;
  if (magic != "P5") throw BadMagicError(path.string() + ": not a P5 PGM");
  if (!in || maxval != 255 || w == 0 || h == 0) {
    throw FormatError(path.string() + ": unsupported PGM header");
  }
  const auto offset = static_cast<std::size_t>(in.tellg()) + 1;
  if (bytes.size() != offset + w * h) {
    throw DimMismatchError(path.string() + ": PGM payload size mismatch");
  }
  Tensor out({h, w});
  for (std::size_t i = 0; i < w * h; ++i) out[i] = bytes[offset + i] / 255.0;
  return out;
}

}  // namespace sigcn
