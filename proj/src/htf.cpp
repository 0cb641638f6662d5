#include "hiera/htf.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "hiera/error.hpp"

namespace hiera {

namespace {

constexpr char kMagic[4] = {'H', 'T', 'F', '1'};
constexpr std::uint8_t kDtypeF64 = 0;

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) | static_cast<std::uint32_t>(p[1]) << 8 |
         static_cast<std::uint32_t>(p[2]) << 16 | static_cast<std::uint32_t>(p[3]) << 24;
}

}  // namespace

std::vector<std::uint8_t> encode_htf(const Tensor& t) {
  std::vector<std::uint8_t> out(kMagic, kMagic + 4);
  out.push_back(kDtypeF64);
  out.push_back(static_cast<std::uint8_t>(t.ndim()));
  for (int d : t.shape()) put_u32(out, static_cast<std::uint32_t>(d));
  out.reserve(out.size() + 8 * t.numel());
  for (double v : t.data()) {
    const auto bits = std::bit_cast<std::uint64_t>(v);
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
  }
  return out;
}

Tensor decode_htf(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 6 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw InputError("htf: bad magic");
  }
  if (bytes[4] != kDtypeF64) {
    throw InputError("htf: unsupported dtype tag " + std::to_string(bytes[4]));
  }
  const int ndim = bytes[5];
  if (ndim < 1 || ndim > 4) throw InputError("htf: rank " + std::to_string(ndim) + " unsupported");
  if (bytes.size() < 6 + 4 * static_cast<std::size_t>(ndim)) throw InputError("htf: truncated header");
  Shape shape;
  for (int i = 0; i < ndim; ++i) {
    shape.push_back(static_cast<int>(get_u32(bytes.data() + 6 + 4 * i)));
  }
  const std::size_t offset = 6 + 4 * static_cast<std::size_t>(ndim);
  const std::size_t n = shape_numel(shape);
  if (bytes.size() != offset + 8 * n) {
    throw InputError("htf: payload is " + std::to_string(bytes.size() - offset) +
                     " bytes, expected " + std::to_string(8 * n));
  }
  std::vector<double> data(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::uint64_t bits = 0;
    for (int k = 0; k < 8; ++k) {
      bits |= static_cast<std::uint64_t>(bytes[offset + 8 * i + k]) << (8 * k);
    }
    data[i] = std::bit_cast<double>(bits);
  }
  return Tensor::from_data(std::move(shape), std::move(data));
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw IoError("cannot open " + file.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

void write_file_bytes(const std::filesystem::path& file, std::span<const std::uint8_t> bytes) {
  std::ofstream out(file, std::ios::binary);
  if (!out) throw IoError("cannot write " + file.string());
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + file.string());
}

void write_htf(const std::filesystem::path& file, const Tensor& t) {
  write_file_bytes(file, encode_htf(t));
}

Tensor read_htf(const std::filesystem::path& file) {
  try {
    return decode_htf(read_file_bytes(file));
  } catch (const InputError& e) {
    throw InputError(file.string() + ": " + e.what());
  }
}

void write_label_raster(const std::filesystem::path& file, std::span<const int> raster,
                        int height, int width) {
  if (raster.size() != static_cast<std::size_t>(height) * width) {
    throw InputError("label raster size does not match " + std::to_string(height) + "x" +
                     std::to_string(width));
  }
  std::vector<double> data(raster.begin(), raster.end());
  write_htf(file, Tensor::from_data({height, width}, std::move(data)));
}

std::vector<int> read_label_raster(const std::filesystem::path& file, int& height, int& width) {
  const Tensor t = read_htf(file);
  if (t.ndim() != 2) throw InputError(file.string() + ": label raster must be 2-D");
  height = t.dim(0);
  width = t.dim(1);
  std::vector<int> out(t.numel());
  const auto d = t.data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (d[i] != std::floor(d[i]) || d[i] < 0 || d[i] > 1e9) {
      throw InputError(file.string() + ": non-integer label value");
    }
    out[i] = static_cast<int>(d[i]);
  }
  return out;
}

}  // namespace hiera
