#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "hiera/tensor.hpp"

namespace hiera {

// HTF: "HTF1", u8 dtype (0 = f64), u8 ndim, ndim x u32 LE dims, then the
// row-major little-endian payload.
std::vector<std::uint8_t> encode_htf(const Tensor& t);
Tensor decode_htf(std::span<const std::uint8_t> bytes);

void write_htf(const std::filesystem::path& file, const Tensor& t);
Tensor read_htf(const std::filesystem::path& file);

// Label rasters travel as f64 [H, W] tensors holding integer values.
void write_label_raster(const std::filesystem::path& file, std::span<const int> raster,
                        int height, int width);
std::vector<int> read_label_raster(const std::filesystem::path& file, int& height, int& width);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& file);
void write_file_bytes(const std::filesystem::path& file, std::span<const std::uint8_t> bytes);

}  // namespace hiera
