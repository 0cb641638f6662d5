#pragma once

#include <filesystem>
#include <span>
#include <vector>

#include "hiera/hierarchy.hpp"

namespace hiera {

// 8-bit palette PNG. Pixels equal to `ignore` (or otherwise outside the
// palette) map to an extra black entry.
void write_indexed_png(const std::filesystem::path& file, std::span<const int> raster,
                       int height, int width, const std::vector<Rgb>& palette, int ignore);

}  // namespace hiera
