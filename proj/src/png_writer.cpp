#include "hiera/png_writer.hpp"

#include <png.h>

#include <cstdio>
#include <memory>

#include "hiera/error.hpp"

namespace hiera {

void write_indexed_png(const std::filesystem::path& file, std::span<const int> raster,
                       int height, int width, const std::vector<Rgb>& palette, int ignore) {
  if (palette.size() > 255) throw InputError("png: at most 255 classes per level");
  if (raster.size() != static_cast<std::size_t>(height) * width) {
    throw InputError("png: raster size does not match " + std::to_string(height) + "x" +
                     std::to_string(width));
  }
  const int extra = static_cast<int>(palette.size());
  std::vector<png_byte> rows(raster.size());
  for (std::size_t i = 0; i < raster.size(); ++i) {
    const int v = raster[i];
    rows[i] = static_cast<png_byte>((v == ignore || v < 0 || v >= extra) ? extra : v);
  }
  std::vector<png_color> pal;
  for (const auto& c : palette) pal.push_back(png_color{c[0], c[1], c[2]});
  pal.push_back(png_color{0, 0, 0});

  std::unique_ptr<FILE, int (*)(FILE*)> fp(std::fopen(file.c_str(), "wb"), &std::fclose);
  if (!fp) throw IoError("cannot write " + file.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, nullptr);
    throw IoError("png: out of memory");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("png: failed writing " + file.string());
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, width, height, 8, PNG_COLOR_TYPE_PALETTE, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_set_PLTE(png, info, pal.data(), static_cast<int>(pal.size()));
  png_write_info(png, info);
  for (int y = 0; y < height; ++y) png_write_row(png, rows.data() + static_cast<std::size_t>(y) * width);
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace hiera
