#pragma once

// Minimal libpng wrapper: 8/16-bit gray, gray+alpha, RGB and RGBA.

#include <png.h>

#include <cstdint>
#include <cstdio>
#include <memory>
#include <string>
#include <vector>

#include "fastfusion/errors.hpp"
#include "fastfusion/image.hpp"

namespace fastfusion::png {

struct RawImage {
  int width = 0;
  int height = 0;
  int channels = 0;
  int bit_depth = 0;
  std::vector<std::uint16_t> samples;  // interleaved, row-major

  std::uint16_t at(int u, int v, int c) const {
    return samples[(static_cast<std::size_t>(v) * width + u) * channels + c];
  }
};

namespace detail {
struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;
}  // namespace detail

inline RawImage read(const std::string& path) {
  detail::FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw MissingFile("cannot open image " + path);
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw SequenceError("libpng init failed");
  }
  RawImage img;
  std::vector<png_bytep> rows;
  std::vector<png_byte> buffer;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw SequenceError("cannot decode PNG " + path);
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);
  const png_byte color = png_get_color_type(png, info);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && png_get_bit_depth(png, info) < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_bit_depth(png, info) == 16) png_set_swap(png);  // little-endian host
  png_read_update_info(png, info);

  img.width = static_cast<int>(png_get_image_width(png, info));
  img.height = static_cast<int>(png_get_image_height(png, info));
  img.channels = png_get_channels(png, info);
  img.bit_depth = png_get_bit_depth(png, info);
  const std::size_t rowbytes = png_get_rowbytes(png, info);
  buffer.resize(rowbytes * img.height);
  rows.resize(img.height);
  for (int y = 0; y < img.height; ++y) rows[y] = buffer.data() + rowbytes * y;
  png_read_image(png, rows.data());
  png_destroy_read_struct(&png, &info, nullptr);

  const std::size_t n = static_cast<std::size_t>(img.width) * img.height * img.channels;
  img.samples.resize(n);
  if (img.bit_depth == 16) {
    for (int y = 0; y < img.height; ++y) {
      const auto* src = reinterpret_cast<const std::uint16_t*>(rows[y]);
      std::copy(src, src + static_cast<std::size_t>(img.width) * img.channels,
                img.samples.begin() + static_cast<std::size_t>(y) * img.width * img.channels);
    }
  } else {
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width * img.channels; ++x)
        img.samples[static_cast<std::size_t>(y) * img.width * img.channels + x] = rows[y][x];
  }
  return img;
}

/// Writes a single-channel image with the given bit depth (8 or 16).
inline void write_gray(const std::string& path, int width, int height, int bit_depth,
                       const std::vector<std::uint16_t>& samples) {
  if (bit_depth != 8 && bit_depth != 16) throw InvalidArgument("write_gray: bit depth must be 8 or 16");
  detail::FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw SequenceError("cannot write image " + path);
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw SequenceError("libpng init failed");
  }
  const std::size_t bpp = bit_depth / 8;
  std::vector<png_byte> row(static_cast<std::size_t>(width) * bpp);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw SequenceError("cannot encode PNG " + path);
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, width, height, bit_depth, PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_set_compression_level(png, 1);
  png_write_info(png, info);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      const std::uint16_t s = samples[static_cast<std::size_t>(y) * width + x];
      if (bit_depth == 16) {
        row[2 * x] = static_cast<png_byte>(s >> 8);  // PNG is big-endian
        row[2 * x + 1] = static_cast<png_byte>(s & 0xff);
      } else {
        row[x] = static_cast<png_byte>(s);
      }
    }
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace fastfusion::png
