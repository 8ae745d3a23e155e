#pragma once

#include <png.h>

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <memory>
#include <string>
#include <vector>

#include "semfeat/core/errors.hpp"
#include "semfeat/core/tensor.hpp"

namespace semfeat::io {

namespace detail {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

inline FilePtr open_file(const std::string& path, const char* mode) {
  FilePtr f(std::fopen(path.c_str(), mode));
  if (!f) throw IoError("cannot open " + path);
  return f;
}

}  // namespace detail

// Writes an 8-bit image; channels must be 1 (gray) or 3 (RGB).
inline void write_png(const std::string& path, const Tensor<std::uint8_t>& img) {
  const int channels = img.rank() == 2 ? 1 : img.dim(2);
  if ((img.rank() != 2 && img.rank() != 3) || (channels != 1 && channels != 3))
    throw IoError("write_png: expected HxW or HxWx3 tensor, got " + img.shape_str());
  const int rows = img.dim(0), cols = img.dim(1);

  auto file = detail::open_file(path, "wb");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw IoError("png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw IoError("png_create_info_struct failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("libpng write error for " + path);
  }
  png_init_io(png, file.get());
  png_set_IHDR(png, info, cols, rows, 8,
               channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<png_bytep> row_ptrs(rows);
  for (int y = 0; y < rows; ++y)
    row_ptrs[y] = const_cast<png_bytep>(&img[std::size_t(y) * cols * channels]);
  png_write_image(png, row_ptrs.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

// Reads an 8-bit PNG. Gray files come back HxW, color files HxWx3; palette,
// 16-bit, and alpha variants are converted.
inline Tensor<std::uint8_t> read_png(const std::string& path) {
  auto file = detail::open_file(path, "rb");
  png_byte header[8];
  if (std::fread(header, 1, 8, file.get()) != 8 || png_sig_cmp(header, 0, 8))
    throw IoError(path + " is not a PNG file");

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw IoError("png_create_read_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw IoError("png_create_info_struct failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("libpng read error for " + path);
  }
  png_init_io(png, file.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);

  const int cols = png_get_image_width(png, info);
  const int rows = png_get_image_height(png, info);
  const png_byte color = png_get_color_type(png, info);
  const png_byte depth = png_get_bit_depth(png, info);

  if (depth == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  if (color == PNG_COLOR_TYPE_GRAY_ALPHA) png_set_strip_alpha(png);
  png_read_update_info(png, info);

  const int channels = png_get_channels(png, info);
  if (channels != 1 && channels != 3) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError(path + ": unsupported channel count " + std::to_string(channels));
  }
  Tensor<std::uint8_t> out =
      channels == 1 ? Tensor<std::uint8_t>(rows, cols) : Tensor<std::uint8_t>(rows, cols, 3);
  std::vector<png_bytep> row_ptrs(rows);
  for (int y = 0; y < rows; ++y) row_ptrs[y] = &out[std::size_t(y) * cols * channels];
  png_read_image(png, row_ptrs.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return out;
}

template <class T>
Tensor<std::uint8_t> to_u8(const Tensor<T>& img) {
  Tensor<std::uint8_t> out = img.rank() == 2 ? Tensor<std::uint8_t>(img.dim(0), img.dim(1))
                                             : Tensor<std::uint8_t>(img.dim(0), img.dim(1),
                                                                    img.dim(2));
  for (std::size_t i = 0; i < img.size(); ++i) {
    const double v = std::min(1.0, std::max(0.0, double(img[i])));
    out[i] = std::uint8_t(std::lround(v * 255.0));
  }
  return out;
}

template <class T>
Tensor<T> to_float(const Tensor<std::uint8_t>& img) {
  Tensor<T> out = img.rank() == 2 ? Tensor<T>(img.dim(0), img.dim(1))
                                  : Tensor<T>(img.dim(0), img.dim(1), img.dim(2));
  for (std::size_t i = 0; i < img.size(); ++i) out[i] = T(img[i]) / T(255);
  return out;
}

}  // namespace semfeat::io
