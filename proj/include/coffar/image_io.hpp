#pragma once

#include <cstddef>
#include <filesystem>

#include "coffar/tensor.hpp"

namespace coffar {

/// Binary PGM (P5, maxval <= 255) to a [rows, cols] tensor scaled to [0,1].
Tensor read_pgm(const std::filesystem::path& path);
/// Writes a [rows, cols] tensor with values in [0,1] as P5, maxval 255.
void write_pgm(const std::filesystem::path& path, const Tensor& image);

/// 8-bit PNG; RGB(A) converted to luminance 0.299 R + 0.587 G + 0.114 B.
Tensor read_png(const std::filesystem::path& path);
/// 8-bit grayscale PNG.
void write_png(const std::filesystem::path& path, const Tensor& image);

/// Dispatch on file magic; throws Io for unreadable or unsupported files.
Tensor read_gray_image(const std::filesystem::path& path);

/// Center-crops to a square, then resizes to side x side: box averaging when
/// the crop is an integer multiple of side, bilinear otherwise.
Tensor to_square(const Tensor& image, std::size_t side);

/// Bilinear resample with half-pixel centers and edge clamping.
Tensor resize_bilinear(const Tensor& image, std::size_t rows, std::size_t cols);

/// Box average over factor x factor blocks.
Tensor downscale_box(const Tensor& image, std::size_t factor);

}  // namespace coffar
