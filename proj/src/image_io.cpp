#include "coffar/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include "coffar/error.hpp"

namespace coffar {

namespace {

[[noreturn]] void io_error(const std::filesystem::path& path, const std::string& what) {
  throw Error(ErrorKind::Io, path.string() + ": " + what);
}

// Reads one whitespace-delimited header token, skipping '#' comments.
bool pgm_token(std::istream& in, std::string& tok) {
  tok.clear();
  int c;
  while ((c = in.get()) != EOF) {
    if (c == '#') {
      while ((c = in.get()) != EOF && c != '\n') {
      }
      continue;
    }
    if (!std::isspace(c)) break;
  }
  while (c != EOF && !std::isspace(c)) {
    tok.push_back(static_cast<char>(c));
    c = in.get();
  }
  return !tok.empty();
}

std::uint8_t quantize(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

struct FileCloser {
  void operator()(std::FILE* f) const { std::fclose(f); }
};

}  // namespace

Tensor read_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) io_error(path, "cannot open");
  std::string magic, ws, hs, ms;
  if (!pgm_token(in, magic) || magic != "P5") io_error(path, "not a binary PGM (P5)");
  if (!pgm_token(in, ws) || !pgm_token(in, hs) || !pgm_token(in, ms)) {
    io_error(path, "truncated PGM header");
  }
  std::size_t w = 0, h = 0;
  int maxval = 0;
  try {
    w = std::stoul(ws);
    h = std::stoul(hs);
    maxval = std::stoi(ms);
  } catch (const std::exception&) {
    io_error(path, "bad PGM header");
  }
  if (w == 0 || h == 0 || maxval <= 0 || maxval > 255) {
    io_error(path, "unsupported PGM dimensions or maxval");
  }
  std::vector<unsigned char> raw(w * h);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (in.gcount() != static_cast<std::streamsize>(raw.size())) io_error(path, "truncated PGM data");
  Tensor t = Tensor::matrix(h, w);
  for (std::size_t i = 0; i < raw.size(); ++i) t[i] = raw[i] / static_cast<double>(maxval);
  return t;
}

void write_pgm(const std::filesystem::path& path, const Tensor& image) {
  if (image.rank() != 2) throw Error(ErrorKind::InvalidShape, "write_pgm expects a 2-D image");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) io_error(path, "cannot write");
  out << "P5\n" << image.dim(1) << " " << image.dim(0) << "\n255\n";
  std::vector<char> raw(image.size());
  for (std::size_t i = 0; i < image.size(); ++i) raw[i] = static_cast<char>(quantize(image[i]));
  out.write(raw.data(), static_cast<std::streamsize>(raw.size()));
  if (!out) io_error(path, "write failed");
}

Tensor read_png(const std::filesystem::path& path) {
  std::unique_ptr<std::FILE, FileCloser> fp(std::fopen(path.c_str(), "rb"));
  if (!fp) io_error(path, "cannot open");
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) io_error(path, "png_create_read_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    io_error(path, "png_create_info_struct failed");
  }
  std::vector<unsigned char> pixels;
  std::vector<png_bytep> rows;
  png_uint_32 w = 0, h = 0;
  int channels = 0;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    io_error(path, "corrupt PNG");
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);
  const int color = png_get_color_type(png, info);
  const int depth = png_get_bit_depth(png, info);
  if (depth == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_strip_alpha(png);
  png_read_update_info(png, info);
  w = png_get_image_width(png, info);
  h = png_get_image_height(png, info);
  channels = png_get_channels(png, info);
  const std::size_t stride = png_get_rowbytes(png, info);
  pixels.resize(stride * h);
  rows.resize(h);
  for (png_uint_32 r = 0; r < h; ++r) rows[r] = pixels.data() + r * stride;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  Tensor t = Tensor::matrix(h, w);
  for (png_uint_32 r = 0; r < h; ++r) {
    const unsigned char* row = rows[r];
    for (png_uint_32 c = 0; c < w; ++c) {
      const unsigned char* px = row + static_cast<std::size_t>(c) * channels;
      const double v = channels >= 3 ? 0.299 * px[0] + 0.587 * px[1] + 0.114 * px[2] : px[0];
      t.at(r, c) = std::clamp(v / 255.0, 0.0, 1.0);
    }
  }
  return t;
}

void write_png(const std::filesystem::path& path, const Tensor& image) {
  if (image.rank() != 2) throw Error(ErrorKind::InvalidShape, "write_png expects a 2-D image");
  std::unique_ptr<std::FILE, FileCloser> fp(std::fopen(path.c_str(), "wb"));
  if (!fp) io_error(path, "cannot write");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    io_error(path, "libpng init failed");
  }
  const auto h = static_cast<png_uint_32>(image.dim(0));
  const auto w = static_cast<png_uint_32>(image.dim(1));
  std::vector<unsigned char> raw(image.size());
  for (std::size_t i = 0; i < image.size(); ++i) raw[i] = quantize(image[i]);
  std::vector<png_bytep> rows(h);
  for (png_uint_32 r = 0; r < h; ++r) rows[r] = raw.data() + static_cast<std::size_t>(r) * w;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    io_error(path, "PNG encode failed");
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, w, h, 8, PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

Tensor read_gray_image(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) io_error(path, "cannot open");
  unsigned char magic[8] = {};
  in.read(reinterpret_cast<char*>(magic), sizeof magic);
  const auto got = static_cast<std::size_t>(in.gcount());
  in.close();
  if (got >= 2 && magic[0] == 'P' && magic[1] == '5') return read_pgm(path);
  if (got == 8 && png_sig_cmp(magic, 0, 8) == 0) return read_png(path);
  io_error(path, "unsupported image format");
}

Tensor downscale_box(const Tensor& image, std::size_t factor) {
  if (image.rank() != 2 || factor == 0 || image.dim(0) % factor || image.dim(1) % factor) {
    throw Error(ErrorKind::InvalidShape, "downscale_box: image " + shape_string(image.shape()) +
                                             " not divisible by " + std::to_string(factor));
  }
  const std::size_t oh = image.dim(0) / factor, ow = image.dim(1) / factor;
  Tensor out = Tensor::matrix(oh, ow);
  const double inv = 1.0 / static_cast<double>(factor * factor);
  for (std::size_t r = 0; r < oh; ++r) {
    for (std::size_t c = 0; c < ow; ++c) {
      double acc = 0.0;
      for (std::size_t i = 0; i < factor; ++i) {
        for (std::size_t j = 0; j < factor; ++j) acc += image.at(r * factor + i, c * factor + j);
      }
      out.at(r, c) = acc * inv;
    }
  }
  return out;
}

Tensor resize_bilinear(const Tensor& image, std::size_t rows, std::size_t cols) {
  if (image.rank() != 2) throw Error(ErrorKind::InvalidShape, "resize expects a 2-D image");
  const double sy = static_cast<double>(image.dim(0)) / static_cast<double>(rows);
  const double sx = static_cast<double>(image.dim(1)) / static_cast<double>(cols);
  const auto max_r = static_cast<double>(image.dim(0) - 1);
  const auto max_c = static_cast<double>(image.dim(1) - 1);
  Tensor out = Tensor::matrix(rows, cols);
  for (std::size_t r = 0; r < rows; ++r) {
    const double y = std::clamp((static_cast<double>(r) + 0.5) * sy - 0.5, 0.0, max_r);
    const auto y0 = static_cast<std::size_t>(y);
    const std::size_t y1 = std::min(y0 + 1, image.dim(0) - 1);
    const double fy = y - static_cast<double>(y0);
    for (std::size_t c = 0; c < cols; ++c) {
      const double x = std::clamp((static_cast<double>(c) + 0.5) * sx - 0.5, 0.0, max_c);
      const auto x0 = static_cast<std::size_t>(x);
      const std::size_t x1 = std::min(x0 + 1, image.dim(1) - 1);
      const double fx = x - static_cast<double>(x0);
      const double top = image.at(y0, x0) * (1 - fx) + image.at(y0, x1) * fx;
      const double bot = image.at(y1, x0) * (1 - fx) + image.at(y1, x1) * fx;
      out.at(r, c) = top * (1 - fy) + bot * fy;
    }
  }
  return out;
}

Tensor to_square(const Tensor& image, std::size_t side) {
  if (image.rank() != 2) throw Error(ErrorKind::InvalidShape, "to_square expects a 2-D image");
  const std::size_t h = image.dim(0), w = image.dim(1);
  const std::size_t s = std::min(h, w);
  Tensor crop = Tensor::matrix(s, s);
  const std::size_t r0 = (h - s) / 2, c0 = (w - s) / 2;
  for (std::size_t r = 0; r < s; ++r) {
    for (std::size_t c = 0; c < s; ++c) crop.at(r, c) = image.at(r0 + r, c0 + c);
  }
  if (s == side) return crop;
  if (s % side == 0) return downscale_box(crop, s / side);
  return resize_bilinear(crop, side, side);
}

}  // namespace coffar
