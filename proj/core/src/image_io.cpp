#include "beamkit/image_io.hpp"

#include <png.h>

#include <cstdio>
#include <memory>
#include <stdexcept>

namespace beamkit::img {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f != nullptr) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

void check_shape(int width, int height, size_t count) {
  if (width <= 0 || height <= 0 || count != static_cast<size_t>(width) * height) {
    throw std::invalid_argument("image: pixel count does not match shape");
  }
}

void write_png_impl(const std::string& path, int width, int height, int bit_depth,
                    const void* pixels) {
  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw std::runtime_error("image: cannot open '" + path + "' for writing");

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (png == nullptr) throw std::runtime_error("image: png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  if (info == nullptr) {
    png_destroy_write_struct(&png, nullptr);
    throw std::runtime_error("image: png_create_info_struct failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("image: PNG write failed for '" + path + "'");
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, width, height, bit_depth, PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_set_compression_level(png, 6);
  png_write_info(png, info);
  if (bit_depth == 16) png_set_swap(png);  // in-memory samples are little-endian

  size_t stride = static_cast<size_t>(width) * (bit_depth / 8);
  const auto* base = static_cast<const unsigned char*>(pixels);
  for (int row = 0; row < height; ++row) {
    png_write_row(png, const_cast<png_bytep>(base + row * stride));
  }
  png_write_end(png, info);
  png_destroy_write_struct(&png, &info);
}

}  // namespace

void write_png(const std::string& path, const Gray8& image) {
  check_shape(image.width, image.height, image.pixels.size());
  write_png_impl(path, image.width, image.height, 8, image.pixels.data());
}

void write_png(const std::string& path, const Gray16& image) {
  check_shape(image.width, image.height, image.pixels.size());
  write_png_impl(path, image.width, image.height, 16, image.pixels.data());
}

Gray8 read_png_gray8(const std::string& path) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw std::runtime_error("image: cannot open '" + path + "'");

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (png == nullptr) throw std::runtime_error("image: png_create_read_struct failed");
  png_infop info = png_create_info_struct(png);
  if (info == nullptr) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw std::runtime_error("image: png_create_info_struct failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error("image: PNG read failed for '" + path + "'");
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);
  if (png_get_color_type(png, info) != PNG_COLOR_TYPE_GRAY ||
      png_get_bit_depth(png, info) != 8) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error("image: '" + path + "' is not 8-bit grayscale");
  }
  Gray8 image;
  image.width = static_cast<int>(png_get_image_width(png, info));
  image.height = static_cast<int>(png_get_image_height(png, info));
  image.pixels.resize(static_cast<size_t>(image.width) * image.height);
  for (int row = 0; row < image.height; ++row) {
    png_read_row(png, image.pixels.data() + static_cast<size_t>(row) * image.width, nullptr);
  }
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return image;
}

void write_pgm(const std::string& path, const Gray8& image) {
  check_shape(image.width, image.height, image.pixels.size());
  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw std::runtime_error("image: cannot open '" + path + "' for writing");
  std::fprintf(fp.get(), "P5\n%d %d\n255\n", image.width, image.height);
  if (std::fwrite(image.pixels.data(), 1, image.pixels.size(), fp.get()) !=
      image.pixels.size()) {
    throw std::runtime_error("image: PGM write failed for '" + path + "'");
  }
}

Gray8 read_pgm(const std::string& path) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw std::runtime_error("image: cannot open '" + path + "'");
  int width = 0, height = 0, maxval = 0;
  if (std::fscanf(fp.get(), "P5 %d %d %d", &width, &height, &maxval) != 3 || maxval != 255 ||
      width <= 0 || height <= 0) {
    throw std::runtime_error("image: '" + path + "' is not an 8-bit P5 PGM");
  }
  std::fgetc(fp.get());  // single whitespace byte before the payload
  Gray8 image;
  image.width = width;
  image.height = height;
  image.pixels.resize(static_cast<size_t>(width) * height);
  if (std::fread(image.pixels.data(), 1, image.pixels.size(), fp.get()) != image.pixels.size()) {
    throw std::runtime_error("image: truncated PGM payload in '" + path + "'");
  }
  return image;
}

}  // namespace beamkit::img
