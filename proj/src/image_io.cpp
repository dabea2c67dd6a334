#include "ptl/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <vector>

#include "ptl/error.hpp"

namespace ptl {

namespace {

struct Decoded {
  int width = 0, height = 0;
  std::vector<std::uint8_t> pixels;  // 1 or 3 bytes per pixel
};

Decoded decode(const std::string& bytes, bool want_grey) {
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&image, bytes.data(), bytes.size()))
    throw DataError(std::string("PNG: ") + image.message);
  image.format = want_grey ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  Decoded out;
  out.width = static_cast<int>(image.width);
  out.height = static_cast<int>(image.height);
  out.pixels.resize(PNG_IMAGE_SIZE(image));
  // Composite any alpha onto black rather than reading it as a colour channel.
  png_color background{0, 0, 0};
  if (!png_image_finish_read(&image, &background, out.pixels.data(), 0, nullptr)) {
    const std::string msg = image.message;
    png_image_free(&image);
    throw DataError("PNG: " + msg);
  }
  return out;
}

std::string encode(int width, int height, bool grey, const std::vector<std::uint8_t>& pixels) {
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(width);
  image.height = static_cast<png_uint_32>(height);
  image.format = grey ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&image, nullptr, &size, 0, pixels.data(), 0, nullptr))
    throw DataError(std::string("PNG encode: ") + image.message);
  std::string out(size, '\0');
  if (!png_image_write_to_memory(&image, out.data(), &size, 0, pixels.data(), 0, nullptr))
    throw DataError(std::string("PNG encode: ") + image.message);
  out.resize(size);
  return out;
}

std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open " + path);
  return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot write " + path);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

std::uint8_t to_byte(double v) { return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)); }

}  // namespace

RgbImage decode_png_rgb(const std::string& bytes) {
  Decoded d = decode(bytes, false);
  RgbImage img(d.width, d.height);
  for (std::size_t i = 0; i < d.pixels.size(); ++i) img.data[i] = d.pixels[i] / 255.0;
  return img;
}

RgbImage read_png_rgb(const std::string& path) {
  try {
    return decode_png_rgb(read_file(path));
  } catch (const DataError& e) {
    throw DataError(path + ": " + e.what());
  }
}

BinaryMask read_png_mask(const std::string& path) {
  Decoded d;
  try {
    d = decode(read_file(path), true);
  } catch (const DataError& e) {
    throw DataError(path + ": " + e.what());
  }
  BinaryMask mask(d.width, d.height);
  for (std::size_t i = 0; i < d.pixels.size(); ++i) mask.data[i] = d.pixels[i] != 0;
  return mask;
}

std::string encode_png_rgb(const RgbImage& img) {
  std::vector<std::uint8_t> px(img.data.size());
  std::transform(img.data.begin(), img.data.end(), px.begin(), to_byte);
  return encode(img.width, img.height, false, px);
}

std::string encode_png_mask(const BinaryMask& mask) {
  std::vector<std::uint8_t> px(mask.data.size());
  std::transform(mask.data.begin(), mask.data.end(), px.begin(), [](std::uint8_t v) { return v ? 255 : 0; });
  return encode(mask.width, mask.height, true, px);
}

void write_png_rgb(const std::string& path, const RgbImage& img) { write_file(path, encode_png_rgb(img)); }
void write_png_mask(const std::string& path, const BinaryMask& mask) { write_file(path, encode_png_mask(mask)); }

RgbImage quantize_8bit(const RgbImage& img) {
  RgbImage out = img;
  for (auto& v : out.data) v = to_byte(v) / 255.0;
  return out;
}

std::string base64_encode(const std::string& bytes) {
  static constexpr char kAlphabet[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
  std::string out;
  out.reserve((bytes.size() + 2) / 3 * 4);
  std::size_t i = 0;
  for (; i + 2 < bytes.size(); i += 3) {
    const unsigned v = (static_cast<unsigned char>(bytes[i]) << 16) | (static_cast<unsigned char>(bytes[i + 1]) << 8) |
                       static_cast<unsigned char>(bytes[i + 2]);
    out += kAlphabet[(v >> 18) & 63];
    out += kAlphabet[(v >> 12) & 63];
    out += kAlphabet[(v >> 6) & 63];
    out += kAlphabet[v & 63];
  }
  if (i < bytes.size()) {
    unsigned v = static_cast<unsigned char>(bytes[i]) << 16;
    if (i + 1 < bytes.size()) v |= static_cast<unsigned char>(bytes[i + 1]) << 8;
    out += kAlphabet[(v >> 18) & 63];
    out += kAlphabet[(v >> 12) & 63];
    out += i + 1 < bytes.size() ? kAlphabet[(v >> 6) & 63] : '=';
    out += '=';
  }
  return out;
}

}  // namespace ptl
