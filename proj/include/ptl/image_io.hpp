#pragma once

#include <string>

#include "ptl/color.hpp"

namespace ptl {

// 8-bit PNG I/O. Images are real-valued in memory; quantisation happens only
// here. Failures throw ptl::DataError.

/// Reads any 8/16-bit PNG as RGB (grey is replicated, alpha dropped).
RgbImage read_png_rgb(const std::string& path);
/// Reads a PNG as a mask: any nonzero grey value is 1.
BinaryMask read_png_mask(const std::string& path);

void write_png_rgb(const std::string& path, const RgbImage& img);
void write_png_mask(const std::string& path, const BinaryMask& mask);

/// In-memory PNG encoding, for serving stimuli over HTTP.
std::string encode_png_rgb(const RgbImage& img);
std::string encode_png_mask(const BinaryMask& mask);

RgbImage decode_png_rgb(const std::string& bytes);

/// Rounds each channel to the nearest 8-bit level.
RgbImage quantize_8bit(const RgbImage& img);

std::string base64_encode(const std::string& bytes);

}  // namespace ptl
