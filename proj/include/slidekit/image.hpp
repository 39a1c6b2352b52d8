#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "slidekit/errors.hpp"

namespace slidekit {

// Interleaved 8-bit image with a compile-time channel count.
template <int Channels>
struct Image8 {
  static constexpr int kChannels = Channels;

  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;

  Image8() = default;
  Image8(int w, int h, std::uint8_t fill = 0)
      : width(w), height(h), pixels(static_cast<std::size_t>(w) * h * Channels, fill) {}

  bool empty() const { return width <= 0 || height <= 0; }
  std::size_t pixel_count() const { return static_cast<std::size_t>(width) * height; }

  std::uint8_t& at(int x, int y, int c = 0) {
    return pixels[(static_cast<std::size_t>(y) * width + x) * Channels + c];
  }
  std::uint8_t at(int x, int y, int c = 0) const {
    return pixels[(static_cast<std::size_t>(y) * width + x) * Channels + c];
  }

  // Exact sub-rectangle; throws when the rectangle leaves the image.
  Image8 crop(int x, int y, int w, int h) const {
    if (x < 0 || y < 0 || w <= 0 || h <= 0 || x + w > width || y + h > height) {
      throw Error("crop (" + std::to_string(x) + "," + std::to_string(y) + "," + std::to_string(w) + "x" +
                  std::to_string(h) + ") outside " + std::to_string(width) + "x" + std::to_string(height) +
                  " image");
    }
    Image8 out(w, h);
    const std::size_t row_bytes = static_cast<std::size_t>(w) * Channels;
    for (int r = 0; r < h; ++r) {
      const auto* src = &pixels[(static_cast<std::size_t>(y + r) * width + x) * Channels];
      std::copy(src, src + row_bytes, &out.pixels[static_cast<std::size_t>(r) * row_bytes]);
    }
    return out;
  }

  bool operator==(const Image8&) const = default;
};

using RgbImage = Image8<3>;
using GrayImage = Image8<1>;

// Reads binary PPM (P6, maxval 255) or PNG, picked by file signature.
RgbImage read_image(const std::string& path);
RgbImage decode_image(std::string_view bytes, const std::string& what);

// Image dimensions without decoding pixels (PPM and PNG headers).
std::pair<int, int> read_image_size(const std::string& path);

void write_ppm(const std::string& path, const RgbImage& img);
std::string encode_ppm(const RgbImage& img);

std::string encode_png(const RgbImage& img);
std::string encode_png(const GrayImage& img);
void write_png(const std::string& path, const RgbImage& img);
void write_png(const std::string& path, const GrayImage& img);

// Box-filter downscale so that the longer side is at most max_side.
RgbImage downscale_to_fit(const RgbImage& img, int max_side);

}  // namespace slidekit
