#include "slidekit/image.hpp"

#include <png.h>

#include <algorithm>
#include <cctype>
#include <cstring>
#include <fstream>
#include <sstream>

#include "slidekit/binary_io.hpp"

namespace slidekit {

std::string read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file_bytes(const std::string& path, std::string_view bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed: " + path);
}

namespace {

constexpr std::string_view kPngSignature("\x89PNG\r\n\x1a\n", 8);

bool is_png(std::string_view bytes) { return bytes.size() >= 8 && bytes.substr(0, 8) == kPngSignature; }

struct PpmHeader {
  int width = 0;
  int height = 0;
  std::size_t data_offset = 0;
};

PpmHeader parse_ppm_header(std::string_view bytes, const std::string& what) {
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '6') throw FormatError(what + ": not a P6 PPM or PNG");
  std::size_t pos = 2;
  int fields[3] = {0, 0, 0};
  for (int& field : fields) {
    for (;;) {
      while (pos < bytes.size() && std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
      if (pos < bytes.size() && bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
        continue;
      }
      break;
    }
    if (pos >= bytes.size() || !std::isdigit(static_cast<unsigned char>(bytes[pos]))) {
      throw FormatError(what + ": malformed PPM header");
    }
    long value = 0;
    while (pos < bytes.size() && std::isdigit(static_cast<unsigned char>(bytes[pos]))) {
      value = value * 10 + (bytes[pos] - '0');
      if (value > (1 << 20)) throw FormatError(what + ": PPM dimension too large");
      ++pos;
    }
    field = static_cast<int>(value);
  }
  if (fields[2] != 255) throw FormatError(what + ": only maxval 255 PPM supported");
  if (pos >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[pos]))) {
    throw FormatError(what + ": malformed PPM header");
  }
  ++pos;
  return {fields[0], fields[1], pos};
}

template <int C>
std::string encode_png_impl(const Image8<C>& img) {
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(img.width);
  image.height = static_cast<png_uint_32>(img.height);
  image.format = C == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&image, nullptr, &size, 0, img.pixels.data(), 0, nullptr)) {
    throw Error(std::string("png encode failed: ") + image.message);
  }
  std::string out(size, '\0');
  if (!png_image_write_to_memory(&image, out.data(), &size, 0, img.pixels.data(), 0, nullptr)) {
    throw Error(std::string("png encode failed: ") + image.message);
  }
  out.resize(size);
  return out;
}

}  // namespace

RgbImage decode_image(std::string_view bytes, const std::string& what) {
  if (is_png(bytes)) {
    png_image image;
    std::memset(&image, 0, sizeof(image));
    image.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_memory(&image, bytes.data(), bytes.size())) {
      throw FormatError(what + ": " + image.message);
    }
    image.format = PNG_FORMAT_RGB;
    RgbImage out(static_cast<int>(image.width), static_cast<int>(image.height));
    if (!png_image_finish_read(&image, nullptr, out.pixels.data(), 0, nullptr)) {
      png_image_free(&image);
      throw FormatError(what + ": " + image.message);
    }
    return out;
  }
  const PpmHeader h = parse_ppm_header(bytes, what);
  const std::size_t n = static_cast<std::size_t>(h.width) * h.height * 3;
  if (bytes.size() - h.data_offset < n) throw FormatError(what + ": truncated PPM data");
  RgbImage out(h.width, h.height);
  std::memcpy(out.pixels.data(), bytes.data() + h.data_offset, n);
  return out;
}

RgbImage read_image(const std::string& path) { return decode_image(read_file_bytes(path), path); }

std::pair<int, int> read_image_size(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::string head(256, '\0');
  in.read(head.data(), static_cast<std::streamsize>(head.size()));
  head.resize(static_cast<std::size_t>(in.gcount()));
  if (is_png(head)) {
    if (head.size() < 24) throw FormatError(path + ": truncated PNG header");
    auto be32 = [&](std::size_t off) {
      std::uint32_t v = 0;
      for (int i = 0; i < 4; ++i) v = (v << 8) | static_cast<unsigned char>(head[off + i]);
      return static_cast<int>(v);
    };
    return {be32(16), be32(20)};
  }
  const PpmHeader h = parse_ppm_header(head, path);
  return {h.width, h.height};
}

std::string encode_ppm(const RgbImage& img) {
  std::string out = "P6\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
  out.append(reinterpret_cast<const char*>(img.pixels.data()), img.pixels.size());
  return out;
}

void write_ppm(const std::string& path, const RgbImage& img) { write_file_bytes(path, encode_ppm(img)); }

std::string encode_png(const RgbImage& img) { return encode_png_impl(img); }
std::string encode_png(const GrayImage& img) { return encode_png_impl(img); }
void write_png(const std::string& path, const RgbImage& img) { write_file_bytes(path, encode_png(img)); }
void write_png(const std::string& path, const GrayImage& img) { write_file_bytes(path, encode_png(img)); }

RgbImage downscale_to_fit(const RgbImage& img, int max_side) {
  const int longest = std::max(img.width, img.height);
  if (longest <= max_side) return img;
  const int factor = (longest + max_side - 1) / max_side;
  const int w = std::max(1, img.width / factor);
  const int h = std::max(1, img.height / factor);
  RgbImage out(w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < 3; ++c) {
        int sum = 0;
        for (int dy = 0; dy < factor; ++dy)
          for (int dx = 0; dx < factor; ++dx) sum += img.at(x * factor + dx, y * factor + dy, c);
        out.at(x, y, c) = static_cast<std::uint8_t>((sum + factor * factor / 2) / (factor * factor));
      }
    }
  }
  return out;
}

}  // namespace slidekit
