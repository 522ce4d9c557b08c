#include "c2f/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>

#include "c2f/error.hpp"

namespace c2f {

Image Image::blank(std::size_t channels, std::size_t height, std::size_t width, double fill) {
  Image img;
  img.channels = channels;
  img.height = height;
  img.width = width;
  img.pixels.assign(channels * height * width, fill);
  return img;
}

Image Image::flipped_horizontally() const {
  Image out = *this;
  for (std::size_t c = 0; c < channels; ++c)
    for (std::size_t y = 0; y < height; ++y)
      for (std::size_t x = 0; x < width; ++x) out.at(c, y, x) = at(c, y, width - 1 - x);
  return out;
}

namespace {

unsigned char to_byte(double v) {
  return static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

std::string next_header_token(std::istream& in) {
  std::string token;
  while (in >> token) {
    if (token[0] != '#') return token;
    std::string rest;
    std::getline(in, rest);
  }
  throw DataError("truncated PPM header");
}

// Blue -> cyan -> yellow -> red ramp.
void ramp(double t, double rgb[3]) {
  t = std::clamp(t, 0.0, 1.0);
  if (t < 1.0 / 3.0) {
    const double s = t * 3.0;
    rgb[0] = 0.0, rgb[1] = s, rgb[2] = 1.0;
  } else if (t < 2.0 / 3.0) {
    const double s = (t - 1.0 / 3.0) * 3.0;
    rgb[0] = s, rgb[1] = 1.0, rgb[2] = 1.0 - s;
  } else {
    const double s = (t - 2.0 / 3.0) * 3.0;
    rgb[0] = 1.0, rgb[1] = 1.0 - s, rgb[2] = 0.0;
  }
}

void normalized_range(std::span<const double> field, double& lo, double& span) {
  lo = *std::min_element(field.begin(), field.end());
  const double hi = *std::max_element(field.begin(), field.end());
  span = hi - lo > 0.0 ? hi - lo : 1.0;
}

}  // namespace

void write_ppm(const std::filesystem::path& path, const Image& image) {
  if (image.channels != 3 && image.channels != 1)
    throw DataError("PPM/PGM output needs 1 or 3 channels");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out << (image.channels == 3 ? "P6" : "P5") << '\n' << image.width << ' ' << image.height << "\n255\n";
  std::vector<unsigned char> bytes(image.height * image.width * image.channels);
  for (std::size_t y = 0; y < image.height; ++y)
    for (std::size_t x = 0; x < image.width; ++x)
      for (std::size_t c = 0; c < image.channels; ++c)
        bytes[(y * image.width + x) * image.channels + c] = to_byte(image.at(c, y, x));
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

Image read_ppm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open image " + path.string());
  const auto magic = next_header_token(in);
  std::size_t channels = 0;
  if (magic == "P6") channels = 3;
  else if (magic == "P5") channels = 1;
  else throw DataError(path.string() + ": only binary PPM (P6) and PGM (P5) are supported");
  const auto width = std::stoul(next_header_token(in));
  const auto height = std::stoul(next_header_token(in));
  const auto maxval = std::stoul(next_header_token(in));
  if (maxval == 0 || maxval > 255) throw DataError(path.string() + ": only 8-bit images are supported");
  in.get();  // single whitespace after maxval
  std::vector<unsigned char> bytes(width * height * channels);
  if (!in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size())))
    throw DataError(path.string() + ": truncated pixel data");
  Image img = Image::blank(channels, height, width);
  for (std::size_t y = 0; y < height; ++y)
    for (std::size_t x = 0; x < width; ++x)
      for (std::size_t c = 0; c < channels; ++c)
        img.at(c, y, x) = bytes[(y * width + x) * channels + c] / static_cast<double>(maxval);
  return img;
}

Image render_heatmap(std::span<const double> field, std::size_t rows, std::size_t cols,
                     std::size_t cell) {
  if (field.size() != rows * cols || field.empty()) throw ShapeError("heatmap field size mismatch");
  double lo, span;
  normalized_range(field, lo, span);
  Image img = Image::blank(3, rows * cell, cols * cell);
  for (std::size_t y = 0; y < img.height; ++y)
    for (std::size_t x = 0; x < img.width; ++x) {
      double rgb[3];
      ramp((field[(y / cell) * cols + x / cell] - lo) / span, rgb);
      for (std::size_t c = 0; c < 3; ++c) img.at(c, y, x) = rgb[c];
    }
  return img;
}

Image overlay_heatmap(const Image& base, std::span<const double> field, std::size_t rows,
                      std::size_t cols, double alpha) {
  if (field.size() != rows * cols || field.empty()) throw ShapeError("heatmap field size mismatch");
  double lo, span;
  normalized_range(field, lo, span);
  Image out = Image::blank(3, base.height, base.width);
  for (std::size_t y = 0; y < base.height; ++y)
    for (std::size_t x = 0; x < base.width; ++x) {
      const std::size_t fy = y * rows / base.height, fx = x * cols / base.width;
      double rgb[3];
      ramp((field[fy * cols + fx] - lo) / span, rgb);
      for (std::size_t c = 0; c < 3; ++c) {
        const double b = base.at(base.channels == 3 ? c : 0, y, x);
        out.at(c, y, x) = (1.0 - alpha) * b + alpha * rgb[c];
      }
    }
  return out;
}

void write_npy(const std::filesystem::path& path, std::span<const double> values,
               std::span<const std::size_t> shape) {
  std::size_t total = 1;
  std::ostringstream dims;
  dims << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    total *= shape[i];
    dims << shape[i] << (shape.size() == 1 || i + 1 < shape.size() ? "," : "");
    if (i + 1 < shape.size()) dims << ' ';
  }
  dims << ')';
  if (total != values.size()) throw ShapeError("npy shape does not match value count");
  std::string header = "{'descr': '<f8', 'fortran_order': False, 'shape': " + dims.str() + ", }";
  // magic(6) + version(2) + header_len(2) + header + '\n' padded to 64 bytes
  const std::size_t unpadded = 10 + header.size() + 1;
  header.append((64 - unpadded % 64) % 64, ' ');
  header.push_back('\n');
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  out.write("\x93NUMPY\x01\x00", 8);
  const auto len = static_cast<std::uint16_t>(header.size());
  const char len_bytes[2] = {static_cast<char>(len & 0xff), static_cast<char>(len >> 8)};
  out.write(len_bytes, 2);
  out << header;
  for (double v : values) {
    unsigned char bytes[8];
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    for (int i = 0; i < 8; ++i) bytes[i] = static_cast<unsigned char>(bits >> (8 * i));
    out.write(reinterpret_cast<const char*>(bytes), 8);
  }
}

}  // namespace c2f
