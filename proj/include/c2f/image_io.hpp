#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace c2f {

// Planar float image, (channels, height, width), values nominally in [0, 1].
struct Image {
  std::size_t channels = 3;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> pixels;

  static Image blank(std::size_t channels, std::size_t height, std::size_t width, double fill = 0.0);
  double& at(std::size_t c, std::size_t y, std::size_t x) { return pixels[(c * height + y) * width + x]; }
  double at(std::size_t c, std::size_t y, std::size_t x) const {
    return pixels[(c * height + y) * width + x];
  }
  Image flipped_horizontally() const;
};

// Binary PPM (P6, 8-bit RGB) and PGM (P5) I/O.
void write_ppm(const std::filesystem::path& path, const Image& image);
Image read_ppm(const std::filesystem::path& path);

// Renders a (rows, cols) scalar field as an RGB heatmap scaled to
// (rows * cell, cols * cell), min-max normalized over the field.
Image render_heatmap(std::span<const double> field, std::size_t rows, std::size_t cols,
                     std::size_t cell);

// Blends a heatmap of `field` over `base` (resized by nearest neighbour).
Image overlay_heatmap(const Image& base, std::span<const double> field, std::size_t rows,
                      std::size_t cols, double alpha = 0.5);

// NumPy .npy (v1.0, little-endian float64, C order).
void write_npy(const std::filesystem::path& path, std::span<const double> values,
               std::span<const std::size_t> shape);

}  // namespace c2f
