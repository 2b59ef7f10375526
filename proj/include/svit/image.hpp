#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace svit {

// RGB image with float channels in [0,1], row-major HWC. Also used for
// segment patches.
struct Image {
  int width = 0;
  int height = 0;
  std::vector<float> pixels;

  Image() = default;
  Image(int w, int h, float fill = 0.0f);

  float& at(int x, int y, int c) { return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c]; }
  float at(int x, int y, int c) const {
    return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c];
  }
  bool empty() const { return width == 0 || height == 0; }
  friend bool operator==(const Image&, const Image&) = default;
};

// Integer label grid; 0 is background.
struct LabelMap {
  int width = 0;
  int height = 0;
  std::vector<int> labels;

  LabelMap() = default;
  LabelMap(int w, int h, int fill = 0);

  int& at(int x, int y) { return labels[static_cast<std::size_t>(y) * width + x]; }
  int at(int x, int y) const { return labels[static_cast<std::size_t>(y) * width + x]; }
  friend bool operator==(const LabelMap&, const LabelMap&) = default;
};

// Binary P6 (8-bit) and P5 (8-bit). Values are quantized with rounding.
std::string encode_ppm(const Image& image);
Image decode_ppm(std::string_view bytes);
std::string encode_pgm(const LabelMap& labels);
LabelMap decode_pgm(std::string_view bytes);

Image read_ppm(const std::filesystem::path& path);
void write_ppm(const std::filesystem::path& path, const Image& image);
LabelMap read_pgm(const std::filesystem::path& path);
void write_pgm(const std::filesystem::path& path, const LabelMap& labels);

// Treats each distinct 8-bit RGB color as a region. The most frequent color
// becomes label 0; the others are numbered from 1 in raster order of first
// appearance.
LabelMap labels_from_colors(const Image& image);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view bytes);

}  // namespace svit
