#pragma once

// Segment masks, their run-length encoding, the manifest file that carries
// them between a segmenter and the tokenizer, and a connected-components
// reference segmenter for label images.
//
// Manifest layout (one record per line, decimal integers):
//
//   SVITMANIFEST 1
//   image <id> <width> <height>
//   [source <tag>]                      optional
//   mask <index> bbox <x_min> <y_min> <x_max> <y_max> count <n>
//   run <row> <col_start> <len>         one per run, repeated per mask

#include <compare>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "svit/image.hpp"

namespace svit {

inline constexpr int kManifestVersion = 1;

struct ImageSize {
  int width = 0;
  int height = 0;
  friend bool operator==(const ImageSize&, const ImageSize&) = default;
};

struct Run {
  int row = 0;
  int col_start = 0;
  int length = 0;
  friend auto operator<=>(const Run&, const Run&) = default;
};

// Inclusive pixel bounds.
struct BBox {
  int x_min = 0;
  int y_min = 0;
  int x_max = 0;
  int y_max = 0;
  friend bool operator==(const BBox&, const BBox&) = default;
};

struct SegmentMask {
  std::vector<Run> runs;
  BBox bbox;
  std::int64_t pixel_count = 0;
  ImageSize image_size;

  // Builds a mask from canonical runs, deriving bbox and pixel count.
  static SegmentMask from_runs(std::vector<Run> runs, ImageSize size);

  // Throws FormatError describing the first violated invariant.
  void validate() const;
  friend bool operator==(const SegmentMask&, const SegmentMask&) = default;
};

struct SegmentManifest {
  int format_version = kManifestVersion;
  std::string image_id;
  ImageSize image_size;
  std::vector<SegmentMask> masks;
  std::string source;  // "reference", "external", or empty
  friend bool operator==(const SegmentManifest&, const SegmentManifest&) = default;
};

struct Bitmap {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> bits;

  Bitmap() = default;
  Bitmap(int w, int h) : width(w), height(h), bits(static_cast<std::size_t>(w) * h, 0) {}
  std::uint8_t& at(int x, int y) { return bits[static_cast<std::size_t>(y) * width + x]; }
  std::uint8_t at(int x, int y) const { return bits[static_cast<std::size_t>(y) * width + x]; }
  friend bool operator==(const Bitmap&, const Bitmap&) = default;
};

// Canonical runs: sorted by (row, col_start), maximal, non-empty.
std::vector<Run> rle_encode(const Bitmap& bitmap);
// Throws FormatError for runs outside the image.
Bitmap rle_decode(std::span<const Run> runs, ImageSize size);
Bitmap mask_bitmap(const SegmentMask& mask);

// One mask per 4-connected component of every nonzero label, ordered by
// (y_min, x_min, label).
SegmentManifest segment_connected_components(const LabelMap& labels,
                                             std::string image_id = "image");

std::string write_manifest(const SegmentManifest& manifest);
SegmentManifest read_manifest(std::string_view text);
SegmentManifest load_manifest(const std::filesystem::path& path);
void save_manifest(const std::filesystem::path& path, const SegmentManifest& manifest);

}  // namespace svit
