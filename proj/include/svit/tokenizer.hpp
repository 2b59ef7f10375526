#pragma once

// Image + manifest -> semantic token sequence.
//
// Each kept segment becomes one token: its bbox crop (non-mask pixels set to
// a fill value) resized to P x P, plus a 5-value geometry vector
// (x_min/W, y_min/H, x_max/W, y_max/H, pixels/(W*H)). Only the first
// kMaxSegmentTokens masks are kept; every pixel they do not cover goes into a
// single background token appended last, whose x/y geometry entries are -1.
//
// Token cache layout (line records, floats printed with 9 significant digits):
//
//   SVITTOKENS 1
//   image <id> <patch_size> <token_count>
//   token <index> <is_background 0|1> <g0> <g1> <g2> <g3> <g4>
//   patch <P*P*3 values, HWC order>

#include <array>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "svit/image.hpp"
#include "svit/segmenter.hpp"

namespace svit {

inline constexpr int kMaxSegmentTokens = 195;
inline constexpr int kTokenCapacity = kMaxSegmentTokens + 1;
inline constexpr float kBackgroundCoord = -1.0f;

using Geometry = std::array<float, 5>;

struct SegmentToken {
  Image patch;
  Geometry geometry{};
  bool is_background = false;
  friend bool operator==(const SegmentToken&, const SegmentToken&) = default;
};

struct TokenizedImage {
  std::vector<SegmentToken> tokens;
  std::string image_id;
  int patch_size = 16;

  std::size_t segment_count() const;
  friend bool operator==(const TokenizedImage&, const TokenizedImage&) = default;
};

// Bbox-shaped RGB crop; pixels outside the mask are set to `fill`.
Image crop_segment(const Image& image, const SegmentMask& mask, float fill = 0.0f);

// Bilinear resampling with half-pixel centers, clamped at the borders and to [0,1].
Image resize_bilinear(const Image& patch, int target_width, int target_height);
inline Image resize_bilinear(const Image& patch, int target) {
  return resize_bilinear(patch, target, target);
}

Geometry normalize_geometry(const SegmentMask& mask, ImageSize image_size);

// Pixels covered by none of `kept`.
Bitmap background_residual(ImageSize size, std::span<const SegmentMask> kept);

SegmentToken build_background(const Image& image, std::span<const SegmentMask> kept,
                              int patch_size);

TokenizedImage tokenize(const Image& image, const SegmentManifest& manifest, int patch_size);

std::string write_token_cache(const TokenizedImage& tokens);
TokenizedImage read_token_cache(std::string_view text);

}  // namespace svit
