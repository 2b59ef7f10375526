#include "svit/tokenizer.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "svit/error.hpp"

namespace svit {

std::size_t TokenizedImage::segment_count() const {
  return static_cast<std::size_t>(
      std::count_if(tokens.begin(), tokens.end(), [](const auto& t) { return !t.is_background; }));
}

Image crop_segment(const Image& image, const SegmentMask& mask, float fill) {
  const BBox& b = mask.bbox;
  if (mask.runs.empty() || b.x_min < 0 || b.y_min < 0 || b.x_max >= image.width ||
      b.y_max >= image.height || b.x_min > b.x_max || b.y_min > b.y_max) {
    throw ContractError("crop_segment: bbox (" + std::to_string(b.x_min) + "," +
                        std::to_string(b.y_min) + ")-(" + std::to_string(b.x_max) + "," +
                        std::to_string(b.y_max) + ") outside " + std::to_string(image.width) +
                        "x" + std::to_string(image.height) + " image");
  }
  Image out(b.x_max - b.x_min + 1, b.y_max - b.y_min + 1, fill);
  for (const Run& r : mask.runs) {
    for (int x = r.col_start; x < r.col_start + r.length; ++x) {
      for (int c = 0; c < 3; ++c) out.at(x - b.x_min, r.row - b.y_min, c) = image.at(x, r.row, c);
    }
  }
  return out;
}

Image resize_bilinear(const Image& patch, int target_width, int target_height) {
  if (patch.width < 1 || patch.height < 1 || target_width < 1 || target_height < 1) {
    throw ContractError("resize_bilinear: sizes must be at least 1x1");
  }
  Image out(target_width, target_height);
  const double sx = static_cast<double>(patch.width) / target_width;
  const double sy = static_cast<double>(patch.height) / target_height;
  for (int y = 0; y < target_height; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, patch.height - 1.0);
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, patch.height - 1);
    const double wy = fy - y0;
    for (int x = 0; x < target_width; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, patch.width - 1.0);
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, patch.width - 1);
      const double wx = fx - x0;
      for (int c = 0; c < 3; ++c) {
        const double top = (1 - wx) * patch.at(x0, y0, c) + wx * patch.at(x1, y0, c);
        const double bottom = (1 - wx) * patch.at(x0, y1, c) + wx * patch.at(x1, y1, c);
        out.at(x, y, c) = static_cast<float>(std::clamp((1 - wy) * top + wy * bottom, 0.0, 1.0));
      }
    }
  }
  return out;
}

Geometry normalize_geometry(const SegmentMask& mask, ImageSize image_size) {
  if (image_size.width <= 0 || image_size.height <= 0) {
    throw ContractError("normalize_geometry: image has zero area");
  }
  const double w = image_size.width, h = image_size.height;
  return {static_cast<float>(mask.bbox.x_min / w), static_cast<float>(mask.bbox.y_min / h),
          static_cast<float>(mask.bbox.x_max / w), static_cast<float>(mask.bbox.y_max / h),
          static_cast<float>(static_cast<double>(mask.pixel_count) / (w * h))};
}

Bitmap background_residual(ImageSize size, std::span<const SegmentMask> kept) {
  Bitmap residual(size.width, size.height);
  std::fill(residual.bits.begin(), residual.bits.end(), std::uint8_t{1});
  for (const auto& mask : kept) {
    for (const Run& r : mask.runs) {
      std::fill_n(residual.bits.begin() + static_cast<std::ptrdiff_t>(r.row) * size.width + r.col_start,
                  r.length, std::uint8_t{0});
    }
  }
  return residual;
}

SegmentToken build_background(const Image& image, std::span<const SegmentMask> kept,
                              int patch_size) {
  const ImageSize size{image.width, image.height};
  const Bitmap residual = background_residual(size, kept);
  Image canvas = image;
  std::int64_t count = 0;
  for (std::size_t i = 0; i < residual.bits.size(); ++i) {
    if (residual.bits[i]) {
      ++count;
    } else {
      std::fill_n(canvas.pixels.begin() + static_cast<std::ptrdiff_t>(i) * 3, 3, 0.0f);
    }
  }
  SegmentToken token;
  token.patch = resize_bilinear(canvas, patch_size);
  token.is_background = true;
  token.geometry = {kBackgroundCoord, kBackgroundCoord, kBackgroundCoord, kBackgroundCoord,
                    static_cast<float>(static_cast<double>(count) /
                                       (static_cast<double>(image.width) * image.height))};
  return token;
}

TokenizedImage tokenize(const Image& image, const SegmentManifest& manifest, int patch_size) {
  if (manifest.image_size != ImageSize{image.width, image.height}) {
    throw ContractError("tokenize: manifest is for a " + std::to_string(manifest.image_size.width) +
                        "x" + std::to_string(manifest.image_size.height) + " image, got " +
                        std::to_string(image.width) + "x" + std::to_string(image.height));
  }
  if (patch_size < 1) throw ContractError("tokenize: patch size must be positive");
  TokenizedImage out;
  out.image_id = manifest.image_id;
  out.patch_size = patch_size;
  const std::size_t kept =
      std::min(manifest.masks.size(), static_cast<std::size_t>(kMaxSegmentTokens));
  const std::span<const SegmentMask> kept_masks(manifest.masks.data(), kept);
  out.tokens.reserve(kept + 1);
  for (const auto& mask : kept_masks) {
    SegmentToken token;
    token.patch = resize_bilinear(crop_segment(image, mask), patch_size);
    token.geometry = normalize_geometry(mask, manifest.image_size);
    out.tokens.push_back(std::move(token));
  }
  out.tokens.push_back(build_background(image, kept_masks, patch_size));
  return out;
}

namespace {

std::string format_float(float v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", static_cast<double>(v));
  return buf;
}

float parse_float(const std::string& s) {
  try {
    std::size_t used = 0;
    const float v = std::stof(s, &used);
    if (used != s.size()) throw FormatError("token cache: bad number '" + s + "'");
    return v;
  } catch (const std::logic_error&) {
    throw FormatError("token cache: bad number '" + s + "'");
  }
}

}  // namespace

std::string write_token_cache(const TokenizedImage& tokens) {
  std::string out = "SVITTOKENS 1\nimage " + tokens.image_id + " " +
                    std::to_string(tokens.patch_size) + " " +
                    std::to_string(tokens.tokens.size()) + "\n";
  for (std::size_t i = 0; i < tokens.tokens.size(); ++i) {
    const auto& t = tokens.tokens[i];
    out += "token " + std::to_string(i) + (t.is_background ? " 1" : " 0");
    for (float g : t.geometry) out += " " + format_float(g);
    out += "\npatch";
    for (float v : t.patch.pixels) out += " " + format_float(v);
    out += "\n";
  }
  return out;
}

TokenizedImage read_token_cache(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::string word;
  int version = 0;
  if (!(in >> word >> version) || word != "SVITTOKENS" || version != 1) {
    throw FormatError("token cache: missing 'SVITTOKENS 1' header");
  }
  TokenizedImage out;
  std::size_t count = 0;
  if (!(in >> word >> out.image_id >> out.patch_size >> count) || word != "image" ||
      out.patch_size < 1) {
    throw FormatError("token cache: malformed image record");
  }
  const std::size_t values = static_cast<std::size_t>(out.patch_size) * out.patch_size * 3;
  for (std::size_t i = 0; i < count; ++i) {
    std::size_t index = 0;
    int background = 0;
    if (!(in >> word >> index >> background) || word != "token" || index != i) {
      throw FormatError("token cache: expected token record " + std::to_string(i));
    }
    SegmentToken t;
    t.is_background = background != 0;
    std::string num;
    for (float& g : t.geometry) {
      if (!(in >> num)) throw FormatError("token cache: truncated geometry");
      g = parse_float(num);
    }
    if (!(in >> word) || word != "patch") throw FormatError("token cache: expected patch record");
    t.patch = Image(out.patch_size, out.patch_size);
    for (std::size_t k = 0; k < values; ++k) {
      if (!(in >> num)) throw FormatError("token cache: truncated patch " + std::to_string(i));
      t.patch.pixels[k] = parse_float(num);
    }
    out.tokens.push_back(std::move(t));
  }
  return out;
}

}  // namespace svit
