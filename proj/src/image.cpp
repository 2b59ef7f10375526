#include "svit/image.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "svit/error.hpp"

namespace svit {

Image::Image(int w, int h, float fill)
    : width(w), height(h), pixels(static_cast<std::size_t>(w) * h * 3, fill) {
  if (w < 0 || h < 0) throw ContractError("image dimensions must be non-negative");
}

LabelMap::LabelMap(int w, int h, int fill)
    : width(w), height(h), labels(static_cast<std::size_t>(w) * h, fill) {
  if (w < 0 || h < 0) throw ContractError("label map dimensions must be non-negative");
}

namespace {

std::uint8_t quantize(float v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
}

// Parses "<magic> <w> <h> <maxval>" followed by a single whitespace byte.
struct NetpbmHeader {
  int width = 0, height = 0, maxval = 0;
  std::size_t data_offset = 0;
};

NetpbmHeader parse_header(std::string_view bytes, std::string_view magic) {
  if (bytes.substr(0, 2) != magic) {
    throw FormatError("expected " + std::string(magic) + " image header");
  }
  std::size_t pos = 2;
  int fields[3] = {0, 0, 0};
  for (int& field : fields) {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
        ++pos;
      } else {
        break;
      }
    }
    std::size_t start = pos;
    while (pos < bytes.size() && std::isdigit(static_cast<unsigned char>(bytes[pos]))) ++pos;
    if (start == pos) throw FormatError("truncated " + std::string(magic) + " header");
    field = std::stoi(std::string(bytes.substr(start, pos - start)));
  }
  if (pos >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[pos]))) {
    throw FormatError("malformed " + std::string(magic) + " header");
  }
  NetpbmHeader h{fields[0], fields[1], fields[2], pos + 1};
  if (h.width <= 0 || h.height <= 0) throw FormatError("image dimensions must be positive");
  if (h.maxval != 255) throw FormatError("only 8-bit netpbm (maxval 255) is supported");
  return h;
}

}  // namespace

std::string encode_ppm(const Image& image) {
  std::string out = "P6\n" + std::to_string(image.width) + " " +
                    std::to_string(image.height) + "\n255\n";
  out.reserve(out.size() + image.pixels.size());
  for (float v : image.pixels) out.push_back(static_cast<char>(quantize(v)));
  return out;
}

Image decode_ppm(std::string_view bytes) {
  const auto h = parse_header(bytes, "P6");
  const std::size_t n = static_cast<std::size_t>(h.width) * h.height * 3;
  if (bytes.size() - h.data_offset < n) throw FormatError("truncated P6 pixel data");
  Image image(h.width, h.height);
  for (std::size_t i = 0; i < n; ++i) {
    image.pixels[i] = static_cast<unsigned char>(bytes[h.data_offset + i]) / 255.0f;
  }
  return image;
}

std::string encode_pgm(const LabelMap& labels) {
  std::string out = "P5\n" + std::to_string(labels.width) + " " +
                    std::to_string(labels.height) + "\n255\n";
  for (int v : labels.labels) {
    if (v < 0 || v > 255) throw FormatError("label " + std::to_string(v) + " does not fit in 8-bit PGM");
    out.push_back(static_cast<char>(v));
  }
  return out;
}

LabelMap decode_pgm(std::string_view bytes) {
  const auto h = parse_header(bytes, "P5");
  const std::size_t n = static_cast<std::size_t>(h.width) * h.height;
  if (bytes.size() - h.data_offset < n) throw FormatError("truncated P5 pixel data");
  LabelMap labels(h.width, h.height);
  for (std::size_t i = 0; i < n; ++i) {
    labels.labels[i] = static_cast<unsigned char>(bytes[h.data_offset + i]);
  }
  return labels;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, std::string_view bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError("write failed for " + path.string());
}

Image read_ppm(const std::filesystem::path& path) { return decode_ppm(read_file(path)); }
void write_ppm(const std::filesystem::path& path, const Image& image) {
  write_file(path, encode_ppm(image));
}
LabelMap read_pgm(const std::filesystem::path& path) { return decode_pgm(read_file(path)); }
void write_pgm(const std::filesystem::path& path, const LabelMap& labels) {
  write_file(path, encode_pgm(labels));
}

LabelMap labels_from_colors(const Image& image) {
  LabelMap out(image.width, image.height);
  const std::size_t n = static_cast<std::size_t>(image.width) * image.height;
  std::vector<std::uint32_t> keys(n);
  std::map<std::uint32_t, std::size_t> counts;
  for (std::size_t i = 0; i < n; ++i) {
    keys[i] = (std::uint32_t{quantize(image.pixels[i * 3])} << 16) |
              (std::uint32_t{quantize(image.pixels[i * 3 + 1])} << 8) |
              quantize(image.pixels[i * 3 + 2]);
    ++counts[keys[i]];
  }
  if (n == 0) return out;
  std::uint32_t background = keys[0];
  std::size_t best = 0;
  for (std::size_t i = 0; i < n; ++i) {
    // first-seen wins ties
    if (counts[keys[i]] > best) {
      best = counts[keys[i]];
      background = keys[i];
    }
  }
  std::map<std::uint32_t, int> ids;
  for (std::size_t i = 0; i < n; ++i) {
    if (keys[i] == background) continue;
    auto [it, inserted] = ids.emplace(keys[i], static_cast<int>(ids.size()) + 1);
    out.labels[i] = it->second;
  }
  return out;
}

}  // namespace svit
