#include "svit/segmenter.hpp"

#include <algorithm>
#include <charconv>
#include <limits>
#include <tuple>

#include "svit/error.hpp"

namespace svit {

namespace {

void check_runs_in_bounds(std::span<const Run> runs, ImageSize size, const std::string& where) {
  for (const Run& r : runs) {
    if (r.row < 0 || r.row >= size.height || r.col_start < 0 || r.length <= 0 ||
        r.col_start + static_cast<std::int64_t>(r.length) > size.width) {
      throw FormatError("run (" + std::to_string(r.row) + "," + std::to_string(r.col_start) +
                        "," + std::to_string(r.length) + ") outside " +
                        std::to_string(size.width) + "x" + std::to_string(size.height) +
                        " image" + where);
    }
  }
}

}  // namespace

SegmentMask SegmentMask::from_runs(std::vector<Run> runs, ImageSize size) {
  SegmentMask m;
  m.runs = std::move(runs);
  m.image_size = size;
  if (m.runs.empty()) return m;
  m.bbox = {std::numeric_limits<int>::max(), std::numeric_limits<int>::max(), -1, -1};
  for (const Run& r : m.runs) {
    m.bbox.x_min = std::min(m.bbox.x_min, r.col_start);
    m.bbox.x_max = std::max(m.bbox.x_max, r.col_start + r.length - 1);
    m.bbox.y_min = std::min(m.bbox.y_min, r.row);
    m.bbox.y_max = std::max(m.bbox.y_max, r.row);
    m.pixel_count += r.length;
  }
  return m;
}

void SegmentMask::validate() const {
  if (runs.empty()) throw FormatError("mask is empty");
  check_runs_in_bounds(runs, image_size, "");
  for (std::size_t i = 1; i < runs.size(); ++i) {
    const Run& a = runs[i - 1];
    const Run& b = runs[i];
    if (std::tie(b.row, b.col_start) < std::tie(a.row, a.col_start)) {
      throw FormatError("runs not sorted");
    }
    if (a.row == b.row && a.col_start + a.length > b.col_start) {
      throw FormatError("runs overlap");
    }
  }
  const SegmentMask derived = from_runs(runs, image_size);
  if (derived.pixel_count != pixel_count) {
    throw FormatError("pixel count " + std::to_string(pixel_count) + " but runs cover " +
                      std::to_string(derived.pixel_count));
  }
  if (derived.bbox != bbox) throw FormatError("bounding box is not tight around the runs");
}

std::vector<Run> rle_encode(const Bitmap& bitmap) {
  std::vector<Run> runs;
  for (int y = 0; y < bitmap.height; ++y) {
    int x = 0;
    while (x < bitmap.width) {
      if (!bitmap.at(x, y)) {
        ++x;
        continue;
      }
      const int start = x;
      while (x < bitmap.width && bitmap.at(x, y)) ++x;
      runs.push_back({y, start, x - start});
    }
  }
  return runs;
}

Bitmap rle_decode(std::span<const Run> runs, ImageSize size) {
  check_runs_in_bounds(runs, size, "");
  Bitmap out(size.width, size.height);
  for (const Run& r : runs) {
    std::fill_n(out.bits.begin() + static_cast<std::ptrdiff_t>(r.row) * size.width + r.col_start,
                r.length, std::uint8_t{1});
  }
  return out;
}

Bitmap mask_bitmap(const SegmentMask& mask) { return rle_decode(mask.runs, mask.image_size); }

SegmentManifest segment_connected_components(const LabelMap& labels, std::string image_id) {
  SegmentManifest manifest;
  manifest.image_id = std::move(image_id);
  manifest.image_size = {labels.width, labels.height};
  manifest.source = "reference";

  struct Component {
    int label;
    SegmentMask mask;
  };
  std::vector<Component> components;
  std::vector<std::uint8_t> visited(labels.labels.size(), 0);
  std::vector<std::pair<int, int>> stack;
  for (int y = 0; y < labels.height; ++y) {
    for (int x = 0; x < labels.width; ++x) {
      const int label = labels.at(x, y);
      if (label == 0 || visited[static_cast<std::size_t>(y) * labels.width + x]) continue;
      Bitmap bits(labels.width, labels.height);
      stack.emplace_back(x, y);
      visited[static_cast<std::size_t>(y) * labels.width + x] = 1;
      while (!stack.empty()) {
        const auto [cx, cy] = stack.back();
        stack.pop_back();
        bits.at(cx, cy) = 1;
        constexpr int dx[4] = {1, -1, 0, 0};
        constexpr int dy[4] = {0, 0, 1, -1};
        for (int k = 0; k < 4; ++k) {
          const int nx = cx + dx[k], ny = cy + dy[k];
          if (nx < 0 || ny < 0 || nx >= labels.width || ny >= labels.height) continue;
          auto& seen = visited[static_cast<std::size_t>(ny) * labels.width + nx];
          if (seen || labels.at(nx, ny) != label) continue;
          seen = 1;
          stack.emplace_back(nx, ny);
        }
      }
      components.push_back({label, SegmentMask::from_runs(rle_encode(bits), manifest.image_size)});
    }
  }
  std::stable_sort(components.begin(), components.end(), [](const Component& a, const Component& b) {
    return std::tie(a.mask.bbox.y_min, a.mask.bbox.x_min, a.label) <
           std::tie(b.mask.bbox.y_min, b.mask.bbox.x_min, b.label);
  });
  for (auto& c : components) manifest.masks.push_back(std::move(c.mask));
  return manifest;
}

std::string write_manifest(const SegmentManifest& manifest) {
  std::string out = "SVITMANIFEST " + std::to_string(manifest.format_version) + "\n";
  out += "image " + manifest.image_id + " " + std::to_string(manifest.image_size.width) + " " +
         std::to_string(manifest.image_size.height) + "\n";
  if (!manifest.source.empty()) out += "source " + manifest.source + "\n";
  for (std::size_t i = 0; i < manifest.masks.size(); ++i) {
    const auto& m = manifest.masks[i];
    out += "mask " + std::to_string(i) + " bbox " + std::to_string(m.bbox.x_min) + " " +
           std::to_string(m.bbox.y_min) + " " + std::to_string(m.bbox.x_max) + " " +
           std::to_string(m.bbox.y_max) + " count " + std::to_string(m.pixel_count) + "\n";
    for (const Run& r : m.runs) {
      out += "run " + std::to_string(r.row) + " " + std::to_string(r.col_start) + " " +
             std::to_string(r.length) + "\n";
    }
  }
  return out;
}

namespace {

class LineReader {
 public:
  explicit LineReader(std::string_view text) : text_(text) {}

  bool next() {
    if (pos_ >= text_.size()) return false;
    const auto end = text_.find('\n', pos_);
    line_ = text_.substr(pos_, end == std::string_view::npos ? std::string_view::npos : end - pos_);
    pos_ = end == std::string_view::npos ? text_.size() : end + 1;
    ++line_no_;
    fields_.clear();
    std::size_t i = 0;
    while (i < line_.size()) {
      while (i < line_.size() && line_[i] == ' ') ++i;
      const std::size_t start = i;
      while (i < line_.size() && line_[i] != ' ') ++i;
      if (i > start) fields_.push_back(line_.substr(start, i - start));
    }
    return true;
  }
  bool peek_is(std::string_view keyword) const {
    if (pos_ >= text_.size()) return false;
    const auto rest = text_.substr(pos_);
    return rest.substr(0, keyword.size()) == keyword &&
           (rest.size() == keyword.size() || rest[keyword.size()] == ' ');
  }
  const std::vector<std::string_view>& fields() const { return fields_; }

  [[noreturn]] void fail(const std::string& what) const {
    throw FormatError("manifest line " + std::to_string(line_no_) + ": " + what);
  }
  void expect(std::size_t count, std::string_view keyword) const {
    if (fields_.size() != count || fields_[0] != keyword) {
      fail("expected '" + std::string(keyword) + "' record with " + std::to_string(count - 1) +
           " fields, got '" + std::string(line_) + "'");
    }
  }
  std::int64_t integer(std::size_t i) const {
    std::int64_t v = 0;
    const auto f = fields_.at(i);
    const auto [p, ec] = std::from_chars(f.data(), f.data() + f.size(), v);
    if (ec != std::errc() || p != f.data() + f.size()) {
      fail("'" + std::string(f) + "' is not an integer");
    }
    return v;
  }
  int small(std::size_t i) const {
    const auto v = integer(i);
    if (v < std::numeric_limits<int>::min() || v > std::numeric_limits<int>::max()) {
      fail("value out of range");
    }
    return static_cast<int>(v);
  }

 private:
  std::string_view text_;
  std::size_t pos_ = 0;
  std::size_t line_no_ = 0;
  std::string_view line_;
  std::vector<std::string_view> fields_;
};

}  // namespace

SegmentManifest read_manifest(std::string_view text) {
  LineReader in(text);
  SegmentManifest m;
  if (!in.next() || in.fields().size() != 2 || in.fields()[0] != "SVITMANIFEST") {
    throw FormatError("manifest: missing 'SVITMANIFEST' header");
  }
  m.format_version = in.small(1);
  if (m.format_version != kManifestVersion) {
    throw FormatError("manifest: unsupported version " + std::to_string(m.format_version) +
                      " (expected " + std::to_string(kManifestVersion) + ")");
  }
  if (!in.next()) throw FormatError("manifest: missing 'image' record");
  in.expect(4, "image");
  m.image_id = std::string(in.fields()[1]);
  m.image_size = {in.small(2), in.small(3)};
  if (m.image_size.width <= 0 || m.image_size.height <= 0) in.fail("image size must be positive");
  if (in.peek_is("source")) {
    in.next();
    in.expect(2, "source");
    m.source = std::string(in.fields()[1]);
  }
  while (in.next()) {
    if (in.fields().empty()) continue;
    in.expect(9, "mask");
    const auto k = m.masks.size();
    if (in.integer(1) != static_cast<std::int64_t>(k)) {
      in.fail("expected mask index " + std::to_string(k));
    }
    if (in.fields()[2] != "bbox" || in.fields()[7] != "count") in.fail("malformed mask record");
    SegmentMask mask;
    mask.image_size = m.image_size;
    mask.bbox = {in.small(3), in.small(4), in.small(5), in.small(6)};
    mask.pixel_count = in.integer(8);
    while (in.peek_is("run")) {
      in.next();
      in.expect(4, "run");
      mask.runs.push_back({in.small(1), in.small(2), in.small(3)});
    }
    try {
      mask.validate();
    } catch (const FormatError& e) {
      throw FormatError(std::string(e.what()) + " at mask " + std::to_string(k));
    }
    m.masks.push_back(std::move(mask));
  }
  return m;
}

SegmentManifest load_manifest(const std::filesystem::path& path) {
  return read_manifest(read_file(path));
}

void save_manifest(const std::filesystem::path& path, const SegmentManifest& manifest) {
  write_file(path, write_manifest(manifest));
}

}  // namespace svit
