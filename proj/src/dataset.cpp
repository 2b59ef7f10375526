#include "svit/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <sstream>

#include "svit/augment.hpp"
#include "svit/config.hpp"
#include "svit/error.hpp"

namespace svit {

std::string_view to_string(ShapeKind kind) {
  switch (kind) {
    case ShapeKind::disk: return "disk";
    case ShapeKind::square: return "square";
    case ShapeKind::triangle: return "triangle";
  }
  return "?";
}

std::string_view to_string(LabelRule rule) {
  return rule == LabelRule::multiset ? "multiset" : "relation";
}

LabelRule parse_label_rule(std::string_view text) {
  if (text == "multiset") return LabelRule::multiset;
  if (text == "relation") return LabelRule::relation;
  throw ConfigError("unknown label rule '" + std::string(text) + "' (expected multiset or relation)");
}

void SyntheticSceneSpec::validate() const {
  const auto require = [](bool ok, const char* what) {
    if (!ok) throw ConfigError(std::string("scene spec: ") + what);
  };
  require(image_size >= 8, "image_size must be at least 8");
  require(objects_min >= 2 && objects_max >= objects_min, "need 2 <= objects_min <= objects_max");
  require(scale_min > 0.0 && scale_max >= scale_min && scale_max < 1.0,
          "need 0 < scale_min <= scale_max < 1");
}

int scene_label(const Scene& scene, LabelRule rule) {
  if (rule == LabelRule::multiset) {
    std::array<int, 3> counts{};
    for (const auto& o : scene.objects) ++counts[static_cast<int>(o.kind)];
    const auto best = std::max_element(counts.begin(), counts.end());
    if (std::count(counts.begin(), counts.end(), *best) != 1) return -1;
    return static_cast<int>(best - counts.begin());
  }
  const SceneObject* disk = nullptr;
  const SceneObject* square = nullptr;
  for (const auto& o : scene.objects) {
    if (o.kind == ShapeKind::disk) disk = disk ? nullptr : &o;
    if (o.kind == ShapeKind::square) square = square ? nullptr : &o;
  }
  if (!disk || !square) return -1;
  // Centres in doubled pixel units to stay integral.
  const int dy = 2 * disk->top + disk->extent - (2 * square->top + square->extent);
  if (dy == 0) return -1;
  return dy < 0 ? 1 : 0;
}

namespace {

constexpr std::array<Color, 8> kPalette = {{
    {0.90f, 0.15f, 0.15f},
    {0.15f, 0.80f, 0.20f},
    {0.20f, 0.35f, 0.95f},
    {0.95f, 0.90f, 0.20f},
    {0.85f, 0.25f, 0.85f},
    {0.20f, 0.85f, 0.90f},
    {0.95f, 0.55f, 0.10f},
    {0.95f, 0.95f, 0.95f},
}};

// Palette indices per kind when colours are tied to kinds.
constexpr std::array<std::array<std::size_t, 2>, 3> kKindPalette = {{{0, 6}, {1, 5}, {2, 4}}};

constexpr int kGap = 2;               // minimum empty pixels between object boxes
constexpr int kPlacementTries = 200;  // per object
constexpr int kLayoutAttempts = 50;   // full re-placements before new content

bool covers(const SceneObject& o, int px, int py) {
  const double e = o.extent;
  const double u = px - o.left + 0.5, v = py - o.top + 0.5;
  if (u < 0 || v < 0 || u > e || v > e) return false;
  switch (o.kind) {
    case ShapeKind::square: return true;
    case ShapeKind::disk: {
      const double r = e / 2.0;
      return (u - r) * (u - r) + (v - r) * (v - r) <= r * r;
    }
    case ShapeKind::triangle: return std::abs(u - e / 2.0) <= v / 2.0;
  }
  return false;
}

bool boxes_clear(const SceneObject& a, const SceneObject& b) {
  return a.left + a.extent + kGap <= b.left || b.left + b.extent + kGap <= a.left ||
         a.top + a.extent + kGap <= b.top || b.top + b.extent + kGap <= a.top;
}

std::uint64_t stream_id(int split, std::size_t index) {
  return (static_cast<std::uint64_t>(split) << 40) ^ static_cast<std::uint64_t>(index);
}

// Kinds, colours and extents. Extents are base-scale pixels.
Scene draw_content(const SyntheticSceneSpec& spec, int target, Rng& rng) {
  Scene scene;
  scene.width = scene.height = spec.image_size;
  std::uniform_real_distribution<float> bg(0.05f, 0.35f);
  scene.background = {bg(rng), bg(rng), bg(rng)};
  const int n = std::uniform_int_distribution<int>(spec.objects_min, spec.objects_max)(rng);
  std::vector<ShapeKind> kinds(static_cast<std::size_t>(n));
  if (spec.rule == LabelRule::multiset) {
    std::uniform_int_distribution<int> pick(0, 2);
    Scene probe;
    do {
      probe.objects.clear();
      for (auto& k : kinds) {
        k = static_cast<ShapeKind>(pick(rng));
        probe.objects.push_back({k, 0, 0, 1, {}});
      }
    } while (scene_label(probe, spec.rule) != target);
  } else {
    std::fill(kinds.begin(), kinds.end(), ShapeKind::triangle);
    kinds[0] = ShapeKind::disk;
    kinds[1] = ShapeKind::square;
    std::shuffle(kinds.begin(), kinds.end(), rng);
  }
  std::uniform_real_distribution<double> scale(spec.scale_min, spec.scale_max);
  std::uniform_int_distribution<std::size_t> colour(0, kPalette.size() - 1);
  for (const auto kind : kinds) {
    SceneObject o;
    o.kind = kind;
    if (spec.palette_by_kind) {
      const auto& subset = kKindPalette[static_cast<std::size_t>(kind)];
      o.color = kPalette[subset[std::uniform_int_distribution<std::size_t>(0, 1)(rng)]];
    } else {
      o.color = kPalette[colour(rng)];
    }
    o.extent = std::max(2, static_cast<int>(std::lround(scale(rng) * spec.image_size)));
    scene.objects.push_back(o);
  }
  return scene;
}

// Places objects without overlap; false if the layout does not fit.
bool place(Scene& scene, Rng& rng) {
  for (std::size_t i = 0; i < scene.objects.size(); ++i) {
    auto& o = scene.objects[i];
    bool placed = false;
    for (int t = 0; t < kPlacementTries && !placed; ++t) {
      o.left = std::uniform_int_distribution<int>(0, scene.width - o.extent)(rng);
      o.top = std::uniform_int_distribution<int>(0, scene.height - o.extent)(rng);
      placed = std::all_of(scene.objects.begin(), scene.objects.begin() + static_cast<long>(i),
                           [&](const SceneObject& other) { return boxes_clear(o, other); });
    }
    if (!placed) return false;
  }
  return true;
}

// Rigid translation, limited so every object stays inside the frame.
void translate(Scene& scene, int dx, int dy) {
  int min_x = scene.width, min_y = scene.height, max_x = 0, max_y = 0;
  for (const auto& o : scene.objects) {
    min_x = std::min(min_x, o.left);
    min_y = std::min(min_y, o.top);
    max_x = std::max(max_x, o.left + o.extent);
    max_y = std::max(max_y, o.top + o.extent);
  }
  dx = std::clamp(dx, -min_x, scene.width - max_x);
  dy = std::clamp(dy, -min_y, scene.height - max_y);
  for (auto& o : scene.objects) {
    o.left += dx;
    o.top += dy;
  }
}

}  // namespace

void render_scene(const Scene& scene, Image& image, LabelMap& labels) {
  image = Image(scene.width, scene.height);
  labels = LabelMap(scene.width, scene.height);
  for (int y = 0; y < scene.height; ++y)
    for (int x = 0; x < scene.width; ++x)
      for (int c = 0; c < 3; ++c) image.at(x, y, c) = scene.background[c];
  for (std::size_t k = 0; k < scene.objects.size(); ++k) {
    const auto& o = scene.objects[k];
    for (int y = std::max(0, o.top); y < std::min(scene.height, o.top + o.extent); ++y) {
      for (int x = std::max(0, o.left); x < std::min(scene.width, o.left + o.extent); ++x) {
        if (!covers(o, x, y)) continue;
        labels.at(x, y) = static_cast<int>(k) + 1;
        for (int c = 0; c < 3; ++c) image.at(x, y, c) = o.color[c];
      }
    }
  }
}

Sample generate_sample(const SyntheticSceneSpec& spec, int split, std::size_t index,
                       const SceneShift& shift, int* warnings) {
  spec.validate();
  if (!(shift.scale_factor > 0.0)) throw ConfigError("scale_factor must be positive");
  const int target = static_cast<int>(index % static_cast<std::size_t>(spec.num_classes()));
  const std::uint64_t id = stream_id(split, index);
  for (std::uint64_t regen = 0; regen < 100; ++regen) {
    Rng content_rng(derive_seed(spec.seed, id, 2 * regen));
    Scene scene = draw_content(spec, target, content_rng);
    const int limit = spec.image_size - 2 * kGap;
    for (auto& o : scene.objects) {
      int e = static_cast<int>(std::lround(o.extent * shift.scale_factor));
      if (e > limit) {
        e = limit;
        if (warnings) ++*warnings;
      }
      o.extent = std::max(2, e);
    }
    Rng layout_rng(derive_seed(spec.seed, id, 2 * regen + 1));
    for (int attempt = 0; attempt < kLayoutAttempts; ++attempt) {
      if (!place(scene, layout_rng)) continue;
      if (scene_label(scene, spec.rule) != target) continue;
      translate(scene, shift.shift_x, shift.shift_y);
      Sample s;
      char name[32];
      std::snprintf(name, sizeof name, "%06zu", index);
      s.id = name;
      s.label = target;
      s.scene = std::move(scene);
      render_scene(s.scene, s.image, s.labels);
      s.manifest = segment_connected_components(s.labels, s.id);
      return s;
    }
  }
  throw ConfigError("scene spec: objects do not fit in a " + std::to_string(spec.image_size) +
                    " pixel frame");
}

Dataset gen_dataset(const SyntheticSceneSpec& spec, std::size_t n_train, std::size_t n_test) {
  Dataset d;
  d.spec = spec;
  for (std::size_t i = 0; i < n_train; ++i) d.train.push_back(generate_sample(spec, 0, i));
  for (std::size_t i = 0; i < n_test; ++i) d.test.push_back(generate_sample(spec, 1, i));
  return d;
}

std::vector<Sample> gen_shifted_testset(const SyntheticSceneSpec& spec, std::size_t n_test,
                                        const SceneShift& shift, int* warnings) {
  std::vector<Sample> out;
  for (std::size_t i = 0; i < n_test; ++i) out.push_back(generate_sample(spec, 1, i, shift, warnings));
  return out;
}

namespace {

void save_split(const std::filesystem::path& dir, const std::vector<Sample>& samples) {
  std::filesystem::create_directories(dir);
  std::string labels;
  for (const auto& s : samples) {
    write_ppm(dir / (s.id + ".ppm"), s.image);
    write_pgm(dir / (s.id + ".pgm"), s.labels);
    save_manifest(dir / (s.id + ".manifest"), s.manifest);
    labels += s.id + " " + std::to_string(s.label) + "\n";
  }
  write_file(dir / "labels.txt", labels);
}

}  // namespace

KeyValueConfig scene_spec_config(const SyntheticSceneSpec& spec) {
  KeyValueConfig cfg;
  cfg.set("image_size", std::to_string(spec.image_size));
  cfg.set("objects_min", std::to_string(spec.objects_min));
  cfg.set("objects_max", std::to_string(spec.objects_max));
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", spec.scale_min);
  cfg.set("scale_min", buf);
  std::snprintf(buf, sizeof buf, "%.17g", spec.scale_max);
  cfg.set("scale_max", buf);
  cfg.set("rule", std::string(to_string(spec.rule)));
  cfg.set("palette", spec.palette_by_kind ? "by_kind" : "shared");
  cfg.set("seed", std::to_string(spec.seed));
  return cfg;
}

SyntheticSceneSpec scene_spec_from(const KeyValueConfig& cfg) {
  SyntheticSceneSpec spec;
  spec.image_size = cfg.get_int("image_size", spec.image_size);
  spec.objects_min = cfg.get_int("objects_min", spec.objects_min);
  spec.objects_max = cfg.get_int("objects_max", spec.objects_max);
  spec.scale_min = cfg.get_double("scale_min", spec.scale_min);
  spec.scale_max = cfg.get_double("scale_max", spec.scale_max);
  spec.rule = parse_label_rule(cfg.get_string("rule", "multiset"));
  const std::string palette = cfg.get_string("palette", "shared");
  if (palette != "shared" && palette != "by_kind") {
    throw ConfigError("palette must be shared or by_kind, got '" + palette + "'");
  }
  spec.palette_by_kind = palette == "by_kind";
  spec.seed = cfg.get_u64("seed", spec.seed);
  spec.validate();
  return spec;
}

void save_dataset(const std::filesystem::path& dir, const Dataset& dataset) {
  std::filesystem::create_directories(dir);
  KeyValueConfig spec = scene_spec_config(dataset.spec);
  spec.set("num_classes", std::to_string(dataset.spec.num_classes()));
  write_file(dir / "spec.txt", spec.serialize());
  save_split(dir / "train", dataset.train);
  save_split(dir / "test", dataset.test);
}

std::vector<Sample> load_split(const std::filesystem::path& dir) {
  std::istringstream labels(read_file(dir / "labels.txt"));
  std::vector<Sample> out;
  std::string id;
  int label = 0;
  while (labels >> id >> label) {
    Sample s;
    s.id = id;
    s.label = label;
    s.image = read_ppm(dir / (id + ".ppm"));
    s.labels = read_pgm(dir / (id + ".pgm"));
    s.manifest = load_manifest(dir / (id + ".manifest"));
    if (s.manifest.image_size != ImageSize{s.image.width, s.image.height}) {
      throw FormatError("sample " + id + ": manifest and image sizes differ");
    }
    out.push_back(std::move(s));
  }
  if (!labels.eof()) throw FormatError("malformed labels.txt in " + dir.string());
  return out;
}

Dataset load_dataset(const std::filesystem::path& dir) {
  Dataset d;
  const auto spec = KeyValueConfig::load(dir / "spec.txt");
  d.spec = scene_spec_from(spec);
  if (spec.get_int("num_classes", d.spec.num_classes()) != d.spec.num_classes()) {
    throw FormatError("spec.txt: num_classes does not match the label rule");
  }
  if (std::filesystem::exists(dir / "train" / "labels.txt")) d.train = load_split(dir / "train");
  if (std::filesystem::exists(dir / "test" / "labels.txt")) d.test = load_split(dir / "test");
  return d;
}

}  // namespace svit
