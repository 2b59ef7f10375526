#pragma once

// Synthetic shape scenes with exact label maps, used as a desk-scale
// classification benchmark.
//
// Two label rules:
//   multiset  3 classes: the shape kind (disk, square, triangle) that occurs
//             strictly most often in the scene.
//   relation  2 classes: 1 when the disk's centre lies above the square's.
//
// Scene content (kinds, colours, sizes) and object placement come from
// separate random streams, so a rescaled or shifted test set keeps every
// object's identity and only moves or resizes it.

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "svit/config.hpp"
#include "svit/image.hpp"
#include "svit/segmenter.hpp"

namespace svit {

enum class ShapeKind { disk = 0, square = 1, triangle = 2 };
enum class LabelRule { multiset, relation };

std::string_view to_string(ShapeKind kind);
std::string_view to_string(LabelRule rule);
LabelRule parse_label_rule(std::string_view text);

using Color = std::array<float, 3>;

struct SceneObject {
  ShapeKind kind = ShapeKind::disk;
  int left = 0;    // top-left corner of the bounding square
  int top = 0;
  int extent = 1;  // side of the bounding square, pixels
  Color color{};
};

struct Scene {
  int width = 0;
  int height = 0;
  Color background{};
  std::vector<SceneObject> objects;
};

struct SyntheticSceneSpec {
  int image_size = 64;
  int objects_min = 2;
  int objects_max = 4;
  double scale_min = 0.14;  // object extent as a fraction of image_size
  double scale_max = 0.24;
  LabelRule rule = LabelRule::multiset;
  // false: any palette colour on any kind. true: each kind draws from its
  // own colour subset, so colour alone identifies the kind.
  bool palette_by_kind = false;
  std::uint64_t seed = 0;

  int num_classes() const { return rule == LabelRule::multiset ? 3 : 2; }
  void validate() const;  // throws ConfigError
};

// Distribution shift applied when placing objects.
struct SceneShift {
  double scale_factor = 1.0;
  int shift_x = 0;
  int shift_y = 0;
};

struct Sample {
  std::string id;
  Scene scene;
  Image image;
  LabelMap labels;  // object k painted with label k + 1
  SegmentManifest manifest;
  int label = 0;
};

struct Dataset {
  SyntheticSceneSpec spec;
  std::vector<Sample> train;
  std::vector<Sample> test;
};

// Applies the label rule to a scene; -1 if the rule is undecided (ties).
int scene_label(const Scene& scene, LabelRule rule);

void render_scene(const Scene& scene, Image& image, LabelMap& labels);

// Scene `index` of split `split` (0 train, 1 test). Classes are balanced by
// cycling the target class with the index. `warnings` counts objects whose
// extent had to be clamped to fit the frame.
Sample generate_sample(const SyntheticSceneSpec& spec, int split, std::size_t index,
                       const SceneShift& shift = {}, int* warnings = nullptr);

Dataset gen_dataset(const SyntheticSceneSpec& spec, std::size_t n_train, std::size_t n_test);
std::vector<Sample> gen_shifted_testset(const SyntheticSceneSpec& spec, std::size_t n_test,
                                        const SceneShift& shift, int* warnings = nullptr);

// Keys: image_size, objects_min, objects_max, scale_min, scale_max, rule,
// palette (shared | by_kind), seed.
SyntheticSceneSpec scene_spec_from(const KeyValueConfig& cfg);
KeyValueConfig scene_spec_config(const SyntheticSceneSpec& spec);

// Directory layout: spec.txt, then train/ and test/ each holding
// <id>.ppm, <id>.pgm, <id>.manifest and labels.txt ("<id> <label>" lines).
void save_dataset(const std::filesystem::path& dir, const Dataset& dataset);
Dataset load_dataset(const std::filesystem::path& dir);
std::vector<Sample> load_split(const std::filesystem::path& dir);

}  // namespace svit
