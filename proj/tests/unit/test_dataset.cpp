#include <filesystem>
#include <map>

#include "doctest.h"
#include "svit/dataset.hpp"
#include "svit/error.hpp"

using namespace svit;

namespace {

Scene scene_of(std::initializer_list<ShapeKind> kinds) {
  Scene s;
  for (auto k : kinds) s.objects.push_back({k, 0, 0, 4, {}});
  return s;
}

}  // namespace

TEST_CASE("multiset label is the strictly most frequent kind") {
  using K = ShapeKind;
  CHECK(scene_label(scene_of({K::disk, K::disk, K::square}), LabelRule::multiset) == 0);
  CHECK(scene_label(scene_of({K::triangle, K::square, K::triangle}), LabelRule::multiset) == 2);
  CHECK(scene_label(scene_of({K::disk, K::square}), LabelRule::multiset) == -1);
}

TEST_CASE("relation label compares disk and square centres") {
  Scene s;
  s.objects.push_back({ShapeKind::disk, 0, 2, 4, {}});
  s.objects.push_back({ShapeKind::square, 10, 10, 4, {}});
  CHECK(scene_label(s, LabelRule::relation) == 1);
  s.objects[0].top = 20;
  CHECK(scene_label(s, LabelRule::relation) == 0);
  s.objects[0].top = 10;
  CHECK(scene_label(s, LabelRule::relation) == -1);
}

TEST_CASE("generated samples are deterministic, balanced and labelled by their scene") {
  SyntheticSceneSpec spec;
  spec.seed = 4;
  const auto a = gen_dataset(spec, 30, 9);
  const auto b = gen_dataset(spec, 30, 9);
  std::map<int, int> counts;
  for (std::size_t i = 0; i < a.train.size(); ++i) {
    const auto& s = a.train[i];
    CHECK(s.image == b.train[i].image);
    CHECK(s.manifest == b.train[i].manifest);
    CHECK(s.label == scene_label(s.scene, spec.rule));
    CHECK(s.manifest.masks.size() == s.scene.objects.size());
    ++counts[s.label];
  }
  CHECK(counts == std::map<int, int>{{0, 10}, {1, 10}, {2, 10}});
  spec.seed = 5;
  CHECK(gen_dataset(spec, 1, 0).train[0].image != a.train[0].image);
}

TEST_CASE("objects never touch, so each one is its own mask") {
  SyntheticSceneSpec spec;
  spec.rule = LabelRule::relation;
  spec.seed = 6;
  for (const auto& s : gen_dataset(spec, 20, 0).train) {
    CHECK(s.manifest.masks.size() == s.scene.objects.size());
    CHECK(s.label == scene_label(s.scene, LabelRule::relation));
  }
}

TEST_CASE("palette by kind ties colour to shape") {
  SyntheticSceneSpec spec;
  spec.palette_by_kind = true;
  spec.seed = 7;
  std::map<int, std::vector<Color>> seen;
  for (const auto& s : gen_dataset(spec, 40, 0).train)
    for (const auto& o : s.scene.objects) seen[static_cast<int>(o.kind)].push_back(o.color);
  for (const auto& [k1, c1] : seen)
    for (const auto& [k2, c2] : seen)
      if (k1 != k2)
        for (const auto& x : c1)
          for (const auto& y : c2) CHECK(x != y);
}

TEST_CASE("2x shifted test scenes keep content and quadruple object areas") {
  SyntheticSceneSpec spec;
  spec.image_size = 64;
  spec.scale_min = 0.08;
  spec.scale_max = 0.12;
  spec.seed = 8;
  const auto base = gen_dataset(spec, 0, 30).test;
  int warnings = 0;
  const auto shifted = gen_shifted_testset(spec, 30, {2.0, 0, 0}, &warnings);
  CHECK(warnings == 0);
  int matched = 0;
  for (std::size_t i = 0; i < base.size(); ++i) {
    CHECK(shifted[i].label == base[i].label);
    const auto& a = base[i].scene.objects;
    const auto& b = shifted[i].scene.objects;
    if (a.size() != b.size()) continue;
    bool same = true;
    for (std::size_t k = 0; k < a.size(); ++k) same = same && a[k].kind == b[k].kind && a[k].color == b[k].color;
    if (!same) continue;
    ++matched;
    for (std::size_t k = 0; k < a.size(); ++k) {
      CHECK(b[k].extent == 2 * a[k].extent);
      CHECK(b[k].extent * b[k].extent == 4 * a[k].extent * a[k].extent);
    }
  }
  CHECK(matched >= 25);
}

TEST_CASE("oversized objects are clamped with a warning") {
  SyntheticSceneSpec spec;
  spec.image_size = 64;
  spec.objects_min = spec.objects_max = 2;
  spec.scale_min = 0.05;
  spec.scale_max = 0.45;
  int clamped = 0;
  for (std::size_t i = 0; i < 20; ++i) {
    int warnings = 0;
    try {
      const auto s = generate_sample(spec, 1, i, {2.5, 0, 0}, &warnings);
      for (const auto& o : s.scene.objects) CHECK(o.extent <= 60);
      if (warnings > 0) ++clamped;
    } catch (const ConfigError&) {
      // two clamped objects cannot share the frame
    }
  }
  CHECK(clamped > 0);
}

TEST_CASE("translation keeps labels") {
  SyntheticSceneSpec spec;
  spec.seed = 9;
  const auto base = gen_dataset(spec, 0, 12).test;
  const auto moved = gen_shifted_testset(spec, 12, {1.0, 5, -3});
  for (std::size_t i = 0; i < base.size(); ++i) CHECK(moved[i].label == base[i].label);
}

TEST_CASE("dataset save and load round trip") {
  SyntheticSceneSpec spec;
  spec.seed = 10;
  spec.palette_by_kind = true;
  const auto d = gen_dataset(spec, 4, 2);
  const auto dir = std::filesystem::temp_directory_path() / "svit_dataset_roundtrip";
  std::filesystem::remove_all(dir);
  save_dataset(dir, d);
  const auto back = load_dataset(dir);
  CHECK(back.spec.seed == 10);
  CHECK(back.spec.palette_by_kind);
  REQUIRE(back.train.size() == 4);
  REQUIRE(back.test.size() == 2);
  CHECK(back.train[2].manifest == d.train[2].manifest);
  CHECK(back.train[2].label == d.train[2].label);
  CHECK(back.train[2].labels == d.train[2].labels);
  std::filesystem::remove_all(dir);
}

TEST_CASE("spec validation") {
  SyntheticSceneSpec spec;
  spec.scale_max = 1.5;
  CHECK_THROWS_AS(spec.validate(), ConfigError);
  CHECK_THROWS_AS(scene_spec_from(KeyValueConfig::parse("palette = rainbow\n")), ConfigError);
  CHECK_THROWS_AS(scene_spec_from(KeyValueConfig::parse("rule = other\n")), ConfigError);
}
