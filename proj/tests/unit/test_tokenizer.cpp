#include <random>

#include "doctest.h"
#include "oracles.hpp"
#include "svit/error.hpp"
#include "svit/tokenizer.hpp"

using namespace svit;

TEST_CASE("geometry of a mask in a 100x50 image") {
  // Spans x 5..14, y 5..14 with 100 pixels.
  std::vector<Run> runs;
  for (int y = 5; y <= 14; ++y) runs.push_back({y, 5, 10});
  const auto mask = SegmentMask::from_runs(runs, {100, 50});
  const Geometry g = normalize_geometry(mask, {100, 50});
  CHECK(g[0] == doctest::Approx(0.05f));
  CHECK(g[1] == doctest::Approx(0.10f));
  CHECK(g[2] == doctest::Approx(0.14f));
  CHECK(g[3] == doctest::Approx(0.28f));
  CHECK(g[4] == doctest::Approx(0.02f));
}

TEST_CASE("bilinear resize keeps constants and P x P inputs") {
  Image flat(7, 3, 0.25f);
  for (float v : resize_bilinear(flat, 5).pixels) CHECK(v == 0.25f);
  std::mt19937_64 rng(1);
  const Image p = oracle::random_image(6, 6, rng);
  CHECK(resize_bilinear(p, 6) == p);
}

TEST_CASE("bilinear 2x downsample of a checkerboard averages each 2x2 block") {
  // Half-pixel centres put each output sample exactly between four inputs.
  Image board(8, 8);
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x)
      for (int c = 0; c < 3; ++c) board.at(x, y, c) = (x + y) % 2 ? 1.0f : 0.0f;
  for (float v : resize_bilinear(board, 4).pixels) CHECK(v == doctest::Approx(0.5f));
}

TEST_CASE("bilinear upsample matches hand interpolation") {
  Image two(2, 1);
  for (int c = 0; c < 3; ++c) {
    two.at(0, 0, c) = 0.0f;
    two.at(1, 0, c) = 1.0f;
  }
  // Output x centres map to source x = (i + 0.5) * 0.5 - 0.5: -0.25, 0.25, 0.75, 1.25.
  const Image out = resize_bilinear(two, 4, 1);
  CHECK(out.at(0, 0, 0) == doctest::Approx(0.0f));
  CHECK(out.at(1, 0, 0) == doctest::Approx(0.25f));
  CHECK(out.at(2, 0, 0) == doctest::Approx(0.75f));
  CHECK(out.at(3, 0, 0) == doctest::Approx(1.0f));
}

TEST_CASE("crop fills pixels outside the mask") {
  Image img(3, 3, 0.8f);
  const std::vector<Run> runs{{0, 0, 2}, {1, 0, 1}};
  const Image crop = crop_segment(img, SegmentMask::from_runs(runs, {3, 3}));
  CHECK(crop.width == 2);
  CHECK(crop.height == 2);
  CHECK(crop.at(0, 0, 0) == 0.8f);
  CHECK(crop.at(1, 1, 0) == 0.0f);
}

TEST_CASE("background token covers exactly the unclaimed pixels") {
  std::mt19937_64 rng(4);
  const LabelMap labels = oracle::random_label_map(32, 24, 7, rng);
  const Image image = oracle::random_image(32, 24, rng);
  const auto manifest = segment_connected_components(labels);
  const auto t = tokenize(image, manifest, 8);
  REQUIRE(t.tokens.size() == manifest.masks.size() + 1);
  const auto& bg = t.tokens.back();
  CHECK(bg.is_background);
  std::int64_t zeros = std::count(labels.labels.begin(), labels.labels.end(), 0);
  CHECK(bg.geometry[4] == static_cast<float>(static_cast<double>(zeros) / (32.0 * 24.0)));
  for (int k = 0; k < 4; ++k) CHECK(bg.geometry[k] == -1.0f);
}

TEST_CASE("300 masks: first 195 kept and the rest fold into the background") {
  const LabelMap labels = oracle::block_grid(300, 20);
  std::mt19937_64 rng(5);
  const Image image = oracle::random_image(labels.width, labels.height, rng);
  const auto manifest = segment_connected_components(labels);
  REQUIRE(manifest.masks.size() == 300);
  const auto t = tokenize(image, manifest, 4);
  CHECK(t.tokens.size() == 196);
  CHECK(t.segment_count() == 195);

  // Set-union oracle: background = complement of the union of the kept masks.
  Bitmap expected(labels.width, labels.height);
  std::fill(expected.bits.begin(), expected.bits.end(), 1);
  for (int k = 0; k < 195; ++k) {
    const Bitmap b = mask_bitmap(manifest.masks[static_cast<std::size_t>(k)]);
    for (std::size_t i = 0; i < b.bits.size(); ++i)
      if (b.bits[i]) expected.bits[i] = 0;
  }
  CHECK(background_residual({labels.width, labels.height},
                            std::span(manifest.masks.data(), 195)) == expected);
}

TEST_CASE("manifest size must match the image") {
  const Image img(4, 4);
  SegmentManifest m;
  m.image_size = {5, 4};
  CHECK_THROWS_AS(tokenize(img, m, 4), ContractError);
}

TEST_CASE("token cache round trip") {
  std::mt19937_64 rng(6);
  const auto labels = oracle::random_label_map(20, 20, 5, rng);
  const auto t = tokenize(oracle::random_image(20, 20, rng), segment_connected_components(labels, "c"), 4);
  const std::string text = write_token_cache(t);
  CHECK(read_token_cache(text) == t);
  CHECK(write_token_cache(read_token_cache(text)) == text);
  CHECK_THROWS_AS(read_token_cache("SVITTOKENS 1\nimage c 4 1\ntoken 0 0 1 2\n"), FormatError);
}
