#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "doctest.h"
#include "gradcases.hpp"
#include "svit/error.hpp"
#include "svit/model.hpp"

using namespace svit;

namespace {

double max_abs_diff(const Tensor<float>& a, const Tensor<float>& b, std::size_t row_a = 0,
                    std::size_t row_b = 0) {
  const std::size_t c = a.dim(1);
  double d = 0.0;
  for (std::size_t j = 0; j < c; ++j) {
    d = std::max(d, static_cast<double>(std::abs(a.data()[row_a * c + j] - b.data()[row_b * c + j])));
  }
  return d;
}

}  // namespace

TEST_CASE("config validation") {
  ModelConfig c;
  CHECK_NOTHROW(c.validate());
  c.heads = 5;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = ModelConfig{};
  c.mode = TokenMode::vit;
  c.token_capacity = 197;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = ModelConfig{};
  c.mode = TokenMode::vit;
  c.patch_size = 8;
  CHECK(c.vit_image_side() == 112);
  const auto big = ModelConfig::paper_scale(TokenMode::svit, 16, 10);
  CHECK(big.embed_dim == 768);
  CHECK(big.depth == 12);
  CHECK(big.heads == 12);
}

TEST_CASE("padding does not change a sequence's logits") {
  const auto batch = oracle::tiny_token_batch(4, 21);
  REQUIRE(batch[0].tokens.size() != batch[1].tokens.size());
  const Model<float> model(oracle::tiny_model_config(), 1);
  const auto both = model.forward(model.embed_svit(batch));
  for (std::size_t i = 0; i < 2; ++i) {
    const auto alone = model.forward(model.embed_svit(std::span(&batch[i], 1)));
    CHECK(max_abs_diff(both, alone, i, 0) < 1e-5);
  }
}

TEST_CASE("svit logits ignore segment order") {
  auto batch = oracle::tiny_token_batch(4, 22);
  const Model<float> model(oracle::tiny_model_config(), 2);
  const auto before = model.forward(model.embed_svit(std::span(&batch[1], 1)));
  auto& tokens = batch[1].tokens;
  std::mt19937_64 rng(3);
  std::shuffle(tokens.begin(), tokens.end() - 1, rng);
  std::reverse(tokens.begin(), tokens.end());
  const auto after = model.forward(model.embed_svit(std::span(&batch[1], 1)));
  CHECK(max_abs_diff(before, after) < 1e-5);
}

TEST_CASE("vit logits depend on patch order") {
  ModelConfig cfg = oracle::tiny_model_config();
  cfg.mode = TokenMode::vit;
  const Model<float> model(cfg, 4);
  std::mt19937_64 rng(5);
  const Image img = oracle::random_image(cfg.vit_image_side(), cfg.vit_image_side(), rng);
  std::vector<std::vector<Image>> seqs{grid_patches(img, cfg.patch_size)};
  const auto before = model.forward(model.embed_vit_patches(seqs));
  std::shuffle(seqs[0].begin(), seqs[0].end(), rng);
  const auto after = model.forward(model.embed_vit_patches(seqs));
  CHECK(max_abs_diff(before, after) > 1e-6);
  CHECK_THROWS_AS(model.embed_vit(std::vector<Image>{Image(10, 10)}), ConfigError);
}

TEST_CASE("more than 196 tokens is rejected") {
  TokenizedImage t;
  t.patch_size = 4;
  SegmentToken tok;
  tok.patch = Image(4, 4);
  t.tokens.assign(197, tok);
  const Model<float> model(oracle::tiny_model_config(), 1);
  CHECK_THROWS_AS(model.embed_svit(std::span(&t, 1)), ContractError);
}

TEST_CASE("linear probe trains only the head") {
  Model<float> model(oracle::tiny_model_config(), 6);
  const auto head = model.linear_probe_mode();
  std::size_t values = 0;
  for (const auto& t : head) values += t.numel();
  CHECK(values == 16u * 3u + 3u);
  CHECK(model.trainable().size() == 2);
}

TEST_CASE("parameter layout") {
  const Model<float> model(oracle::tiny_model_config(), 7);
  CHECK(model.param("cls_token").numel() == 16);
  CHECK(model.param("geom.fc1.weight").shape() == Shape{5, 16});
  CHECK(model.param("blocks.1.attn.q.weight").shape() == Shape{16, 16});
  CHECK(model.param("blocks.0.mlp.fc1.weight").shape() == Shape{16, 32});
  CHECK(model.param("head.weight").shape() == Shape{16, 3});
  CHECK_THROWS_AS(model.param("nope"), ContractError);
}

TEST_CASE("non-finite activations name the layer") {
  Model<float> model(oracle::tiny_model_config(), 8);
  model.param("blocks.1.mlp.fc2.bias").data()[0] = std::numeric_limits<float>::quiet_NaN();
  const auto batch = oracle::tiny_token_batch(4, 9);
  try {
    model.forward(model.embed_svit(batch));
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("layer 1") != std::string::npos);
  }
}

TEST_CASE("checkpoint round trip and cast") {
  const Model<float> model(oracle::tiny_model_config(), 10);
  const std::string bytes = write_checkpoint(model);
  CHECK(bytes.rfind("SVITCKPT 1\n", 0) == 0);
  const Model<float> back = read_checkpoint(bytes);
  CHECK(write_checkpoint(back) == bytes);
  CHECK(write_checkpoint(model.cast<double>().cast<float>()) == bytes);
  CHECK_THROWS_AS(read_checkpoint(bytes.substr(0, bytes.size() - 3)), FormatError);
  CHECK_THROWS_AS(read_checkpoint("SVITCKPT 2\n"), FormatError);
  const auto parts = checkpoint_tensor_bytes(bytes);
  CHECK(parts.at("head.bias").size() == 3 * sizeof(float));
}

TEST_CASE("same seed, same weights") {
  const auto a = write_checkpoint(Model<float>(oracle::tiny_model_config(), 11));
  const auto b = write_checkpoint(Model<float>(oracle::tiny_model_config(), 11));
  const auto c = write_checkpoint(Model<float>(oracle::tiny_model_config(), 12));
  CHECK(a == b);
  CHECK(a != c);
}
