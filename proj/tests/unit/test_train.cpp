#include "doctest.h"
#include "svit/error.hpp"
#include "svit/train.hpp"

using namespace svit;

namespace {

ModelConfig small_model(TokenMode mode = TokenMode::svit) {
  ModelConfig m;
  m.mode = mode;
  m.patch_size = 4;
  m.embed_dim = 16;
  m.depth = 1;
  m.heads = 2;
  m.mlp_ratio = 2;
  return m;
}

Dataset small_data(std::size_t n_train = 48, std::size_t n_test = 24) {
  SyntheticSceneSpec spec;
  spec.image_size = 56;
  spec.seed = 2;
  return gen_dataset(spec, n_train, n_test);
}

}  // namespace

TEST_CASE("zero learning rate leaves weights unchanged") {
  const auto d = small_data(16, 0);
  TrainConfig cfg;
  cfg.adam.lr = 0.0;
  cfg.epochs = 1;
  cfg.batch_size = 8;
  const Model<float> init(small_model(), cfg.seed);
  const auto r = train(small_model(), cfg, d.train);
  CHECK(write_checkpoint(r.model) == write_checkpoint(init));
  REQUIRE(r.metrics.epochs.size() == 1);
  CHECK_FALSE(r.metrics.epochs[0].has_validation);
}

TEST_CASE("svit fits a small training set") {
  const auto d = small_data();
  TrainConfig cfg;
  cfg.adam.lr = 3e-3;
  cfg.epochs = 15;
  cfg.batch_size = 8;
  const auto r = train(small_model(), cfg, d.train, d.test);
  CHECK(r.metrics.epochs.front().train_loss > r.metrics.epochs.back().train_loss);
  CHECK(evaluate(r.model, d.train).accuracy >= 0.9);
}

TEST_CASE("training is reproducible, with and without augmentation") {
  const auto d = small_data(24, 8);
  for (bool augment : {false, true}) {
    for (auto mode : {TokenMode::svit, TokenMode::vit}) {
      TrainConfig cfg;
      cfg.epochs = 2;
      cfg.batch_size = 8;
      cfg.augment = augment;
      cfg.seed = 5;
      const auto a = train(small_model(mode), cfg, d.train, d.test);
      const auto b = train(small_model(mode), cfg, d.train, d.test);
      CHECK(write_checkpoint(a.model) == write_checkpoint(b.model));
      CHECK(a.metrics.to_text() == b.metrics.to_text());
      cfg.seed = 6;
      const auto c = train(small_model(mode), cfg, d.train, d.test);
      CHECK(write_checkpoint(a.model) != write_checkpoint(c.model));
    }
  }
}

TEST_CASE("early stop on validation accuracy") {
  const auto d = small_data(24, 12);
  TrainConfig cfg;
  cfg.epochs = 5;
  cfg.batch_size = 8;
  cfg.stop_at_accuracy = 1e-9;
  const auto r = train(small_model(), cfg, d.train, d.test);
  CHECK(r.metrics.epochs.size() == 1);
}

TEST_CASE("probe training changes only the head") {
  const auto d = small_data(16, 0);
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.batch_size = 8;
  cfg.probe = true;
  cfg.adam.lr = 1e-2;
  const Model<float> init(small_model(), 3);
  const auto before = checkpoint_tensor_bytes(write_checkpoint(init));
  const auto r = train_model(init.cast<float>(), cfg, d.train);
  const auto after = checkpoint_tensor_bytes(write_checkpoint(r.model));
  for (const auto& [name, bytes] : before) {
    CAPTURE(name);
    if (name.rfind("head.", 0) == 0) {
      CHECK(after.at(name) != bytes);
    } else {
      CHECK(after.at(name) == bytes);
    }
  }
}

TEST_CASE("evaluate contract") {
  const Model<float> model(small_model(), 1);
  CHECK_THROWS_AS(evaluate(model, std::span<const Sample>{}), ContractError);
  auto d = small_data(3, 0);
  d.train[0].label = 7;
  CHECK_THROWS_AS(evaluate(model, d.train), ContractError);
  d.train[0].label = 0;
  const auto r = evaluate(model, d.train);
  CHECK(r.count == 3);
  CHECK(r.accuracy >= 0.0);
  CHECK(r.accuracy <= 1.0);
}

TEST_CASE("metrics text") {
  Metrics m;
  EpochMetrics e;
  e.epoch = 0;
  e.train_loss = 1.5;
  e.train_accuracy = 0.25;
  e.seconds = 3.0;
  m.epochs.push_back(e);
  CHECK(m.to_text() == "epoch 0 train_loss 1.5 train_acc 0.25\n");
  CHECK(m.to_text(true) == "epoch 0 train_loss 1.5 train_acc 0.25 seconds 3.000\n");
}
