#pragma once

// Training and evaluation loops for both front-ends.
//
// Each step: (optional augmentation) -> embed -> forward -> cross entropy ->
// backward -> Adam. Shuffling and augmentation draw from streams derived from
// (seed, sample index, epoch), so a run is reproducible bit for bit.

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "svit/augment.hpp"
#include "svit/config.hpp"
#include "svit/dataset.hpp"
#include "svit/model.hpp"

namespace svit {

struct TrainConfig {
  AdamConfig adam{};
  int batch_size = 32;
  int epochs = 10;
  double warmup_epochs = 1.0;  // linear learning-rate warmup
  bool augment = false;
  AugmentConfig segment_aug{};
  BaselineAugConfig image_aug{};
  bool probe = false;  // train only the classification head
  std::uint64_t seed = 0;
  // When positive and validation data is given, stop after the first epoch
  // whose validation accuracy reaches this value.
  double stop_at_accuracy = 0.0;

  // Large-scale settings: batch 2048, 20 epochs.
  static TrainConfig paper_scale();
  void validate() const;  // throws ConfigError
};

struct EpochMetrics {
  int epoch = 0;
  double train_loss = 0.0;
  double train_accuracy = 0.0;
  bool has_validation = false;
  double val_loss = 0.0;
  double val_accuracy = 0.0;
  double seconds = 0.0;
};

struct Metrics {
  std::vector<EpochMetrics> epochs;
  double total_seconds = 0.0;

  // One line per epoch. Wall-clock columns only when asked for, so that
  // identical runs produce identical text.
  std::string to_text(bool include_timing = false) const;
};

struct EvalResult {
  double loss = 0.0;
  double accuracy = 0.0;
  std::size_t count = 0;
};

struct TrainResult {
  Model<float> model;
  Metrics metrics;
};

using EpochCallback = std::function<void(const EpochMetrics&)>;

// Model inputs prepared once per sample: tokens for svit, a resized square
// image for vit.
struct PreparedSet {
  std::vector<TokenizedImage> tokens;
  std::vector<Image> images;
  std::vector<int> labels;
  std::size_t size() const { return labels.size(); }
};

PreparedSet prepare(const ModelConfig& config, std::span<const Sample> samples);

TrainResult train(const ModelConfig& model_config, const TrainConfig& config,
                  std::span<const Sample> train_set, std::span<const Sample> val_set = {},
                  const EpochCallback& on_epoch = {});
// Continues from an existing model (e.g. a linear probe on a checkpoint).
TrainResult train_model(Model<float> model, const TrainConfig& config,
                        std::span<const Sample> train_set, std::span<const Sample> val_set = {},
                        const EpochCallback& on_epoch = {});

// Throws ContractError for an empty set or labels the model cannot emit.
EvalResult evaluate(const Model<float>& model, std::span<const Sample> samples, int batch_size = 64);
EvalResult evaluate_prepared(const Model<float>& model, const PreparedSet& set, int batch_size = 64);

// Logits for a batch slice of a prepared set.
Tensor<float> batch_logits(const Model<float>& model, const PreparedSet& set,
                           std::span<const std::size_t> indices);

// Reads model_* / train_* keys from a flat config (see README for the list).
ModelConfig model_config_from(const KeyValueConfig& cfg, int num_classes);
TrainConfig train_config_from(const KeyValueConfig& cfg);

}  // namespace svit
