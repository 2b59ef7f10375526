#include "svit/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "svit/error.hpp"

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace svit {

TrainConfig TrainConfig::paper_scale() {
  TrainConfig c;
  c.batch_size = 2048;
  c.epochs = 20;
  c.augment = true;
  return c;
}

void TrainConfig::validate() const {
  if (!(adam.lr >= 0.0)) throw ConfigError("lr must be non-negative");
  if (batch_size < 1) throw ConfigError("batch_size must be positive");
  if (epochs < 1) throw ConfigError("epochs must be positive");
  if (!(warmup_epochs >= 0.0)) throw ConfigError("warmup_epochs must be non-negative");
  if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0 && adam.beta2 >= 0.0 && adam.beta2 < 1.0)) {
    throw ConfigError("Adam betas must lie in [0,1)");
  }
  segment_aug.validate();
  image_aug.validate();
}

std::string Metrics::to_text(bool include_timing) const {
  std::string out;
  char buf[256];
  for (const auto& e : epochs) {
    std::snprintf(buf, sizeof buf, "epoch %d train_loss %.9g train_acc %.9g", e.epoch, e.train_loss,
                  e.train_accuracy);
    out += buf;
    if (e.has_validation) {
      std::snprintf(buf, sizeof buf, " val_loss %.9g val_acc %.9g", e.val_loss, e.val_accuracy);
      out += buf;
    }
    if (include_timing) {
      std::snprintf(buf, sizeof buf, " seconds %.3f", e.seconds);
      out += buf;
    }
    out += "\n";
  }
  return out;
}

PreparedSet prepare(const ModelConfig& config, std::span<const Sample> samples) {
  PreparedSet set;
  for (const auto& s : samples) {
    if (s.label < 0 || s.label >= config.num_classes) {
      throw ContractError("sample " + s.id + " has label " + std::to_string(s.label) +
                          " but the model has " + std::to_string(config.num_classes) + " classes");
    }
    if (config.mode == TokenMode::svit) {
      set.tokens.push_back(tokenize(s.image, s.manifest, config.patch_size));
    } else {
      const int side = config.vit_image_side();
      set.images.push_back(s.image.width == side && s.image.height == side
                               ? s.image
                               : resize_bilinear(s.image, side, side));
    }
    set.labels.push_back(s.label);
  }
  return set;
}

namespace {

// Activation buffers are large and short-lived; keeping them on the heap
// instead of mmap/munmap per step removes most of the page-fault cost.
void keep_large_blocks() {
#if defined(__GLIBC__)
  static const bool once = [] {
    mallopt(M_MMAP_THRESHOLD, 512 * 1024 * 1024);
    mallopt(M_TRIM_THRESHOLD, 1024 * 1024 * 1024);
    return true;
  }();
  (void)once;
#endif
}

constexpr std::uint64_t kShuffleStream = 0x5348554646ull;
constexpr std::uint64_t kAugmentStream = 0x4155474dull;

EmbeddedTokens<float> embed_batch(const Model<float>& model, const PreparedSet& set,
                                  std::span<const std::size_t> indices, const TrainConfig* augment,
                                  int epoch) {
  const bool svit_mode = model.config().mode == TokenMode::svit;
  if (svit_mode) {
    std::vector<TokenizedImage> batch;
    batch.reserve(indices.size());
    for (std::size_t i : indices) {
      if (augment) {
        Rng rng(derive_seed(augment->seed ^ kAugmentStream ^ augment->segment_aug.rng_seed, i,
                            static_cast<std::uint64_t>(epoch)));
        batch.push_back(augment_segments(set.tokens[i], augment->segment_aug, rng));
      } else {
        batch.push_back(set.tokens[i]);
      }
    }
    return model.embed_svit(batch);
  }
  std::vector<Image> batch;
  batch.reserve(indices.size());
  for (std::size_t i : indices) {
    if (augment) {
      Rng rng(derive_seed(augment->seed ^ kAugmentStream, i, static_cast<std::uint64_t>(epoch)));
      batch.push_back(augment_whole_image(set.images[i], augment->image_aug, rng));
    } else {
      batch.push_back(set.images[i]);
    }
  }
  return model.embed_vit(batch);
}

std::size_t count_correct(const Tensor<float>& logits, std::span<const int> labels) {
  const std::size_t classes = logits.dim(1);
  std::size_t correct = 0;
  for (std::size_t r = 0; r < labels.size(); ++r) {
    const float* row = logits.data().data() + r * classes;
    const auto best = static_cast<int>(std::max_element(row, row + classes) - row);
    if (best == labels[r]) ++correct;
  }
  return correct;
}

}  // namespace

Tensor<float> batch_logits(const Model<float>& model, const PreparedSet& set,
                           std::span<const std::size_t> indices) {
  return model.forward(embed_batch(model, set, indices, nullptr, 0));
}

EvalResult evaluate_prepared(const Model<float>& model, const PreparedSet& set, int batch_size) {
  if (set.size() == 0) throw ContractError("evaluate: empty dataset");
  if (batch_size < 1) throw ContractError("evaluate: batch size must be positive");
  EvalResult result;
  double loss_sum = 0.0;
  std::size_t correct = 0;
  for (std::size_t start = 0; start < set.size(); start += static_cast<std::size_t>(batch_size)) {
    const std::size_t stop = std::min(set.size(), start + static_cast<std::size_t>(batch_size));
    std::vector<std::size_t> idx(stop - start);
    std::iota(idx.begin(), idx.end(), start);
    std::vector<int> labels;
    for (std::size_t i : idx) labels.push_back(set.labels[i]);
    const Tensor<float> logits = batch_logits(model, set, idx);
    loss_sum += static_cast<double>(cross_entropy(logits.detach(), std::span<const int>(labels)).item()) *
                static_cast<double>(idx.size());
    correct += count_correct(logits, labels);
  }
  result.count = set.size();
  result.loss = loss_sum / static_cast<double>(set.size());
  result.accuracy = static_cast<double>(correct) / static_cast<double>(set.size());
  return result;
}

EvalResult evaluate(const Model<float>& model, std::span<const Sample> samples, int batch_size) {
  if (samples.empty()) throw ContractError("evaluate: empty dataset");
  return evaluate_prepared(model, prepare(model.config(), samples), batch_size);
}

TrainResult train_model(Model<float> model, const TrainConfig& config,
                        std::span<const Sample> train_set, std::span<const Sample> val_set,
                        const EpochCallback& on_epoch) {
  config.validate();
  if (train_set.empty()) throw ContractError("train: empty training set");
  keep_large_blocks();
  const PreparedSet train_data = prepare(model.config(), train_set);
  const PreparedSet val_data = prepare(model.config(), val_set);

  std::vector<Tensor<float>> params = config.probe ? model.linear_probe_mode() : model.trainable();
  AdamState<float> state;
  const std::size_t n = train_data.size();
  const auto bs = static_cast<std::size_t>(config.batch_size);
  const std::size_t steps_per_epoch = (n + bs - 1) / bs;
  const auto warmup_steps =
      static_cast<std::int64_t>(std::llround(config.warmup_epochs * static_cast<double>(steps_per_epoch)));
  std::int64_t global_step = 0;

  Metrics metrics;
  const auto run_start = std::chrono::steady_clock::now();
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const auto epoch_start = std::chrono::steady_clock::now();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffle_rng(derive_seed(config.seed, kShuffleStream, static_cast<std::uint64_t>(epoch)));
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    double loss_sum = 0.0;
    std::size_t correct = 0;
    for (std::size_t step = 0; step < steps_per_epoch; ++step) {
      const std::span<const std::size_t> idx(order.data() + step * bs, std::min(bs, n - step * bs));
      std::vector<int> labels;
      for (std::size_t i : idx) labels.push_back(train_data.labels[i]);

      const EmbeddedTokens<float> emb =
          embed_batch(model, train_data, idx, config.augment ? &config : nullptr, epoch);
      const Tensor<float> logits = model.forward(emb);
      const Tensor<float> loss = cross_entropy(logits, std::span<const int>(labels));
      if (!std::isfinite(loss.item())) {
        throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + " step " +
                           std::to_string(step));
      }
      loss_sum += static_cast<double>(loss.item()) * static_cast<double>(idx.size());
      correct += count_correct(logits, labels);

      model.zero_grad();
      backward(loss);
      AdamConfig step_cfg = config.adam;
      ++global_step;
      if (warmup_steps > 0 && global_step <= warmup_steps) {
        step_cfg.lr *= static_cast<double>(global_step) / static_cast<double>(warmup_steps);
      }
      adam_step<float>(params, state, step_cfg);
    }

    EpochMetrics m;
    m.epoch = epoch;
    m.train_loss = loss_sum / static_cast<double>(n);
    m.train_accuracy = static_cast<double>(correct) / static_cast<double>(n);
    if (val_data.size() > 0) {
      const EvalResult v = evaluate_prepared(model, val_data);
      m.has_validation = true;
      m.val_loss = v.loss;
      m.val_accuracy = v.accuracy;
    }
    m.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - epoch_start).count();
    metrics.epochs.push_back(m);
    if (on_epoch) on_epoch(m);
    if (config.stop_at_accuracy > 0.0 && m.has_validation && m.val_accuracy >= config.stop_at_accuracy) {
      break;
    }
  }
  metrics.total_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - run_start).count();
  return {std::move(model), std::move(metrics)};
}

TrainResult train(const ModelConfig& model_config, const TrainConfig& config,
                  std::span<const Sample> train_set, std::span<const Sample> val_set,
                  const EpochCallback& on_epoch) {
  return train_model(Model<float>(model_config, config.seed), config, train_set, val_set, on_epoch);
}

ModelConfig model_config_from(const KeyValueConfig& cfg, int num_classes) {
  ModelConfig m;
  m.mode = parse_token_mode(cfg.get_string("mode", "svit"));
  m.patch_size = cfg.get_int("patch_size", m.patch_size);
  m.embed_dim = cfg.get_int("embed_dim", m.embed_dim);
  m.depth = cfg.get_int("depth", m.depth);
  m.heads = cfg.get_int("heads", m.heads);
  m.mlp_ratio = cfg.get_int("mlp_ratio", m.mlp_ratio);
  m.token_capacity = cfg.get_int("token_capacity", m.token_capacity);
  m.num_classes = cfg.get_int("num_classes", num_classes);
  m.validate();
  return m;
}

TrainConfig train_config_from(const KeyValueConfig& cfg) {
  TrainConfig t;
  t.adam.lr = cfg.get_double("lr", t.adam.lr);
  t.adam.beta1 = cfg.get_double("beta1", t.adam.beta1);
  t.adam.beta2 = cfg.get_double("beta2", t.adam.beta2);
  t.adam.weight_decay = cfg.get_double("weight_decay", t.adam.weight_decay);
  t.adam.eps = cfg.get_double("adam_eps", t.adam.eps);
  t.batch_size = cfg.get_int("batch_size", t.batch_size);
  t.epochs = cfg.get_int("epochs", t.epochs);
  t.warmup_epochs = cfg.get_double("warmup_epochs", t.warmup_epochs);
  t.augment = cfg.get_bool("augment", t.augment);
  t.probe = cfg.get_bool("probe", t.probe);
  t.seed = cfg.get_u64("seed", t.seed);
  t.stop_at_accuracy = cfg.get_double("stop_at_accuracy", t.stop_at_accuracy);
  auto& a = t.segment_aug;
  a.max_perc = cfg.get_double("max_perc", a.max_perc);
  a.crop_scale = {cfg.get_double("crop_scale_min", a.crop_scale.first),
                  cfg.get_double("crop_scale_max", a.crop_scale.second)};
  a.crop_ratio = {cfg.get_double("crop_ratio_min", a.crop_ratio.first),
                  cfg.get_double("crop_ratio_max", a.crop_ratio.second)};
  a.hflip_prob = cfg.get_double("hflip_prob", a.hflip_prob);
  a.geom_noise_var = cfg.get_double("geom_noise_var", a.geom_noise_var);
  a.flip = cfg.get_bool("aug_flip", a.flip);
  a.crop = cfg.get_bool("aug_crop", a.crop);
  a.pos = cfg.get_bool("aug_pos", a.pos);
  auto& b = t.image_aug;
  b.crop_scale = {cfg.get_double("vit_crop_scale_min", b.crop_scale.first),
                  cfg.get_double("vit_crop_scale_max", b.crop_scale.second)};
  b.crop_ratio = {cfg.get_double("vit_crop_ratio_min", b.crop_ratio.first),
                  cfg.get_double("vit_crop_ratio_max", b.crop_ratio.second)};
  b.hflip_prob = cfg.get_double("vit_hflip_prob", b.hflip_prob);
  t.validate();
  return t;
}

}  // namespace svit
