// Acceptance suite: one PASS/FAIL line per criterion.
//
//   svit_acceptance            run all nine
//   svit_acceptance 3 5        run a subset
//
// Criteria 4 and 8 reuse the models trained by 6 and 7 when those ran in the
// same process, and train their own otherwise.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "gradcases.hpp"
#include "oracles.hpp"
#include "svit/augment.hpp"
#include "svit/dataset.hpp"
#include "svit/explain.hpp"
#include "svit/train.hpp"

using namespace svit;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

void note(const std::string& s) {
  std::fprintf(stderr, "  %s\n", s.c_str());
  std::fflush(stderr);
}

// ---------------------------------------------------------------- shared models

// Desk-scale learning setup.
SyntheticSceneSpec desk_spec() {
  SyntheticSceneSpec s;
  s.image_size = 64;
  s.rule = LabelRule::multiset;
  s.seed = 2024;
  return s;
}

ModelConfig desk_model() {
  ModelConfig m;
  m.mode = TokenMode::svit;
  m.patch_size = 16;
  m.embed_dim = 64;
  m.depth = 4;
  m.heads = 4;
  m.num_classes = 3;
  return m;
}

// Scale probe setup: two objects of one kind per 32x32 scene, so the label is
// the shape alone; P=4 gives the grid baseline 8x8 patches. At 2x the largest
// object still fits the frame.
constexpr int kProbePatch = 4;
constexpr int kProbeTrain = 600;
constexpr int kProbeTest = 300;
constexpr int kProbeEpochs = 25;
constexpr double kProbeLr = 1e-3;
constexpr int kProbeBatch = 16;

SyntheticSceneSpec probe_spec(int seed) {
  SyntheticSceneSpec s;
  s.image_size = 8 * kProbePatch;
  s.objects_min = 2;
  s.objects_max = 2;
  s.scale_min = 0.20;
  s.scale_max = 0.35;
  s.seed = 500 + static_cast<std::uint64_t>(seed);
  return s;
}

ModelConfig probe_model(TokenMode mode) {
  ModelConfig m;
  m.mode = mode;
  m.patch_size = kProbePatch;
  m.embed_dim = 32;
  m.depth = 2;
  m.heads = 4;
  m.mlp_ratio = 4;
  m.num_classes = 3;
  return m;
}

TrainConfig probe_train(int seed) {
  TrainConfig t;
  t.adam.lr = kProbeLr;
  t.batch_size = kProbeBatch;
  t.epochs = kProbeEpochs;
  t.seed = static_cast<std::uint64_t>(seed);
  return t;
}

struct Shared {
  std::optional<Model<float>> desk_svit;
  std::optional<Dataset> desk_data;
  std::optional<Model<float>> probe_vit;
  std::optional<Dataset> probe_data;
};

Shared shared;

// ---------------------------------------------------------------- 1

Outcome gradient_correctness() {
  const auto t0 = Clock::now();
  double worst_double = 0.0, worst_float = 0.0;
  std::string worst_name;
  for (const auto& c : oracle::op_cases()) {
    const auto r = oracle::check_gradients(c.f_double, c.f_float, c.inputs);
    if (r.double_error > worst_double || r.float_error > worst_float) worst_name = c.name;
    worst_double = std::max(worst_double, r.double_error);
    worst_float = std::max(worst_float, r.float_error);
  }
  const auto model = oracle::model_gradcheck(3);
  const double elapsed = seconds_since(t0);
  const bool ok = worst_double < 1e-5 && worst_float < 1e-3 && model.double_error < 1e-5 &&
                  model.float_error < 1e-3 && elapsed < 120.0;
  return {ok, "ops max rel err double " + fmt("%.2e", worst_double) + " float " +
                  fmt("%.2e", worst_float) + " (" + worst_name + "); depth-2 N=16 model double " +
                  fmt("%.2e", model.double_error) + " float " + fmt("%.2e", model.float_error) +
                  "; limits 1e-05 / 1e-03; " + fmt("%.1f", elapsed) + " s < 120 s"};
}

// ---------------------------------------------------------------- 2

Outcome attribution_oracle() {
  double worst = 0.0;
  std::size_t clipped = 0, clipped_exact = 0, positive = 0;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const auto r = oracle::attribution_check(seed);
    worst = std::max(worst, r.rel_error);
    clipped += r.clipped;
    clipped_exact += r.clipped_exact;
    positive += r.positive;
  }
  const bool ok = worst < 1e-3 && clipped > 0 && clipped_exact == clipped && positive > 0;
  return {ok, "10 triples, max rel err " + fmt("%.2e", worst) + " < 1e-03; clipped positions " +
                  std::to_string(clipped_exact) + "/" + std::to_string(clipped) +
                  " exactly 0; positive positions " + std::to_string(positive)};
}

// ---------------------------------------------------------------- 3

Outcome tokenizer_contracts() {
  std::mt19937_64 rng(303);
  std::size_t conserved = 0, bounded = 0, sentinel = 0, truncated_cases = 0;
  std::size_t max_tokens = 0;
  constexpr int kImages = 1000;
  for (int n = 0; n < kImages; ++n) {
    const int w = 16 + static_cast<int>(rng() % 81), h = 16 + static_cast<int>(rng() % 81);
    const int shapes = 1 + static_cast<int>(rng() % 300);
    // Every other image uses small shapes so many survive as separate masks.
    const LabelMap labels = oracle::random_label_map(w, h, shapes, rng, n % 2 ? 2 : 0);
    const Image image = oracle::random_image(w, h, rng);
    const auto manifest = segment_connected_components(labels);
    const auto t = tokenize(image, manifest, 8);
    const std::size_t kept = std::min<std::size_t>(manifest.masks.size(), kMaxSegmentTokens);
    if (manifest.masks.size() > kMaxSegmentTokens) ++truncated_cases;

    // Every pixel belongs to exactly one kept mask or to the background token.
    std::vector<int> cover(static_cast<std::size_t>(w) * h, 0);
    std::int64_t kept_pixels = 0;
    for (std::size_t k = 0; k < kept; ++k) {
      kept_pixels += manifest.masks[k].pixel_count;
      for (const Run& r : manifest.masks[k].runs)
        for (int x = r.col_start; x < r.col_start + r.length; ++x)
          ++cover[static_cast<std::size_t>(r.row) * w + x];
    }
    const Bitmap residual = background_residual({w, h}, std::span(manifest.masks.data(), kept));
    std::int64_t residual_pixels = 0;
    bool exact = true;
    for (std::size_t i = 0; i < cover.size(); ++i) {
      residual_pixels += residual.bits[i];
      exact = exact && (cover[i] + residual.bits[i] == 1);
    }
    const auto& bg = t.tokens.back();
    exact = exact && kept_pixels + residual_pixels == static_cast<std::int64_t>(w) * h &&
            bg.geometry[4] == static_cast<float>(static_cast<double>(residual_pixels) /
                                                 (static_cast<double>(w) * h));
    for (std::size_t k = 0; k < kept; ++k) {
      exact = exact && t.tokens[k].geometry[4] ==
                           static_cast<float>(static_cast<double>(manifest.masks[k].pixel_count) /
                                              (static_cast<double>(w) * h));
    }
    conserved += exact;
    bounded += t.tokens.size() <= static_cast<std::size_t>(kTokenCapacity) &&
               t.tokens.size() == kept + 1;
    sentinel += bg.is_background && bg.geometry[0] == -1.0f && bg.geometry[1] == -1.0f &&
                bg.geometry[2] == -1.0f && bg.geometry[3] == -1.0f;
    max_tokens = std::max(max_tokens, t.tokens.size());
  }

  const LabelMap grid = oracle::block_grid(200, 20);
  const auto m200 = segment_connected_components(grid);
  const auto t200 = tokenize(oracle::random_image(grid.width, grid.height, rng), m200, 8);
  const bool two_hundred = m200.masks.size() == 200 && t200.tokens.size() == 196 &&
                           t200.segment_count() == 195 && t200.tokens.back().is_background;

  const bool ok = conserved == kImages && bounded == kImages && sentinel == kImages && two_hundred;
  return {ok, "1000 images: conservation " + std::to_string(conserved) + "/1000, count <= 196 " +
                  std::to_string(bounded) + "/1000 (max " + std::to_string(max_tokens) + ", " +
                  std::to_string(truncated_cases) + " truncated), sentinel -1 " +
                  std::to_string(sentinel) + "/1000; 200 masks -> " +
                  std::to_string(t200.segment_count()) + " segment + " +
                  std::to_string(t200.tokens.size() - t200.segment_count()) + " background"};
}

// ---------------------------------------------------------------- 5

Outcome augmentation_contract() {
  std::mt19937_64 gen(505);
  std::vector<TokenizedImage> images;
  for (int i = 0; i < 20; ++i) {
    const auto labels = oracle::random_label_map(64, 64, 10 + i * 8, gen);
    images.push_back(tokenize(oracle::random_image(64, 64, gen), segment_connected_components(labels), 8));
  }

  AugmentConfig zero;
  zero.max_perc = 0.0;
  bool identity = true;
  for (int i = 0; i < 200; ++i) {
    Rng rng(derive_seed(1, static_cast<std::uint64_t>(i), 0));
    identity = identity && augment_segments(images[static_cast<std::size_t>(i) % images.size()], zero, rng) ==
                               images[static_cast<std::size_t>(i) % images.size()];
  }

  constexpr int kDraws = 10000;
  AugmentConfig cfg;  // max_perc 0.25
  bool unique = true, no_background = true, count_rule = true;
  std::vector<double> percs;
  for (int i = 0; i < kDraws; ++i) {
    const auto& img = images[static_cast<std::size_t>(i) % images.size()];
    Rng rng(derive_seed(2, static_cast<std::uint64_t>(i), 0));
    AugmentTrace trace;
    augment_segments(img, cfg, rng, &trace);
    std::set<std::size_t> s(trace.selected.begin(), trace.selected.end());
    unique = unique && s.size() == trace.selected.size();
    for (std::size_t k : trace.selected) no_background = no_background && !img.tokens[k].is_background;
    count_rule = count_rule &&
                 trace.selected.size() ==
                     static_cast<std::size_t>(std::floor(static_cast<double>(img.segment_count()) * trace.perc_samp));
    percs.push_back(trace.perc_samp);
  }
  const double d_perc = oracle::ks_uniform_statistic(percs, 0.0, cfg.max_perc);
  const double p_perc = oracle::ks_pvalue(d_perc, percs.size());

  // Selected fraction with enough candidates that floor() is negligible.
  std::vector<double> fractions;
  constexpr std::size_t kCandidates = 20000;
  for (int i = 0; i < kDraws; ++i) {
    Rng rng(derive_seed(3, static_cast<std::uint64_t>(i), 0));
    const auto trace = select_segments(kCandidates, cfg.max_perc, rng);
    fractions.push_back(static_cast<double>(trace.selected.size()) / kCandidates);
  }
  const double d_frac = oracle::ks_uniform_statistic(fractions, 0.0, cfg.max_perc);
  const double p_frac = oracle::ks_pvalue(d_frac, fractions.size());

  Rng jrng(506);
  const Geometry mid{0.4f, 0.45f, 0.55f, 0.6f, 0.5f};
  double sum = 0.0, sq = 0.0;
  constexpr int kJitter = 100000;
  for (int i = 0; i < kJitter; ++i) {
    const Geometry j = jitter_geometry(mid, false, cfg.geom_noise_var, jrng);
    for (int k = 0; k < 5; ++k) {
      const double d = static_cast<double>(j[static_cast<std::size_t>(k)]) - mid[static_cast<std::size_t>(k)];
      sum += d;
      sq += d * d;
    }
  }
  const double n = 5.0 * kJitter;
  const double var = sq / n - (sum / n) * (sum / n);
  const bool var_ok = std::abs(var - 0.001) <= 0.05 * 0.001;

  const bool ok = identity && unique && no_background && count_rule && p_perc > 0.01 &&
                  p_frac > 0.01 && var_ok;
  return {ok, std::string("identity at max_perc=0 ") + (identity ? "yes" : "NO") + "; unique " +
                  (unique ? "yes" : "NO") + ", background excluded " + (no_background ? "yes" : "NO") +
                  ", count = floor(len*perc) " + (count_rule ? "yes" : "NO") + " over 10^4 draws; KS p " +
                  fmt("%.3f", p_perc) + " (perc) " + fmt("%.3f", p_frac) + " (fraction) > 0.01; jitter var " +
                  fmt("%.6f", var) + " in 0.001 +/- 5%"};
}

// ---------------------------------------------------------------- 6

Outcome desk_learning() {
  const auto t0 = Clock::now();
  const Dataset data = gen_dataset(desk_spec(), 2000, 500);
  const double gen_seconds = seconds_since(t0);
  TrainConfig cfg;
  cfg.adam.lr = 1e-3;
  cfg.batch_size = 32;
  cfg.epochs = 30;
  cfg.stop_at_accuracy = 0.9;
  cfg.seed = 6;
  const auto t1 = Clock::now();
  auto result = train(desk_model(), cfg, data.train, data.test, [](const EpochMetrics& m) {
    note("desk epoch " + std::to_string(m.epoch) + " test acc " + fmt("%.3f", m.val_accuracy));
  });
  const double train_seconds = seconds_since(t1);
  const EvalResult test = evaluate(result.model, data.test);
  std::map<int, int> counts;
  for (const auto& s : data.test) ++counts[s.label];
  const double majority =
      static_cast<double>(std::max({counts[0], counts[1], counts[2]})) / static_cast<double>(data.test.size());
  const std::size_t epochs = result.metrics.epochs.size();
  shared.desk_svit = std::move(result.model);
  shared.desk_data = data;
  const double total = gen_seconds + train_seconds;
  const bool ok = test.accuracy >= 0.9 && epochs <= 30 && total < 600.0;
  return {ok, "test acc " + fmt("%.3f", test.accuracy) + " >= 0.90 after " + std::to_string(epochs) +
                  " epoch(s) (limit 30); " + fmt("%.1f", total) + " s < 600 s (data " +
                  fmt("%.1f", gen_seconds) + " s); majority-class baseline " + fmt("%.3f", majority)};
}

// ---------------------------------------------------------------- 7

Outcome scale_probe() {
  double drop[2] = {0.0, 0.0};
  std::string per_seed;
  int clamped = 0;
  for (int seed = 0; seed < 3; ++seed) {
    const SyntheticSceneSpec spec = probe_spec(seed);
    Dataset data = gen_dataset(spec, kProbeTrain, kProbeTest);
    const auto shifted = gen_shifted_testset(spec, kProbeTest, {2.0, 0, 0}, &clamped);
    for (int m = 0; m < 2; ++m) {
      const TokenMode mode = m == 0 ? TokenMode::svit : TokenMode::vit;
      const auto t0 = Clock::now();
      auto r = train(probe_model(mode), probe_train(seed), data.train);
      const double base = evaluate(r.model, data.test).accuracy;
      const double moved = evaluate(r.model, shifted).accuracy;
      drop[m] += (base - moved) / 3.0;
      const std::string name(to_string(mode));
      note("probe seed " + std::to_string(seed) + " " + name + " base " + fmt("%.3f", base) +
           " shifted " + fmt("%.3f", moved) + " (" + fmt("%.0f", seconds_since(t0)) + " s)");
      per_seed += " " + name + "[" + fmt("%.2f", base) + "->" + fmt("%.2f", moved) + "]";
      if (mode == TokenMode::vit && seed == 0) {
        shared.probe_vit = std::move(r.model);
        shared.probe_data = std::move(data);
        data = *shared.probe_data;
      }
    }
  }
  const bool ok = drop[0] < drop[1];
  return {ok, "mean drop (base - 2x scaled) svit " + fmt("%.3f", drop[0]) + " < vit " +
                  fmt("%.3f", drop[1]) + " over 3 seeds; clamped objects " +
                  std::to_string(clamped) + ";" + per_seed};
}

// ---------------------------------------------------------------- 4

Outcome permutation_differential() {
  if (!shared.desk_svit) desk_learning();
  if (!shared.probe_vit) {
    const SyntheticSceneSpec spec = probe_spec(0);
    shared.probe_data = gen_dataset(spec, kProbeTrain, kProbeTest);
    shared.probe_vit = train(probe_model(TokenMode::vit), probe_train(0), shared.probe_data->train).model;
  }
  const Model<float>& svit_model = *shared.desk_svit;
  const Model<float>& vit_model = *shared.probe_vit;

  std::mt19937_64 rng(404);
  double svit_max = 0.0, vit_min = 1e30;
  constexpr int kSamples = 50;
  for (int i = 0; i < kSamples; ++i) {
    const auto& s = shared.desk_data->test[static_cast<std::size_t>(i)];
    TokenizedImage t = tokenize(s.image, s.manifest, svit_model.config().patch_size);
    const auto before = svit_model.forward(svit_model.embed_svit(std::span(&t, 1)));
    std::shuffle(t.tokens.begin(), t.tokens.end() - 1, rng);
    const auto after = svit_model.forward(svit_model.embed_svit(std::span(&t, 1)));
    for (std::size_t c = 0; c < before.numel(); ++c) {
      svit_max = std::max(svit_max, static_cast<double>(std::abs(before.data()[c] - after.data()[c])));
    }

    const auto& v = shared.probe_data->test[static_cast<std::size_t>(i)];
    const int side = vit_model.config().vit_image_side();
    std::vector<std::vector<Image>> seq{
        grid_patches(resize_bilinear(v.image, side, side), vit_model.config().patch_size)};
    const auto vb = vit_model.forward(vit_model.embed_vit_patches(seq));
    std::shuffle(seq[0].begin(), seq[0].end(), rng);
    const auto va = vit_model.forward(vit_model.embed_vit_patches(seq));
    double d = 0.0;
    for (std::size_t c = 0; c < vb.numel(); ++c) {
      d = std::max(d, static_cast<double>(std::abs(vb.data()[c] - va.data()[c])));
    }
    vit_min = std::min(vit_min, d);
  }
  const bool ok = svit_max < 1e-5 && vit_min > 1e-3;
  return {ok, "50 trained-model inputs: svit max |dlogit| " + fmt("%.2e", svit_max) +
                  " < 1e-05; vit min over inputs of max |dlogit| " + fmt("%.2e", vit_min) + " > 1e-03"};
}

// ---------------------------------------------------------------- 8

Outcome probe_contract() {
  if (!shared.desk_svit) desk_learning();
  const std::string before = write_checkpoint(*shared.desk_svit);
  TrainConfig cfg;
  cfg.probe = true;
  cfg.epochs = 1;
  cfg.adam.lr = 1e-3;
  cfg.seed = 8;
  const std::span<const Sample> subset(shared.desk_data->train.data(), 256);
  const auto r = train_model(read_checkpoint(before), cfg, subset);
  const std::string after = write_checkpoint(r.model);
  const auto a = checkpoint_tensor_bytes(before);
  const auto b = checkpoint_tensor_bytes(after);
  std::size_t encoder_same = 0, encoder_total = 0, head_changed = 0;
  for (const auto& [name, bytes] : a) {
    if (name == "head.weight" || name == "head.bias") {
      head_changed += b.at(name) != bytes;
    } else {
      ++encoder_total;
      encoder_same += b.at(name) == bytes;
    }
  }
  const bool ok = encoder_same == encoder_total && head_changed == 2;
  return {ok, "encoder tensors byte-identical " + std::to_string(encoder_same) + "/" +
                  std::to_string(encoder_total) + "; head tensors changed " +
                  std::to_string(head_changed) + "/2"};
}

// ---------------------------------------------------------------- 9

Outcome determinism() {
  SyntheticSceneSpec spec;
  spec.image_size = 56;
  spec.seed = 909;
  const Dataset data = gen_dataset(spec, 96, 32);
  const auto dir = std::filesystem::temp_directory_path() / "svit_acceptance_determinism";
  std::filesystem::create_directories(dir);
  std::size_t identical = 0, runs = 0;
  for (const TokenMode mode : {TokenMode::svit, TokenMode::vit}) {
    ModelConfig m = probe_model(mode);
    TrainConfig cfg;
    cfg.epochs = 2;
    cfg.batch_size = 16;
    cfg.augment = true;
    cfg.seed = 99;
    std::string ckpt[2], metrics[2];
    for (int run = 0; run < 2; ++run) {
      const auto r = train(m, cfg, data.train, data.test);
      const auto path = dir / (std::string(to_string(mode)) + std::to_string(run) + ".ckpt");
      save_checkpoint(path, r.model);
      write_file(dir / "metrics.txt", r.metrics.to_text());
      ckpt[run] = read_file(path);
      metrics[run] = read_file(dir / "metrics.txt");
    }
    ++runs;
    identical += ckpt[0] == ckpt[1] && metrics[0] == metrics[1];
  }
  std::filesystem::remove_all(dir);
  return {identical == runs, "svit and vit with augmentation, 2 epochs each: byte-identical checkpoint and metrics files for " +
                                 std::to_string(identical) + "/" + std::to_string(runs) + " configs"};
}

}  // namespace

int main(int argc, char** argv) {
  const std::map<int, std::pair<const char*, std::function<Outcome()>>> criteria = {
      {1, {"gradient correctness", gradient_correctness}},
      {2, {"attribution oracle", attribution_oracle}},
      {3, {"tokenizer contracts", tokenizer_contracts}},
      {4, {"permutation invariance differential", permutation_differential}},
      {5, {"segment augmentation contract", augmentation_contract}},
      {6, {"desk-scale learning", desk_learning}},
      {7, {"directional scale-invariance probe", scale_probe}},
      {8, {"linear-probe contract", probe_contract}},
      {9, {"determinism", determinism}},
  };
  std::vector<int> selected;
  for (int i = 1; i < argc; ++i) selected.push_back(std::atoi(argv[i]));
  if (selected.empty()) selected = {1, 2, 3, 5, 6, 7, 4, 8, 9};

  std::map<int, Outcome> results;
  for (int id : selected) {
    const auto it = criteria.find(id);
    if (it == criteria.end()) {
      std::fprintf(stderr, "unknown criterion %d\n", id);
      return 2;
    }
    std::fprintf(stderr, "running %d: %s\n", id, it->second.first);
    const auto t0 = Clock::now();
    try {
      results[id] = it->second.second();
    } catch (const std::exception& e) {
      results[id] = {false, std::string("exception: ") + e.what()};
    }
    note("done in " + fmt("%.1f", seconds_since(t0)) + " s");
  }
  int failed = 0;
  for (const auto& [id, outcome] : results) {
    std::printf("%s %d %s: %s\n", outcome.pass ? "PASS" : "FAIL", id, criteria.at(id).first,
                outcome.detail.c_str());
    failed += !outcome.pass;
  }
  std::fflush(stdout);
  return failed == 0 ? 0 : 1;
}
