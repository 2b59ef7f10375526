// svit command-line tool.
//
// Exit codes: 0 ok, 1 other failure, 2 config or usage error, 3 data error,
// 4 numeric failure.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "svit/augment.hpp"
#include "svit/config.hpp"
#include "svit/dataset.hpp"
#include "svit/error.hpp"
#include "svit/explain.hpp"
#include "svit/image.hpp"
#include "svit/segmenter.hpp"
#include "svit/tokenizer.hpp"
#include "svit/train.hpp"

namespace fs = std::filesystem;
using namespace svit;

namespace {

enum Exit { kOk = 0, kOther = 1, kConfig = 2, kData = 3, kNumeric = 4 };

bool has_extension(const fs::path& p, const char* ext) {
  std::string e = p.extension().string();
  for (auto& c : e) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return e == ext;
}

// PGM inputs are label maps; PPM inputs are read as flat-colored regions.
LabelMap read_regions(const fs::path& path) {
  if (has_extension(path, ".pgm")) return read_pgm(path);
  return labels_from_colors(read_ppm(path));
}

void print_eval(const char* name, const EvalResult& r) {
  std::printf("%s accuracy %.6f loss %.6f count %zu\n", name, r.accuracy, r.loss, r.count);
}

struct SegmentArgs {
  fs::path input, output;
  std::string id;
};

int run_segment(const SegmentArgs& a) {
  const std::string id = a.id.empty() ? a.input.stem().string() : a.id;
  const auto manifest = segment_connected_components(read_regions(a.input), id);
  save_manifest(a.output, manifest);
  std::printf("%zu masks -> %s\n", manifest.masks.size(), a.output.string().c_str());
  return kOk;
}

struct TrainArgs {
  fs::path config, output, metrics;
};

// Keys beyond the model and optimizer ones: data (dataset directory,
// required), init (checkpoint to continue from), checkpoint, metrics.
int run_train(const TrainArgs& a) {
  const KeyValueConfig cfg = KeyValueConfig::load(a.config);
  const fs::path data_dir = cfg.get_string("data");
  const std::string init = cfg.get_string("init", "");
  fs::path out = a.output.empty() ? fs::path(cfg.get_string("checkpoint", "model.ckpt")) : a.output;
  fs::path metrics_path = a.metrics.empty() ? fs::path(cfg.get_string("metrics", "")) : a.metrics;
  const TrainConfig train_cfg = train_config_from(cfg);
  const Dataset data = load_dataset(data_dir);
  const ModelConfig model_cfg = model_config_from(cfg, data.spec.num_classes());
  cfg.check_all_used();

  auto report = [](const EpochMetrics& m) {
    std::printf("epoch %d train_loss %.4f train_acc %.4f", m.epoch, m.train_loss, m.train_accuracy);
    if (m.has_validation) std::printf(" val_loss %.4f val_acc %.4f", m.val_loss, m.val_accuracy);
    std::printf(" %.1fs\n", m.seconds);
    std::fflush(stdout);
  };
  TrainResult result = init.empty()
                           ? train(model_cfg, train_cfg, data.train, data.test, report)
                           : train_model(load_checkpoint(init), train_cfg, data.train, data.test, report);
  save_checkpoint(out, result.model);
  if (!metrics_path.empty()) write_file(metrics_path, result.metrics.to_text(true));
  std::printf("checkpoint -> %s\n", out.string().c_str());
  return kOk;
}

struct EvalArgs {
  fs::path ckpt, data;
  std::string split = "test";
};

int run_eval(const EvalArgs& a) {
  const Model<float> model = load_checkpoint(a.ckpt);
  if (fs::exists(a.data / "spec.txt")) {
    const Dataset data = load_dataset(a.data);
    if (a.split == "train" || a.split == "all") print_eval("train", evaluate(model, data.train));
    if (a.split == "test" || a.split == "all") print_eval("test", evaluate(model, data.test));
  } else {
    print_eval(a.data.filename().string().c_str(), evaluate(model, load_split(a.data)));
  }
  return kOk;
}

struct ExplainArgs {
  fs::path ckpt, image, manifest, heatmap = "heatmap.ppm", table;
  int class_index = 0;
};

int run_explain(const ExplainArgs& a) {
  const Model<float> model = load_checkpoint(a.ckpt);
  const Image image = read_ppm(a.image);
  const SegmentManifest manifest = load_manifest(a.manifest);
  const TokenizedImage tokens = tokenize(image, manifest, model.config().patch_size);
  const ImportanceMap map = token_importance(model, tokens, a.class_index);
  write_ppm(a.heatmap, render_heatmap(map, image, manifest));
  const std::string table = importance_table(map);
  if (a.table.empty()) {
    std::fputs(table.c_str(), stdout);
  } else {
    write_file(a.table, table);
  }
  return kOk;
}

struct PreviewArgs {
  fs::path image, manifest, output = "preview.ppm";
  int patch_size = 16;
  int columns = 16;
  double max_perc = 0.25;
  double perc = -1.0;
  std::uint64_t seed = 0;
  std::uint64_t epoch = 0;
};

int run_preview(const PreviewArgs& a) {
  const Image image = read_ppm(a.image);
  const SegmentManifest manifest =
      a.manifest.empty() ? segment_connected_components(labels_from_colors(image), a.image.stem().string())
                         : load_manifest(a.manifest);
  const TokenizedImage before = tokenize(image, manifest, a.patch_size);
  AugmentConfig cfg;
  cfg.max_perc = a.max_perc;
  Rng rng(derive_seed(a.seed, 0, a.epoch));
  AugmentTrace trace;
  const TokenizedImage after = a.perc >= 0.0 ? augment_segments_at(before, cfg, a.perc, rng, &trace)
                                             : augment_segments(before, cfg, rng, &trace);
  write_ppm(a.output, token_contact_sheet(before, after, a.columns));
  std::printf("perc %.4f, %zu of %zu segments augmented ->", trace.perc_samp, trace.selected.size(),
              before.segment_count());
  for (std::size_t k : trace.selected) std::printf(" %zu", k);
  std::printf("\n%s\n", a.output.string().c_str());
  return kOk;
}

struct GenArgs {
  fs::path spec, output;
  std::size_t n_train = 1000, n_test = 200;
  double scale_factor = 1.0;
  int shift_x = 0, shift_y = 0;
};

int run_gen(const GenArgs& a) {
  const KeyValueConfig cfg = KeyValueConfig::load(a.spec);
  const SyntheticSceneSpec spec = scene_spec_from(cfg);
  cfg.check_all_used();
  const SceneShift shift{a.scale_factor, a.shift_x, a.shift_y};
  Dataset data;
  data.spec = spec;
  int clamped = 0;
  if (shift.scale_factor == 1.0 && shift.shift_x == 0 && shift.shift_y == 0) {
    data = gen_dataset(spec, a.n_train, a.n_test);
  } else {
    data.test = gen_shifted_testset(spec, a.n_test, shift, &clamped);
  }
  save_dataset(a.output, data);
  if (clamped > 0) std::fprintf(stderr, "warning: %d objects clamped to fit the frame\n", clamped);
  std::printf("%zu train, %zu test -> %s\n", data.train.size(), data.test.size(),
              a.output.string().c_str());
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Semantic-segment vision transformer toolkit"};
  app.require_subcommand(1);

  SegmentArgs seg;
  auto* segment = app.add_subcommand("segment", "Write a manifest of 4-connected regions");
  segment->add_option("input", seg.input, "Label map (.pgm) or flat-colored image (.ppm)")
      ->required()
      ->check(CLI::ExistingFile);
  segment->add_option("-o,--output", seg.output, "Manifest path")->required();
  segment->add_option("--id", seg.id, "Image id (default: input stem)");

  TrainArgs tr;
  auto* train_cmd = app.add_subcommand("train", "Train a model from a key = value config");
  train_cmd->add_option("--config", tr.config)->required()->check(CLI::ExistingFile);
  train_cmd->add_option("-o,--output", tr.output, "Checkpoint path (overrides `checkpoint`)");
  train_cmd->add_option("--metrics", tr.metrics, "Metrics path (overrides `metrics`)");

  EvalArgs ev;
  auto* eval = app.add_subcommand("eval", "Top-1 accuracy of a checkpoint");
  eval->add_option("--ckpt", ev.ckpt)->required()->check(CLI::ExistingFile);
  eval->add_option("--data", ev.data, "Dataset directory or one split directory")
      ->required()
      ->check(CLI::ExistingDirectory);
  eval->add_option("--split", ev.split)->check(CLI::IsMember({"train", "test", "all"}));

  ExplainArgs ex;
  auto* explain = app.add_subcommand("explain", "Token-gradient heatmap and importance table");
  explain->add_option("--ckpt", ex.ckpt)->required()->check(CLI::ExistingFile);
  explain->add_option("--image", ex.image)->required()->check(CLI::ExistingFile);
  explain->add_option("--manifest", ex.manifest)->required()->check(CLI::ExistingFile);
  explain->add_option("--class", ex.class_index)->required();
  explain->add_option("-o,--output", ex.heatmap, "Heatmap PPM");
  explain->add_option("--table", ex.table, "Importance table path (default: stdout)");

  PreviewArgs pv;
  auto* preview = app.add_subcommand("augment-preview", "Before/after contact sheet of segment augmentation");
  preview->add_option("--image", pv.image)->required()->check(CLI::ExistingFile);
  preview->add_option("--manifest", pv.manifest, "Default: regions of the image colors")
      ->check(CLI::ExistingFile);
  preview->add_option("-o,--output", pv.output);
  preview->add_option("--patch-size", pv.patch_size);
  preview->add_option("--columns", pv.columns);
  preview->add_option("--max-perc", pv.max_perc);
  preview->add_option("--perc", pv.perc, "Fixed fraction instead of a random draw");
  preview->add_option("--seed", pv.seed);
  preview->add_option("--epoch", pv.epoch);

  GenArgs gd;
  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic scene dataset");
  gen->add_option("--spec", gd.spec)->required()->check(CLI::ExistingFile);
  gen->add_option("-o,--output", gd.output)->required();
  gen->add_option("--train", gd.n_train);
  gen->add_option("--test", gd.n_test);
  gen->add_option("--scale-factor", gd.scale_factor, "Shifted test set only");
  gen->add_option("--shift-x", gd.shift_x);
  gen->add_option("--shift-y", gd.shift_y);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kConfig;
  }

  try {
    if (*segment) return run_segment(seg);
    if (*train_cmd) return run_train(tr);
    if (*eval) return run_eval(ev);
    if (*explain) return run_explain(ex);
    if (*preview) return run_preview(pv);
    if (*gen) return run_gen(gd);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return kNumeric;
  } catch (const Error& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kData;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kOther;
  }
  return kOther;
}
