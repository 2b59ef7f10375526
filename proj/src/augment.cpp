#include "svit/augment.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "svit/error.hpp"

namespace svit {

namespace {

void check_range(Range r, const char* what, bool positive) {
  if (!(r.first <= r.second) || (positive && !(r.first > 0.0))) {
    throw ConfigError(std::string(what) + " range must be ordered" +
                      (positive ? " and positive" : ""));
  }
}

double uniform(Rng& rng, double lo, double hi) {
  if (lo == hi) return lo;
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

bool coin(Rng& rng, double p) {
  if (p <= 0.0) return false;
  if (p >= 1.0) return true;
  return std::bernoulli_distribution(p)(rng);
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

}  // namespace

void AugmentConfig::validate() const {
  if (!(max_perc >= 0.0 && max_perc <= 1.0)) throw ConfigError("max_perc must lie in [0,1]");
  check_range(crop_scale, "crop_scale", true);
  check_range(crop_ratio, "crop_ratio", true);
  if (!(hflip_prob >= 0.0 && hflip_prob <= 1.0)) throw ConfigError("hflip_prob must lie in [0,1]");
  if (!(geom_noise_var >= 0.0)) throw ConfigError("geom_noise_var must be non-negative");
}

void BaselineAugConfig::validate() const {
  check_range(crop_scale, "crop_scale", true);
  check_range(crop_ratio, "crop_ratio", true);
  if (!(hflip_prob >= 0.0 && hflip_prob <= 1.0)) throw ConfigError("hflip_prob must lie in [0,1]");
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t image_index, std::uint64_t epoch) {
  return splitmix64(splitmix64(splitmix64(seed) ^ image_index) ^ (epoch * 0xD1B54A32D192ED03ull));
}

std::vector<std::size_t> sample_unique(std::size_t n, std::size_t count, Rng& rng) {
  if (count > n) throw ContractError("sample_unique: cannot draw more values than available");
  std::vector<std::size_t> pool(n);
  std::iota(pool.begin(), pool.end(), std::size_t{0});
  // partial Fisher-Yates
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t j = std::uniform_int_distribution<std::size_t>(i, n - 1)(rng);
    std::swap(pool[i], pool[j]);
  }
  pool.resize(count);
  return pool;
}

namespace {

std::vector<std::size_t> choose(std::size_t candidates, double perc, Rng& rng) {
  const auto count = static_cast<std::size_t>(std::floor(static_cast<double>(candidates) * perc));
  return sample_unique(candidates, std::min(count, candidates), rng);
}

}  // namespace

AugmentTrace select_segments(std::size_t candidates, double max_perc, Rng& rng) {
  AugmentTrace trace;
  trace.perc_samp = uniform(rng, 0.0, max_perc);
  trace.selected = choose(candidates, trace.perc_samp, rng);
  return trace;
}

Image hflip_patch(const Image& patch) {
  Image out(patch.width, patch.height);
  for (int y = 0; y < patch.height; ++y)
    for (int x = 0; x < patch.width; ++x)
      for (int c = 0; c < 3; ++c) out.at(x, y, c) = patch.at(patch.width - 1 - x, y, c);
  return out;
}

namespace {

// Random-resized-crop window; zero-sized when nothing fits.
struct Window {
  int x = 0, y = 0, w = 0, h = 0;
};

Window sample_window(int width, int height, Range scale, Range ratio, Rng& rng) {
  const double area = static_cast<double>(width) * height;
  const double log_lo = std::log(ratio.first), log_hi = std::log(ratio.second);
  for (int attempt = 0; attempt < 10; ++attempt) {
    const double target = area * uniform(rng, scale.first, scale.second);
    const double aspect = std::exp(uniform(rng, log_lo, log_hi));
    const int w = static_cast<int>(std::lround(std::sqrt(target * aspect)));
    const int h = static_cast<int>(std::lround(std::sqrt(target / aspect)));
    if (w >= 1 && h >= 1 && w <= width && h <= height) {
      const int x = std::uniform_int_distribution<int>(0, width - w)(rng);
      const int y = std::uniform_int_distribution<int>(0, height - h)(rng);
      return {x, y, w, h};
    }
  }
  return {};
}

Image crop_to(const Image& image, const Window& win) {
  Image out(win.w, win.h);
  for (int y = 0; y < win.h; ++y)
    for (int x = 0; x < win.w; ++x)
      for (int c = 0; c < 3; ++c) out.at(x, y, c) = image.at(win.x + x, win.y + y, c);
  return out;
}

}  // namespace

Image crop_resize_patch(const Image& patch, Range scale_range, Range ratio_range, Rng& rng) {
  check_range(scale_range, "crop_scale", true);
  check_range(ratio_range, "crop_ratio", true);
  const Window win = sample_window(patch.width, patch.height, scale_range, ratio_range, rng);
  if (win.w == 0) return patch;
  if (win.w == patch.width && win.h == patch.height) return patch;
  return resize_bilinear(crop_to(patch, win), patch.width, patch.height);
}

Geometry jitter_geometry(const Geometry& geometry, bool is_background, double var, Rng& rng) {
  if (is_background || var <= 0.0) return geometry;
  std::normal_distribution<double> noise(0.0, std::sqrt(var));
  Geometry out = geometry;
  for (std::size_t i = 0; i < 4; ++i) {
    out[i] = static_cast<float>(std::clamp(geometry[i] + noise(rng), 0.0, 1.0));
  }
  constexpr double kMinSize = 1e-6;
  out[4] = static_cast<float>(std::clamp(geometry[4] + noise(rng), kMinSize, 1.0));
  return out;
}

namespace {

std::vector<std::size_t> segment_indices(const TokenizedImage& tokens) {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < tokens.tokens.size(); ++i) {
    if (!tokens.tokens[i].is_background) out.push_back(i);
  }
  return out;
}

// `trace.selected` holds positions in `candidates`; rewritten to token indices.
TokenizedImage apply_selection(const TokenizedImage& tokens, const AugmentConfig& cfg,
                               std::span<const std::size_t> candidates, AugmentTrace& trace,
                               Rng& rng) {
  for (auto& pick : trace.selected) pick = candidates[pick];
  TokenizedImage out = tokens;
  for (std::size_t index : trace.selected) {
    SegmentToken& t = out.tokens[index];
    if (cfg.flip && coin(rng, cfg.hflip_prob)) t.patch = hflip_patch(t.patch);
    if (cfg.crop) t.patch = crop_resize_patch(t.patch, cfg.crop_scale, cfg.crop_ratio, rng);
    if (cfg.pos) t.geometry = jitter_geometry(t.geometry, t.is_background, cfg.geom_noise_var, rng);
  }
  return out;
}

}  // namespace

TokenizedImage augment_segments_at(const TokenizedImage& tokens, const AugmentConfig& cfg,
                                   double perc_samp, Rng& rng, AugmentTrace* trace) {
  cfg.validate();
  const auto candidates = segment_indices(tokens);
  AugmentTrace local;
  local.perc_samp = perc_samp;
  local.selected = choose(candidates.size(), perc_samp, rng);
  TokenizedImage out = apply_selection(tokens, cfg, candidates, local, rng);
  if (trace) *trace = std::move(local);
  return out;
}

TokenizedImage augment_segments(const TokenizedImage& tokens, const AugmentConfig& cfg, Rng& rng,
                                AugmentTrace* trace) {
  cfg.validate();
  const auto candidates = segment_indices(tokens);
  AugmentTrace local = select_segments(candidates.size(), cfg.max_perc, rng);
  TokenizedImage out = apply_selection(tokens, cfg, candidates, local, rng);
  if (trace) *trace = std::move(local);
  return out;
}

Image augment_whole_image(const Image& image, const BaselineAugConfig& cfg, Rng& rng) {
  cfg.validate();
  Image out = image;
  const Window win = sample_window(image.width, image.height, cfg.crop_scale, cfg.crop_ratio, rng);
  if (win.w != 0 && (win.w != image.width || win.h != image.height)) {
    out = resize_bilinear(crop_to(image, win), image.width, image.height);
  }
  if (cfg.flip && coin(rng, cfg.hflip_prob)) out = hflip_patch(out);
  return out;
}

Image token_contact_sheet(const TokenizedImage& before, const TokenizedImage& after, int columns) {
  if (before.tokens.size() != after.tokens.size() || before.patch_size != after.patch_size) {
    throw ContractError("contact sheet needs matching token lists");
  }
  columns = std::max(1, columns);
  const int p = before.patch_size, cell = p + 1;
  const int n = static_cast<int>(before.tokens.size());
  const int cols = std::min(columns, std::max(n, 1));
  const int lines = (n + columns - 1) / columns;
  Image sheet(cols * cell + 1, std::max(lines, 1) * (2 * cell + 2) + 1, 1.0f);
  const auto blit = [&](const Image& patch, int ox, int oy) {
    for (int y = 0; y < p; ++y)
      for (int x = 0; x < p; ++x)
        for (int c = 0; c < 3; ++c) sheet.at(ox + x, oy + y, c) = patch.at(x, y, c);
  };
  for (int i = 0; i < n; ++i) {
    const int ox = (i % columns) * cell + 1;
    const int oy = (i / columns) * (2 * cell + 2) + 1;
    blit(before.tokens[static_cast<std::size_t>(i)].patch, ox, oy);
    blit(after.tokens[static_cast<std::size_t>(i)].patch, ox, oy + cell);
  }
  return sheet;
}

}  // namespace svit
