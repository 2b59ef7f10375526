#pragma once

// Segment-level augmentation for semantic tokens and whole-image
// augmentation for the grid baseline.
//
// Per call, a fraction perc ~ U(0, max_perc) is drawn, floor(len * perc)
// distinct non-background tokens are chosen, and each chosen token gets a
// horizontal flip (with probability hflip_prob), a random resized crop back
// to P x P, and Gaussian noise on its geometry. `flip`, `crop` and `pos`
// switch the three operations on or off for ablations.

#include <cstdint>
#include <random>
#include <utility>
#include <vector>

#include "svit/image.hpp"
#include "svit/tokenizer.hpp"

namespace svit {

using Rng = std::mt19937_64;
using Range = std::pair<double, double>;

struct AugmentConfig {
  double max_perc = 0.25;
  Range crop_scale{0.9, 1.0};
  Range crop_ratio{0.75, 1.33};
  double hflip_prob = 0.5;
  double geom_noise_var = 0.001;
  bool flip = true;
  bool crop = true;
  bool pos = true;
  std::uint64_t rng_seed = 0;

  void validate() const;  // throws ConfigError
};

struct BaselineAugConfig {
  Range crop_scale{0.08, 1.0};
  Range crop_ratio{0.75, 1.33};
  double hflip_prob = 0.5;
  bool flip = true;

  void validate() const;
};

// What one augment_segments call did.
struct AugmentTrace {
  double perc_samp = 0.0;
  std::vector<std::size_t> selected;  // token indices, sampling order
};

// Stream seed for one (image, epoch) pair, independent of visiting order.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t image_index, std::uint64_t epoch);

// `count` distinct values from [0, n), uniformly.
std::vector<std::size_t> sample_unique(std::size_t n, std::size_t count, Rng& rng);

// Draws perc ~ U(0, max_perc) and floor(candidates * perc) distinct indices.
AugmentTrace select_segments(std::size_t candidates, double max_perc, Rng& rng);

TokenizedImage augment_segments(const TokenizedImage& tokens, const AugmentConfig& cfg, Rng& rng,
                                AugmentTrace* trace = nullptr);
// Same, with the sampled fraction fixed by the caller.
TokenizedImage augment_segments_at(const TokenizedImage& tokens, const AugmentConfig& cfg,
                                   double perc_samp, Rng& rng, AugmentTrace* trace = nullptr);

Image hflip_patch(const Image& patch);

// Random resized crop returned at the input size. Falls back to the input
// after 10 attempts that do not fit.
Image crop_resize_patch(const Image& patch, Range scale_range, Range ratio_range, Rng& rng);

// Adds N(0, var) to all five entries, then clamps x/y to [0,1] and size to
// (0,1]. Background tokens come back unchanged.
Geometry jitter_geometry(const Geometry& geometry, bool is_background, double var, Rng& rng);

Image augment_whole_image(const Image& image, const BaselineAugConfig& cfg, Rng& rng);

// Two rows of token patches per line (before above after), `columns` tokens wide.
Image token_contact_sheet(const TokenizedImage& before, const TokenizedImage& after,
                          int columns = 16);

}  // namespace svit
