#pragma once

// Token-level gradient attribution.
//
// For class c with logit y_c and the embedding T_i of token i as it enters
// the encoder (patch projection plus geometry embedding), the score is
//
//   I_i = ReLU( mean_j( dy_c/dT_ij * T_ij ) )
//
// Heatmaps tint each segment's pixels along a blue-green-yellow-orange-red
// ramp after min-max normalizing the segment scores.

#include <array>
#include <span>
#include <string>
#include <vector>

#include "svit/image.hpp"
#include "svit/model.hpp"
#include "svit/segmenter.hpp"
#include "svit/tokenizer.hpp"

namespace svit {

struct ImportanceMap {
  std::vector<double> scores;      // one per token of the tokenized image
  std::vector<long> token_to_mask; // manifest mask index, -1 for the background token
  double class_token_score = 0.0;
  int class_index = 0;
  std::string image_id;
};

// I_i = ReLU(mean_j(grad_ij * emb_ij)) over rows of `embedding` ([rows, N]).
std::vector<double> importance_from_gradient(std::span<const double> gradient,
                                             std::span<const double> embedding,
                                             std::size_t width);

// Raw per-position scores (class token first) for the first sequence of `emb`.
template <typename T>
std::vector<double> position_importance(const Model<T>& model, const EmbeddedTokens<T>& emb,
                                        int class_index);

template <typename T>
ImportanceMap token_importance(const Model<T>& model, const TokenizedImage& tokens,
                               int class_index);

// Ramp position t in [0,1] -> RGB.
std::array<float, 3> heat_color(double t);

inline constexpr float kHeatmapAlpha = 0.5f;

Image render_heatmap(const ImportanceMap& importance, const Image& image,
                     const SegmentManifest& manifest);

// "token_index score" lines, highest score first.
std::string importance_table(const ImportanceMap& importance);

}  // namespace svit
