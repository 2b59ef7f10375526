#include "svit/explain.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "svit/error.hpp"

namespace svit {

std::vector<double> importance_from_gradient(std::span<const double> gradient,
                                             std::span<const double> embedding,
                                             std::size_t width) {
  if (width == 0 || gradient.size() != embedding.size() || gradient.size() % width != 0) {
    throw DimensionError("importance: gradient and embedding must be equal-sized [rows, width]");
  }
  std::vector<double> scores(gradient.size() / width);
  for (std::size_t i = 0; i < scores.size(); ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < width; ++j) acc += gradient[i * width + j] * embedding[i * width + j];
    scores[i] = std::max(0.0, acc / static_cast<double>(width));
  }
  return scores;
}

template <typename T>
std::vector<double> position_importance(const Model<T>& model, const EmbeddedTokens<T>& emb,
                                        int class_index) {
  const int classes = model.config().num_classes;
  if (class_index < 0 || class_index >= classes) {
    throw ContractError("class " + std::to_string(class_index) + " outside [0," +
                        std::to_string(classes) + ")");
  }
  // Frozen copy so attribution never touches the caller's parameter gradients.
  Model<T> frozen = model.template cast<T>();
  frozen.set_trainable(false);
  EmbeddedTokens<T> leaf = emb;
  leaf.embeddings = emb.embeddings.detach();
  leaf.embeddings.set_requires_grad(true);
  const Tensor<T> logits = frozen.forward(leaf);
  backward(element(logits, static_cast<std::size_t>(class_index)));

  const std::size_t width = static_cast<std::size_t>(model.config().embed_dim);
  const std::size_t rows = emb.length;
  const std::vector<T> grad = leaf.embeddings.grad();
  std::vector<double> g(rows * width), e(rows * width);
  for (std::size_t k = 0; k < rows * width; ++k) {
    g[k] = static_cast<double>(grad[k]);
    e[k] = static_cast<double>(leaf.embeddings.data()[k]);
  }
  return importance_from_gradient(g, e, width);
}

template <typename T>
ImportanceMap token_importance(const Model<T>& model, const TokenizedImage& tokens,
                               int class_index) {
  const TokenizedImage batch[] = {tokens};
  const EmbeddedTokens<T> emb = model.embed_svit(batch);
  const std::vector<double> per_position = position_importance(model, emb, class_index);
  ImportanceMap map;
  map.class_index = class_index;
  map.image_id = tokens.image_id;
  map.class_token_score = per_position[0];
  map.scores.assign(per_position.begin() + 1, per_position.end());
  long next_mask = 0;
  for (const auto& t : tokens.tokens) map.token_to_mask.push_back(t.is_background ? -1 : next_mask++);
  return map;
}

template std::vector<double> position_importance<float>(const Model<float>&,
                                                        const EmbeddedTokens<float>&, int);
template std::vector<double> position_importance<double>(const Model<double>&,
                                                         const EmbeddedTokens<double>&, int);
template ImportanceMap token_importance<float>(const Model<float>&, const TokenizedImage&, int);
template ImportanceMap token_importance<double>(const Model<double>&, const TokenizedImage&, int);

std::array<float, 3> heat_color(double t) {
  static constexpr std::array<std::array<float, 3>, 5> stops = {{
      {0.0f, 0.0f, 1.0f},  // blue
      {0.0f, 1.0f, 0.0f},  // green
      {1.0f, 1.0f, 0.0f},  // yellow
      {1.0f, 0.5f, 0.0f},  // orange
      {1.0f, 0.0f, 0.0f},  // red
  }};
  t = std::clamp(t, 0.0, 1.0) * 4.0;
  const auto lo = std::min<std::size_t>(static_cast<std::size_t>(t), 3);
  const double f = t - static_cast<double>(lo);
  std::array<float, 3> out{};
  for (int c = 0; c < 3; ++c) {
    out[c] = static_cast<float>((1.0 - f) * stops[lo][c] + f * stops[lo + 1][c]);
  }
  return out;
}

Image render_heatmap(const ImportanceMap& importance, const Image& image,
                     const SegmentManifest& manifest) {
  if (importance.scores.size() != importance.token_to_mask.size()) {
    throw ContractError("heatmap: importance map has inconsistent token bookkeeping");
  }
  double lo = 0.0, hi = 0.0;
  bool any = false;
  for (std::size_t i = 0; i < importance.scores.size(); ++i) {
    const long m = importance.token_to_mask[i];
    if (m < 0) continue;
    if (static_cast<std::size_t>(m) >= manifest.masks.size()) {
      throw ContractError("heatmap: token " + std::to_string(i) + " refers to missing mask " +
                          std::to_string(m));
    }
    const double s = importance.scores[i];
    lo = any ? std::min(lo, s) : s;
    hi = any ? std::max(hi, s) : s;
    any = true;
  }
  Image out = image;
  if (!any || hi <= 0.0) return out;
  for (std::size_t i = 0; i < importance.scores.size(); ++i) {
    const long m = importance.token_to_mask[i];
    if (m < 0) continue;
    const double t = hi > lo ? (importance.scores[i] - lo) / (hi - lo) : 0.5;
    const auto color = heat_color(t);
    for (const Run& r : manifest.masks[static_cast<std::size_t>(m)].runs) {
      for (int x = r.col_start; x < r.col_start + r.length; ++x) {
        for (int c = 0; c < 3; ++c) {
          out.at(x, r.row, c) =
              (1.0f - kHeatmapAlpha) * image.at(x, r.row, c) + kHeatmapAlpha * color[c];
        }
      }
    }
  }
  return out;
}

std::string importance_table(const ImportanceMap& importance) {
  std::vector<std::size_t> order(importance.scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return importance.scores[a] > importance.scores[b];
  });
  std::string out;
  char buf[64];
  for (std::size_t i : order) {
    std::snprintf(buf, sizeof buf, "%zu %.9g\n", i, importance.scores[i]);
    out += buf;
  }
  return out;
}

}  // namespace svit
