#pragma once

// Transformer encoder classifier with two tokenization front-ends.
//
//   svit: token = Linear(flattened P*P*3 patch) + MLP(geometry 5-vector)
//   vit:  token = Linear(grid patch) + learned table[patch index]
//
// A learnable class token is prepended; padded positions are masked out of
// attention with a -1e9 additive bias. Blocks are pre-norm.

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "svit/image.hpp"
#include "svit/tensor.hpp"
#include "svit/tokenizer.hpp"

namespace svit {

enum class TokenMode { svit, vit };

std::string_view to_string(TokenMode mode);
TokenMode parse_token_mode(std::string_view text);

struct ModelConfig {
  TokenMode mode = TokenMode::svit;
  int patch_size = 16;
  int embed_dim = 64;
  int depth = 4;
  int heads = 4;
  int mlp_ratio = 4;
  int token_capacity = kTokenCapacity;
  int num_classes = 3;

  // 12 layers / 12 heads at ViT-Base width.
  static ModelConfig paper_scale(TokenMode mode, int patch_size, int num_classes);

  // Throws ConfigError.
  void validate() const;
  // Patches per side for the vit front-end.
  int grid_side() const;
  // Side length of the square input the vit front-end expects.
  int vit_image_side() const { return grid_side() * patch_size; }
  int patch_values() const { return patch_size * patch_size * 3; }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

template <typename T>
struct EmbeddedTokens {
  Tensor<T> embeddings;             // [batch, length, N]; position 0 is the class token
  std::vector<std::uint8_t> mask;   // [batch * length], 1 = real position
  std::size_t batch = 0;
  std::size_t length = 0;
};

template <typename T>
struct NamedTensor {
  std::string name;
  Tensor<T> tensor;
};

template <typename T>
class Model {
 public:
  Model(ModelConfig config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  std::vector<NamedTensor<T>>& parameters() { return params_; }
  const std::vector<NamedTensor<T>>& parameters() const { return params_; }
  Tensor<T>& param(std::string_view name);
  const Tensor<T>& param(std::string_view name) const;

  EmbeddedTokens<T> embed_svit(std::span<const TokenizedImage> batch) const;
  // Images must be vit_image_side() square.
  EmbeddedTokens<T> embed_vit(std::span<const Image> batch) const;
  // Pre-cut grid patches, one list per image in sequence order; patch i is
  // paired with positional row i.
  EmbeddedTokens<T> embed_vit_patches(std::span<const std::vector<Image>> batch) const;

  // Logits [batch, num_classes]. Throws NumericError naming the layer when
  // activations become non-finite.
  Tensor<T> forward(const EmbeddedTokens<T>& emb) const;

  // Freezes everything except the classification head; returns the head.
  std::vector<Tensor<T>> linear_probe_mode();
  std::vector<Tensor<T>> trainable() const;
  // Sets requires_grad on every parameter.
  void set_trainable(bool on);
  void zero_grad();
  std::size_t parameter_count() const;

  // Same config and values, different scalar type.
  template <typename U>
  Model<U> cast() const;

 private:
  Tensor<T> linear(const Tensor<T>& x, std::string_view prefix) const;
  Tensor<T> affine_norm(const Tensor<T>& x, std::string_view prefix) const;
  EmbeddedTokens<T> assemble(const Tensor<T>& token_rows, std::span<const std::size_t> lengths) const;

  ModelConfig config_;
  std::vector<NamedTensor<T>> params_;
  std::map<std::string, std::size_t, std::less<>> index_;
};

// Cuts a square image into row-major P x P grid patches.
std::vector<Image> grid_patches(const Image& image, int patch_size);

// Checkpoint: "SVITCKPT 1" header, a config record, then per tensor a
// "<name> <rank> <dims...>" line followed by raw little-endian float32 data.
std::string write_checkpoint(const Model<float>& model);
Model<float> read_checkpoint(std::string_view bytes);
void save_checkpoint(const std::filesystem::path& path, const Model<float>& model);
Model<float> load_checkpoint(const std::filesystem::path& path);
// Raw data bytes of every tensor in a checkpoint, keyed by name.
std::map<std::string, std::string> checkpoint_tensor_bytes(std::string_view bytes);

extern template class Model<float>;
extern template class Model<double>;

}  // namespace svit
