#include "svit/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <sstream>

#include "svit/error.hpp"

namespace svit {

std::string_view to_string(TokenMode mode) { return mode == TokenMode::svit ? "svit" : "vit"; }

TokenMode parse_token_mode(std::string_view text) {
  if (text == "svit") return TokenMode::svit;
  if (text == "vit") return TokenMode::vit;
  throw ConfigError("unknown mode '" + std::string(text) + "' (expected svit or vit)");
}

ModelConfig ModelConfig::paper_scale(TokenMode mode, int patch_size, int num_classes) {
  ModelConfig c;
  c.mode = mode;
  c.patch_size = patch_size;
  c.embed_dim = 768;
  c.depth = 12;
  c.heads = 12;
  c.num_classes = num_classes;
  return c;
}

void ModelConfig::validate() const {
  const auto require = [](bool ok, const std::string& what) {
    if (!ok) throw ConfigError("model config: " + what);
  };
  require(patch_size >= 1, "patch_size must be positive");
  require(embed_dim >= 1 && heads >= 1, "embed_dim and heads must be positive");
  require(embed_dim % heads == 0, "embed_dim " + std::to_string(embed_dim) +
                                      " not divisible by heads " + std::to_string(heads));
  require(depth >= 0, "depth must be non-negative");
  require(mlp_ratio >= 1, "mlp_ratio must be positive");
  require(token_capacity >= 2, "token_capacity must be at least 2");
  require(num_classes >= 1, "num_classes must be positive");
  if (mode == TokenMode::vit) {
    const int side = static_cast<int>(std::lround(std::sqrt(token_capacity)));
    require(side * side == token_capacity, "vit mode needs a square token_capacity");
  }
}

int ModelConfig::grid_side() const {
  return static_cast<int>(std::lround(std::sqrt(token_capacity)));
}

std::vector<Image> grid_patches(const Image& image, int patch_size) {
  if (patch_size < 1 || image.width % patch_size != 0 || image.height % patch_size != 0) {
    throw ConfigError("grid_patches: " + std::to_string(image.width) + "x" +
                      std::to_string(image.height) + " image is not a multiple of patch size " +
                      std::to_string(patch_size));
  }
  std::vector<Image> out;
  for (int gy = 0; gy < image.height / patch_size; ++gy) {
    for (int gx = 0; gx < image.width / patch_size; ++gx) {
      Image p(patch_size, patch_size);
      for (int y = 0; y < patch_size; ++y)
        for (int x = 0; x < patch_size; ++x)
          for (int c = 0; c < 3; ++c)
            p.at(x, y, c) = image.at(gx * patch_size + x, gy * patch_size + y, c);
      out.push_back(std::move(p));
    }
  }
  return out;
}

// ---------------------------------------------------------------- Model

template <typename T>
Model<T>::Model(ModelConfig config, std::uint64_t seed) : config_(config) {
  config_.validate();
  std::mt19937_64 rng(seed);
  const auto n = static_cast<std::size_t>(config_.embed_dim);
  const auto hidden = n * static_cast<std::size_t>(config_.mlp_ratio);
  const T std_dev = T(0.02);
  const auto weight = [&](std::string name, Shape shape) {
    params_.push_back({std::move(name), Tensor<T>::trunc_normal(std::move(shape), std_dev, rng)});
  };
  const auto fill = [&](std::string name, Shape shape, T value) {
    params_.push_back({std::move(name), Tensor<T>(std::move(shape), value, true)});
  };
  const auto linear = [&](const std::string& prefix, std::size_t in, std::size_t out) {
    weight(prefix + ".weight", {in, out});
    fill(prefix + ".bias", {out}, T(0));
  };
  const auto norm = [&](const std::string& prefix) {
    fill(prefix + ".gamma", {n}, T(1));
    fill(prefix + ".beta", {n}, T(0));
  };

  weight("cls_token", {1, n});
  linear("patch_proj", static_cast<std::size_t>(config_.patch_values()), n);
  if (config_.mode == TokenMode::svit) {
    linear("geom.fc1", 5, n);
    linear("geom.fc2", n, n);
  } else {
    weight("pos_table", {static_cast<std::size_t>(config_.token_capacity), n});
  }
  for (int i = 0; i < config_.depth; ++i) {
    const std::string b = "blocks." + std::to_string(i);
    norm(b + ".ln1");
    linear(b + ".attn.q", n, n);
    linear(b + ".attn.k", n, n);
    linear(b + ".attn.v", n, n);
    linear(b + ".attn.out", n, n);
    norm(b + ".ln2");
    linear(b + ".mlp.fc1", n, hidden);
    linear(b + ".mlp.fc2", hidden, n);
  }
  norm("final_ln");
  linear("head", n, static_cast<std::size_t>(config_.num_classes));
  for (std::size_t i = 0; i < params_.size(); ++i) index_.emplace(params_[i].name, i);
}

template <typename T>
Tensor<T>& Model<T>::param(std::string_view name) {
  const auto it = index_.find(name);
  if (it == index_.end()) throw ContractError("no parameter named '" + std::string(name) + "'");
  return params_[it->second].tensor;
}

template <typename T>
const Tensor<T>& Model<T>::param(std::string_view name) const {
  return const_cast<Model*>(this)->param(name);
}

template <typename T>
Tensor<T> Model<T>::linear(const Tensor<T>& x, std::string_view prefix) const {
  const std::string p(prefix);
  return add(matmul(x, param(p + ".weight")), param(p + ".bias"));
}

template <typename T>
Tensor<T> Model<T>::affine_norm(const Tensor<T>& x, std::string_view prefix) const {
  const std::string p(prefix);
  return add(mul(layer_norm(x, -1), param(p + ".gamma")), param(p + ".beta"));
}

template <typename T>
EmbeddedTokens<T> Model<T>::assemble(const Tensor<T>& token_rows,
                                     std::span<const std::size_t> lengths) const {
  const std::size_t longest = lengths.empty() ? 0 : *std::max_element(lengths.begin(), lengths.end());
  if (longest + 1 > static_cast<std::size_t>(config_.token_capacity) + 1) {
    throw ContractError("sequence of " + std::to_string(longest) + " tokens exceeds capacity " +
                        std::to_string(config_.token_capacity));
  }
  EmbeddedTokens<T> out;
  out.batch = lengths.size();
  out.length = longest + 1;
  // Row 0 of `rows` is the class token, then every image's tokens in order.
  const Tensor<T> rows = concat_rows(param("cls_token"), token_rows);
  std::vector<long> index;
  index.reserve(out.batch * out.length);
  out.mask.reserve(out.batch * out.length);
  long offset = 1;
  for (const std::size_t len : lengths) {
    index.push_back(0);
    out.mask.push_back(1);
    for (std::size_t i = 0; i < longest; ++i) {
      const bool real = i < len;
      index.push_back(real ? offset + static_cast<long>(i) : -1);
      out.mask.push_back(real ? 1 : 0);
    }
    offset += static_cast<long>(len);
  }
  const auto n = static_cast<std::size_t>(config_.embed_dim);
  out.embeddings = reshape(gather_rows(rows, index), {out.batch, out.length, n});
  return out;
}

template <typename T>
EmbeddedTokens<T> Model<T>::embed_svit(std::span<const TokenizedImage> batch) const {
  if (config_.mode != TokenMode::svit) throw ConfigError("embed_svit on a vit-mode model");
  const auto values = static_cast<std::size_t>(config_.patch_values());
  std::vector<T> patches;
  std::vector<T> geometry;
  std::vector<std::size_t> lengths;
  for (const auto& image : batch) {
    if (image.tokens.size() > static_cast<std::size_t>(config_.token_capacity)) {
      throw ContractError("image '" + image.image_id + "' has " +
                          std::to_string(image.tokens.size()) + " tokens, capacity is " +
                          std::to_string(config_.token_capacity));
    }
    for (const auto& token : image.tokens) {
      if (token.patch.width != config_.patch_size || token.patch.height != config_.patch_size) {
        throw ConfigError("token patch is " + std::to_string(token.patch.width) + "x" +
                          std::to_string(token.patch.height) + ", model expects " +
                          std::to_string(config_.patch_size));
      }
      patches.insert(patches.end(), token.patch.pixels.begin(), token.patch.pixels.end());
      geometry.insert(geometry.end(), token.geometry.begin(), token.geometry.end());
    }
    lengths.push_back(image.tokens.size());
  }
  const std::size_t total = lengths.empty() ? 0 : patches.size() / values;
  const auto n = static_cast<std::size_t>(config_.embed_dim);
  Tensor<T> token_rows(Shape{0, n});
  if (total > 0) {
    const Tensor<T> x(Shape{total, values}, std::move(patches));
    const Tensor<T> g(Shape{total, 5}, std::move(geometry));
    const Tensor<T> seg_emb = linear(x, "patch_proj");
    const Tensor<T> pos_emb = linear(gelu(linear(g, "geom.fc1")), "geom.fc2");
    token_rows = add(seg_emb, pos_emb);
  }
  return assemble(token_rows, lengths);
}

template <typename T>
EmbeddedTokens<T> Model<T>::embed_vit(std::span<const Image> batch) const {
  std::vector<std::vector<Image>> cut;
  const int side = config_.vit_image_side();
  for (const auto& image : batch) {
    if (image.width != side || image.height != side) {
      throw ConfigError("vit input must be " + std::to_string(side) + "x" + std::to_string(side) +
                        ", got " + std::to_string(image.width) + "x" + std::to_string(image.height));
    }
    cut.push_back(grid_patches(image, config_.patch_size));
  }
  return embed_vit_patches(cut);
}

template <typename T>
EmbeddedTokens<T> Model<T>::embed_vit_patches(std::span<const std::vector<Image>> batch) const {
  if (config_.mode != TokenMode::vit) throw ConfigError("embed_vit on an svit-mode model");
  const auto values = static_cast<std::size_t>(config_.patch_values());
  std::vector<T> patches;
  std::vector<long> positions;
  std::vector<std::size_t> lengths;
  for (const auto& seq : batch) {
    if (seq.size() != static_cast<std::size_t>(config_.token_capacity)) {
      throw ConfigError("vit expects " + std::to_string(config_.token_capacity) +
                        " patches per image, got " + std::to_string(seq.size()));
    }
    for (std::size_t i = 0; i < seq.size(); ++i) {
      if (seq[i].width != config_.patch_size || seq[i].height != config_.patch_size) {
        throw ConfigError("vit patch size mismatch");
      }
      patches.insert(patches.end(), seq[i].pixels.begin(), seq[i].pixels.end());
      positions.push_back(static_cast<long>(i));
    }
    lengths.push_back(seq.size());
  }
  const std::size_t total = positions.size();
  const Tensor<T> x(Shape{total, values}, std::move(patches));
  const Tensor<T> rows = add(linear(x, "patch_proj"), gather_rows(param("pos_table"), positions));
  return assemble(rows, lengths);
}

namespace {

template <typename T>
void check_finite(const Tensor<T>& t, const std::string& where) {
  for (T v : t.data()) {
    if (!std::isfinite(v)) throw NumericError("non-finite activation in " + where);
  }
}

}  // namespace

template <typename T>
Tensor<T> Model<T>::forward(const EmbeddedTokens<T>& emb) const {
  const std::size_t b = emb.batch, s = emb.length;
  const auto n = static_cast<std::size_t>(config_.embed_dim);
  const auto heads = static_cast<std::size_t>(config_.heads);
  if (emb.embeddings.shape() != Shape{b, s, n} || emb.mask.size() != b * s || s == 0) {
    throw ContractError("forward: embeddings " + shape_str(emb.embeddings.shape()) +
                        " do not match batch " + std::to_string(b) + " x length " +
                        std::to_string(s) + " x width " + std::to_string(n));
  }
  for (std::size_t i = 0; i < b; ++i) {
    if (!emb.mask[i * s]) throw ContractError("forward: class token position is masked");
  }
  // Additive key mask shared by all heads and query positions.
  std::vector<T> bias(b * heads * s * s, T(0));
  for (std::size_t i = 0; i < b; ++i) {
    for (std::size_t h = 0; h < heads; ++h) {
      T* block = bias.data() + ((i * heads + h) * s) * s;
      for (std::size_t q = 0; q < s; ++q) {
        for (std::size_t k = 0; k < s; ++k) {
          if (!emb.mask[i * s + k]) block[q * s + k] = T(-1e9);
        }
      }
    }
  }
  const Tensor<T> mask_bias(Shape{b * heads, s, s}, std::move(bias));
  const T inv_sqrt_d = T(1) / std::sqrt(static_cast<T>(n / heads));

  Tensor<T> x = reshape(emb.embeddings, {b * s, n});
  check_finite(x, "embedding");
  for (int layer = 0; layer < config_.depth; ++layer) {
    const std::string p = "blocks." + std::to_string(layer);
    const Tensor<T> h = affine_norm(x, p + ".ln1");
    const Tensor<T> q = split_heads(linear(h, p + ".attn.q"), b, heads);
    const Tensor<T> k = split_heads(linear(h, p + ".attn.k"), b, heads);
    const Tensor<T> v = split_heads(linear(h, p + ".attn.v"), b, heads);
    const Tensor<T> scores = add(scale(bmm(q, k, true), inv_sqrt_d), mask_bias);
    const Tensor<T> context = merge_heads(bmm(softmax(scores, -1), v), b);
    x = add(x, linear(context, p + ".attn.out"));
    const Tensor<T> h2 = affine_norm(x, p + ".ln2");
    x = add(x, linear(gelu(linear(h2, p + ".mlp.fc1")), p + ".mlp.fc2"));
    check_finite(x, "layer " + std::to_string(layer));
  }
  const Tensor<T> normed = affine_norm(x, "final_ln");
  std::vector<long> cls_rows(b);
  for (std::size_t i = 0; i < b; ++i) cls_rows[i] = static_cast<long>(i * s);
  const Tensor<T> logits = linear(gather_rows(normed, cls_rows), "head");
  check_finite(logits, "classification head");
  return logits;
}

template <typename T>
std::vector<Tensor<T>> Model<T>::linear_probe_mode() {
  std::vector<Tensor<T>> head;
  for (auto& p : params_) {
    const bool is_head = p.name == "head.weight" || p.name == "head.bias";
    p.tensor.set_requires_grad(is_head);
    if (is_head) head.push_back(p.tensor);
  }
  return head;
}

template <typename T>
std::vector<Tensor<T>> Model<T>::trainable() const {
  std::vector<Tensor<T>> out;
  for (const auto& p : params_) {
    if (p.tensor.requires_grad()) out.push_back(p.tensor);
  }
  return out;
}

template <typename T>
void Model<T>::set_trainable(bool on) {
  for (auto& p : params_) p.tensor.set_requires_grad(on);
}

template <typename T>
void Model<T>::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

template <typename T>
std::size_t Model<T>::parameter_count() const {
  std::size_t total = 0;
  for (const auto& p : params_) total += p.tensor.numel();
  return total;
}

template <typename T>
template <typename U>
Model<U> Model<T>::cast() const {
  Model<U> out(config_, 0);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto src = params_[i].tensor.data();
    auto dst = out.parameters()[i].tensor.data();
    std::transform(src.begin(), src.end(), dst.begin(), [](T v) { return static_cast<U>(v); });
    out.parameters()[i].tensor.set_requires_grad(params_[i].tensor.requires_grad());
  }
  return out;
}

template class Model<float>;
template class Model<double>;
template Model<double> Model<float>::cast<double>() const;
template Model<float> Model<double>::cast<float>() const;
template Model<float> Model<float>::cast<float>() const;
template Model<double> Model<double>::cast<double>() const;

// ---------------------------------------------------------------- checkpoint

namespace {

std::string config_record(const ModelConfig& c) {
  std::ostringstream os;
  os << "config mode=" << to_string(c.mode) << " patch_size=" << c.patch_size
     << " embed_dim=" << c.embed_dim << " depth=" << c.depth << " heads=" << c.heads
     << " mlp_ratio=" << c.mlp_ratio << " token_capacity=" << c.token_capacity
     << " num_classes=" << c.num_classes;
  return os.str();
}

std::uint32_t to_little_endian(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::little) return v;
  return ((v & 0xFFu) << 24) | ((v & 0xFF00u) << 8) | ((v >> 8) & 0xFF00u) | (v >> 24);
}

class CheckpointReader {
 public:
  explicit CheckpointReader(std::string_view bytes) : bytes_(bytes) {}

  std::string line() {
    const auto end = bytes_.find('\n', pos_);
    if (end == std::string_view::npos) throw FormatError("checkpoint: truncated header");
    std::string out(bytes_.substr(pos_, end - pos_));
    pos_ = end + 1;
    return out;
  }
  std::string_view raw(std::size_t count) {
    if (bytes_.size() - pos_ < count) throw FormatError("checkpoint: truncated tensor data");
    const auto out = bytes_.substr(pos_, count);
    pos_ += count;
    return out;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

struct RawTensor {
  std::string name;
  Shape shape;
  std::string_view data;
};

std::pair<ModelConfig, std::vector<RawTensor>> parse_checkpoint(std::string_view bytes) {
  CheckpointReader in(bytes);
  if (in.line() != "SVITCKPT 1") throw FormatError("checkpoint: missing 'SVITCKPT 1' header");
  std::istringstream cfg(in.line());
  std::string word;
  cfg >> word;
  if (word != "config") throw FormatError("checkpoint: missing config record");
  ModelConfig c;
  std::map<std::string, std::string> kv;
  while (cfg >> word) {
    const auto eq = word.find('=');
    if (eq == std::string::npos) throw FormatError("checkpoint: bad config entry '" + word + "'");
    kv[word.substr(0, eq)] = word.substr(eq + 1);
  }
  try {
    c.mode = parse_token_mode(kv.at("mode"));
    c.patch_size = std::stoi(kv.at("patch_size"));
    c.embed_dim = std::stoi(kv.at("embed_dim"));
    c.depth = std::stoi(kv.at("depth"));
    c.heads = std::stoi(kv.at("heads"));
    c.mlp_ratio = std::stoi(kv.at("mlp_ratio"));
    c.token_capacity = std::stoi(kv.at("token_capacity"));
    c.num_classes = std::stoi(kv.at("num_classes"));
  } catch (const std::exception& e) {
    throw FormatError(std::string("checkpoint: incomplete config record (") + e.what() + ")");
  }
  std::istringstream count_line(in.line());
  std::size_t count = 0;
  if (!(count_line >> word >> count) || word != "tensors") {
    throw FormatError("checkpoint: missing tensor count");
  }
  std::vector<RawTensor> tensors;
  for (std::size_t i = 0; i < count; ++i) {
    std::istringstream header(in.line());
    RawTensor t;
    std::size_t rank = 0;
    if (!(header >> t.name >> rank)) throw FormatError("checkpoint: bad tensor header");
    t.shape.resize(rank);
    for (auto& d : t.shape) {
      if (!(header >> d)) throw FormatError("checkpoint: bad shape for " + t.name);
    }
    t.data = in.raw(shape_numel(t.shape) * 4);
    tensors.push_back(std::move(t));
  }
  if (!in.done()) throw FormatError("checkpoint: trailing bytes");
  return {c, std::move(tensors)};
}

}  // namespace

std::string write_checkpoint(const Model<float>& model) {
  std::string out = "SVITCKPT 1\n" + config_record(model.config()) + "\n";
  out += "tensors " + std::to_string(model.parameters().size()) + "\n";
  for (const auto& p : model.parameters()) {
    out += p.name + " " + std::to_string(p.tensor.rank());
    for (auto d : p.tensor.shape()) out += " " + std::to_string(d);
    out += "\n";
    for (float v : p.tensor.data()) {
      const std::uint32_t le = to_little_endian(std::bit_cast<std::uint32_t>(v));
      char buf[4];
      std::memcpy(buf, &le, 4);
      out.append(buf, 4);
    }
  }
  return out;
}

Model<float> read_checkpoint(std::string_view bytes) {
  auto [config, tensors] = parse_checkpoint(bytes);
  Model<float> model(config, 0);
  if (tensors.size() != model.parameters().size()) {
    throw FormatError("checkpoint: " + std::to_string(tensors.size()) + " tensors, config needs " +
                      std::to_string(model.parameters().size()));
  }
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    auto& p = model.parameters()[i];
    if (tensors[i].name != p.name || tensors[i].shape != p.tensor.shape()) {
      throw FormatError("checkpoint: tensor " + std::to_string(i) + " is '" + tensors[i].name +
                        "' " + shape_str(tensors[i].shape) + ", expected '" + p.name + "' " +
                        shape_str(p.tensor.shape()));
    }
    auto dst = p.tensor.data();
    for (std::size_t k = 0; k < dst.size(); ++k) {
      std::uint32_t le = 0;
      std::memcpy(&le, tensors[i].data.data() + 4 * k, 4);
      dst[k] = std::bit_cast<float>(to_little_endian(le));
    }
  }
  return model;
}

void save_checkpoint(const std::filesystem::path& path, const Model<float>& model) {
  write_file(path, write_checkpoint(model));
}

Model<float> load_checkpoint(const std::filesystem::path& path) {
  return read_checkpoint(read_file(path));
}

std::map<std::string, std::string> checkpoint_tensor_bytes(std::string_view bytes) {
  std::map<std::string, std::string> out;
  for (const auto& t : parse_checkpoint(bytes).second) out.emplace(t.name, std::string(t.data));
  return out;
}

}  // namespace svit
