// Python bindings: manifests, the reference segmenter, tokenization and
// checkpoint inference.

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <string>
#include <vector>

#include "svit/error.hpp"
#include "svit/explain.hpp"
#include "svit/model.hpp"
#include "svit/segmenter.hpp"
#include "svit/tokenizer.hpp"

namespace py = pybind11;
using namespace svit;

namespace {

using U8Array = py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>;
using IntArray = py::array_t<int, py::array::c_style | py::array::forcecast>;
using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;

Image image_from(const FloatArray& a) {
  if (a.ndim() != 3 || a.shape(2) != 3) throw ContractError("image must be an H x W x 3 float array");
  Image img(static_cast<int>(a.shape(1)), static_cast<int>(a.shape(0)));
  std::copy(a.data(), a.data() + a.size(), img.pixels.begin());
  return img;
}

FloatArray image_to(const Image& img) {
  FloatArray out({img.height, img.width, 3});
  std::copy(img.pixels.begin(), img.pixels.end(), out.mutable_data());
  return out;
}

Bitmap bitmap_from(const U8Array& a) {
  if (a.ndim() != 2) throw ContractError("mask must be a 2-D array");
  Bitmap b(static_cast<int>(a.shape(1)), static_cast<int>(a.shape(0)));
  for (std::size_t i = 0; i < b.bits.size(); ++i) b.bits[i] = a.data()[i] != 0;
  return b;
}

// Binary masks, one per segment, in the order given. Empty masks are dropped.
std::string manifest_from_masks(const std::string& image_id, const std::vector<U8Array>& masks,
                                int width, int height, const std::string& source) {
  SegmentManifest m;
  m.image_id = image_id;
  m.image_size = {width, height};
  m.source = source;
  for (const auto& a : masks) {
    const Bitmap b = bitmap_from(a);
    if (b.width != width || b.height != height) throw ContractError("mask size differs from the image");
    auto runs = rle_encode(b);
    if (runs.empty()) continue;
    m.masks.push_back(SegmentMask::from_runs(std::move(runs), m.image_size));
  }
  return write_manifest(m);
}

py::dict manifest_info(const std::string& text) {
  const SegmentManifest m = read_manifest(text);
  py::dict d;
  d["image_id"] = m.image_id;
  d["width"] = m.image_size.width;
  d["height"] = m.image_size.height;
  d["source"] = m.source;
  py::list masks;
  for (const auto& mask : m.masks) {
    py::dict e;
    e["bbox"] = py::make_tuple(mask.bbox.x_min, mask.bbox.y_min, mask.bbox.x_max, mask.bbox.y_max);
    e["count"] = mask.pixel_count;
    e["runs"] = mask.runs.size();
    masks.append(e);
  }
  d["masks"] = masks;
  return d;
}

U8Array decode_masks(const std::string& text) {
  const SegmentManifest m = read_manifest(text);
  const auto w = static_cast<py::ssize_t>(m.image_size.width);
  const auto h = static_cast<py::ssize_t>(m.image_size.height);
  U8Array out({static_cast<py::ssize_t>(m.masks.size()), h, w});
  std::uint8_t* dst = out.mutable_data();
  for (const auto& mask : m.masks) {
    const Bitmap b = mask_bitmap(mask);
    dst = std::copy(b.bits.begin(), b.bits.end(), dst);
  }
  return out;
}

std::string segment_label_map(const IntArray& labels, const std::string& image_id) {
  if (labels.ndim() != 2) throw ContractError("label map must be a 2-D array");
  LabelMap map(static_cast<int>(labels.shape(1)), static_cast<int>(labels.shape(0)));
  std::copy(labels.data(), labels.data() + labels.size(), map.labels.begin());
  return write_manifest(segment_connected_components(map, image_id));
}

// Patches [L, P, P, 3], geometry [L, 5], background flags [L].
py::tuple tokenize_image(const FloatArray& image, const std::string& manifest, int patch_size) {
  const TokenizedImage t = tokenize(image_from(image), read_manifest(manifest), patch_size);
  const auto n = static_cast<py::ssize_t>(t.tokens.size());
  FloatArray patches({n, static_cast<py::ssize_t>(patch_size), static_cast<py::ssize_t>(patch_size),
                      py::ssize_t{3}});
  FloatArray geometry({n, py::ssize_t{5}});
  py::array_t<bool> background(std::vector<py::ssize_t>{n});
  float* p = patches.mutable_data();
  for (py::ssize_t i = 0; i < n; ++i) {
    const auto& tok = t.tokens[static_cast<std::size_t>(i)];
    p = std::copy(tok.patch.pixels.begin(), tok.patch.pixels.end(), p);
    std::copy(tok.geometry.begin(), tok.geometry.end(), geometry.mutable_data() + i * 5);
    background.mutable_data()[i] = tok.is_background;
  }
  return py::make_tuple(patches, geometry, background);
}

class Checkpoint {
 public:
  explicit Checkpoint(const std::string& path) : model_(load_checkpoint(path)) {}

  py::dict config() const {
    const auto& c = model_.config();
    py::dict d;
    d["mode"] = std::string(to_string(c.mode));
    d["patch_size"] = c.patch_size;
    d["embed_dim"] = c.embed_dim;
    d["depth"] = c.depth;
    d["heads"] = c.heads;
    d["mlp_ratio"] = c.mlp_ratio;
    d["num_classes"] = c.num_classes;
    return d;
  }

  std::vector<float> logits(const FloatArray& image, const std::string& manifest) const {
    const Image img = image_from(image);
    Tensor<float> out;
    if (model_.config().mode == TokenMode::svit) {
      const TokenizedImage t[] = {tokenize(img, read_manifest(manifest), model_.config().patch_size)};
      out = model_.forward(model_.embed_svit(t));
    } else {
      const Image batch[] = {img};
      out = model_.forward(model_.embed_vit(batch));
    }
    return {out.data().begin(), out.data().end()};
  }

  std::vector<double> importance(const FloatArray& image, const std::string& manifest,
                                 int class_index) const {
    const TokenizedImage t = tokenize(image_from(image), read_manifest(manifest), model_.config().patch_size);
    return token_importance(model_, t, class_index).scores;
  }

  FloatArray heatmap(const FloatArray& image, const std::string& manifest, int class_index) const {
    const Image img = image_from(image);
    const SegmentManifest m = read_manifest(manifest);
    const auto map = token_importance(model_, tokenize(img, m, model_.config().patch_size), class_index);
    return image_to(render_heatmap(map, img, m));
  }

 private:
  Model<float> model_;
};

void save_initial_checkpoint(const std::string& path, const std::string& mode, int patch_size,
                             int embed_dim, int depth, int heads, int num_classes, std::uint64_t seed) {
  ModelConfig c;
  c.mode = parse_token_mode(mode);
  c.patch_size = patch_size;
  c.embed_dim = embed_dim;
  c.depth = depth;
  c.heads = heads;
  c.num_classes = num_classes;
  save_checkpoint(path, Model<float>(c, seed));
}

}  // namespace

PYBIND11_MODULE(_svit, m) {
  m.doc() = "Semantic-segment vision transformer core";

  auto base = py::register_exception<Error>(m, "Error");
  py::register_exception<FormatError>(m, "FormatError", base.ptr());
  py::register_exception<ContractError>(m, "ContractError", base.ptr());
  py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
  py::register_exception<NumericError>(m, "NumericError", base.ptr());

  m.attr("MANIFEST_VERSION") = kManifestVersion;
  m.attr("MAX_SEGMENT_TOKENS") = kMaxSegmentTokens;

  m.def("manifest_from_masks", &manifest_from_masks, py::arg("image_id"), py::arg("masks"),
        py::arg("width"), py::arg("height"), py::arg("source") = "external");
  m.def("manifest_info", &manifest_info, py::arg("text"));
  m.def("decode_masks", &decode_masks, py::arg("text"));
  m.def("segment_label_map", &segment_label_map, py::arg("labels"), py::arg("image_id") = "image");
  m.def("tokenize", &tokenize_image, py::arg("image"), py::arg("manifest"), py::arg("patch_size") = 16);

  m.def("save_initial_checkpoint", &save_initial_checkpoint, py::arg("path"), py::arg("mode") = "svit",
        py::arg("patch_size") = 16, py::arg("embed_dim") = 64, py::arg("depth") = 4,
        py::arg("heads") = 4, py::arg("num_classes") = 3, py::arg("seed") = 0);

  py::class_<Checkpoint>(m, "Checkpoint")
      .def(py::init<const std::string&>(), py::arg("path"))
      .def_property_readonly("config", &Checkpoint::config)
      .def("logits", &Checkpoint::logits, py::arg("image"), py::arg("manifest") = "")
      .def("importance", &Checkpoint::importance, py::arg("image"), py::arg("manifest"),
           py::arg("class_index"))
      .def("heatmap", &Checkpoint::heatmap, py::arg("image"), py::arg("manifest"),
           py::arg("class_index"));
}
