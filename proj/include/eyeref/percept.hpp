#pragma once

#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "eyeref/features.hpp"
#include "eyeref/nn/layers.hpp"

namespace eyeref {

/// One row of the fixed extractor's topology table.
struct PerceptualLayerSpec {
  std::string name;
  int module;  // 1..5
  int in_channels;
  int out_channels;
};

/// VGG-19 convolution stack for base width `base` (64 in the standard
/// network): modules of 2, 2, 4, 4, 4 layers with widths base*{1,2,4,8,8}.
std::vector<PerceptualLayerSpec> perceptual_topology(int base);

/// Input normalisation applied before the first layer.
inline constexpr float kImageNetMean[3] = {0.485f, 0.456f, 0.406f};
inline constexpr float kImageNetStd[3] = {0.229f, 0.224f, 0.225f};

/// Fixed VGG-19 feature extractor: 3x3 convolutions with ReLU, 2x2 average
/// pooling between modules. Taps are the post-ReLU responses. Weights never
/// require gradients, but gradients flow through to the input image.
template <typename T>
class PerceptualNet {
 public:
  PerceptualNet() = default;

  /// He-initialised stand-in for pretrained weights.
  explicit PerceptualNet(int base, std::uint64_t seed = 0) : base_(base) {
    if (base < 1) throw Error("InvalidParams", "percept_width");
    Rng rng(seed);
    for (const auto& s : perceptual_topology(base)) convs_.emplace_back(s.in_channels, s.out_channels, 3, 1, 1, rng, false);
  }

  int base() const { return base_; }
  bool empty() const { return convs_.empty(); }

  /// Responses at `layers` for a (3,H,W) image with values in [0,1]; runs
  /// only as deep as the deepest requested layer. Errors: UnknownLayer, ShapeError.
  std::map<std::string, nn::Tensor<T>> forward(const nn::Tensor<T>& image, const std::vector<std::string>& layers) const {
    int deepest = -1;
    for (const auto& l : layers) deepest = std::max(deepest, perceptual_layer_index(l));
    std::map<std::string, nn::Tensor<T>> out;
    if (deepest < 0) return out;
    if (image.rank() != 3 || image.channels() != 3) throw Error("ShapeError", "percept", "extractor input must be 3-channel");
    const std::vector<T> mean(kImageNetMean, kImageNetMean + 3), sd(kImageNetStd, kImageNetStd + 3);
    nn::Tensor<T> x = nn::channel_affine<T>(image, mean, sd);
    const auto topo = perceptual_topology(base_);
    for (int i = 0; i <= deepest; ++i) {
      if (i > 0 && topo[i].module != topo[i - 1].module) {
        if (x.height() < 2 || x.width() < 2)
          throw Error("ShapeError", topo[i].name, "image too small for layer '" + topo[i].name + "'");
        x = nn::avg_pool2(x);
      }
      x = nn::relu(convs_[i](x));
      if (std::find(layers.begin(), layers.end(), topo[i].name) != layers.end()) out.emplace(topo[i].name, x);
    }
    return out;
  }

  /// Named, non-trainable parameters ("conv1_1.weight", ...).
  nn::ParamList<T> params() const {
    nn::ParamList<T> out;
    const auto topo = perceptual_topology(base_);
    for (std::size_t i = 0; i < convs_.size(); ++i) convs_[i].collect(out, topo[i].name);
    return out;
  }

  /// Same network with every kernel mirrored left-right.
  PerceptualNet mirrored() const {
    PerceptualNet m = cast<T>();
    for (auto& c : m.convs_) {
      const int out = c.weight.dim(0), in = c.weight.dim(1), k = c.weight.dim(2);
      auto v = c.weight.mutable_values();
      for (int o = 0; o < out * in; ++o)
        for (int y = 0; y < k; ++y) std::reverse(v.begin() + (o * k + y) * k, v.begin() + (o * k + y + 1) * k);
    }
    return m;
  }

  /// Deep copy in another scalar type.
  template <typename U>
  PerceptualNet<U> cast() const {
    PerceptualNet<U> out;
    out.base_ = base_;
    for (const auto& c : convs_) {
      nn::Conv2d<U> d;
      d.stride = c.stride;
      d.pad = c.pad;
      d.weight = nn::Tensor<U>(c.weight.dims(), std::vector<U>(c.weight.values().begin(), c.weight.values().end()));
      d.bias = nn::Tensor<U>(c.bias.dims(), std::vector<U>(c.bias.values().begin(), c.bias.values().end()));
      out.convs_.push_back(std::move(d));
    }
    return out;
  }

  std::vector<nn::Conv2d<T>>& convs() { return convs_; }
  const std::vector<nn::Conv2d<T>>& convs() const { return convs_; }

 private:
  template <typename U>
  friend class PerceptualNet;

  int base_ = 0;
  std::vector<nn::Conv2d<T>> convs_;
};

/// Reads extractor weights (see docs/weights.md); the base width is taken
/// from conv1_1 and every tensor is checked against perceptual_topology.
/// Records for layers outside the topology (classifier heads) are ignored.
/// Errors: MissingFile, CheckpointMismatch(name).
PerceptualNet<float> load_perceptual_net(const std::filesystem::path& path);

/// Weight file when `weights` is non-empty, else the seeded random net.
PerceptualNet<float> make_perceptual_net(const std::string& weights, int base, std::uint64_t seed);

/// Feature blocks at `layers`. Errors: UnknownLayer(name), ShapeError
/// (image side below 32).
FeatureStack<float> extract_features(const PerceptualNet<float>& net, const Image& image, const std::set<std::string>& layers);

nn::Tensor<float> image_tensor(const Image& image);
Image tensor_image(const nn::Tensor<float>& t);

/// Replaces every member position of a class region with the region's
/// mask-weighted mean feature. Position j belongs to class c when
/// S_c[j] > 0.5 and S_c[j] is the largest of the class coverages and the
/// implied background; other positions are left as they are.
/// Errors: MissingLayer(name), ShapeError(name).
template <typename T>
FeatureStack<T> instance_average_pool(const FeatureStack<T>& features, const LayerMaskSet& masks) {
  FeatureStack<T> out = features;
  for (auto& [layer, block] : out) {
    auto it = masks.find(layer);
    if (it == masks.end()) throw Error("MissingLayer", layer, "no mask for layer '" + layer + "'");
    const LayerMask& m = it->second;
    const std::size_t p = static_cast<std::size_t>(block.positions());
    if (m.height != block.height || m.width != block.width) throw Error("ShapeError", layer, "mask size differs from features");
    for (const auto& cls : m.classes)
      if (cls.size() != p) throw Error("ShapeError", layer, "mask size differs from features");
    std::vector<int> owner(p, -1);
    for (std::size_t j = 0; j < p; ++j) {
      double covered = 0.0, best = 0.0;
      int arg = -1;
      for (std::size_t c = 0; c < m.classes.size(); ++c) {
        covered += m.classes[c][j];
        if (m.classes[c][j] > best) {
          best = m.classes[c][j];
          arg = static_cast<int>(c);
        }
      }
      if (arg >= 0 && best > 0.5 && best >= 1.0 - covered) owner[j] = arg;
    }
    const auto& src = features.at(layer).data;
    for (std::size_t c = 0; c < m.classes.size(); ++c) {
      Eigen::Matrix<T, Eigen::Dynamic, 1> acc = Eigen::Matrix<T, Eigen::Dynamic, 1>::Zero(src.rows());
      double weight = 0.0;
      for (std::size_t j = 0; j < p; ++j)
        if (owner[j] == static_cast<int>(c)) {
          acc += static_cast<T>(m.classes[c][j]) * src.col(static_cast<Eigen::Index>(j));
          weight += m.classes[c][j];
        }
      if (weight <= 0.0) continue;
      acc /= static_cast<T>(weight);
      for (std::size_t j = 0; j < p; ++j)
        if (owner[j] == static_cast<int>(c)) block.data.col(static_cast<Eigen::Index>(j)) = acc;
    }
  }
  return out;
}

/// Cascaded refinement decoder. Starting at the coarsest tap, each module
/// upsamples the previous state, appends the tap of that resolution when
/// there is one, and applies two [conv3x3, layer norm, leaky ReLU] layers;
/// a final full-resolution module is followed by a 1x1 convolution and a
/// sigmoid.
class DecoderNet {
 public:
  explicit DecoderNet(int base, std::vector<std::string> taps = {"conv2_1", "conv3_1", "conv4_1", "conv5_1"},
                      int width = 32, std::uint64_t seed = 0);

  const std::vector<std::string>& taps() const { return taps_; }
  int output_scale() const;  // image size / coarsest tap size

  nn::Tensor<float> forward(const std::map<std::string, nn::Tensor<float>>& features) const;
  nn::ParamList<float> params() const;

 private:
  struct Module {
    nn::Conv2d<float> conv1, conv2;
    nn::LayerNorm<float> norm1, norm2;
  };
  std::vector<std::string> taps_;  // coarse to fine
  std::vector<int> tap_modules_;
  std::vector<Module> modules_;    // one per resolution step, coarse to fine
  nn::Conv2d<float> head_;
};

/// Errors: MissingLayer(name) when the coarsest tap is absent, ShapeError.
Image decode_features(const DecoderNet& net, const FeatureStack<float>& features);

struct DecoderTrainConfig {
  int width = 32;
  int iterations = 2000;
  double learning_rate = 1e-3;
  std::uint64_t seed = 0;
};

struct DecoderTrainResult {
  DecoderNet net;
  std::vector<double> losses;  // per-iteration mean squared error
};

/// Fits the decoder to invert `extractor` on `images` (squared-error
/// reconstruction, one image per Adam step).
/// Errors: EmptyDataset, DivergenceDetected.
DecoderTrainResult train_decoder(const PerceptualNet<float>& extractor, const std::vector<Image>& images,
                                 const DecoderTrainConfig& config);

}  // namespace eyeref
