#include "eyeref/percept.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "eyeref/nn/optim.hpp"
#include "eyeref/nn/weights.hpp"

namespace eyeref {

using nn::Tensor;

std::vector<PerceptualLayerSpec> perceptual_topology(int base) {
  static constexpr int kLayers[5] = {2, 2, 4, 4, 4};
  static constexpr int kMult[5] = {1, 2, 4, 8, 8};
  std::vector<PerceptualLayerSpec> out;
  int in = 3;
  for (int m = 0; m < 5; ++m)
    for (int k = 0; k < kLayers[m]; ++k) {
      const int width = base * kMult[m];
      out.push_back({"conv" + std::to_string(m + 1) + "_" + std::to_string(k + 1), m + 1, in, width});
      in = width;
    }
  return out;
}

PerceptualNet<float> load_perceptual_net(const std::filesystem::path& path) {
  auto records = nn::read_weight_file(path);
  int base = -1;
  for (const auto& r : records)
    if (r.name == "conv1_1.weight" && !r.dims.empty()) base = r.dims[0];
  if (base < 1) throw Error("CheckpointMismatch", "conv1_1.weight", "weight file lacks conv1_1.weight");
  PerceptualNet<float> net(base);
  std::vector<nn::WeightRecord> kept;
  for (auto& r : records) {
    const auto dot = r.name.find('.');
    if (is_perceptual_layer(r.name.substr(0, dot))) kept.push_back(std::move(r));
  }
  // Dims are checked tensor by tensor against the topology-built net.
  nn::assign_records(kept, net.params());
  return net;
}

PerceptualNet<float> make_perceptual_net(const std::string& weights, int base, std::uint64_t seed) {
  if (!weights.empty()) return load_perceptual_net(weights);
  return PerceptualNet<float>(base, seed);
}

Tensor<float> image_tensor(const Image& image) { return Tensor<float>({3, image.height, image.width}, image.data); }

Image tensor_image(const Tensor<float>& t) {
  if (t.rank() != 3 || t.channels() != 3) throw Error("ShapeError", "tensor_image", "expected a 3-channel tensor");
  Image out(t.height(), t.width());
  std::copy(t.values().begin(), t.values().end(), out.data.begin());
  return out;
}

FeatureStack<float> extract_features(const PerceptualNet<float>& net, const Image& image, const std::set<std::string>& layers) {
  for (const auto& l : layers) perceptual_layer_index(l);
  FeatureStack<float> out;
  if (layers.empty()) return out;
  if (std::min(image.height, image.width) < 32)
    throw Error("ShapeError", "extract_features", "extractor needs images of at least 32x32");
  const auto taps = net.forward(image_tensor(image), {layers.begin(), layers.end()});
  for (const auto& [l, t] : taps) out.emplace(l, to_block(t));
  return out;
}

// ---------------------------------------------------------------------------

DecoderNet::DecoderNet(int base, std::vector<std::string> taps, int width, std::uint64_t seed) {
  if (taps.empty()) throw Error("InvalidParams", "taps", "decoder needs at least one tap");
  const auto topo = perceptual_topology(base);
  std::sort(taps.begin(), taps.end(),
            [](const auto& a, const auto& b) { return perceptual_layer_index(a) > perceptual_layer_index(b); });
  taps_ = taps;
  const int coarsest = topo[perceptual_layer_index(taps_.front())].module;
  Rng rng(seed);
  modules_.resize(coarsest);
  std::vector<int> tap_channels(coarsest, 0);
  for (const auto& t : taps_) {
    const auto& s = topo[perceptual_layer_index(t)];
    const int i = coarsest - s.module;
    if (tap_channels[i]) throw Error("InvalidParams", t, "two decoder taps share a resolution");
    tap_channels[i] = s.out_channels;
    tap_modules_.push_back(i);
  }
  for (int i = 0; i < coarsest; ++i) {
    const int in = (i == 0 ? 0 : width) + tap_channels[i];
    modules_[i].conv1 = nn::Conv2d<float>(in, width, 3, 1, 1, rng);
    modules_[i].conv2 = nn::Conv2d<float>(width, width, 3, 1, 1, rng);
    modules_[i].norm1 = nn::LayerNorm<float>(width);
    modules_[i].norm2 = nn::LayerNorm<float>(width);
  }
  head_ = nn::Conv2d<float>(width, 3, 1, 1, 0, rng);
}

int DecoderNet::output_scale() const { return 1 << (static_cast<int>(modules_.size()) - 1); }

Tensor<float> DecoderNet::forward(const std::map<std::string, Tensor<float>>& features) const {
  Tensor<float> x;
  for (std::size_t i = 0; i < modules_.size(); ++i) {
    std::vector<Tensor<float>> parts;
    if (i > 0) parts.push_back(nn::upsample2(x));
    for (std::size_t k = 0; k < taps_.size(); ++k)
      if (tap_modules_[k] == static_cast<int>(i)) {
        auto it = features.find(taps_[k]);
        if (it == features.end()) {
          if (i == 0) throw Error("MissingLayer", taps_[k], "decoder input lacks layer '" + taps_[k] + "'");
          continue;
        }
        parts.push_back(it->second);
      }
    const auto& m = modules_[i];
    x = parts.size() == 1 ? parts[0] : nn::concat(parts);
    x = nn::leaky_relu(m.norm1(m.conv1(x)));
    x = nn::leaky_relu(m.norm2(m.conv2(x)));
  }
  return nn::sigmoid(head_(x));
}

nn::ParamList<float> DecoderNet::params() const {
  nn::ParamList<float> out;
  for (std::size_t i = 0; i < modules_.size(); ++i) {
    const std::string p = "module" + std::to_string(i);
    modules_[i].conv1.collect(out, p + ".conv1");
    modules_[i].norm1.collect(out, p + ".norm1");
    modules_[i].conv2.collect(out, p + ".conv2");
    modules_[i].norm2.collect(out, p + ".norm2");
  }
  head_.collect(out, "head");
  return out;
}

Image decode_features(const DecoderNet& net, const FeatureStack<float>& features) {
  std::map<std::string, Tensor<float>> taps;
  for (const auto& [l, b] : features) {
    std::vector<float> v(b.data.data(), b.data.data() + b.data.size());
    taps.emplace(l, Tensor<float>({b.channels(), b.height, b.width}, std::move(v)));
  }
  return tensor_image(net.forward(taps));
}

DecoderTrainResult train_decoder(const PerceptualNet<float>& extractor, const std::vector<Image>& images,
                                 const DecoderTrainConfig& config) {
  if (images.empty()) throw Error("EmptyDataset", "decoder", "decoder training needs images");
  DecoderTrainResult result{DecoderNet(extractor.base(), {"conv2_1", "conv3_1", "conv4_1", "conv5_1"}, config.width, config.seed), {}};
  nn::Adam<float> opt(result.net.params(), config.learning_rate);
  std::vector<std::map<std::string, Tensor<float>>> cached;
  for (const auto& img : images) {
    auto taps = extractor.forward(image_tensor(img), result.net.taps());
    for (auto& [l, t] : taps) t = t.detach();
    cached.push_back(std::move(taps));
  }
  Rng rng(Rng::mix(config.seed, 0xdec));
  for (int it = 0; it < config.iterations; ++it) {
    const std::size_t k = rng.index(images.size());
    const auto loss = nn::mse(result.net.forward(cached[k]), std::span<const float>(images[k].data));
    const double v = loss.item();
    if (!std::isfinite(v)) throw Error("DivergenceDetected", std::to_string(it), "decoder loss is not finite");
    result.losses.push_back(v);
    nn::backward(loss);
    opt.step();
  }
  return result;
}

}  // namespace eyeref
