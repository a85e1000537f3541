#include "eyeref/segmenter.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>

#include "eyeref/nn/optim.hpp"
#include "eyeref/nn/weights.hpp"

namespace eyeref {

using nn::Tensor;

SegmenterNet::SegmenterNet(int width, std::uint64_t seed) : width_(width) {
  if (width < 1) throw Error("InvalidParams", "width");
  Rng rng(seed);
  const int w = width;
  stem_ = nn::Conv2d<float>(3, w, 3, 1, 1, rng);
  down1_ = nn::Conv2d<float>(w, 2 * w, 3, 2, 1, rng);
  down2_ = nn::Conv2d<float>(2 * w, 4 * w, 3, 2, 1, rng);
  down3_ = nn::Conv2d<float>(4 * w, 4 * w, 3, 2, 1, rng);
  for (int i = 0; i < kBottleneckUnits; ++i) {
    res_.emplace_back(4 * w, rng);
    // Keep the deep stack well conditioned at start.
    auto v = res_.back().second.weight.mutable_values();
    for (auto& x : v) x *= 0.1f;
  }
  up1_ = nn::Conv2d<float>(4 * w, 4 * w, 3, 1, 1, rng);
  up2_ = nn::Conv2d<float>(4 * w, 2 * w, 3, 1, 1, rng);
  up3_ = nn::Conv2d<float>(2 * w, w, 3, 1, 1, rng);
  head_ = nn::Conv2d<float>(w, 3, 1, 1, 0, rng);
}

Tensor<float> SegmenterNet::forward(const Tensor<float>& x) const {
  if (x.rank() != 3 || x.channels() != 3 || x.height() % kFactor || x.width() % kFactor)
    throw Error("ShapeError", "segmenter", "segmenter input must be 3 x (8k) x (8m)");
  const auto s0 = nn::relu(stem_(x));
  const auto s1 = nn::relu(down1_(s0));
  const auto s2 = nn::relu(down2_(s1));
  auto b = nn::relu(down3_(s2));
  for (const auto& r : res_) b = r(b);
  const auto u1 = nn::add(nn::relu(up1_(nn::upsample2(b))), s2);
  const auto u2 = nn::add(nn::relu(up2_(nn::upsample2(u1))), s1);
  const auto u3 = nn::add(nn::relu(up3_(nn::upsample2(u2))), s0);
  return head_(u3);
}

nn::ParamList<float> SegmenterNet::params() const {
  nn::ParamList<float> out;
  stem_.collect(out, "stem");
  down1_.collect(out, "down1");
  down2_.collect(out, "down2");
  down3_.collect(out, "down3");
  for (std::size_t i = 0; i < res_.size(); ++i) res_[i].collect(out, "res" + std::to_string(i));
  up1_.collect(out, "up1");
  up2_.collect(out, "up2");
  up3_.collect(out, "up3");
  head_.collect(out, "head");
  return out;
}

void SegmenterNet::zero_head() { head_.zero(); }

namespace {

int padded(int n) { return (n + SegmenterNet::kFactor - 1) / SegmenterNet::kFactor * SegmenterNet::kFactor; }

Tensor<float> input_tensor(const Image& image, bool flip) {
  const int h = image.height, w = image.width, ph = padded(h), pw = padded(w);
  std::vector<float> v(3ull * ph * pw);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < ph; ++y)
      for (int x = 0; x < pw; ++x) {
        const int sy = std::min(y, h - 1);
        int sx = std::min(x, w - 1);
        if (flip) sx = w - 1 - sx;
        v[(static_cast<std::size_t>(c) * ph + y) * pw + x] = image.at(c, sy, sx) - 0.5f;
      }
  return Tensor<float>({3, ph, pw}, std::move(v));
}

std::vector<std::uint8_t> padded_labels(const ClassMask& m, bool flip) {
  const int ph = padded(m.height), pw = padded(m.width);
  std::vector<std::uint8_t> out(static_cast<std::size_t>(ph) * pw);
  for (int y = 0; y < ph; ++y)
    for (int x = 0; x < pw; ++x) {
      int sx = std::min(x, m.width - 1);
      if (flip) sx = m.width - 1 - sx;
      out[static_cast<std::size_t>(y) * pw + x] = m.at(std::min(y, m.height - 1), sx);
    }
  return out;
}

}  // namespace

Tensor<float> segmenter_input(const Image& image) { return input_tensor(image, false); }

std::vector<float> class_probabilities(const SegmenterNet& net, const Image& image) {
  validate_image(image);
  const auto scores = net.forward(segmenter_input(image));
  const int pw = scores.width();
  const auto sv = scores.values();
  const std::size_t pp = static_cast<std::size_t>(scores.height()) * pw;
  const std::size_t n = image.plane();
  std::vector<float> out(3 * n);
  for (int y = 0; y < image.height; ++y)
    for (int x = 0; x < image.width; ++x) {
      const std::size_t j = static_cast<std::size_t>(y) * pw + x;
      const float mx = std::max({sv[j], sv[pp + j], sv[2 * pp + j]});
      double z = 0.0;
      for (int c = 0; c < 3; ++c) z += std::exp(static_cast<double>(sv[c * pp + j] - mx));
      for (int c = 0; c < 3; ++c)
        out[c * n + static_cast<std::size_t>(y) * image.width + x] =
            static_cast<float>(std::exp(static_cast<double>(sv[c * pp + j] - mx)) / z);
    }
  return out;
}

ClassMask segment(const SegmenterNet& net, const Image& image) {
  validate_image(image);
  const auto scores = net.forward(segmenter_input(image));
  const int pw = scores.width();
  const auto sv = scores.values();
  const std::size_t pp = static_cast<std::size_t>(scores.height()) * pw;
  ClassMask m(image.height, image.width);
  for (int y = 0; y < image.height; ++y)
    for (int x = 0; x < image.width; ++x) {
      const std::size_t j = static_cast<std::size_t>(y) * pw + x;
      int best = 0;
      for (int c = 1; c < 3; ++c)
        if (sv[c * pp + j] > sv[best * pp + j]) best = c;
      m.at(y, x) = static_cast<std::uint8_t>(best);
    }
  return m;
}

namespace {

constexpr std::uint8_t kIris = static_cast<std::uint8_t>(MaskClass::iris);
constexpr std::uint8_t kPupil = static_cast<std::uint8_t>(MaskClass::pupil);

ClassMask repair_once(const ClassMask& mask) {
  const int h = mask.height, w = mask.width;
  const std::size_t n = mask.labels.size();
  const auto& lab = mask.labels;
  ClassMask out = mask;
  const std::size_t pupil_area = mask.count(MaskClass::pupil);
  if (mask.count(MaskClass::iris) == 0) {
    for (auto& v : out.labels)
      if (v == kPupil) v = 0;
    return out;
  }
  if (pupil_area == 0) return out;

  // Support: iris plus pupil components that touch it.
  std::vector<char> support(n, 0);
  for (std::size_t i = 0; i < n; ++i) support[i] = lab[i] == kIris;
  std::vector<int> comp(n, -1);
  std::vector<std::size_t> stack, members;
  for (std::size_t s = 0; s < n; ++s) {
    if (lab[s] != kPupil || comp[s] >= 0) continue;
    members.clear();
    bool touches = false;
    stack.push_back(s);
    comp[s] = 1;
    while (!stack.empty()) {
      const std::size_t p = stack.back();
      stack.pop_back();
      members.push_back(p);
      const int y = static_cast<int>(p / w), x = static_cast<int>(p % w);
      const int ny[4] = {y - 1, y + 1, y, y}, nx[4] = {x, x, x - 1, x + 1};
      for (int k = 0; k < 4; ++k) {
        if (ny[k] < 0 || ny[k] >= h || nx[k] < 0 || nx[k] >= w) continue;
        const std::size_t q = static_cast<std::size_t>(ny[k]) * w + nx[k];
        if (lab[q] == kIris) touches = true;
        if (lab[q] == kPupil && comp[q] < 0) {
          comp[q] = 1;
          stack.push_back(q);
        }
      }
    }
    if (touches)
      for (auto p : members) support[p] = 1;
  }

  double cx = 0.0, cy = 0.0, cnt = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    if (support[i]) {
      cx += static_cast<double>(i % w) + 0.5;
      cy += static_cast<double>(i / w) + 0.5;
      cnt += 1.0;
    }
  cx /= cnt;
  cy /= cnt;

  auto dist2 = [&](int y, int x) {
    const double dx = x + 0.5 - cx, dy = y + 0.5 - cy;
    return dx * dx + dy * dy;
  };
  // Inscribed radius: nearest non-support pixel, the image border counting as outside.
  double r_in2 = std::numeric_limits<double>::infinity();
  for (int y = -1; y <= h; ++y)
    for (int x = -1; x <= w; ++x) {
      const bool inside = y >= 0 && y < h && x >= 0 && x < w && support[static_cast<std::size_t>(y) * w + x];
      if (!inside) r_in2 = std::min(r_in2, dist2(y, x));
    }

  std::vector<std::pair<double, std::size_t>> candidates;
  for (std::size_t i = 0; i < n; ++i) {
    if (!support[i]) continue;
    const double d = dist2(static_cast<int>(i / w), static_cast<int>(i % w));
    if (d < r_in2) candidates.emplace_back(d, i);
  }
  std::sort(candidates.begin(), candidates.end());
  const std::size_t keep = std::min(pupil_area, candidates.size());
  for (std::size_t i = 0; i < n; ++i) out.labels[i] = support[i] ? kIris : 0;
  for (std::size_t k = 0; k < keep; ++k) out.labels[candidates[k].second] = kPupil;
  return out;
}

}  // namespace

ClassMask repair_orphans(const ClassMask& mask) {
  ClassMask cur = repair_once(mask);
  for (int iter = 0; iter < 8; ++iter) {
    ClassMask next = repair_once(cur);
    if (next == cur) return cur;
    cur = std::move(next);
  }
  // No fixed point: a pupil-free mask always is one.
  for (auto& v : cur.labels)
    if (v == kPupil) v = kIris;
  return cur;
}

LayerMaskSet downsample_masks(const ClassMask& mask, const std::map<std::string, std::pair<int, int>>& layer_sizes) {
  LayerMaskSet out;
  for (const auto& [layer, size] : layer_sizes) {
    const auto [lh, lw] = size;
    if (lh < 1 || lw < 1 || lh > mask.height || lw > mask.width)
      throw Error("ShapeError", layer, "layer '" + layer + "' size incompatible with mask");
    const auto wy = area_weights(mask.height, lh);
    const auto wx = area_weights(mask.width, lw);
    LayerMask lm;
    lm.height = lh;
    lm.width = lw;
    lm.classes.assign(kMaskClasses, std::vector<double>(static_cast<std::size_t>(lh) * lw, 0.0));
    for (int y = 0; y < lh; ++y)
      for (int x = 0; x < lw; ++x)
        for (const auto& [sy, a] : wy[y])
          for (const auto& [sx, b] : wx[x]) {
            const auto l = mask.at(sy, sx);
            if (l == kIris) lm.classes[0][static_cast<std::size_t>(y) * lw + x] += a * b;
            if (l == kPupil) lm.classes[1][static_cast<std::size_t>(y) * lw + x] += a * b;
          }
    for (auto& cls : lm.classes)
      for (auto& v : cls) v = std::clamp(v, 0.0, 1.0);
    out.emplace(layer, std::move(lm));
  }
  return out;
}

double pixel_accuracy(const ClassMask& predicted, const ClassMask& truth) {
  if (predicted.height != truth.height || predicted.width != truth.width)
    throw Error("ShapeError", "pixel_accuracy", "mask shapes differ");
  std::size_t hit = 0;
  for (std::size_t i = 0; i < truth.labels.size(); ++i) hit += predicted.labels[i] == truth.labels[i];
  return static_cast<double>(hit) / static_cast<double>(truth.labels.size());
}

namespace {

std::vector<nn::WeightRecord> segmenter_records(const SegmenterNet& net) {
  auto rec = nn::to_records(net.params());
  rec.push_back({"meta.width", {1}, {static_cast<float>(net.width())}});
  return rec;
}

}  // namespace

void save_segmenter(const SegmenterNet& net, const std::filesystem::path& path) {
  nn::write_weight_file(path, segmenter_records(net));
}

SegmenterNet load_segmenter(const std::filesystem::path& path) {
  auto records = nn::read_weight_file(path);
  int width = -1;
  for (auto it = records.begin(); it != records.end(); ++it)
    if (it->name == "meta.width" && it->values.size() == 1) {
      width = static_cast<int>(it->values[0]);
      records.erase(it);
      break;
    }
  if (width < 1) throw Error("CheckpointMismatch", "meta.width", "segmenter checkpoint lacks its width record");
  SegmenterNet net(width);
  nn::assign_records(records, net.params());
  return net;
}

std::filesystem::path latest_checkpoint(const std::filesystem::path& dir) {
  std::ifstream in(dir / "latest");
  if (!in) throw Error("MissingFile", (dir / "latest").string(), "no 'latest' pointer in '" + dir.string() + "'");
  std::string name;
  std::getline(in, name);
  return dir / name;
}

SegmenterTrainResult train_segmenter(const std::vector<std::pair<Image, ClassMask>>& dataset, int epochs,
                                     const SegmenterTrainConfig& config) {
  if (dataset.empty()) throw Error("EmptyDataset", "segmenter", "segmenter training needs at least one sample");
  for (const auto& [img, m] : dataset)
    if (img.height != m.height || img.width != m.width) throw Error("ShapeError", "dataset", "image/mask shape mismatch");
  SegmenterTrainResult result{SegmenterNet(config.width, config.seed), {}};
  nn::Adam<float> opt(result.net.params(), config.learning_rate);
  Rng rng(Rng::mix(config.seed, 0x5e6));
  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), 0);
  if (config.checkpoint_dir) std::filesystem::create_directories(*config.checkpoint_dir);

  for (int epoch = 1; epoch <= epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.index(i)]);
    double total = 0.0;
    for (std::size_t k : order) {
      const bool flip = config.flip_augment && rng.uniform() < 0.5;
      const auto& [img, mask] = dataset[k];
      const auto labels = padded_labels(mask, flip);
      const auto loss = nn::softmax_cross_entropy(result.net.forward(input_tensor(img, flip)),
                                                  std::span<const std::uint8_t>(labels));
      const double v = loss.item();
      if (!std::isfinite(v)) throw Error("DivergenceDetected", std::to_string(epoch), "segmenter loss is not finite");
      total += v;
      nn::backward(loss);
      opt.step();
    }
    result.epoch_losses.push_back(total / static_cast<double>(dataset.size()));
    if (config.checkpoint_dir) {
      const std::string name = "epoch_" + std::to_string(epoch) + ".ckpt";
      save_segmenter(result.net, *config.checkpoint_dir / name);
      std::ofstream(*config.checkpoint_dir / "latest") << name << "\n";
    }
  }
  return result;
}

}  // namespace eyeref
