#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <utility>
#include <vector>

#include "eyeref/core.hpp"
#include "eyeref/features.hpp"
#include "eyeref/nn/layers.hpp"

namespace eyeref {

/// Residual encoder-decoder: stem, three stride-2 stages, eight residual
/// units at the bottleneck, three upsampling stages with additive skips
/// and a 1x1 head producing background/iris/pupil scores.
class SegmenterNet {
 public:
  static constexpr int kFactor = 8;  // total downsampling
  static constexpr int kBottleneckUnits = 8;

  explicit SegmenterNet(int width = 16, std::uint64_t seed = 0);

  int width() const { return width_; }

  /// Raw class scores (3, H, W); H and W must be multiples of kFactor.
  nn::Tensor<float> forward(const nn::Tensor<float>& x) const;

  nn::ParamList<float> params() const;
  void zero_head();
  std::vector<nn::ResidualUnit<float>>& bottleneck() { return res_; }

 private:
  int width_;
  nn::Conv2d<float> stem_, down1_, down2_, down3_;
  std::vector<nn::ResidualUnit<float>> res_;
  nn::Conv2d<float> up1_, up2_, up3_, head_;
};

/// Normalised input tensor, edge-replicated to multiples of kFactor.
nn::Tensor<float> segmenter_input(const Image& image);

/// Per-pixel class probabilities (3 planes of H*W) at the image's own size.
std::vector<float> class_probabilities(const SegmenterNet& net, const Image& image);

/// Argmax mask; ties go to the lowest class index.
ClassMask segment(const SegmenterNet& net, const Image& image);

/// Re-centres the pupil on the iris region. The iris support is label 1
/// plus every pupil component touching it. The pupil becomes the
/// (input pupil area) support pixels nearest the support centroid that lie
/// strictly inside the support's inscribed radius; with no iris pixels every
/// pupil pixel becomes background. Idempotent.
ClassMask repair_orphans(const ClassMask& mask);

/// Area-averaged iris/pupil coverage at each layer size.
/// Errors: ShapeError when a layer is larger than the mask.
LayerMaskSet downsample_masks(const ClassMask& mask, const std::map<std::string, std::pair<int, int>>& layer_sizes);

struct SegmenterTrainConfig {
  int width = 16;
  double learning_rate = 2e-3;
  bool flip_augment = true;
  std::uint64_t seed = 0;
  std::optional<std::filesystem::path> checkpoint_dir;  // epoch_N.ckpt + latest
};

struct SegmenterTrainResult {
  SegmenterNet net;
  std::vector<double> epoch_losses;  // mean cross-entropy per epoch
};

/// Errors: EmptyDataset, DivergenceDetected(epoch).
SegmenterTrainResult train_segmenter(const std::vector<std::pair<Image, ClassMask>>& dataset, int epochs,
                                     const SegmenterTrainConfig& config);

double pixel_accuracy(const ClassMask& predicted, const ClassMask& truth);

void save_segmenter(const SegmenterNet& net, const std::filesystem::path& path);
/// Errors: MissingFile(path), CheckpointMismatch(name).
SegmenterNet load_segmenter(const std::filesystem::path& path);
/// Resolves a checkpoint directory through its `latest` pointer file.
std::filesystem::path latest_checkpoint(const std::filesystem::path& dir);

}  // namespace eyeref
