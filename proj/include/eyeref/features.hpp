#pragma once

#include <array>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "eyeref/core.hpp"
#include "eyeref/nn/ops.hpp"

namespace eyeref {

/// The 16 convolutional taps of the perceptual extractor, shallow to deep.
inline constexpr std::array<std::string_view, 16> kPerceptualLayers{
    "conv1_1", "conv1_2", "conv2_1", "conv2_2", "conv3_1", "conv3_2", "conv3_3", "conv3_4",
    "conv4_1", "conv4_2", "conv4_3", "conv4_4", "conv5_1", "conv5_2", "conv5_3", "conv5_4"};

bool is_perceptual_layer(std::string_view name);
/// Position of `name` in kPerceptualLayers; throws UnknownLayer.
int perceptual_layer_index(std::string_view name);

/// One layer's responses as an N x M matrix (channels x spatial positions,
/// positions in row-major order).
template <typename T>
struct FeatureBlock {
  int height = 0;
  int width = 0;
  nn::RowMatrix<T> data;

  int channels() const { return static_cast<int>(data.rows()); }
  int positions() const { return static_cast<int>(data.cols()); }
};

template <typename T>
using FeatureStack = std::map<std::string, FeatureBlock<T>>;

template <typename T>
FeatureBlock<T> to_block(const nn::Tensor<T>& t) {
  FeatureBlock<T> b;
  b.height = t.height();
  b.width = t.width();
  b.data = nn::ConstMapMatrix<T>(t.values().data(), t.channels(), t.height() * t.width());
  return b;
}

/// Foreground classes produced by the segmenter (background is implied).
inline constexpr int kMaskClasses = 2;  // 0: iris, 1: pupil

/// Soft per-class coverage of one layer's spatial grid; classes[c] holds
/// height*width values in [0,1].
struct LayerMask {
  int height = 0;
  int width = 0;
  std::vector<std::vector<double>> classes;

  /// A single class covering every position.
  static LayerMask ones(int h, int w);
  double area(std::size_t c) const;
};

using LayerMaskSet = std::map<std::string, LayerMask>;

}  // namespace eyeref
