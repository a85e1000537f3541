#include "eyeref/features.hpp"

#include <algorithm>
#include <numeric>

namespace eyeref {

bool is_perceptual_layer(std::string_view name) {
  return std::find(kPerceptualLayers.begin(), kPerceptualLayers.end(), name) != kPerceptualLayers.end();
}

int perceptual_layer_index(std::string_view name) {
  auto it = std::find(kPerceptualLayers.begin(), kPerceptualLayers.end(), name);
  if (it == kPerceptualLayers.end()) throw Error("UnknownLayer", std::string(name), "unknown layer '" + std::string(name) + "'");
  return static_cast<int>(it - kPerceptualLayers.begin());
}

LayerMask LayerMask::ones(int h, int w) {
  LayerMask m;
  m.height = h;
  m.width = w;
  m.classes.assign(1, std::vector<double>(static_cast<std::size_t>(h) * w, 1.0));
  return m;
}

double LayerMask::area(std::size_t c) const {
  return std::accumulate(classes.at(c).begin(), classes.at(c).end(), 0.0);
}

}  // namespace eyeref
