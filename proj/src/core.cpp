#include "eyeref/core.hpp"

#include <algorithm>

namespace eyeref {

void validate_image(const Image& image) {
  if (image.height < 8 || image.width < 8) {
    throw Error("ShapeError", std::to_string(image.height) + "x" + std::to_string(image.width),
                "image must be at least 8x8");
  }
  if (image.data.size() != 3 * image.plane()) throw Error("ShapeError", "image buffer size mismatch");
  for (float v : image.data) {
    if (!std::isfinite(v) || v < 0.0f || v > 1.0f) throw Error("InvalidImage", "value outside [0,1]");
  }
}

Image flip_horizontal(const Image& image) {
  Image out(image.height, image.width);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < image.height; ++y)
      for (int x = 0; x < image.width; ++x) out.at(c, y, x) = image.at(c, y, image.width - 1 - x);
  return out;
}

std::vector<std::vector<std::pair<int, double>>> area_weights(int src, int dst) {
  std::vector<std::vector<std::pair<int, double>>> taps(dst);
  const double scale = static_cast<double>(src) / dst;
  for (int o = 0; o < dst; ++o) {
    const double lo = o * scale;
    const double hi = (o + 1) * scale;
    for (int s = static_cast<int>(std::floor(lo)); s < src && s < hi; ++s) {
      const double overlap = std::min<double>(hi, s + 1) - std::max<double>(lo, s);
      if (overlap > 1e-12) taps[o].emplace_back(s, overlap / scale);
    }
  }
  return taps;
}

Image resample(const Image& image, int height, int width) {
  if (height == image.height && width == image.width) return image;
  const auto wy = area_weights(image.height, height);
  const auto wx = area_weights(image.width, width);
  Image out(height, width);
  std::vector<double> row(static_cast<std::size_t>(image.height) * width);
  for (int c = 0; c < 3; ++c) {
    for (int y = 0; y < image.height; ++y)
      for (int x = 0; x < width; ++x) {
        double acc = 0.0;
        for (auto [s, w] : wx[x]) acc += w * image.at(c, y, s);
        row[static_cast<std::size_t>(y) * width + x] = acc;
      }
    for (int y = 0; y < height; ++y)
      for (int x = 0; x < width; ++x) {
        double acc = 0.0;
        for (auto [s, w] : wy[y]) acc += w * row[static_cast<std::size_t>(s) * width + x];
        out.at(c, y, x) = static_cast<float>(acc);
      }
  }
  return out;
}

std::size_t ClassMask::count(MaskClass c) const {
  return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), static_cast<std::uint8_t>(c)));
}

ClassMask flip_horizontal(const ClassMask& mask) {
  ClassMask out(mask.height, mask.width);
  for (int y = 0; y < mask.height; ++y)
    for (int x = 0; x < mask.width; ++x) out.at(y, x) = mask.at(y, mask.width - 1 - x);
  return out;
}

ClassMask resample(const ClassMask& mask, int height, int width) {
  if (height == mask.height && width == mask.width) return mask;
  ClassMask out(height, width);
  for (int y = 0; y < height; ++y) {
    const int sy = std::min(mask.height - 1, static_cast<int>((y + 0.5) * mask.height / height));
    for (int x = 0; x < width; ++x) {
      const int sx = std::min(mask.width - 1, static_cast<int>((x + 0.5) * mask.width / width));
      out.at(y, x) = mask.at(sy, sx);
    }
  }
  return out;
}

GazeVector gaze_from_angles(double yaw, double pitch) {
  return {std::cos(pitch) * std::sin(yaw), std::sin(pitch), std::cos(pitch) * std::cos(yaw)};
}

std::pair<double, double> angles_from_gaze(const GazeVector& g) {
  const GazeVector u = normalized(g);
  return {std::atan2(u[0], u[2]), std::asin(std::clamp(u[1], -1.0, 1.0))};
}

double norm(const GazeVector& g) { return std::sqrt(dot(g, g)); }

double dot(const GazeVector& a, const GazeVector& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }

GazeVector normalized(const GazeVector& g) {
  const double n = norm(g);
  if (!(n > 0.0) || !std::isfinite(n)) throw Error("NonUnitInput", "cannot normalize zero or non-finite vector");
  return {g[0] / n, g[1] / n, g[2] / n};
}

std::string to_string(Domain d) {
  switch (d) {
    case Domain::synthetic: return "synthetic";
    case Domain::refined: return "refined";
    case Domain::real: return "real";
  }
  return "synthetic";
}

Domain parse_domain(const std::string& s) {
  if (s == "synthetic") return Domain::synthetic;
  if (s == "refined") return Domain::refined;
  if (s == "real") return Domain::real;
  throw Error("ParseError", s, "unknown domain '" + s + "'");
}

GazeSample GazeSample::from_angles(Image image, double yaw, double pitch, Domain domain,
                                   std::optional<ClassMask> mask) {
  GazeSample s;
  s.image = std::move(image);
  s.yaw = yaw;
  s.pitch = pitch;
  s.gaze = gaze_from_angles(yaw, pitch);
  s.domain = domain;
  s.mask = std::move(mask);
  return s;
}

}  // namespace eyeref
