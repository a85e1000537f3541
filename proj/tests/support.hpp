#pragma once

#include <filesystem>
#include <string>

#include "eyeref/core.hpp"
#include "eyeref/features.hpp"
#include "oracles.hpp"

namespace testing_support {

using eyeref::Rng;

inline oracle::Mat random_mat(Rng& rng, int rows, int cols, double lo = -1.0, double hi = 1.0) {
  oracle::Mat m(rows, std::vector<double>(cols));
  for (auto& r : m)
    for (auto& v : r) v = rng.uniform(lo, hi);
  return m;
}

inline eyeref::nn::RowMatrix<double> to_eigen(const oracle::Mat& m) {
  eyeref::nn::RowMatrix<double> out(m.size(), m.empty() ? 0 : m[0].size());
  for (std::size_t i = 0; i < m.size(); ++i)
    for (std::size_t j = 0; j < m[i].size(); ++j) out(i, j) = m[i][j];
  return out;
}

/// Soft coverage for `classes` classes; some entries exactly 0 or 1.
inline eyeref::LayerMask random_mask(Rng& rng, int h, int w, int classes) {
  eyeref::LayerMask m;
  m.height = h;
  m.width = w;
  m.classes.assign(classes, std::vector<double>(static_cast<std::size_t>(h) * w, 0.0));
  for (std::size_t p = 0; p < m.classes[0].size(); ++p) {
    double left = 1.0;
    for (auto& cls : m.classes) {
      const double u = rng.uniform();
      const double v = u < 0.3 ? 0.0 : u < 0.5 ? left : left * rng.uniform();
      cls[p] = v;
      left -= v;
    }
  }
  return m;
}

inline eyeref::Image random_image(Rng& rng, int h, int w) {
  eyeref::Image img(h, w);
  for (auto& v : img.data) v = static_cast<float>(rng.uniform());
  return img;
}

inline std::vector<double> random_values(Rng& rng, std::size_t n) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform();
  return v;
}

inline double rel_err(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-300}); }

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path temp_dir(const std::string& name) {
  const auto p = std::filesystem::temp_directory_path() / ("eyeref_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace testing_support

namespace testing_support {

/// Label maps for repair checks. kind 0: ellipse iris with an off-centre
/// pupil blob, 1: adds a pupil blob disjoint from the iris, 2: no iris at all,
/// 3: scattered noise labels, 4: kind 0 with 5% of the labels flipped at random.
inline eyeref::ClassMask random_label_mask(Rng& rng, int h, int w, int kind) {
  eyeref::ClassMask m(h, w);
  const double cx = rng.uniform(0.3, 0.7) * w, cy = rng.uniform(0.3, 0.7) * h;
  const double ra = rng.uniform(0.15, 0.3) * w, rb = rng.uniform(0.15, 0.3) * h;
  const double px = cx + rng.uniform(-0.5, 0.5) * ra, py = cy + rng.uniform(-0.5, 0.5) * rb;
  const double pr = rng.uniform(0.2, 0.45) * std::min(ra, rb);
  const double ox = rng.uniform(0.0, 1.0) * w, oy = rng.uniform(0.0, 1.0) * h, orad = rng.uniform(1.0, 3.0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double fx = x + 0.5, fy = y + 0.5;
      auto& v = m.at(y, x);
      if (kind == 3) {
        const double u = rng.uniform();
        v = u < 0.6 ? 0 : u < 0.85 ? 1 : 2;
        continue;
      }
      const bool in_iris = std::pow((fx - cx) / ra, 2) + std::pow((fy - cy) / rb, 2) <= 1.0;
      if (kind != 2 && in_iris) v = 1;
      if (std::hypot(fx - px, fy - py) <= pr) v = 2;
      if (kind == 1 && !in_iris && std::hypot(fx - ox, fy - oy) <= orad) v = 2;
      if (kind == 4 && rng.uniform() < 0.05) v = static_cast<std::uint8_t>(rng.index(3));
    }
  return m;
}

struct Centroid {
  double x = 0, y = 0, count = 0;
};

/// Pixel-centre centroid of the labels accepted by `pick`.
template <class Pick>
Centroid centroid(const eyeref::ClassMask& m, Pick pick) {
  Centroid c;
  for (int y = 0; y < m.height; ++y)
    for (int x = 0; x < m.width; ++x)
      if (pick(m.at(y, x))) {
        c.x += x + 0.5;
        c.y += y + 0.5;
        c.count += 1;
      }
  if (c.count > 0) {
    c.x /= c.count;
    c.y /= c.count;
  }
  return c;
}

}  // namespace testing_support
