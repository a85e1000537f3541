#include "eyeref/styleloss.hpp"

#include <set>

namespace eyeref {

MattingLaplacian matting_laplacian(std::span<const double> image, int height, int width, double eps, int radius) {
  const int side = 2 * radius + 1;
  if (radius < 1 || height < side || width < side)
    throw Error("ImageTooSmall", std::to_string(height) + "x" + std::to_string(width),
                "matting Laplacian needs at least one full window");
  if (!(eps > 0.0)) throw Error("InvalidWeight", "eps", "matting eps must be positive");
  const std::size_t n = static_cast<std::size_t>(height) * width;
  if (image.size() != 3 * n) throw Error("ShapeError", "matting_laplacian", "expected a 3-channel image");

  const int area = side * side;
  std::vector<Eigen::Triplet<double>> triplets;
  triplets.reserve(static_cast<std::size_t>(height - 2 * radius) * (width - 2 * radius) * area * area);
  Eigen::MatrixXd window(area, 3);
  std::vector<int> index(area);

  for (int cy = radius; cy < height - radius; ++cy) {
    for (int cx = radius; cx < width - radius; ++cx) {
      int k = 0;
      for (int dy = -radius; dy <= radius; ++dy)
        for (int dx = -radius; dx <= radius; ++dx, ++k) {
          const int p = (cy + dy) * width + (cx + dx);
          index[k] = p;
          for (int c = 0; c < 3; ++c) window(k, c) = image[c * n + p];
        }
      const Eigen::RowVector3d mu = window.colwise().mean();
      const Eigen::MatrixXd centered = window.rowwise() - mu;
      const Eigen::Matrix3d cov = centered.transpose() * centered / area;
      const Eigen::Matrix3d inv = (cov + (eps / area) * Eigen::Matrix3d::Identity()).inverse();
      const Eigen::MatrixXd affinity = (1.0 + (centered * inv * centered.transpose()).array()) / area;
      // Upper triangle mirrored so L is exactly symmetric.
      for (int i = 0; i < area; ++i)
        for (int j = 0; j < area; ++j) {
          const double a = i <= j ? affinity(i, j) : affinity(j, i);
          triplets.emplace_back(index[i], index[j], (i == j ? 1.0 : 0.0) - a);
        }
    }
  }
  MattingLaplacian out;
  out.height = height;
  out.width = width;
  out.radius = radius;
  out.eps = eps;
  out.matrix.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  out.matrix.setFromTriplets(triplets.begin(), triplets.end());
  return out;
}

MattingLaplacian matting_laplacian(const Image& image, double eps, int radius) {
  std::vector<double> v(image.data.begin(), image.data.end());
  return matting_laplacian(v, image.height, image.width, eps, radius);
}

double photorealism_reg(std::span<const double> output, const MattingLaplacian& laplacian, std::vector<double>* grad) {
  const std::size_t n = static_cast<std::size_t>(laplacian.height) * laplacian.width;
  if (output.size() != 3 * n) throw Error("ShapeError", "photorealism_reg", "output size differs from the Laplacian's image");
  if (grad) grad->assign(3 * n, 0.0);
  double total = 0.0;
  for (int c = 0; c < 3; ++c) {
    Eigen::Map<const Eigen::VectorXd> v(output.data() + c * n, static_cast<Eigen::Index>(n));
    const Eigen::VectorXd lv = laplacian.matrix * v;
    total += v.dot(lv);
    if (grad) Eigen::Map<Eigen::VectorXd>(grad->data() + c * n, static_cast<Eigen::Index>(n)) = 2.0 * lv;
  }
  return total;
}

double photorealism_reg(const Image& output, const MattingLaplacian& laplacian) {
  std::vector<double> v(output.data.begin(), output.data.end());
  return photorealism_reg(v, laplacian);
}

void combine_terms(StyleLossTerms& t, const RefinerConfig& config) {
  std::set<std::string> layers;
  for (const auto& [l, v] : t.global_style) layers.insert(l);
  for (const auto& [l, v] : t.local_style) layers.insert(l);
  t.style.clear();
  t.weighted_style = 0.0;
  for (const auto& l : layers) {
    double s = 0.0;
    if (auto it = t.global_style.find(l); it != t.global_style.end()) s += config.lambda_g * it->second;
    if (auto it = t.local_style.find(l); it != t.local_style.end()) s += config.lambda_l * it->second;
    t.style[l] = s;
    t.weighted_style += config.beta_of(l) * s;
  }
  t.total = config.eta * t.weighted_style + config.mu * t.content + config.theta * t.photorealism;
}

std::vector<std::string> loss_layers(const RefinerConfig& config) {
  std::set<std::string> s(config.local_style_layers.begin(), config.local_style_layers.end());
  s.insert(config.global_style_layers.begin(), config.global_style_layers.end());
  for (const auto& [l, a] : config.alpha)
    if (a != 0.0) s.insert(l);
  return {s.begin(), s.end()};
}

}  // namespace eyeref
