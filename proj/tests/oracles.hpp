#pragma once

// Loop-level reference implementations used to cross-check the library.
// Nothing here calls into the code under test.

#include <array>
#include <cmath>
#include <vector>

namespace oracle {

using Mat = std::vector<std::vector<double>>;  // row-major, rows = channels

inline Mat gram(const Mat& f) {
  const std::size_t n = f.size(), m = n ? f[0].size() : 0;
  Mat g(n, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t k = 0; k < m; ++k) g[i][j] += f[i][k] * f[j][k];
  return g;
}

inline Mat masked(const Mat& f, const std::vector<double>& mask) {
  Mat out = f;
  for (auto& row : out)
    for (std::size_t k = 0; k < row.size(); ++k) row[k] *= mask[k];
  return out;
}

inline double sq_diff(const Mat& a, const Mat& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < a[i].size(); ++j) s += (a[i][j] - b[i][j]) * (a[i][j] - b[i][j]);
  return s;
}

inline double global_style(const Mat& fo, const Mat& fs) {
  const double n = static_cast<double>(fo.size()), m = static_cast<double>(fo[0].size());
  return sq_diff(gram(fo), gram(fs)) / (4.0 * n * n * m * m);
}

/// masks_o[c], masks_s[c]: per-class coverage over the respective positions.
inline double local_style(const Mat& fo, const Mat& fs, const std::vector<std::vector<double>>& masks_o,
                          const std::vector<std::vector<double>>& masks_s) {
  const double n = static_cast<double>(fo.size());
  double total = 0.0;
  for (std::size_t c = 0; c < masks_o.size(); ++c) {
    double area_o = 0.0, area_s = 0.0;
    for (double v : masks_o[c]) area_o += v;
    for (double v : masks_s[c]) area_s += v;
    if (area_o <= 0.0 || area_s <= 0.0) continue;
    const double mc = area_o < 1.0 ? 1.0 : area_o;
    total += sq_diff(gram(masked(fo, masks_o[c])), gram(masked(fs, masks_s[c]))) / (4.0 * n * n * mc * mc);
  }
  return total;
}

inline double content(const Mat& fo, const Mat& fi) {
  const double n = static_cast<double>(fo.size()), m = static_cast<double>(fo[0].size());
  return sq_diff(fo, fi) / (2.0 * n * m);
}

inline bool invert3(const double a[3][3], double out[3][3]) {
  const double det = a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1]) - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0]) +
                     a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0]);
  if (det == 0.0) return false;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      const int r0 = (j + 1) % 3, r1 = (j + 2) % 3, c0 = (i + 1) % 3, c1 = (i + 2) % 3;
      out[i][j] = (a[r0][c0] * a[r1][c1] - a[r0][c1] * a[r1][c0]) / det;
    }
  return true;
}

/// Dense matting Laplacian accumulated window by window from the closed form
///   L_ij = sum_{w containing i,j} [delta_ij - (1 + (I_i-mu)^T (Sigma + eps/|w| I)^-1 (I_j-mu)) / |w|]
/// for a channel-major (3,h,w) image and 3x3 windows fully inside it.
inline Mat matting_laplacian(const std::vector<double>& img, int h, int w, double eps) {
  const int n = h * w;
  const double wn = 9.0;
  Mat L(n, std::vector<double>(n, 0.0));
  auto px = [&](int c, int y, int x) { return img[static_cast<std::size_t>(c) * n + y * w + x]; };
  for (int cy = 1; cy + 1 < h; ++cy)
    for (int cx = 1; cx + 1 < w; ++cx) {
      std::vector<int> idx;
      std::vector<std::array<double, 3>> col;
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          idx.push_back((cy + dy) * w + cx + dx);
          col.push_back({px(0, cy + dy, cx + dx), px(1, cy + dy, cx + dx), px(2, cy + dy, cx + dx)});
        }
      double mu[3] = {0, 0, 0};
      for (const auto& v : col)
        for (int c = 0; c < 3; ++c) mu[c] += v[c] / wn;
      double cov[3][3] = {};
      for (const auto& v : col)
        for (int a = 0; a < 3; ++a)
          for (int b = 0; b < 3; ++b) cov[a][b] += (v[a] - mu[a]) * (v[b] - mu[b]) / wn;
      for (int a = 0; a < 3; ++a) cov[a][a] += eps / wn;
      double inv[3][3];
      invert3(cov, inv);
      for (std::size_t p = 0; p < idx.size(); ++p)
        for (std::size_t q = 0; q < idx.size(); ++q) {
          double quad = 0.0;
          for (int a = 0; a < 3; ++a)
            for (int b = 0; b < 3; ++b) quad += (col[p][a] - mu[a]) * inv[a][b] * (col[q][b] - mu[b]);
          L[idx[p]][idx[q]] += (p == q ? 1.0 : 0.0) - (1.0 + quad) / wn;
        }
    }
  return L;
}

inline double quadratic_form(const Mat& L, const std::vector<double>& img, int n) {
  double total = 0.0;
  for (int c = 0; c < 3; ++c)
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) total += img[c * n + i] * L[i][j] * img[c * n + j];
  return total;
}

}  // namespace oracle
