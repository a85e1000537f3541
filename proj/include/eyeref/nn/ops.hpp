#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>

#include "eyeref/nn/tensor.hpp"

namespace eyeref::nn {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMatrix = Eigen::Map<RowMatrix<T>>;
template <typename T>
using ConstMapMatrix = Eigen::Map<const RowMatrix<T>>;

namespace detail {

inline int conv_out(int in, int k, int stride, int pad) { return (in + 2 * pad - k) / stride + 1; }

// cols[(c*k + ky)*k + kx][oy*wo + ox] = x[c][oy*s - p + ky][ox*s - p + kx]
template <typename T>
void im2col(const T* x, int c, int h, int w, int k, int stride, int pad, int ho, int wo, T* cols) {
  const std::size_t plane = static_cast<std::size_t>(ho) * wo;
  for (int ci = 0; ci < c; ++ci)
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        T* row = cols + ((static_cast<std::size_t>(ci) * k + ky) * k + kx) * plane;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * stride - pad + ky;
          T* dst = row + static_cast<std::size_t>(oy) * wo;
          if (iy < 0 || iy >= h) {
            std::fill(dst, dst + wo, T(0));
            continue;
          }
          const T* src = x + (static_cast<std::size_t>(ci) * h + iy) * w;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * stride - pad + kx;
            dst[ox] = (ix >= 0 && ix < w) ? src[ix] : T(0);
          }
        }
      }
}

template <typename T>
void col2im(const T* cols, int c, int h, int w, int k, int stride, int pad, int ho, int wo, T* x) {
  const std::size_t plane = static_cast<std::size_t>(ho) * wo;
  for (int ci = 0; ci < c; ++ci)
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        const T* row = cols + ((static_cast<std::size_t>(ci) * k + ky) * k + kx) * plane;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * stride - pad + ky;
          if (iy < 0 || iy >= h) continue;
          T* dst = x + (static_cast<std::size_t>(ci) * h + iy) * w;
          const T* src = row + static_cast<std::size_t>(oy) * wo;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * stride - pad + kx;
            if (ix >= 0 && ix < w) dst[ix] += src[ox];
          }
        }
      }
}

inline void require_rank3(const std::vector<int>& d, const char* op) {
  if (d.size() != 3) throw Error("ShapeError", op, std::string(op) + ": expected a (C,H,W) tensor");
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Convolutions

/// 2-D cross-correlation with zero padding. weight: (out, in, k, k), bias: (out).
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias, int stride, int pad) {
  detail::require_rank3(x.dims(), "conv2d");
  const int cin = x.channels(), h = x.height(), w = x.width();
  const int cout = weight.dim(0), k = weight.dim(2);
  if (weight.dim(1) != cin) throw Error("ShapeError", "conv2d", "conv2d: channel mismatch");
  const int ho = detail::conv_out(h, k, stride, pad), wo = detail::conv_out(w, k, stride, pad);
  if (ho <= 0 || wo <= 0) throw Error("ShapeError", "conv2d", "conv2d: input smaller than kernel");
  const int kk = cin * k * k;
  const int p = ho * wo;

  auto cols = std::make_shared<std::vector<T>>(static_cast<std::size_t>(kk) * p);
  detail::im2col(x.values().data(), cin, h, w, k, stride, pad, ho, wo, cols->data());
  std::vector<T> out(static_cast<std::size_t>(cout) * p);
  MapMatrix<T> y(out.data(), cout, p);
  ConstMapMatrix<T> wm(weight.values().data(), cout, kk);
  ConstMapMatrix<T> cm(cols->data(), kk, p);
  y.noalias() = wm * cm;
  const T* b = bias.values().data();
  for (int o = 0; o < cout; ++o) y.row(o).array() += b[o];

  return make_result<T>({cout, ho, wo}, std::move(out), {x, weight, bias},
                        [=](Node<T>& n) {
                          ConstMapMatrix<T> dy(n.grad.data(), cout, p);
                          auto& xn = *n.parents[0];
                          auto& wn = *n.parents[1];
                          auto& bn = *n.parents[2];
                          if (wn.requires_grad) {
                            MapMatrix<T> dw(wn.grad_data(), cout, kk);
                            dw.noalias() += dy * ConstMapMatrix<T>(cols->data(), kk, p).transpose();
                          }
                          if (bn.requires_grad) {
                            T* db = bn.grad_data();
                            for (int o = 0; o < cout; ++o) db[o] += dy.row(o).sum();
                          }
                          if (xn.requires_grad) {
                            RowMatrix<T> dcols = ConstMapMatrix<T>(wn.value.data(), cout, kk).transpose() * dy;
                            detail::col2im(dcols.data(), cin, h, w, k, stride, pad, ho, wo, xn.grad_data());
                          }
                        });
}

/// Transposed convolution (adjoint of conv2d). weight: (in, out, k, k).
/// Output size is (H-1)*stride - 2*pad + k.
template <typename T>
Tensor<T> conv_transpose2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias, int stride, int pad) {
  detail::require_rank3(x.dims(), "conv_transpose2d");
  const int cin = x.channels(), h = x.height(), w = x.width();
  const int cout = weight.dim(1), k = weight.dim(2);
  if (weight.dim(0) != cin) throw Error("ShapeError", "conv_transpose2d", "conv_transpose2d: channel mismatch");
  const int ho = (h - 1) * stride - 2 * pad + k, wo = (w - 1) * stride - 2 * pad + k;
  if (ho <= 0 || wo <= 0) throw Error("ShapeError", "conv_transpose2d");
  const int kk = cout * k * k;
  const int p = h * w;

  RowMatrix<T> cols = ConstMapMatrix<T>(weight.values().data(), cin, kk).transpose() *
                      ConstMapMatrix<T>(x.values().data(), cin, p);
  std::vector<T> out(static_cast<std::size_t>(cout) * ho * wo, T(0));
  // The input grid plays the role of conv2d's output grid.
  detail::col2im(cols.data(), cout, ho, wo, k, stride, pad, h, w, out.data());
  const T* b = bias.values().data();
  const std::size_t plane = static_cast<std::size_t>(ho) * wo;
  for (int o = 0; o < cout; ++o)
    for (std::size_t i = 0; i < plane; ++i) out[o * plane + i] += b[o];

  return make_result<T>({cout, ho, wo}, std::move(out), {x, weight, bias}, [=](Node<T>& n) {
    auto& xn = *n.parents[0];
    auto& wn = *n.parents[1];
    auto& bn = *n.parents[2];
    RowMatrix<T> dcols(kk, p);
    detail::im2col(n.grad.data(), cout, ho, wo, k, stride, pad, h, w, dcols.data());
    if (bn.requires_grad) {
      T* db = bn.grad_data();
      for (int o = 0; o < cout; ++o) {
        T s = 0;
        for (std::size_t i = 0; i < plane; ++i) s += n.grad[o * plane + i];
        db[o] += s;
      }
    }
    if (wn.requires_grad) {
      MapMatrix<T> dw(wn.grad_data(), cin, kk);
      dw.noalias() += ConstMapMatrix<T>(xn.value.data(), cin, p) * dcols.transpose();
    }
    if (xn.requires_grad) {
      MapMatrix<T> dx(xn.grad_data(), cin, p);
      dx.noalias() += ConstMapMatrix<T>(wn.value.data(), cin, kk) * dcols;
    }
  });
}

/// Fully connected layer on the flattened input. weight: (out, in), bias: (out).
/// Result dims: (out, 1, 1).
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
  const int in = static_cast<int>(x.size());
  const int out_n = weight.dim(0);
  if (weight.dim(1) != in) throw Error("ShapeError", "linear", "linear: input size mismatch");
  std::vector<T> out(out_n);
  Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>> y(out.data(), out_n);
  y.noalias() = ConstMapMatrix<T>(weight.values().data(), out_n, in) *
                Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>>(x.values().data(), in);
  for (int o = 0; o < out_n; ++o) out[o] += bias.values()[o];
  return make_result<T>({out_n, 1, 1}, std::move(out), {x, weight, bias}, [=](Node<T>& n) {
    auto& xn = *n.parents[0];
    auto& wn = *n.parents[1];
    auto& bn = *n.parents[2];
    Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, 1>> dy(n.grad.data(), out_n);
    if (bn.requires_grad) {
      T* db = bn.grad_data();
      for (int o = 0; o < out_n; ++o) db[o] += dy[o];
    }
    if (wn.requires_grad) {
      MapMatrix<T> dw(wn.grad_data(), out_n, in);
      dw.noalias() += dy * Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(xn.value.data(), in);
    }
    if (xn.requires_grad) {
      Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>> dx(xn.grad_data(), in);
      dx.noalias() += ConstMapMatrix<T>(wn.value.data(), out_n, in).transpose() * dy;
    }
  });
}

// ---------------------------------------------------------------------------
// Elementwise

template <typename T, typename F, typename DF>
Tensor<T> unary(const Tensor<T>& x, F f, DF df) {
  std::vector<T> out(x.size());
  const auto xv = x.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(xv[i]);
  return make_result<T>(x.dims(), std::move(out), {x}, [df](Node<T>& n) {
    auto& xn = *n.parents[0];
    T* dx = xn.grad_data();
    for (std::size_t i = 0; i < n.grad.size(); ++i) dx[i] += n.grad[i] * df(xn.value[i], n.value[i]);
  });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  return unary(x, [](T v) { return v > T(0) ? v : T(0); }, [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <typename T>
Tensor<T> leaky_relu(const Tensor<T>& x, T slope = T(0.2)) {
  return unary(x, [slope](T v) { return v > T(0) ? v : slope * v; },
               [slope](T v, T) { return v > T(0) ? T(1) : slope; });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  return unary(x, [](T v) { return T(1) / (T(1) + std::exp(-v)); }, [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Tensor<T> tanh(const Tensor<T>& x) {
  return unary(x, [](T v) { return std::tanh(v); }, [](T, T y) { return T(1) - y * y; });
}

/// Clamp to [0,1]; gradient passes only strictly inside the range
/// (and at the bounds when approached from inside).
template <typename T>
Tensor<T> clamp01(const Tensor<T>& x) {
  return unary(x, [](T v) { return std::clamp(v, T(0), T(1)); },
               [](T v, T) { return (v >= T(0) && v <= T(1)) ? T(1) : T(0); });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& x, T s) {
  return unary(x, [s](T v) { return s * v; }, [s](T, T) { return s; });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& x, T s) {
  return unary(x, [s](T v) { return v + s; }, [](T, T) { return T(1); });
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.dims() != b.dims()) throw Error("ShapeError", "add", "add: shape mismatch");
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] + b.values()[i];
  return make_result<T>(a.dims(), std::move(out), {a, b}, [](Node<T>& n) {
    for (int k = 0; k < 2; ++k) {
      auto& p = *n.parents[k];
      if (!p.requires_grad) continue;
      T* d = p.grad_data();
      for (std::size_t i = 0; i < n.grad.size(); ++i) d[i] += n.grad[i];
    }
  });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return add(a, scale(b, T(-1)));
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.dims() != b.dims()) throw Error("ShapeError", "mul", "mul: shape mismatch");
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] * b.values()[i];
  return make_result<T>(a.dims(), std::move(out), {a, b}, [](Node<T>& n) {
    auto& an = *n.parents[0];
    auto& bn = *n.parents[1];
    if (an.requires_grad) {
      T* d = an.grad_data();
      for (std::size_t i = 0; i < n.grad.size(); ++i) d[i] += n.grad[i] * bn.value[i];
    }
    if (bn.requires_grad) {
      T* d = bn.grad_data();
      for (std::size_t i = 0; i < n.grad.size(); ++i) d[i] += n.grad[i] * an.value[i];
    }
  });
}

/// Sum of several same-shaped tensors (typically scalar loss terms).
template <typename T>
Tensor<T> sum_of(const std::vector<Tensor<T>>& terms) {
  if (terms.empty()) throw Error("ShapeError", "sum_of", "sum_of: no terms");
  Tensor<T> acc = terms[0];
  for (std::size_t i = 1; i < terms.size(); ++i) acc = add(acc, terms[i]);
  return acc;
}

// ---------------------------------------------------------------------------
// Reductions and losses

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  T s = 0;
  for (T v : x.values()) s += v;
  return make_result<T>({1}, {s}, {x}, [](Node<T>& n) {
    auto& xn = *n.parents[0];
    T* d = xn.grad_data();
    for (std::size_t i = 0; i < xn.value.size(); ++i) d[i] += n.grad[0];
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  return scale(sum(x), T(1) / static_cast<T>(x.size()));
}

/// mean((x - target)^2) with a constant target.
template <typename T>
Tensor<T> mse(const Tensor<T>& x, std::span<const T> target) {
  if (target.size() != x.size()) throw Error("ShapeError", "mse", "mse: target size mismatch");
  const std::vector<T> t(target.begin(), target.end());
  T s = 0;
  for (std::size_t i = 0; i < t.size(); ++i) s += (x.values()[i] - t[i]) * (x.values()[i] - t[i]);
  const T inv = T(1) / static_cast<T>(t.size());
  return make_result<T>({1}, {s * inv}, {x}, [t, inv](Node<T>& n) {
    auto& xn = *n.parents[0];
    T* d = xn.grad_data();
    for (std::size_t i = 0; i < t.size(); ++i) d[i] += n.grad[0] * T(2) * inv * (xn.value[i] - t[i]);
  });
}

/// Mean per-pixel softmax cross-entropy of (C,H,W) logits against labels.
template <typename T>
Tensor<T> softmax_cross_entropy(const Tensor<T>& logits, std::span<const std::uint8_t> labels) {
  detail::require_rank3(logits.dims(), "softmax_cross_entropy");
  const int c = logits.channels();
  const std::size_t p = static_cast<std::size_t>(logits.height()) * logits.width();
  if (labels.size() != p) throw Error("ShapeError", "softmax_cross_entropy", "label count mismatch");
  auto prob = std::make_shared<std::vector<T>>(c * p);
  const auto lv = logits.values();
  T loss = 0;
  for (std::size_t j = 0; j < p; ++j) {
    T mx = lv[j];
    for (int k = 1; k < c; ++k) mx = std::max(mx, lv[k * p + j]);
    T z = 0;
    for (int k = 0; k < c; ++k) z += std::exp(lv[k * p + j] - mx);
    for (int k = 0; k < c; ++k) (*prob)[k * p + j] = std::exp(lv[k * p + j] - mx) / z;
    if (labels[j] >= c) throw Error("ShapeError", "softmax_cross_entropy", "label out of range");
    loss -= std::log(std::max((*prob)[labels[j] * p + j], T(1e-30)));
  }
  const std::vector<std::uint8_t> lab(labels.begin(), labels.end());
  const T inv = T(1) / static_cast<T>(p);
  return make_result<T>({1}, {loss * inv}, {logits}, [prob, lab, c, p, inv](Node<T>& n) {
    T* d = n.parents[0]->grad_data();
    const T g = n.grad[0] * inv;
    for (int k = 0; k < c; ++k)
      for (std::size_t j = 0; j < p; ++j) d[k * p + j] += g * ((*prob)[k * p + j] - (lab[j] == k ? T(1) : T(0)));
  });
}

// ---------------------------------------------------------------------------
// Spatial

/// 2x2 average pooling, stride 2 (odd trailing row/column dropped).
template <typename T>
Tensor<T> avg_pool2(const Tensor<T>& x) {
  detail::require_rank3(x.dims(), "avg_pool2");
  const int c = x.channels(), h = x.height(), w = x.width();
  const int ho = h / 2, wo = w / 2;
  if (ho == 0 || wo == 0) throw Error("ShapeError", "avg_pool2", "avg_pool2: input too small");
  std::vector<T> out(static_cast<std::size_t>(c) * ho * wo);
  const auto xv = x.values();
  for (int ci = 0; ci < c; ++ci)
    for (int y = 0; y < ho; ++y)
      for (int xx = 0; xx < wo; ++xx) {
        const std::size_t b = (static_cast<std::size_t>(ci) * h + 2 * y) * w + 2 * xx;
        out[(static_cast<std::size_t>(ci) * ho + y) * wo + xx] = T(0.25) * (xv[b] + xv[b + 1] + xv[b + w] + xv[b + w + 1]);
      }
  return make_result<T>({c, ho, wo}, std::move(out), {x}, [=](Node<T>& n) {
    T* d = n.parents[0]->grad_data();
    for (int ci = 0; ci < c; ++ci)
      for (int y = 0; y < ho; ++y)
        for (int xx = 0; xx < wo; ++xx) {
          const T g = T(0.25) * n.grad[(static_cast<std::size_t>(ci) * ho + y) * wo + xx];
          const std::size_t b = (static_cast<std::size_t>(ci) * h + 2 * y) * w + 2 * xx;
          d[b] += g;
          d[b + 1] += g;
          d[b + w] += g;
          d[b + w + 1] += g;
        }
  });
}

/// Nearest-neighbour 2x upsampling.
template <typename T>
Tensor<T> upsample2(const Tensor<T>& x) {
  detail::require_rank3(x.dims(), "upsample2");
  const int c = x.channels(), h = x.height(), w = x.width();
  const int ho = 2 * h, wo = 2 * w;
  std::vector<T> out(static_cast<std::size_t>(c) * ho * wo);
  const auto xv = x.values();
  for (int ci = 0; ci < c; ++ci)
    for (int y = 0; y < ho; ++y)
      for (int xx = 0; xx < wo; ++xx)
        out[(static_cast<std::size_t>(ci) * ho + y) * wo + xx] = xv[(static_cast<std::size_t>(ci) * h + y / 2) * w + xx / 2];
  return make_result<T>({c, ho, wo}, std::move(out), {x}, [=](Node<T>& n) {
    T* d = n.parents[0]->grad_data();
    for (int ci = 0; ci < c; ++ci)
      for (int y = 0; y < ho; ++y)
        for (int xx = 0; xx < wo; ++xx)
          d[(static_cast<std::size_t>(ci) * h + y / 2) * w + xx / 2] += n.grad[(static_cast<std::size_t>(ci) * ho + y) * wo + xx];
  });
}

/// Channel concatenation of same-sized maps.
template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw Error("ShapeError", "concat", "concat: nothing to join");
  const int h = parts[0].height(), w = parts[0].width();
  int c = 0;
  for (const auto& p : parts) {
    if (p.height() != h || p.width() != w) throw Error("ShapeError", "concat", "concat: spatial size mismatch");
    c += p.channels();
  }
  std::vector<T> out;
  out.reserve(static_cast<std::size_t>(c) * h * w);
  std::vector<std::size_t> offsets;
  for (const auto& p : parts) {
    offsets.push_back(out.size());
    out.insert(out.end(), p.values().begin(), p.values().end());
  }
  return make_result<T>({c, h, w}, std::move(out), parts, [offsets](Node<T>& n) {
    for (std::size_t k = 0; k < n.parents.size(); ++k) {
      auto& p = *n.parents[k];
      if (!p.requires_grad) continue;
      T* d = p.grad_data();
      for (std::size_t i = 0; i < p.value.size(); ++i) d[i] += n.grad[offsets[k] + i];
    }
  });
}

/// Multiplies every channel by a constant (H,W) spatial map.
template <typename T>
Tensor<T> mul_spatial(const Tensor<T>& x, std::span<const T> mask) {
  detail::require_rank3(x.dims(), "mul_spatial");
  const std::size_t p = static_cast<std::size_t>(x.height()) * x.width();
  if (mask.size() != p) throw Error("ShapeError", "mul_spatial", "mask size mismatch");
  const std::vector<T> m(mask.begin(), mask.end());
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.values()[i] * m[i % p];
  return make_result<T>(x.dims(), std::move(out), {x}, [m, p](Node<T>& n) {
    T* d = n.parents[0]->grad_data();
    for (std::size_t i = 0; i < n.grad.size(); ++i) d[i] += n.grad[i] * m[i % p];
  });
}

/// Per-channel affine transform y[c] = (x[c] - shift[c]) / div[c] with constants.
template <typename T>
Tensor<T> channel_affine(const Tensor<T>& x, std::span<const T> shift, std::span<const T> div) {
  detail::require_rank3(x.dims(), "channel_affine");
  const int c = x.channels();
  const std::size_t p = static_cast<std::size_t>(x.height()) * x.width();
  std::vector<T> inv(c), sh(shift.begin(), shift.end());
  for (int k = 0; k < c; ++k) inv[k] = T(1) / div[k];
  std::vector<T> out(x.size());
  for (int k = 0; k < c; ++k)
    for (std::size_t j = 0; j < p; ++j) out[k * p + j] = (x.values()[k * p + j] - sh[k]) * inv[k];
  return make_result<T>(x.dims(), std::move(out), {x}, [inv, p, c](Node<T>& n) {
    T* d = n.parents[0]->grad_data();
    for (int k = 0; k < c; ++k)
      for (std::size_t j = 0; j < p; ++j) d[k * p + j] += n.grad[k * p + j] * inv[k];
  });
}

/// Layer normalisation over (C,H,W) with per-channel gain and shift.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps = T(1e-5)) {
  detail::require_rank3(x.dims(), "layer_norm");
  const int c = x.channels();
  const std::size_t p = static_cast<std::size_t>(x.height()) * x.width();
  const std::size_t n_el = x.size();
  const auto xv = x.values();
  T mu = 0;
  for (T v : xv) mu += v;
  mu /= static_cast<T>(n_el);
  T var = 0;
  for (T v : xv) var += (v - mu) * (v - mu);
  var /= static_cast<T>(n_el);
  const T inv_std = T(1) / std::sqrt(var + eps);
  auto xhat = std::make_shared<std::vector<T>>(n_el);
  std::vector<T> out(n_el);
  for (int k = 0; k < c; ++k)
    for (std::size_t j = 0; j < p; ++j) {
      const std::size_t i = k * p + j;
      (*xhat)[i] = (xv[i] - mu) * inv_std;
      out[i] = (*xhat)[i] * gamma.values()[k] + beta.values()[k];
    }
  return make_result<T>(x.dims(), std::move(out), {x, gamma, beta}, [=](Node<T>& n) {
    auto& xn = *n.parents[0];
    auto& gn = *n.parents[1];
    auto& bn = *n.parents[2];
    if (gn.requires_grad || bn.requires_grad) {
      T* dg = gn.requires_grad ? gn.grad_data() : nullptr;
      T* db = bn.requires_grad ? bn.grad_data() : nullptr;
      for (int k = 0; k < c; ++k) {
        T sg = 0, sb = 0;
        for (std::size_t j = 0; j < p; ++j) {
          sg += n.grad[k * p + j] * (*xhat)[k * p + j];
          sb += n.grad[k * p + j];
        }
        if (dg) dg[k] += sg;
        if (db) db[k] += sb;
      }
    }
    if (xn.requires_grad) {
      std::vector<T> dxhat(n_el);
      T s1 = 0, s2 = 0;
      for (int k = 0; k < c; ++k)
        for (std::size_t j = 0; j < p; ++j) {
          const std::size_t i = k * p + j;
          dxhat[i] = n.grad[i] * gn.value[k];
          s1 += dxhat[i];
          s2 += dxhat[i] * (*xhat)[i];
        }
      T* dx = xn.grad_data();
      const T nn = static_cast<T>(n_el);
      for (std::size_t i = 0; i < n_el; ++i) dx[i] += inv_std / nn * (nn * dxhat[i] - s1 - (*xhat)[i] * s2);
    }
  });
}

}  // namespace eyeref::nn
