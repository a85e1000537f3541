#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "eyeref/nn/ops.hpp"

namespace eyeref::nn {

template <typename T>
struct NamedParam {
  std::string name;
  Tensor<T> tensor;
};

template <typename T>
using ParamList = std::vector<NamedParam<T>>;

template <typename T>
void zero_grads(const ParamList<T>& params) {
  for (const auto& p : params) const_cast<Tensor<T>&>(p.tensor).zero_grad();
}

template <typename T>
void set_trainable(const ParamList<T>& params, bool on) {
  for (const auto& p : params) const_cast<Tensor<T>&>(p.tensor).set_requires_grad(on);
}

template <typename T>
Tensor<T> he_normal(std::vector<int> dims, int fan_in, Rng& rng, bool trainable = true) {
  const auto n = element_count(dims);
  std::vector<T> v(n);
  const double sd = std::sqrt(2.0 / std::max(1, fan_in));
  for (auto& x : v) x = static_cast<T>(rng.normal(0.0, sd));
  return Tensor<T>(std::move(dims), std::move(v), trainable);
}

template <typename T>
struct Conv2d {
  Tensor<T> weight;  // (out, in, k, k)
  Tensor<T> bias;    // (out)
  int stride = 1;
  int pad = 0;

  Conv2d() = default;
  Conv2d(int in, int out, int k, int stride_, int pad_, Rng& rng, bool trainable = true)
      : weight(he_normal<T>({out, in, k, k}, in * k * k, rng, trainable)),
        bias(Tensor<T>::zeros({out}, trainable)),
        stride(stride_),
        pad(pad_) {}

  Tensor<T> operator()(const Tensor<T>& x) const { return conv2d(x, weight, bias, stride, pad); }

  void zero() {
    std::fill(weight.mutable_values().begin(), weight.mutable_values().end(), T(0));
    std::fill(bias.mutable_values().begin(), bias.mutable_values().end(), T(0));
  }
  void collect(ParamList<T>& out, const std::string& prefix) const {
    out.push_back({prefix + ".weight", weight});
    out.push_back({prefix + ".bias", bias});
  }
};

template <typename T>
struct ConvTranspose2d {
  Tensor<T> weight;  // (in, out, k, k)
  Tensor<T> bias;
  int stride = 2;
  int pad = 1;

  ConvTranspose2d() = default;
  ConvTranspose2d(int in, int out, int k, int stride_, int pad_, Rng& rng)
      : weight(he_normal<T>({in, out, k, k}, in * k * k / (stride_ * stride_), rng)),
        bias(Tensor<T>::zeros({out}, true)),
        stride(stride_),
        pad(pad_) {}

  Tensor<T> operator()(const Tensor<T>& x) const { return conv_transpose2d(x, weight, bias, stride, pad); }

  void collect(ParamList<T>& out, const std::string& prefix) const {
    out.push_back({prefix + ".weight", weight});
    out.push_back({prefix + ".bias", bias});
  }
};

template <typename T>
struct Linear {
  Tensor<T> weight;  // (out, in)
  Tensor<T> bias;

  Linear() = default;
  Linear(int in, int out, Rng& rng) : weight(he_normal<T>({out, in}, in, rng)), bias(Tensor<T>::zeros({out}, true)) {}

  Tensor<T> operator()(const Tensor<T>& x) const { return linear(x, weight, bias); }

  void collect(ParamList<T>& out, const std::string& prefix) const {
    out.push_back({prefix + ".weight", weight});
    out.push_back({prefix + ".bias", bias});
  }
};

template <typename T>
struct LayerNorm {
  Tensor<T> gamma;
  Tensor<T> beta;

  LayerNorm() = default;
  explicit LayerNorm(int channels)
      : gamma(Tensor<T>(std::vector<int>{channels}, std::vector<T>(channels, T(1)), true)),
        beta(Tensor<T>::zeros({channels}, true)) {}

  Tensor<T> operator()(const Tensor<T>& x) const { return layer_norm(x, gamma, beta); }

  void collect(ParamList<T>& out, const std::string& prefix) const {
    out.push_back({prefix + ".gamma", gamma});
    out.push_back({prefix + ".beta", beta});
  }
};

/// x_{l+1} = relu(x_l + F(x_l)), F = conv3x3 -> relu -> conv3x3.
template <typename T>
struct ResidualUnit {
  Conv2d<T> first;
  Conv2d<T> second;

  ResidualUnit() = default;
  ResidualUnit(int channels, Rng& rng) : first(channels, channels, 3, 1, 1, rng), second(channels, channels, 3, 1, 1, rng) {}

  Tensor<T> residual(const Tensor<T>& x) const { return second(relu(first(x))); }
  Tensor<T> operator()(const Tensor<T>& x) const { return relu(add(x, residual(x))); }

  /// Zeroes the residual branch so the unit reduces to relu(x).
  void zero_residual() {
    first.zero();
    second.zero();
  }
  void collect(ParamList<T>& out, const std::string& prefix) const {
    first.collect(out, prefix + ".conv1");
    second.collect(out, prefix + ".conv2");
  }
};

}  // namespace eyeref::nn
