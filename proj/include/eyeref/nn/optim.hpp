#pragma once

#include <cmath>
#include <vector>

#include "eyeref/nn/layers.hpp"

namespace eyeref::nn {

/// Adam with bias correction. Parameters without an accumulated gradient
/// are skipped, so frozen tensors stay bitwise unchanged.
template <typename T>
class Adam {
 public:
  Adam() = default;
  Adam(ParamList<T> params, double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (const auto& p : params_) {
      m_.emplace_back(p.tensor.size(), 0.0);
      v_.emplace_back(p.tensor.size(), 0.0);
    }
  }

  void set_learning_rate(double lr) { lr_ = lr; }
  double learning_rate() const { return lr_; }
  const ParamList<T>& params() const { return params_; }

  /// Applies one update with gradients divided by `grad_scale`
  /// (the number of accumulated samples), then clears the gradients.
  void step(double grad_scale = 1.0) {
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, t_);
    const double c2 = 1.0 - std::pow(beta2_, t_);
    for (std::size_t k = 0; k < params_.size(); ++k) {
      auto& tensor = params_[k].tensor;
      const auto g = tensor.grad();
      if (g.empty()) continue;
      auto v = tensor.mutable_values();
      for (std::size_t i = 0; i < v.size(); ++i) {
        const double gi = static_cast<double>(g[i]) / grad_scale;
        m_[k][i] = beta1_ * m_[k][i] + (1.0 - beta1_) * gi;
        v_[k][i] = beta2_ * v_[k][i] + (1.0 - beta2_) * gi * gi;
        const double mh = m_[k][i] / c1;
        const double vh = v_[k][i] / c2;
        v[i] = static_cast<T>(static_cast<double>(v[i]) - lr_ * mh / (std::sqrt(vh) + eps_));
      }
      tensor.zero_grad();
    }
  }

  void zero_grad() {
    for (auto& p : params_) p.tensor.zero_grad();
  }

 private:
  ParamList<T> params_;
  std::vector<std::vector<double>> m_, v_;
  double lr_ = 1e-3, beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
  long t_ = 0;
};

}  // namespace eyeref::nn
