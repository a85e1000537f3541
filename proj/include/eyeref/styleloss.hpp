#pragma once

// Loss algebra for semantically masked style transfer:
//
//   style_l   = lambda_g * gs_l + lambda_l * ls_l
//   gs_l      = 1/(4 N^2 M^2) * sum_ij (G_l[O] - G_l[S])^2
//   ls_l      = sum_c 1/(4 N^2 M_c^2) * sum_ij (G_lc[O] - G_lc[S])^2
//   F_lc[O]   = F_l[O] diag(S_lc[I]),   F_lc[S] = F_l[S] diag(S_lc[S])
//   G         = F F^T
//   content   = sum_l alpha_l/(2 N M) * sum_ij (F_l[O] - F_l[I])^2
//   photoreal = sum_c V_c[O]^T L_I V_c[O]     (L_I: matting Laplacian of I)
//   L_total   = eta * sum_l beta_l style_l + mu * content + theta * photoreal
//
// N is the channel count, M the spatial size and M_c = max(1, sum S_lc[I])
// the effective area of class c. A class with zero area in either mask
// contributes nothing to ls_l.

#include <Eigen/Sparse>

#include <map>
#include <span>
#include <string>
#include <vector>

#include "eyeref/config.hpp"
#include "eyeref/features.hpp"
#include "eyeref/nn/tensor.hpp"

namespace eyeref {

template <typename T>
using Matrix = nn::RowMatrix<T>;

template <typename T>
Matrix<T> gram(const Matrix<T>& features) {
  for (Eigen::Index i = 0; i < features.size(); ++i)
    if (!std::isfinite(static_cast<double>(features.data()[i]))) throw Error("ShapeError", "gram", "non-finite features");
  Matrix<T> g = features * features.transpose();
  g.template triangularView<Eigen::StrictlyLower>() = g.transpose();
  return g;
}

/// Scales every column (spatial position) of `features` by the mask value.
template <typename T>
Matrix<T> masked_features(const Matrix<T>& features, std::span<const double> mask) {
  if (static_cast<Eigen::Index>(mask.size()) != features.cols())
    throw Error("ShapeError", "masked_features", "mask size differs from feature positions");
  Matrix<T> out = features;
  for (Eigen::Index j = 0; j < out.cols(); ++j) out.col(j) *= static_cast<T>(mask[j]);
  return out;
}

/// Unmasked Gram-matching term of one layer. Writes d(term)/dF_O when
/// `grad` is non-null.
template <typename T>
T global_style_term(const Matrix<T>& fo, const Matrix<T>& fs, Matrix<T>* grad = nullptr) {
  if (fo.rows() != fs.rows() || fo.cols() != fs.cols()) throw Error("ShapeError", "global_style_term");
  const T n = static_cast<T>(fo.rows());
  const T m = static_cast<T>(fo.cols());
  const Matrix<T> diff = gram(fo) - gram(fs);
  const T denom = T(4) * n * n * m * m;
  if (grad) *grad = (T(4) / denom) * diff * fo;
  return diff.squaredNorm() / denom;
}

/// Masked (per-class) Gram-matching term of one layer.
template <typename T>
T local_style_term(const Matrix<T>& fo, const Matrix<T>& fs, const LayerMask& mask_o, const LayerMask& mask_s,
                   Matrix<T>* grad = nullptr) {
  if (fo.rows() != fs.rows()) throw Error("ShapeError", "local_style_term");
  if (mask_o.classes.size() != mask_s.classes.size())
    throw Error("MaskMismatch", "classes", "output and style masks have different class counts");
  const auto mo = static_cast<std::size_t>(fo.cols());
  const auto ms = static_cast<std::size_t>(fs.cols());
  const T n = static_cast<T>(fo.rows());
  if (grad) *grad = Matrix<T>::Zero(fo.rows(), fo.cols());
  T total = 0;
  for (std::size_t c = 0; c < mask_o.classes.size(); ++c) {
    const auto& so = mask_o.classes[c];
    const auto& ss = mask_s.classes[c];
    if (so.size() != mo || ss.size() != ms) throw Error("MaskMismatch", std::to_string(c), "mask size differs from features");
    const double area_o = mask_o.area(c);
    const double area_s = mask_s.area(c);
    if (area_o <= 0.0 || area_s <= 0.0) continue;
    const T mc = static_cast<T>(std::max(1.0, area_o));
    const Matrix<T> fco = masked_features(fo, so);
    const Matrix<T> diff = gram(fco) - gram(masked_features(fs, ss));
    const T denom = T(4) * n * n * mc * mc;
    total += diff.squaredNorm() / denom;
    if (grad) *grad += masked_features<T>((T(4) / denom) * diff * fco, so);
  }
  return total;
}

/// 1/(2 N M) * sum (F_O - F_I)^2 for one layer.
template <typename T>
T content_term(const Matrix<T>& fo, const Matrix<T>& fi, Matrix<T>* grad = nullptr) {
  if (fo.rows() != fi.rows() || fo.cols() != fi.cols()) throw Error("ShapeError", "content_term");
  const T nm = static_cast<T>(fo.rows()) * static_cast<T>(fo.cols());
  const Matrix<T> diff = fo - fi;
  if (grad) *grad = diff / nm;
  return diff.squaredNorm() / (T(2) * nm);
}

namespace detail {
template <typename T>
const FeatureBlock<T>& layer_of(const FeatureStack<T>& stack, const std::string& layer) {
  auto it = stack.find(layer);
  if (it == stack.end()) throw Error("MissingLayer", layer, "feature stack lacks layer '" + layer + "'");
  return it->second;
}
inline const LayerMask& mask_of(const LayerMaskSet& masks, const std::string& layer) {
  auto it = masks.find(layer);
  if (it == masks.end()) throw Error("MaskMismatch", layer, "no mask for layer '" + layer + "'");
  return it->second;
}
}  // namespace detail

template <typename T>
std::map<std::string, T> global_style_loss(const FeatureStack<T>& out, const FeatureStack<T>& style,
                                           const std::vector<std::string>& layers) {
  std::map<std::string, T> terms;
  for (const auto& l : layers) terms[l] = global_style_term(detail::layer_of(out, l).data, detail::layer_of(style, l).data);
  return terms;
}

template <typename T>
std::map<std::string, T> local_style_loss(const FeatureStack<T>& out, const FeatureStack<T>& style,
                                          const LayerMaskSet& out_masks, const LayerMaskSet& style_masks,
                                          const std::vector<std::string>& layers) {
  std::map<std::string, T> terms;
  for (const auto& l : layers)
    terms[l] = local_style_term(detail::layer_of(out, l).data, detail::layer_of(style, l).data,
                                detail::mask_of(out_masks, l), detail::mask_of(style_masks, l));
  return terms;
}

/// lambda_g * gs + lambda_l * ls, layer by layer. Both maps must cover the same layers.
template <typename T>
std::map<std::string, T> style_loss(const std::map<std::string, T>& gs, const std::map<std::string, T>& ls,
                                    double lambda_g, double lambda_l) {
  std::map<std::string, T> out;
  for (const auto& [l, v] : gs) {
    auto it = ls.find(l);
    if (it == ls.end()) throw Error("MissingLayer", l, "local term missing layer '" + l + "'");
    out[l] = static_cast<T>(lambda_g) * v + static_cast<T>(lambda_l) * it->second;
  }
  for (const auto& [l, v] : ls)
    if (!gs.count(l)) throw Error("MissingLayer", l, "global term missing layer '" + l + "'");
  return out;
}

/// sum_l alpha_l * content_term(l) over layers with non-zero weight.
template <typename T>
T content_loss(const FeatureStack<T>& out, const FeatureStack<T>& input, const std::map<std::string, double>& alpha) {
  T total = 0;
  for (const auto& [l, a] : alpha) {
    if (a == 0.0) continue;
    total += static_cast<T>(a) * content_term(detail::layer_of(out, l).data, detail::layer_of(input, l).data);
  }
  return total;
}

// ---------------------------------------------------------------------------
// Photorealism regulariser

/// Closed-form matting Laplacian over all (2r+1)^2 windows fully inside the
/// image, with pixel index y * width + x.
struct MattingLaplacian {
  int height = 0;
  int width = 0;
  int radius = 1;
  double eps = 1e-5;
  Eigen::SparseMatrix<double> matrix;
};

/// `image` is channel-major (3, h, w). Errors: ImageTooSmall, InvalidWeight.
MattingLaplacian matting_laplacian(std::span<const double> image, int height, int width, double eps = 1e-5,
                                   int radius = 1);
MattingLaplacian matting_laplacian(const Image& image, double eps = 1e-5, int radius = 1);

/// sum_c V_c^T L V_c for a channel-major (3, h, w) output; writes 2 L V_c
/// into `grad` when non-null. Errors: ShapeError.
double photorealism_reg(std::span<const double> output, const MattingLaplacian& laplacian,
                        std::vector<double>* grad = nullptr);
double photorealism_reg(const Image& output, const MattingLaplacian& laplacian);

// ---------------------------------------------------------------------------
// Combined objective

struct StyleLossTerms {
  std::map<std::string, double> global_style;  // gs_l
  std::map<std::string, double> local_style;   // ls_l
  std::map<std::string, double> style;         // style_l
  double weighted_style = 0.0;                 // sum_l beta_l style_l
  double content = 0.0;
  double photorealism = 0.0;
  double total = 0.0;
};

/// Fills `style`, `weighted_style` and `total` from the component terms.
/// Layers present in only one of the global/local maps contribute that term alone.
void combine_terms(StyleLossTerms& terms, const RefinerConfig& config);

/// Constant targets of the objective for one (input, style reference) pair.
template <typename T>
struct LossTargets {
  FeatureStack<T> style;          // features of the style reference S
  FeatureStack<T> content;        // features of the input I
  LayerMaskSet output_masks;      // S_lc[I], aligned to the output's feature grids
  LayerMaskSet style_masks;       // S_lc[S]
  const MattingLaplacian* laplacian = nullptr;  // of I, at the output resolution
};

/// Layers whose features L_total reads under `config`.
std::vector<std::string> loss_layers(const RefinerConfig& config);

/// Builds L_total as a differentiable scalar of the output image `image`
/// (3,h,w) and its extractor responses `taps` (keyed by layer). Gradients
/// reach `image` both directly (photorealism) and through the taps.
template <typename T>
nn::Tensor<T> total_loss(const nn::Tensor<T>& image, const std::map<std::string, nn::Tensor<T>>& taps,
                         const LossTargets<T>& targets, const RefinerConfig& config, StyleLossTerms* report = nullptr) {
  StyleLossTerms terms;
  std::vector<std::string> layers;
  std::vector<nn::Tensor<T>> parents;
  std::map<std::string, Matrix<T>> grads;  // d(L_total)/dF_l

  auto tap = [&](const std::string& l) -> const nn::Tensor<T>& {
    auto it = taps.find(l);
    if (it == taps.end()) throw Error("MissingLayer", l, "output taps lack layer '" + l + "'");
    return it->second;
  };
  auto accumulate = [&](const std::string& l, const Matrix<T>& g, double w) {
    auto it = grads.find(l);
    if (it == grads.end()) grads.emplace(l, static_cast<T>(w) * g);
    else it->second += static_cast<T>(w) * g;
  };

  for (const auto& l : config.global_style_layers) {
    const double beta = config.beta_of(l);
    Matrix<T> g;
    const FeatureBlock<T> fo = to_block(tap(l));
    terms.global_style[l] = global_style_term(fo.data, detail::layer_of(targets.style, l).data, &g);
    if (beta * config.lambda_g != 0.0) accumulate(l, g, config.eta * beta * config.lambda_g);
  }
  for (const auto& l : config.local_style_layers) {
    const double beta = config.beta_of(l);
    Matrix<T> g;
    const FeatureBlock<T> fo = to_block(tap(l));
    terms.local_style[l] = local_style_term(fo.data, detail::layer_of(targets.style, l).data,
                                            detail::mask_of(targets.output_masks, l),
                                            detail::mask_of(targets.style_masks, l), &g);
    if (beta * config.lambda_l != 0.0) accumulate(l, g, config.eta * beta * config.lambda_l);
  }
  for (const auto& [l, a] : config.alpha) {
    if (a == 0.0) continue;
    Matrix<T> g;
    const FeatureBlock<T> fo = to_block(tap(l));
    terms.content += a * content_term(fo.data, detail::layer_of(targets.content, l).data, &g);
    if (config.mu != 0.0) accumulate(l, g, config.mu * a);
  }
  std::vector<double> reg_grad;
  if (targets.laplacian) {
    std::vector<double> v(image.values().begin(), image.values().end());
    terms.photorealism = photorealism_reg(v, *targets.laplacian, &reg_grad);
  }
  combine_terms(terms, config);
  if (report) *report = terms;

  parents.push_back(image);
  for (const auto& [l, g] : grads) {
    layers.push_back(l);
    parents.push_back(tap(l));
  }
  std::vector<Matrix<T>> layer_grads;
  for (const auto& l : layers) layer_grads.push_back(std::move(grads.at(l)));
  const double theta = config.theta;

  return nn::make_result<T>({1}, {static_cast<T>(terms.total)}, parents,
                            [layer_grads = std::move(layer_grads), reg_grad = std::move(reg_grad), theta](nn::Node<T>& n) {
                              const T up = n.grad[0];
                              auto& img = *n.parents[0];
                              if (img.requires_grad && !reg_grad.empty() && theta != 0.0) {
                                T* d = img.grad_data();
                                for (std::size_t i = 0; i < reg_grad.size(); ++i)
                                  d[i] += up * static_cast<T>(theta * reg_grad[i]);
                              }
                              for (std::size_t k = 0; k < layer_grads.size(); ++k) {
                                auto& p = *n.parents[k + 1];
                                if (!p.requires_grad) continue;
                                T* d = p.grad_data();
                                const T* g = layer_grads[k].data();
                                for (std::size_t i = 0; i < p.value.size(); ++i) d[i] += up * g[i];
                              }
                            });
}

}  // namespace eyeref
