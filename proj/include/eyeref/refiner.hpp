#pragma once

#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "eyeref/config.hpp"
#include "eyeref/core.hpp"
#include "eyeref/io.hpp"
#include "eyeref/nn/layers.hpp"
#include "eyeref/percept.hpp"
#include "eyeref/segmenter.hpp"
#include "eyeref/styleloss.hpp"

namespace eyeref {

/// Mask planes fed to the generators and the discriminator: iris and pupil
/// indicators area-averaged to (height, width), channel-major.
std::vector<float> mask_planes(const ClassMask& mask, int height, int width);

/// Global generator G1. Front end: conv3x3 and a stride-2 conv3x3; residual
/// units at half resolution; back end: 4x4 stride-2 transposed conv giving
/// the exposed feature map; a 3x3 head over that map and the input image
/// adds a correction to the input.
class GlobalGenerator {
 public:
  GlobalGenerator() = default;
  GlobalGenerator(int width, int residual_units, Rng& rng);

  struct Output {
    nn::Tensor<float> image;     // clamp(x + head(features)), (3,h,w)
    nn::Tensor<float> features;  // back-end map, (width,h,w)
  };
  /// `image` (3,h,w) in [0,1] with even h, w; `masks` 2 planes of h*w.
  Output forward(const nn::Tensor<float>& image, std::span<const float> masks) const;

  /// Zeroes the last conv of every residual branch and the output head.
  void identity_init();
  nn::ParamList<float> params() const;
  int width() const { return width_; }

 private:
  int width_ = 0;
  nn::Conv2d<float> front1_, front2_;
  std::vector<nn::ResidualUnit<float>> res_;
  nn::ConvTranspose2d<float> back_;
  nn::Conv2d<float> head_;
};

/// Local enhancer G2 at twice G1's resolution. Its front-end output is
/// summed with the 2x-upsampled G1 feature map before the residual units;
/// a 3x3 transposed conv back end and a 3x3 head (also reading the input
/// image) produce a correction added on top of the G1-refined image lifted
/// to this resolution.
class LocalEnhancer {
 public:
  LocalEnhancer() = default;
  LocalEnhancer(int width, int fuse_width, int residual_units, Rng& rng);

  /// out = clamp(x + up(g1_image - x_g) + head(...)), x_g = x at G1 resolution.
  nn::Tensor<float> forward(const nn::Tensor<float>& image, std::span<const float> masks,
                            const GlobalGenerator::Output& global, const nn::Tensor<float>& global_input) const;

  void identity_init();
  nn::ParamList<float> params() const;

 private:
  nn::Conv2d<float> front1_, front2_;
  std::vector<nn::ResidualUnit<float>> res_;
  nn::ConvTranspose2d<float> back_;
  nn::Conv2d<float> head_;
};

/// Scoring head over a fixed extractor tap concatenated with the
/// area-downsampled colour image and mask planes: conv3x3, leaky ReLU,
/// conv1x1 (zero-initialized). The score map has the tap's spatial size.
class Discriminator {
 public:
  Discriminator() = default;
  Discriminator(int tap_channels, int width, Rng& rng);

  /// `tap` is the extractor response to `image`; `masks` 2 planes at the
  /// image resolution.
  nn::Tensor<float> forward(const nn::Tensor<float>& image, const nn::Tensor<float>& tap, std::span<const float> masks) const;

  void zero();
  nn::ParamList<float> params() const;

 private:
  nn::Conv2d<float> conv_, score_;
};

struct GanLosses {
  double loss_d = 0.0;
  double loss_g_adv = 0.0;
};

/// Least-squares adversarial losses:
///   loss_D     = 0.5 mean((D(real) - 1)^2) + 0.5 mean(D(refined)^2)
///   loss_G_adv = mean((D(refined) - 1)^2)
/// Errors: EmptyBatch.
GanLosses gan_objective(std::span<const double> scores_real, std::span<const double> scores_refined);

/// The trainable refiner (G1, G2, D) plus the fixed extractor D reads.
class RefinerModel {
 public:
  explicit RefinerModel(const RefinerConfig& config);

  const RefinerConfig& config() const { return config_; }
  const PerceptualNet<float>& percept() const { return *percept_; }
  int enhancer_resolution() const { return config_.enhancer_resolution(); }
  int global_resolution() const { return config_.global_resolution; }

  /// G1 alone on an image at the global resolution (resampled on entry).
  GlobalGenerator::Output generate_global(const Image& image, const ClassMask& mask) const;

  /// Full generator on tensors at the enhancer resolution.
  nn::Tensor<float> generate(const nn::Tensor<float>& image, std::span<const float> masks) const;

  /// Resamples to the enhancer resolution and refines. Errors: ShapeError, MaskMismatch.
  Image refine(const Image& image, const ClassMask& mask) const;

  /// Score map for an image and its mask (both resampled to the enhancer resolution).
  nn::Tensor<float> discriminate(const Image& image, const ClassMask& mask) const;
  nn::Tensor<float> discriminate(const nn::Tensor<float>& image, std::span<const float> masks) const;

  GlobalGenerator& g1() { return g1_; }
  LocalEnhancer& g2() { return g2_; }
  Discriminator& d() { return d_; }
  const GlobalGenerator& g1() const { return g1_; }
  const LocalEnhancer& g2() const { return g2_; }
  const Discriminator& d() const { return d_; }

  /// Prefixed parameters: "g1.*", "g2.*", "d.*".
  nn::ParamList<float> params() const;

  void save(const std::filesystem::path& path) const;
  /// Errors: MissingFile, CheckpointMismatch(name).
  void load(const std::filesystem::path& path);

 private:
  RefinerConfig config_;
  std::shared_ptr<const PerceptualNet<float>> percept_;
  GlobalGenerator g1_;
  LocalEnhancer g2_;
  Discriminator d_;
};

/// One training sample pair source.
struct RefinerData {
  std::vector<Image> synthetic;
  std::vector<ClassMask> synthetic_masks;  // repaired
  std::vector<Image> real;
  std::vector<ClassMask> real_masks;  // repaired
};

struct IterationLog {
  int iter = 0;   // 1-based over all stages
  int stage = 0;  // 1, 2 or 3
  double l_gs = 0.0;              // sum_l beta_l gs_l
  double l_ls = 0.0;              // sum_l beta_l ls_l
  double l_style_weighted = 0.0;  // sum_l beta_l (lambda_g gs_l + lambda_l ls_l)
  double content = 0.0;
  double l_m = 0.0;
  double l_total = 0.0;
  double loss_d = 0.0;
  double loss_g_adv = 0.0;
  double objective = 0.0;  // adv_weight * loss_G_adv + lambda * L_total
};

inline constexpr const char* kLossLogHeader = "iter,l_gs,l_ls,l_style_weighted,content,l_m,L_total,loss_D,loss_G_adv";

void write_loss_log(const std::vector<IterationLog>& log, const std::filesystem::path& path);
/// Errors: MissingFile, ParseError(row).
std::vector<IterationLog> read_loss_log(const std::filesystem::path& path);

struct RefinerTrainOptions {
  /// When set: writes refiner/stage{K}_iter{N}.ckpt (stage0_iter0 is the
  /// initial state), refiner/final.ckpt and losses.csv under this directory.
  std::optional<std::filesystem::path> out_dir;
  std::function<void(const IterationLog&)> on_iteration;
};

/// Stage 1 trains G1 (G2 frozen), stage 2 trains G2 (G1 frozen), stage 3
/// fine-tunes both at learning_rate * stage3_decay. Every iteration makes
/// one discriminator step on real vs refined, then one generator step on
/// adv_weight * loss_G_adv + lambda * L_total. The discriminator step is
/// skipped when adv_weight is 0 and the generator step when both weights are 0.
/// Errors: EmptyDataset, DivergenceDetected(iter).
std::vector<IterationLog> train_refiner(RefinerModel& model, const RefinerData& data, const RefinerTrainOptions& options = {});

/// Refines every row of a manifest into out_dir/images and writes
/// out_dir/manifest.csv with labels copied verbatim and domain "refined".
/// Masks come from the manifest when present, else from `segmenter`
/// (repaired). Errors: IOError, MissingImage, MaskMismatch.
std::filesystem::path refine_batch(const RefinerModel& model, const SegmenterNet* segmenter,
                                   const std::filesystem::path& manifest_in, const std::filesystem::path& out_dir);

}  // namespace eyeref
