#pragma once

#include <array>
#include <filesystem>
#include <optional>

#include "eyeref/core.hpp"

namespace eyeref::eyegen {

using Rgb = std::array<float, 3>;

/// Geometry and colours of one toy eye. Sizes are fractions of the image width.
struct EyeParams {
  double yaw = 0.0;    // radians, |yaw| < pi/2
  double pitch = 0.0;  // radians, |pitch| < pi/2
  double iris_radius = 0.18;  // (0, 0.5)
  double pupil_ratio = 0.45;  // pupil radius / iris radius, (0.1, 0.9)
  double eyelid_aperture = 0.9;  // (0, 1]
  Rgb sclera_color{0.92f, 0.90f, 0.87f};
  Rgb iris_color{0.35f, 0.50f, 0.68f};
  Rgb skin_color{0.86f, 0.66f, 0.56f};
  std::uint64_t seed = 0;  // drives iris texture phase

  /// Throws InvalidParams(field) for out-of-range values.
  void validate() const;
};

/// Random parameters: gaze uniform in [-gaze_range, gaze_range]^2, nuisance
/// factors (radii, aperture, colours) jittered around the defaults.
EyeParams sample_params(Rng& rng, double gaze_range);

/// Projected geometry in pixel coordinates (x right, y down, origin at the
/// top-left corner of the image).
struct EyeGeometry {
  double cx = 0, cy = 0;              // eye-opening centre
  double opening_a = 0, opening_b = 0;  // opening ellipse semi-axes
  double iris_x = 0, iris_y = 0, iris_r = 0;
  double pupil_x = 0, pupil_y = 0, pupil_r = 0;
};

/// Iris centre = eye centre + 0.25*size*(sin yaw, -sin pitch); pupil centre =
/// iris centre + k*(sin yaw, -sin pitch) with k = 0.7*(1-ratio)*r_iris/sqrt(2),
/// which keeps the pupil disk inside the iris disk for every legal gaze.
EyeGeometry eye_geometry(const EyeParams& params, int size);

struct RenderedEye {
  Image image;
  ClassMask mask;
  GazeSample sample;  // synthetic-domain sample carrying image, mask and label
};

/// Flat-shaded ellipses with 2x2 supersampling; mask labels come from the
/// pixel-centre sample so they follow the geometry exactly.
/// Errors: InvalidParams(field).
RenderedEye render_eye(const EyeParams& params, int size);

/// Appearance change standing in for the synthetic-to-real gap. Applied in
/// order: Gaussian blur, per-channel gain, radial vignette, additive noise,
/// clamp to [0,1].
struct DomainShiftConfig {
  double blur_sigma = 0.0;
  std::array<double, 3> color_gain{1.0, 1.0, 1.0};  // each in [0.5, 1.5]
  double noise_sigma = 0.0;
  double vignette_strength = 0.0;  // [0, 1]
  std::uint64_t seed = 0;

  void validate() const;
  bool is_identity() const;
};

/// The fixed shift that defines the pseudo-"real" domain.
DomainShiftConfig real_domain_shift(std::uint64_t seed = 0);

/// Separable normalised Gaussian blur with mirrored borders (no clamping).
Image gaussian_blur(const Image& image, double sigma);

Image apply_domain_shift(const Image& image, const DomainShiftConfig& config);

struct DatasetSpec {
  int count = 1;
  double gaze_range = 0.5;  // radians
  int size = 32;
  std::optional<DomainShiftConfig> shift;  // present: "real" domain
  std::uint64_t seed = 0;
};

/// Writes images/, masks/ and manifest.csv under `out_dir` and returns the
/// manifest path. Sample i draws from an Rng derived from (seed, i).
/// Errors: IOError.
std::filesystem::path generate_dataset(const DatasetSpec& spec, const std::filesystem::path& out_dir);

/// In-memory variant of generate_dataset (same draws, no files).
std::vector<GazeSample> generate_samples(const DatasetSpec& spec);

}  // namespace eyeref::eyegen
