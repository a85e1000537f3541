#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace eyeref {

/// Library error. `code` is a stable machine-readable identifier
/// (e.g. "InvalidWeight"); `detail` carries the offending item (a key,
/// a path, a line number) so callers can match on it.
class Error : public std::runtime_error {
 public:
  Error(std::string code, std::string detail, const std::string& message = {})
      : std::runtime_error(code + ": " + (message.empty() ? detail : message)),
        code_(std::move(code)),
        detail_(std::move(detail)) {}

  const std::string& code() const noexcept { return code_; }
  const std::string& detail() const noexcept { return detail_; }

 private:
  std::string code_;
  std::string detail_;
};

// ---------------------------------------------------------------------------
// Randomness

/// Seeded generator. Every random draw in the library goes through one of
/// these, passed explicitly. Uniform/normal draws are computed from raw
/// engine bits so results do not depend on the standard library's
/// distribution implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed), seed_(seed) {}

  std::uint64_t seed() const { return seed_; }
  std::uint64_t next_u64() { return engine_(); }

  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Standard normal (Box-Muller, one value per call).
  double normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }
  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  /// Uniform integer in [0, n).
  std::size_t index(std::size_t n) {
    if (n == 0) throw Error("InvalidArgument", "index(0)");
    return static_cast<std::size_t>(uniform() * static_cast<double>(n)) % n;
  }

  /// Independent child stream for (this seed, stream id).
  Rng derive(std::uint64_t stream) const { return Rng(mix(seed_, stream)); }

  static std::uint64_t mix(std::uint64_t a, std::uint64_t b) {
    std::uint64_t z = a + 0x9E3779B97F4A7C15ull * (b + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

 private:
  std::mt19937_64 engine_;
  std::uint64_t seed_;
};

// ---------------------------------------------------------------------------
// Images and masks

/// Planar RGB image, values nominally in [0,1], stored channel-major (CHW).
struct Image {
  int height = 0;
  int width = 0;
  std::vector<float> data;  // 3 * height * width

  Image() = default;
  Image(int h, int w, float fill = 0.0f) : height(h), width(w), data(3ull * h * w, fill) {
    if (h <= 0 || w <= 0) throw Error("ShapeError", "image dimensions must be positive");
  }

  static constexpr int channels = 3;
  std::size_t plane() const { return static_cast<std::size_t>(height) * width; }
  float& at(int c, int y, int x) { return data[c * plane() + static_cast<std::size_t>(y) * width + x]; }
  float at(int c, int y, int x) const { return data[c * plane() + static_cast<std::size_t>(y) * width + x]; }

  bool operator==(const Image&) const = default;
};

/// Throws unless the image satisfies the interchange invariants:
/// at least 8x8, every value finite and inside [0,1].
void validate_image(const Image& image);

Image flip_horizontal(const Image& image);

/// Per-destination-index source taps of an exact box filter mapping `src`
/// samples onto `dst` samples; each tap list's weights sum to 1.
std::vector<std::vector<std::pair<int, double>>> area_weights(int src, int dst);

/// Area-weighted resampling (exact box filter for arbitrary ratios).
Image resample(const Image& image, int height, int width);

enum class MaskClass : std::uint8_t { background = 0, iris = 1, pupil = 2 };

struct ClassMask {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> labels;

  ClassMask() = default;
  ClassMask(int h, int w, std::uint8_t fill = 0) : height(h), width(w), labels(static_cast<std::size_t>(h) * w, fill) {
    if (h <= 0 || w <= 0) throw Error("ShapeError", "mask dimensions must be positive");
  }

  std::uint8_t& at(int y, int x) { return labels[static_cast<std::size_t>(y) * width + x]; }
  std::uint8_t at(int y, int x) const { return labels[static_cast<std::size_t>(y) * width + x]; }
  std::size_t count(MaskClass c) const;

  bool operator==(const ClassMask&) const = default;
};

ClassMask flip_horizontal(const ClassMask& mask);

/// Nearest-neighbour resampling of a label map.
ClassMask resample(const ClassMask& mask, int height, int width);

// ---------------------------------------------------------------------------
// Gaze

/// Gaze convention: g = (cos(pitch) sin(yaw), sin(pitch), cos(pitch) cos(yaw)),
/// radians internally, degrees only at file/CLI boundaries.
using GazeVector = std::array<double, 3>;

GazeVector gaze_from_angles(double yaw, double pitch);
/// Inverse of gaze_from_angles; input need not be exactly unit.
std::pair<double, double> angles_from_gaze(const GazeVector& g);
GazeVector normalized(const GazeVector& g);
double norm(const GazeVector& g);
double dot(const GazeVector& a, const GazeVector& b);

inline double deg_to_rad(double d) { return d * 3.14159265358979323846 / 180.0; }
inline double rad_to_deg(double r) { return r * 180.0 / 3.14159265358979323846; }

enum class Domain { synthetic, refined, real };

std::string to_string(Domain d);
Domain parse_domain(const std::string& s);

struct GazeSample {
  Image image;
  double yaw = 0.0;    // radians
  double pitch = 0.0;  // radians
  GazeVector gaze{0.0, 0.0, 1.0};
  Domain domain = Domain::synthetic;
  std::optional<ClassMask> mask;

  /// Builds a sample with gaze vector and angles consistent by construction.
  static GazeSample from_angles(Image image, double yaw, double pitch, Domain domain,
                                std::optional<ClassMask> mask = std::nullopt);
};

}  // namespace eyeref
