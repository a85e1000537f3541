#include "eyeref/eyegen.hpp"

#include <algorithm>
#include <cmath>

#include "eyeref/io.hpp"

namespace eyeref::eyegen {
namespace {

constexpr double kPi = 3.14159265358979323846;

void check_color(const Rgb& c, const char* field) {
  for (float v : c)
    if (!(v >= 0.0f && v <= 1.0f)) throw Error("InvalidParams", field, std::string("colour out of range: ") + field);
}

enum class Region { skin, sclera, iris, pupil };

Region classify(const EyeGeometry& g, double x, double y) {
  const double ex = (x - g.cx) / g.opening_a;
  const double ey = (y - g.cy) / g.opening_b;
  if (ex * ex + ey * ey > 1.0) return Region::skin;
  const double px = x - g.pupil_x, py = y - g.pupil_y;
  if (px * px + py * py <= g.pupil_r * g.pupil_r) return Region::pupil;
  const double ix = x - g.iris_x, iy = y - g.iris_y;
  if (ix * ix + iy * iy <= g.iris_r * g.iris_r) return Region::iris;
  return Region::sclera;
}

std::vector<double> gaussian_kernel(double sigma) {
  const int r = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> k(2 * r + 1);
  double s = 0.0;
  for (int i = -r; i <= r; ++i) s += k[i + r] = std::exp(-0.5 * i * i / (sigma * sigma));
  for (auto& v : k) v /= s;
  return k;
}

int mirror(int i, int n) {
  while (i < 0 || i >= n) i = i < 0 ? -i - 1 : 2 * n - i - 1;
  return i;
}

}  // namespace

void EyeParams::validate() const {
  if (!(std::abs(yaw) < kPi / 2)) throw Error("InvalidParams", "yaw");
  if (!(std::abs(pitch) < kPi / 2)) throw Error("InvalidParams", "pitch");
  if (!(iris_radius > 0.0 && iris_radius < 0.5)) throw Error("InvalidParams", "iris_radius");
  if (!(pupil_ratio > 0.1 && pupil_ratio < 0.9)) throw Error("InvalidParams", "pupil_ratio");
  if (!(eyelid_aperture > 0.0 && eyelid_aperture <= 1.0)) throw Error("InvalidParams", "eyelid_aperture");
  check_color(sclera_color, "sclera_color");
  check_color(iris_color, "iris_color");
  check_color(skin_color, "skin_color");
}

EyeParams sample_params(Rng& rng, double gaze_range) {
  EyeParams p;
  p.yaw = rng.uniform(-gaze_range, gaze_range);
  p.pitch = rng.uniform(-gaze_range, gaze_range);
  p.iris_radius = rng.uniform(0.16, 0.20);
  p.pupil_ratio = rng.uniform(0.35, 0.55);
  p.eyelid_aperture = rng.uniform(0.8, 1.0);
  static constexpr Rgb kIrisBases[] = {{0.30f, 0.45f, 0.65f}, {0.42f, 0.27f, 0.15f}, {0.35f, 0.48f, 0.30f}};
  const Rgb base = kIrisBases[rng.index(3)];
  const double iris_gain = rng.uniform(0.8, 1.1);
  for (int c = 0; c < 3; ++c) p.iris_color[c] = static_cast<float>(std::clamp(base[c] * iris_gain, 0.0, 1.0));
  const double sclera = rng.uniform(-0.03, 0.03);
  const double skin = rng.uniform(-0.06, 0.06);
  for (int c = 0; c < 3; ++c) {
    p.sclera_color[c] = static_cast<float>(std::clamp(p.sclera_color[c] + sclera, 0.0, 1.0));
    p.skin_color[c] = static_cast<float>(std::clamp(p.skin_color[c] + skin, 0.0, 1.0));
  }
  p.seed = rng.next_u64();
  return p;
}

EyeGeometry eye_geometry(const EyeParams& p, int size) {
  EyeGeometry g;
  const double s = size;
  g.cx = g.cy = s / 2.0;
  g.opening_a = 0.46 * s;
  g.opening_b = p.eyelid_aperture * 0.34 * s;
  const double dx = std::sin(p.yaw), dy = -std::sin(p.pitch);
  g.iris_r = p.iris_radius * s;
  g.iris_x = g.cx + 0.25 * s * dx;
  g.iris_y = g.cy + 0.25 * s * dy;
  g.pupil_r = p.pupil_ratio * g.iris_r;
  const double k = 0.7 * (1.0 - p.pupil_ratio) * g.iris_r / std::sqrt(2.0);
  g.pupil_x = g.iris_x + k * dx;
  g.pupil_y = g.iris_y + k * dy;
  return g;
}

RenderedEye render_eye(const EyeParams& params, int size) {
  if (size < 32) throw Error("InvalidParams", "size", "render size must be at least 32");
  params.validate();
  const EyeGeometry g = eye_geometry(params, size);
  Rng texture(params.seed);
  const double phase = texture.uniform(0.0, 2.0 * kPi);
  const int spokes = 5 + static_cast<int>(texture.index(4));

  auto shade = [&](Region r, double x, double y) -> std::array<double, 3> {
    switch (r) {
      case Region::skin: return {params.skin_color[0], params.skin_color[1], params.skin_color[2]};
      case Region::sclera: return {params.sclera_color[0], params.sclera_color[1], params.sclera_color[2]};
      case Region::pupil: return {0.06, 0.05, 0.05};
      case Region::iris: {
        const double ang = std::atan2(y - g.iris_y, x - g.iris_x);
        const double rad = std::hypot(x - g.iris_x, y - g.iris_y) / g.iris_r;
        const double f = (1.0 + 0.12 * std::sin(spokes * ang + phase)) * (1.05 - 0.25 * rad * rad);
        return {params.iris_color[0] * f, params.iris_color[1] * f, params.iris_color[2] * f};
      }
    }
    return {0, 0, 0};
  };

  RenderedEye out{Image(size, size), ClassMask(size, size), {}};
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      std::array<double, 3> acc{0, 0, 0};
      for (int sy = 0; sy < 2; ++sy)
        for (int sx = 0; sx < 2; ++sx) {
          const double px = x + 0.25 + 0.5 * sx, py = y + 0.25 + 0.5 * sy;
          const auto c = shade(classify(g, px, py), px, py);
          for (int k = 0; k < 3; ++k) acc[k] += 0.25 * c[k];
        }
      for (int k = 0; k < 3; ++k) out.image.at(k, y, x) = static_cast<float>(std::clamp(acc[k], 0.0, 1.0));
      const Region centre = classify(g, x + 0.5, y + 0.5);
      out.mask.at(y, x) = centre == Region::pupil  ? static_cast<std::uint8_t>(MaskClass::pupil)
                          : centre == Region::iris ? static_cast<std::uint8_t>(MaskClass::iris)
                                                   : static_cast<std::uint8_t>(MaskClass::background);
    }
  out.sample = GazeSample::from_angles(out.image, params.yaw, params.pitch, Domain::synthetic, out.mask);
  return out;
}

void DomainShiftConfig::validate() const {
  if (!(blur_sigma >= 0.0)) throw Error("InvalidParams", "blur_sigma");
  for (double gain : color_gain)
    if (!(gain >= 0.5 && gain <= 1.5)) throw Error("InvalidParams", "color_gain");
  if (!(noise_sigma >= 0.0)) throw Error("InvalidParams", "noise_sigma");
  if (!(vignette_strength >= 0.0 && vignette_strength <= 1.0)) throw Error("InvalidParams", "vignette_strength");
}

bool DomainShiftConfig::is_identity() const {
  return blur_sigma == 0.0 && color_gain == std::array<double, 3>{1.0, 1.0, 1.0} && noise_sigma == 0.0 &&
         vignette_strength == 0.0;
}

DomainShiftConfig real_domain_shift(std::uint64_t seed) {
  DomainShiftConfig c;
  c.blur_sigma = 0.8;
  c.color_gain = {0.85, 0.75, 0.65};
  c.noise_sigma = 0.02;
  c.vignette_strength = 0.25;
  c.seed = seed;
  return c;
}

Image gaussian_blur(const Image& image, double sigma) {
  if (sigma <= 0.0) return image;
  const auto k = gaussian_kernel(sigma);
  const int r = static_cast<int>(k.size() / 2);
  Image tmp(image.height, image.width), out(image.height, image.width);
  for (int c = 0; c < 3; ++c) {
    for (int y = 0; y < image.height; ++y)
      for (int x = 0; x < image.width; ++x) {
        double s = 0.0;
        for (int i = -r; i <= r; ++i) s += k[i + r] * image.at(c, y, mirror(x + i, image.width));
        tmp.at(c, y, x) = static_cast<float>(s);
      }
    for (int y = 0; y < image.height; ++y)
      for (int x = 0; x < image.width; ++x) {
        double s = 0.0;
        for (int i = -r; i <= r; ++i) s += k[i + r] * tmp.at(c, mirror(y + i, image.height), x);
        out.at(c, y, x) = static_cast<float>(s);
      }
  }
  return out;
}

Image apply_domain_shift(const Image& image, const DomainShiftConfig& config) {
  config.validate();
  Image out = gaussian_blur(image, config.blur_sigma);
  const double cy = (image.height - 1) / 2.0, cx = (image.width - 1) / 2.0;
  const double rmax2 = cx * cx + cy * cy;
  Rng noise(config.seed);
  for (int c = 0; c < 3; ++c) {
    const float gain = static_cast<float>(config.color_gain[c]);
    for (int y = 0; y < image.height; ++y)
      for (int x = 0; x < image.width; ++x) {
        float v = out.at(c, y, x) * gain;
        if (config.vignette_strength != 0.0) {
          const double r2 = ((y - cy) * (y - cy) + (x - cx) * (x - cx)) / rmax2;
          v = static_cast<float>(v * (1.0 - config.vignette_strength * r2));
        }
        out.at(c, y, x) = v;
      }
  }
  if (config.noise_sigma > 0.0)
    for (auto& v : out.data) v = static_cast<float>(v + noise.normal(0.0, config.noise_sigma));
  for (auto& v : out.data) v = std::clamp(v, 0.0f, 1.0f);
  return out;
}

std::vector<GazeSample> generate_samples(const DatasetSpec& spec) {
  if (spec.count < 1) throw Error("InvalidParams", "count", "dataset needs at least one sample");
  std::vector<GazeSample> out;
  const Rng master(spec.seed);
  for (int i = 0; i < spec.count; ++i) {
    Rng rng = master.derive(static_cast<std::uint64_t>(i));
    const EyeParams params = sample_params(rng, spec.gaze_range);
    RenderedEye eye = render_eye(params, spec.size);
    GazeSample s = std::move(eye.sample);
    if (spec.shift) {
      DomainShiftConfig shift = *spec.shift;
      shift.seed = Rng::mix(spec.shift->seed, static_cast<std::uint64_t>(i));
      s.image = apply_domain_shift(s.image, shift);
      s.domain = Domain::real;
    }
    out.push_back(std::move(s));
  }
  return out;
}

std::filesystem::path generate_dataset(const DatasetSpec& spec, const std::filesystem::path& out_dir) {
  const auto samples = generate_samples(spec);
  Manifest manifest;
  manifest.directory = out_dir;
  char name[32];
  for (std::size_t i = 0; i < samples.size(); ++i) {
    std::snprintf(name, sizeof name, "%06zu.png", i);
    const std::string image_rel = std::string("images/") + name;
    const std::string mask_rel = std::string("masks/") + name;
    save_image(samples[i].image, out_dir / image_rel);
    save_mask(*samples[i].mask, out_dir / mask_rel);
    manifest.rows.push_back({image_rel, mask_rel, format_exact(rad_to_deg(samples[i].yaw)),
                             format_exact(rad_to_deg(samples[i].pitch)), to_string(samples[i].domain), {}, {}});
  }
  const auto path = out_dir / "manifest.csv";
  write_manifest(manifest, path);
  return path;
}

}  // namespace eyeref::eyegen
