#include <gtest/gtest.h>

#include <cmath>

#include "eyeref/eyegen.hpp"
#include "eyeref/io.hpp"
#include "support.hpp"

using namespace eyeref;
using namespace eyeref::eyegen;
using namespace testing_support;

TEST(EyeGen, RenderIsDeterministic) {
  Rng rng(3);
  const auto p = sample_params(rng, 0.5);
  const auto a = render_eye(p, 32), b = render_eye(p, 32);
  EXPECT_EQ(a.image, b.image);
  EXPECT_EQ(a.mask, b.mask);
  EXPECT_NO_THROW(validate_image(a.image));
  EXPECT_EQ(a.sample.domain, Domain::synthetic);
}

TEST(EyeGen, MaskFollowsGeometry) {
  Rng rng(4);
  for (int i = 0; i < 30; ++i) {
    const auto p = sample_params(rng, 0.6);
    const int size = 48;
    const auto g = eye_geometry(p, size);
    const auto r = render_eye(p, size);
    // pupil disk inside iris disk
    EXPECT_LE(std::hypot(g.pupil_x - g.iris_x, g.pupil_y - g.iris_y) + g.pupil_r, g.iris_r + 1e-9);
    for (int y = 0; y < size; ++y)
      for (int x = 0; x < size; ++x) {
        const double px = x + 0.5, py = y + 0.5;
        const auto label = r.mask.at(y, x);
        if (label == 2) {
          EXPECT_LE(std::hypot(px - g.pupil_x, py - g.pupil_y), g.pupil_r + 1e-9);
        } else if (label == 1) {
          EXPECT_LE(std::hypot(px - g.iris_x, py - g.iris_y), g.iris_r + 1e-9);
        }
      }
  }
}

TEST(EyeGen, IrisMovesWithGaze) {
  EyeParams p;
  const auto centre = eye_geometry(p, 64);
  p.yaw = 0.4;
  const auto right = eye_geometry(p, 64);
  EXPECT_NEAR(right.iris_x - centre.iris_x, 0.25 * 64 * std::sin(0.4), 1e-9);
  p.yaw = 0.0;
  p.pitch = 0.3;
  const auto up = eye_geometry(p, 64);
  EXPECT_LT(up.iris_y, centre.iris_y);
}

TEST(EyeGen, InvalidParams) {
  EyeParams p;
  p.iris_radius = 0.7;
  EXPECT_THROW(render_eye(p, 32), Error);
  p = EyeParams{};
  p.yaw = 2.0;
  try {
    p.validate();
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), "InvalidParams");
    EXPECT_EQ(e.detail(), "yaw");
  }
}

TEST(DomainShift, IdentityIsExact) {
  Rng rng(5);
  const auto img = random_image(rng, 16, 16);
  DomainShiftConfig id;
  EXPECT_TRUE(id.is_identity());
  EXPECT_EQ(apply_domain_shift(img, id), img);
  EXPECT_FALSE(real_domain_shift().is_identity());
  DomainShiftConfig bad;
  bad.color_gain[1] = 2.0;
  EXPECT_THROW(bad.validate(), Error);
}

TEST(DomainShift, BlurPreservesConstantsAndMean) {
  Image flat(12, 12, 0.3f);
  const auto b = gaussian_blur(flat, 1.5);
  for (float v : b.data) EXPECT_NEAR(v, 0.3f, 1e-6);
  Rng rng(6);
  const auto img = random_image(rng, 20, 20);
  const auto s = gaussian_blur(img, 1.0);
  double var_a = 0, var_b = 0, ma = 0, mb = 0;
  for (std::size_t i = 0; i < img.data.size(); ++i) {
    ma += img.data[i];
    mb += s.data[i];
  }
  ma /= img.data.size();
  mb /= img.data.size();
  for (std::size_t i = 0; i < img.data.size(); ++i) {
    var_a += (img.data[i] - ma) * (img.data[i] - ma);
    var_b += (s.data[i] - mb) * (s.data[i] - mb);
  }
  EXPECT_LT(var_b, 0.5 * var_a);
  EXPECT_NEAR(ma, mb, 0.02);
}

TEST(DomainShift, ShiftedImageStaysInRange) {
  Rng rng(7);
  const auto r = render_eye(sample_params(rng, 0.5), 32);
  const auto shifted = apply_domain_shift(r.image, real_domain_shift(3));
  EXPECT_NO_THROW(validate_image(shifted));
  EXPECT_NE(shifted, r.image);
  EXPECT_EQ(apply_domain_shift(r.image, real_domain_shift(3)), shifted);
}

TEST(Dataset, SamplesMatchFilesAndLabels) {
  const auto dir = temp_dir("dataset");
  DatasetSpec spec;
  spec.count = 6;
  spec.size = 32;
  spec.seed = 11;
  spec.shift = real_domain_shift(1);
  const auto manifest_path = generate_dataset(spec, dir);
  const auto mem = generate_samples(spec);
  const auto loaded = load_manifest(manifest_path);
  ASSERT_EQ(loaded.size(), mem.size());
  for (std::size_t i = 0; i < mem.size(); ++i) {
    EXPECT_EQ(loaded[i].domain, Domain::real);
    EXPECT_NEAR(loaded[i].yaw, mem[i].yaw, 1e-12);
    EXPECT_LE(std::abs(mem[i].yaw), 0.5);
    EXPECT_LE(std::abs(mem[i].pitch), 0.5);
    ASSERT_TRUE(loaded[i].mask.has_value());
    EXPECT_EQ(*loaded[i].mask, *mem[i].mask);
    for (std::size_t k = 0; k < mem[i].image.data.size(); ++k)
      EXPECT_NEAR(loaded[i].image.data[k], mem[i].image.data[k], 0.5 / 255 + 1e-6);
  }
  // prefix stability: a smaller count draws the same first samples
  spec.count = 3;
  const auto fewer = generate_samples(spec);
  for (std::size_t i = 0; i < fewer.size(); ++i) EXPECT_EQ(fewer[i].image, mem[i].image);
}
