#include <gtest/gtest.h>

#include <fstream>

#include "eyeref/config.hpp"
#include "eyeref/io.hpp"
#include "eyeref/nn/layers.hpp"
#include "eyeref/nn/weights.hpp"
#include "support.hpp"

using namespace eyeref;
using namespace testing_support;

TEST(Rng, DeterministicAndDerived) {
  Rng a(42), b(42);
  for (int i = 0; i < 10; ++i) EXPECT_EQ(a.next_u64(), b.next_u64());
  EXPECT_NE(Rng(1).derive(0).next_u64(), Rng(1).derive(1).next_u64());
  EXPECT_EQ(Rng(1).derive(7).next_u64(), Rng(Rng::mix(1, 7)).next_u64());
  Rng c(3);
  for (int i = 0; i < 1000; ++i) {
    const double u = c.uniform();
    EXPECT_GE(u, 0.0);
    EXPECT_LT(u, 1.0);
    EXPECT_LT(c.index(5), 5u);
  }
  EXPECT_THROW(c.index(0), Error);
}

TEST(Rng, NormalMoments) {
  Rng r(9);
  double s = 0, s2 = 0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    const double v = r.normal();
    s += v;
    s2 += v * v;
  }
  EXPECT_NEAR(s / n, 0.0, 0.03);
  EXPECT_NEAR(s2 / n, 1.0, 0.05);
}

TEST(Resample, AreaWeightsSumToOne) {
  for (int src : {1, 5, 8, 13, 32})
    for (int dst : {1, 3, 8, 16, 20}) {
      const auto w = area_weights(src, dst);
      ASSERT_EQ(static_cast<int>(w.size()), dst);
      double total = 0.0;
      for (const auto& taps : w) {
        double s = 0.0;
        for (const auto& [i, v] : taps) {
          EXPECT_GE(i, 0);
          EXPECT_LT(i, src);
          s += v;
          total += v;
        }
        EXPECT_NEAR(s, 1.0, 1e-12);
      }
      // every source sample is fully used once
      EXPECT_NEAR(total * src / dst, src, 1e-9);
    }
}

TEST(Resample, PreservesMeanAndIdentity) {
  Rng rng(2);
  const auto img = random_image(rng, 12, 20);
  EXPECT_EQ(resample(img, 12, 20), img);
  const auto small = resample(img, 3, 5);
  for (int c = 0; c < 3; ++c) {
    double a = 0, b = 0;
    for (int y = 0; y < 12; ++y)
      for (int x = 0; x < 20; ++x) a += img.at(c, y, x);
    for (int y = 0; y < 3; ++y)
      for (int x = 0; x < 5; ++x) b += small.at(c, y, x);
    EXPECT_NEAR(a / 240, b / 15, 1e-5);
  }
  // 2x2 block averages for an exact halving
  const auto half = resample(img, 6, 10);
  EXPECT_NEAR(half.at(1, 2, 3), (img.at(1, 4, 6) + img.at(1, 4, 7) + img.at(1, 5, 6) + img.at(1, 5, 7)) / 4, 1e-6);
}

TEST(Image, ValidationAndFlip) {
  Image img(8, 8, 0.5f);
  EXPECT_NO_THROW(validate_image(img));
  img.at(0, 1, 1) = 1.5f;
  EXPECT_THROW(validate_image(img), Error);
  EXPECT_THROW(validate_image(Image(4, 8)), Error);
  EXPECT_THROW(Image(0, 3), Error);
  Rng rng(1);
  const auto r = random_image(rng, 9, 11);
  EXPECT_EQ(flip_horizontal(flip_horizontal(r)), r);
  EXPECT_EQ(flip_horizontal(r).at(2, 3, 0), r.at(2, 3, 10));
}

TEST(Mask, ResampleNearestAndFlip) {
  ClassMask m(4, 4);
  m.at(1, 2) = 2;
  m.at(0, 0) = 1;
  const auto up = resample(m, 8, 8);
  EXPECT_EQ(up.at(2, 4), 2);
  EXPECT_EQ(up.at(3, 5), 2);
  EXPECT_EQ(up.at(1, 1), 1);
  EXPECT_EQ(up.count(MaskClass::pupil), 4u);
  EXPECT_EQ(flip_horizontal(m).at(1, 1), 2);
}

TEST(Gaze, RoundTripAndConvention) {
  const auto g = gaze_from_angles(0.0, 0.0);
  EXPECT_DOUBLE_EQ(g[2], 1.0);
  const auto up = gaze_from_angles(0.0, 0.5);
  EXPECT_NEAR(up[1], std::sin(0.5), 1e-15);
  Rng rng(4);
  for (int i = 0; i < 100; ++i) {
    const double yaw = rng.uniform(-1.4, 1.4), pitch = rng.uniform(-1.4, 1.4);
    const auto v = gaze_from_angles(yaw, pitch);
    EXPECT_NEAR(norm(v), 1.0, 1e-12);
    const auto [y2, p2] = angles_from_gaze(v);
    EXPECT_NEAR(y2, yaw, 1e-12);
    EXPECT_NEAR(p2, pitch, 1e-12);
  }
  EXPECT_NEAR(rad_to_deg(deg_to_rad(37.5)), 37.5, 1e-12);
}

TEST(Gaze, SampleFromAnglesConsistent) {
  const auto s = GazeSample::from_angles(Image(8, 8), 0.2, -0.1, Domain::real);
  const auto v = gaze_from_angles(0.2, -0.1);
  for (int k = 0; k < 3; ++k) EXPECT_DOUBLE_EQ(s.gaze[k], v[k]);
  EXPECT_EQ(parse_domain(to_string(Domain::refined)), Domain::refined);
  EXPECT_THROW(parse_domain("martian"), Error);
}

// ---------------------------------------------------------------------------

TEST(Config, FormatParseRoundTrip) {
  RefinerConfig c;
  c.eta = 12.5;
  c.stage_iters = {1, 2, 3};
  c.global_style_layers = {"conv1_1"};
  c.beta["conv1_1"] = 0.75;
  c.percept_weights = "w.bin";
  c.seed = 99;
  const auto d = parse_config(format_config(c));
  EXPECT_EQ(format_config(d), format_config(c));
  EXPECT_EQ(d.stage_iters, c.stage_iters);
  EXPECT_EQ(d.beta_of("conv1_1"), 0.75);
  EXPECT_EQ(d.seed, 99u);
}

TEST(Config, DefaultsAndOverrides) {
  const RefinerConfig d;
  EXPECT_EQ(d.eta, 100.0);
  EXPECT_EQ(d.theta, 1e4);
  EXPECT_EQ(d.mu, 100.0);
  EXPECT_EQ(d.beta_of("conv3_1"), 0.2);
  EXPECT_EQ(d.alpha_of("conv4_2"), 1.0);
  EXPECT_EQ(d.alpha_of("conv1_1"), 0.0);
  const auto c = parse_config("# comment\nmu = 5\n\nlearning_rate=0.5 # trailing\n");
  EXPECT_EQ(c.mu, 5.0);
  EXPECT_EQ(c.learning_rate, 0.5);
  EXPECT_EQ(c.eta, 100.0);
}

TEST(Config, Errors) {
  EXPECT_THROW(parse_config("mu = -1"), Error);
  EXPECT_THROW(parse_config("no_such_key = 1"), Error);
  EXPECT_THROW(parse_config("mu"), Error);
  EXPECT_THROW(parse_config("mu = abc"), Error);
  EXPECT_THROW(load_config("/nonexistent/x.cfg"), Error);
  try {
    parse_config("eta = 1\ntheta = -2\n");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), "InvalidWeight");
  }
}

// ---------------------------------------------------------------------------

TEST(Io, ImageRoundTrip) {
  const auto dir = temp_dir("io_image");
  Rng rng(5);
  const auto img = random_image(rng, 9, 13);
  save_image(img, dir / "a.png", BitDepth::sixteen);
  const auto back = load_image(dir / "a.png");
  ASSERT_EQ(back.height, 9);
  for (std::size_t i = 0; i < img.data.size(); ++i) EXPECT_NEAR(back.data[i], img.data[i], 1.0 / 65535);
  save_image(img, dir / "b.png");
  const auto b8 = load_image(dir / "b.png");
  for (std::size_t i = 0; i < img.data.size(); ++i) EXPECT_NEAR(b8.data[i], img.data[i], 0.5 / 255 + 1e-6);
  EXPECT_THROW(load_image(dir / "missing.png"), Error);
}

TEST(Io, MaskRoundTrip) {
  const auto dir = temp_dir("io_mask");
  ClassMask m(5, 7);
  m.at(2, 3) = 2;
  m.at(1, 1) = 1;
  save_mask(m, dir / "m.png");
  EXPECT_EQ(load_mask(dir / "m.png"), m);
}

TEST(Io, ManifestRoundTripAndErrors) {
  const auto dir = temp_dir("io_manifest");
  Manifest m;
  m.rows.push_back({"a.png", "", "1.5", "-0.25", "synthetic", "", ""});
  m.rows.push_back({"b.png", "bm.png", "0.1", "2", "real", "", ""});
  write_manifest(m, dir / "manifest.csv");
  const auto back = read_manifest(dir / "manifest.csv");
  ASSERT_EQ(back.rows.size(), 2u);
  EXPECT_EQ(back.rows[0].yaw_deg, "1.5");
  EXPECT_EQ(back.rows[1].mask_path, "bm.png");
  EXPECT_EQ(resolve(back, "a.png"), dir / "a.png");
  {
    std::ofstream bad(dir / "bad.csv");
    bad << kManifestHeader << "\na.png,,notanumber,1,synthetic\n";
  }
  try {
    read_manifest(dir / "bad.csv");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), "ParseError");
    EXPECT_EQ(e.detail(), "1");
  }
  EXPECT_THROW(read_manifest(dir / "none.csv"), Error);
  EXPECT_THROW(load_manifest(dir / "manifest.csv"), Error);  // images absent
}

TEST(Io, FormatExactRoundTrips) {
  Rng rng(6);
  for (int i = 0; i < 200; ++i) {
    const double v = rng.normal(0.0, 50.0);
    EXPECT_EQ(std::stod(format_exact(v)), v);
  }
}

TEST(Weights, RoundTripAndMismatch) {
  const auto dir = temp_dir("weights");
  Rng rng(7);
  nn::Conv2d<float> a(3, 4, 3, 1, 1, rng), b(3, 4, 3, 1, 1, rng), c(3, 5, 3, 1, 1, rng);
  nn::ParamList<float> pa, pb, pc;
  a.collect(pa, "conv");
  b.collect(pb, "conv");
  c.collect(pc, "conv");
  nn::save_params(dir / "w.bin", pa);
  nn::load_params(dir / "w.bin", pb);
  for (std::size_t k = 0; k < pa.size(); ++k)
    EXPECT_TRUE(std::equal(pa[k].tensor.values().begin(), pa[k].tensor.values().end(), pb[k].tensor.values().begin()));
  try {
    nn::load_params(dir / "w.bin", pc);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), "CheckpointMismatch");
  }
  EXPECT_THROW(nn::read_weight_file(dir / "nothing.bin"), Error);
}
