#include <gtest/gtest.h>

#include "eyeref/eyegen.hpp"
#include "eyeref/segmenter.hpp"
#include "support.hpp"

using namespace eyeref;
using namespace testing_support;

namespace {

bool is_pupil(std::uint8_t v) { return v == 2; }
bool is_eye(std::uint8_t v) { return v != 0; }

}  // namespace

TEST(Repair, IdempotentAndCentred) {
  Rng rng(1);
  for (int i = 0; i < 80; ++i) {
    const auto m = random_label_mask(rng, 32, 32, i % 5);
    const auto r = repair_orphans(m);
    EXPECT_EQ(repair_orphans(r), r) << "case " << i;
    const auto pupil = centroid(r, is_pupil), eye = centroid(r, is_eye);
    if (pupil.count == 0) continue;
    EXPECT_LE(std::hypot(pupil.x - eye.x, pupil.y - eye.y), 1.0) << "case " << i;
  }
}

TEST(Repair, OrphanPupilMovesInsideIris) {
  ClassMask m(20, 20);
  for (int y = 5; y < 15; ++y)
    for (int x = 5; x < 15; ++x) m.at(y, x) = 1;
  m.at(1, 1) = m.at(1, 2) = m.at(2, 1) = m.at(2, 2) = 2;  // orphan, not touching the iris
  const auto r = repair_orphans(m);
  EXPECT_EQ(r.count(MaskClass::pupil), 4u);
  EXPECT_EQ(r.at(1, 1), 0);
  const auto c = centroid(r, is_pupil);
  EXPECT_NEAR(c.x, 10.0, 1e-12);
  EXPECT_NEAR(c.y, 10.0, 1e-12);
}

TEST(Repair, ConcentricPupilKeepsArea) {
  Rng rng(2);
  const auto eye = eyegen::render_eye(eyegen::EyeParams{}, 48);
  const auto r = repair_orphans(eye.mask);
  const long before = static_cast<long>(eye.mask.count(MaskClass::pupil));
  const long after = static_cast<long>(r.count(MaskClass::pupil));
  EXPECT_LE(std::abs(before - after), 2);
  for (std::size_t i = 0; i < r.labels.size(); ++i)
    if (r.labels[i] == 2) EXPECT_NE(eye.mask.labels[i], 0);
}

TEST(Repair, EmptyIrisDropsPupil) {
  ClassMask m(8, 8);
  m.at(3, 3) = m.at(3, 4) = 2;
  const auto r = repair_orphans(m);
  EXPECT_EQ(r.count(MaskClass::pupil), 0u);
  EXPECT_EQ(r.count(MaskClass::iris), 0u);
}

TEST(Repair, NoPupilOutsideSupport) {
  Rng rng(3);
  for (int i = 0; i < 40; ++i) {
    const auto m = random_label_mask(rng, 24, 24, 1);
    const auto r = repair_orphans(m);
    for (std::size_t p = 0; p < r.labels.size(); ++p)
      if (r.labels[p] != 0) EXPECT_NE(m.labels[p], 0);
  }
}

TEST(DownsampleMasks, AreaAverages) {
  ClassMask m(2, 2);
  m.at(0, 0) = m.at(0, 1) = 2;
  const auto s = downsample_masks(m, {{"l", {1, 1}}});
  EXPECT_DOUBLE_EQ(s.at("l").classes[1][0], 0.5);
  EXPECT_DOUBLE_EQ(s.at("l").classes[0][0], 0.0);
  EXPECT_THROW(downsample_masks(m, {{"big", {4, 4}}}), Error);

  Rng rng(4);
  const auto r = random_label_mask(rng, 32, 32, 3);
  const auto full = downsample_masks(r, {{"full", {32, 32}}, {"c", {8, 8}}, {"odd", {5, 7}}});
  for (std::size_t p = 0; p < r.labels.size(); ++p) {
    EXPECT_EQ(full.at("full").classes[0][p], r.labels[p] == 1 ? 1.0 : 0.0);
    EXPECT_EQ(full.at("full").classes[1][p], r.labels[p] == 2 ? 1.0 : 0.0);
  }
  for (const char* name : {"c", "odd"}) {
    const auto& lm = full.at(name);
    for (std::size_t p = 0; p < lm.classes[0].size(); ++p) {
      const double iris = lm.classes[0][p], pupil = lm.classes[1][p];
      EXPECT_GE(iris, 0.0);
      EXPECT_GE(pupil, 0.0);
      EXPECT_LE(iris + pupil, 1.0 + 1e-6);
    }
  }
}

TEST(SegmenterNet, ShapeAndTieBreak) {
  SegmenterNet net(4, 1);
  Rng rng(5);
  for (int size : {32, 36, 41}) {
    const auto img = random_image(rng, size, size + 3);
    const auto mask = segment(net, img);
    EXPECT_EQ(mask.height, size);
    EXPECT_EQ(mask.width, size + 3);
    const auto prob = class_probabilities(net, img);
    ASSERT_EQ(prob.size(), 3u * size * (size + 3));
    const std::size_t n = static_cast<std::size_t>(size) * (size + 3);
    for (std::size_t p = 0; p < n; ++p) EXPECT_NEAR(prob[p] + prob[n + p] + prob[2 * n + p], 1.0, 1e-6);
  }
  net.zero_head();
  const auto mask = segment(net, random_image(rng, 32, 32));
  EXPECT_EQ(mask.count(MaskClass::background), mask.labels.size());
}

TEST(SegmenterNet, ZeroResidualUnitIsRectifiedIdentity) {
  Rng rng(6);
  nn::ResidualUnit<float> unit(4, rng);
  unit.zero_residual();
  std::vector<float> v(4 * 5 * 5);
  for (auto& x : v) x = static_cast<float>(rng.uniform(-1, 1));
  const nn::Tensor<float> x({4, 5, 5}, v);
  const auto y = unit(x);
  for (std::size_t i = 0; i < v.size(); ++i) EXPECT_EQ(y.values()[i], std::max(v[i], 0.0f));
}

TEST(Segmenter, TrainsAndRoundTrips) {
  eyegen::DatasetSpec spec;
  spec.count = 24;
  spec.size = 32;
  spec.seed = 3;
  std::vector<std::pair<Image, ClassMask>> data;
  for (const auto& s : eyegen::generate_samples(spec)) data.emplace_back(s.image, *s.mask);
  SegmenterTrainConfig cfg;
  cfg.width = 4;
  const auto dir = temp_dir("segmenter");
  cfg.checkpoint_dir = dir;
  const auto result = train_segmenter(data, 3, cfg);
  ASSERT_EQ(result.epoch_losses.size(), 3u);
  EXPECT_LT(result.epoch_losses.back(), result.epoch_losses.front());
  const auto loaded = load_segmenter(latest_checkpoint(dir));
  EXPECT_EQ(segment(loaded, data[0].first), segment(result.net, data[0].first));
  // all-black image: no crash, bounded pupil
  const auto black = segment(loaded, Image(32, 32, 0.0f));
  EXPECT_LE(black.count(MaskClass::pupil), black.labels.size());
  EXPECT_THROW(train_segmenter({}, 1, cfg), Error);
  EXPECT_THROW(load_segmenter(dir / "absent.ckpt"), Error);
}
