#include <gtest/gtest.h>

#include <fstream>

#include "eyeref/eyegen.hpp"
#include "eyeref/io.hpp"
#include "eyeref/refiner.hpp"
#include "support.hpp"

using namespace eyeref;
using namespace testing_support;

namespace {

RefinerConfig tiny_config() {
  RefinerConfig c;
  c.global_resolution = 16;
  c.percept_width = 4;
  c.disc_width = 8;
  c.g1_width = 8;
  c.g1_residual_units = 1;
  c.g2_width = 4;
  c.g2_residual_units = 1;
  c.stage_iters = {4, 3, 3};
  c.learning_rate = 1e-3;
  c.mu = 10;
  c.seed = 5;
  return c;
}

RefinerData tiny_data(int n) {
  eyegen::DatasetSpec spec;
  spec.count = n;
  spec.seed = 1;
  RefinerData d;
  for (const auto& s : eyegen::generate_samples(spec)) {
    d.synthetic.push_back(s.image);
    d.synthetic_masks.push_back(repair_orphans(*s.mask));
  }
  spec.seed = 2;
  spec.shift = eyegen::real_domain_shift();
  for (const auto& s : eyegen::generate_samples(spec)) {
    d.real.push_back(s.image);
    d.real_masks.push_back(repair_orphans(*s.mask));
  }
  return d;
}

std::vector<std::vector<float>> snapshot(const nn::ParamList<float>& params) {
  std::vector<std::vector<float>> out;
  for (const auto& p : params) out.emplace_back(p.tensor.values().begin(), p.tensor.values().end());
  return out;
}

}  // namespace

TEST(Refiner, IdentityInitReproducesInput) {
  const RefinerModel model(tiny_config());
  eyegen::DatasetSpec spec;
  spec.count = 3;
  for (const auto& s : eyegen::generate_samples(spec)) {
    const auto out = model.refine(s.image, *s.mask);
    const auto in = resample(s.image, 32, 32);
    ASSERT_EQ(out.height, 32);
    for (std::size_t k = 0; k < in.data.size(); ++k) EXPECT_NEAR(out.data[k], in.data[k], 1e-6);
  }
}

TEST(Refiner, GlobalGeneratorIdentityAndShapes) {
  Rng rng(3);
  GlobalGenerator g(4, 2, rng);
  g.identity_init();
  const auto img = random_image(rng, 8, 8);
  const auto x = image_tensor(img);
  const auto masks = mask_planes(ClassMask(8, 8), 8, 8);
  ASSERT_EQ(masks.size(), 128u);
  const auto out = g.forward(x, masks);
  EXPECT_EQ(out.features.dims(), (std::vector<int>{4, 8, 8}));
  for (std::size_t k = 0; k < x.size(); ++k) EXPECT_EQ(out.image.values()[k], x.values()[k]);
}

TEST(Refiner, MaskPlanesAreaAverage) {
  ClassMask m(4, 4);
  m.at(0, 0) = 1;
  m.at(0, 1) = 2;
  const auto planes = mask_planes(m, 2, 2);
  ASSERT_EQ(planes.size(), 8u);
  EXPECT_FLOAT_EQ(planes[0], 0.25f);
  EXPECT_FLOAT_EQ(planes[4], 0.25f);
  EXPECT_FLOAT_EQ(planes[1], 0.0f);
}

TEST(Refiner, DiscriminatorStartsNeutral) {
  const RefinerModel model(tiny_config());
  Rng rng(4);
  const auto score = model.discriminate(random_image(rng, 32, 32), ClassMask(32, 32));
  // conv3_1 sits after two poolings
  EXPECT_EQ(score.dims(), (std::vector<int>{1, 8, 8}));
  const float first = score.values()[0];
  for (float v : score.values()) EXPECT_EQ(v, first);
}

TEST(GanObjective, ClosedForm) {
  const std::vector<double> real{1.0, 0.5, 0.0}, fake{0.0, 0.5, 2.0};
  const auto l = gan_objective(real, fake);
  EXPECT_NEAR(l.loss_d, 0.5 * (0 + 0.25 + 1) / 3 + 0.5 * (0 + 0.25 + 4) / 3, 1e-15);
  EXPECT_NEAR(l.loss_g_adv, (1 + 0.25 + 1) / 3, 1e-15);
  const std::vector<double> ones{1, 1}, zeros{0, 0};
  EXPECT_EQ(gan_objective(ones, zeros).loss_d, 0.0);
  EXPECT_THROW(gan_objective({}, fake), Error);
  EXPECT_THROW(gan_objective(real, {}), Error);
}

TEST(Refiner, ZeroScheduleLeavesWeightsUnchanged) {
  auto cfg = tiny_config();
  cfg.stage_iters = {0, 0, 0};
  RefinerModel model(cfg);
  const auto before = snapshot(model.params());
  const auto dir = temp_dir("refiner_zero");
  const auto log = train_refiner(model, tiny_data(2), {dir, {}});
  EXPECT_TRUE(log.empty());
  EXPECT_EQ(snapshot(model.params()), before);
  RefinerModel reloaded(cfg);
  reloaded.load(dir / "refiner" / "final.ckpt");
  EXPECT_EQ(snapshot(reloaded.params()), before);
}

TEST(Refiner, StageTwoFreezesGlobalGenerator) {
  auto cfg = tiny_config();
  cfg.stage_iters = {3, 3, 0};
  RefinerModel model(cfg);
  std::vector<std::vector<float>> g1_after_stage1;
  RefinerTrainOptions opts;
  opts.on_iteration = [&](const IterationLog& it) {
    if (it.stage == 1 && it.iter == 3) g1_after_stage1 = snapshot(model.g1().params());
    if (it.stage == 2) EXPECT_EQ(snapshot(model.g1().params()), g1_after_stage1);
  };
  const auto initial_g1 = snapshot(model.g1().params());
  const auto log = train_refiner(model, tiny_data(3), opts);
  ASSERT_EQ(log.size(), 6u);
  EXPECT_NE(g1_after_stage1, initial_g1);
  EXPECT_EQ(snapshot(model.g1().params()), g1_after_stage1);
}

TEST(Refiner, SmokeRunWritesArtifacts) {
  auto cfg = tiny_config();
  cfg.stage_iters = {10, 5, 5};
  cfg.checkpoint_every = 7;
  RefinerModel model(cfg);
  const auto dir = temp_dir("refiner_smoke");
  const auto log = train_refiner(model, tiny_data(4), {dir, {}});
  ASSERT_EQ(log.size(), 20u);
  for (std::size_t i = 0; i < log.size(); ++i) {
    EXPECT_EQ(log[i].iter, static_cast<int>(i) + 1);
    EXPECT_TRUE(std::isfinite(log[i].objective));
    EXPECT_NEAR(log[i].objective, cfg.adv_weight * log[i].loss_g_adv + cfg.lambda * log[i].l_total, 1e-6 * std::abs(log[i].objective) + 1e-9);
  }
  EXPECT_EQ(log[9].stage, 1);
  EXPECT_EQ(log[10].stage, 2);
  EXPECT_EQ(log[19].stage, 3);
  for (const char* f : {"stage0_iter0.ckpt", "stage1_iter10.ckpt", "stage2_iter15.ckpt", "stage3_iter20.ckpt", "final.ckpt"})
    EXPECT_TRUE(std::filesystem::exists(dir / "refiner" / f)) << f;
  EXPECT_TRUE(std::filesystem::exists(dir / "refiner" / "stage1_iter7.ckpt"));
  const auto back = read_loss_log(dir / "losses.csv");
  ASSERT_EQ(back.size(), log.size());
  for (std::size_t i = 0; i < log.size(); ++i) {
    EXPECT_EQ(back[i].l_total, log[i].l_total);
    EXPECT_EQ(back[i].loss_d, log[i].loss_d);
  }
  std::ifstream in(dir / "losses.csv");
  std::string header;
  std::getline(in, header);
  EXPECT_EQ(header, kLossLogHeader);
}

TEST(Refiner, LambdaZeroRunsAdversarialOnly) {
  auto cfg = tiny_config();
  cfg.lambda = 0.0;
  cfg.stage_iters = {5, 0, 0};
  RefinerModel model(cfg);
  const auto log = train_refiner(model, tiny_data(2));
  ASSERT_EQ(log.size(), 5u);
  for (const auto& it : log) EXPECT_NEAR(it.objective, it.loss_g_adv, 1e-12);
}

TEST(Refiner, TrainingErrors) {
  RefinerModel model(tiny_config());
  EXPECT_THROW(train_refiner(model, RefinerData{}), Error);
  EXPECT_THROW(model.load("/nonexistent/model.ckpt"), Error);
  auto other = tiny_config();
  other.g1_width = 6;
  const auto dir = temp_dir("refiner_mismatch");
  RefinerModel(other).save(dir / "m.ckpt");
  try {
    model.load(dir / "m.ckpt");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), "CheckpointMismatch");
  }
}

TEST(LossLog, RoundTripAndParseError) {
  const auto dir = temp_dir("loss_log");
  std::vector<IterationLog> log(3);
  Rng rng(6);
  for (int i = 0; i < 3; ++i) {
    log[i].iter = i + 1;
    log[i].l_gs = rng.normal();
    log[i].l_ls = rng.normal();
    log[i].l_style_weighted = rng.normal();
    log[i].content = rng.normal();
    log[i].l_m = rng.normal();
    log[i].l_total = rng.normal();
    log[i].loss_d = rng.normal();
    log[i].loss_g_adv = rng.normal();
  }
  write_loss_log(log, dir / "l.csv");
  const auto back = read_loss_log(dir / "l.csv");
  ASSERT_EQ(back.size(), 3u);
  for (int i = 0; i < 3; ++i) {
    EXPECT_EQ(back[i].iter, log[i].iter);
    EXPECT_EQ(back[i].l_m, log[i].l_m);
    EXPECT_EQ(back[i].loss_g_adv, log[i].loss_g_adv);
  }
  {
    std::ofstream bad(dir / "bad.csv");
    bad << kLossLogHeader << "\n1,2,3\n";
  }
  EXPECT_THROW(read_loss_log(dir / "bad.csv"), Error);
  EXPECT_THROW(read_loss_log(dir / "none.csv"), Error);
}

TEST(RefineBatch, CopiesLabelsVerbatim) {
  const auto dir = temp_dir("refine_batch");
  eyegen::DatasetSpec spec;
  spec.count = 3;
  spec.seed = 8;
  const auto manifest = eyegen::generate_dataset(spec, dir / "in");
  const RefinerModel model(tiny_config());
  const auto out = refine_batch(model, nullptr, manifest, dir / "out");
  const auto in_rows = read_manifest(manifest), out_rows = read_manifest(out);
  ASSERT_EQ(out_rows.rows.size(), in_rows.rows.size());
  for (std::size_t i = 0; i < in_rows.rows.size(); ++i) {
    EXPECT_EQ(out_rows.rows[i].yaw_deg, in_rows.rows[i].yaw_deg);
    EXPECT_EQ(out_rows.rows[i].pitch_deg, in_rows.rows[i].pitch_deg);
    EXPECT_EQ(out_rows.rows[i].domain, "refined");
  }
  const auto refined = load_manifest(out);
  EXPECT_EQ(refined[0].image.height, 32);

  // no masks and no segmenter
  Manifest bare = in_rows;
  for (auto& r : bare.rows) r.mask_path.clear();
  write_manifest(bare, dir / "in" / "bare.csv");
  try {
    refine_batch(model, nullptr, dir / "in" / "bare.csv", dir / "out2");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), "MaskMismatch");
  }
}
