#include <gtest/gtest.h>

#include <fstream>
#include <numbers>

#include "eyeref/eyegen.hpp"
#include "eyeref/gazeval.hpp"
#include "eyeref/io.hpp"
#include "support.hpp"

using namespace eyeref;
using namespace eyeref::gaze;
using namespace testing_support;

namespace {

GazeVector random_unit(Rng& rng) {
  return gaze_from_angles(rng.uniform(-1.5, 1.5), rng.uniform(-1.5, 1.5));
}

std::vector<GazeSample> toy_samples(int n, std::uint64_t seed, bool shifted = false) {
  eyegen::DatasetSpec spec;
  spec.count = n;
  spec.seed = seed;
  if (shifted) spec.shift = eyegen::real_domain_shift();
  return eyegen::generate_samples(spec);
}

EstimatorConfig knn(int k) {
  EstimatorConfig c;
  c.k = k;
  return c;
}

}  // namespace

TEST(AngularError, KnownValuesAndOracle) {
  const GazeVector z{0, 0, 1}, x{1, 0, 0};
  EXPECT_EQ(angular_error(z, z), 0.0);
  EXPECT_NEAR(angular_error(z, x), 90.0, 1e-12);
  EXPECT_NEAR(angular_error(z, GazeVector{0, 0, -1}), 180.0, 1e-12);
  Rng rng(1);
  for (int i = 0; i < 200; ++i) {
    const auto a = random_unit(rng), b = random_unit(rng), c = random_unit(rng);
    const long double dot = static_cast<long double>(a[0]) * b[0] + static_cast<long double>(a[1]) * b[1] +
                            static_cast<long double>(a[2]) * b[2];
    const double oracle = static_cast<double>(std::acos(std::clamp(dot, -1.0L, 1.0L)) * 180.0L / std::numbers::pi_v<long double>);
    EXPECT_NEAR(angular_error(a, b), oracle, 1e-9);
    EXPECT_EQ(angular_error(a, b), angular_error(b, a));
    EXPECT_LE(angular_error(a, c), angular_error(a, b) + angular_error(b, c) + 1e-9);
  }
  EXPECT_THROW(angular_error(GazeVector{0, 0, 2}, z), Error);
}

TEST(Featurize, OrderAndFlip) {
  Image img(2, 2);
  for (int c = 0; c < 3; ++c) {
    img.at(c, 0, 0) = 0.1f;
    img.at(c, 0, 1) = 0.2f;
    img.at(c, 1, 0) = 0.3f;
    img.at(c, 1, 1) = 0.4f;
  }
  const auto v = featurize(img);
  ASSERT_EQ(v.size(), 4u);
  EXPECT_NEAR(v[0], 0.1, 1e-6);
  EXPECT_NEAR(v[1], 0.2, 1e-6);
  EXPECT_NEAR(v[2], 0.3, 1e-6);
  EXPECT_NEAR(v[3], 0.4, 1e-6);
  for (double c : featurize(Image(5, 7, 0.25f))) EXPECT_NEAR(c, 0.25, 1e-6);
  Rng rng(2);
  const auto r = random_image(rng, 6, 9);
  const auto a = featurize(r), b = featurize(flip_horizontal(r));
  for (int y = 0; y < 6; ++y)
    for (int x = 0; x < 9; ++x) EXPECT_EQ(b[y * 9 + x], a[y * 9 + 8 - x]);
  EXPECT_EQ(featurize(r, 15, 9).size(), 135u);
}

TEST(Estimators, ParseAndNotTrained) {
  EXPECT_EQ(parse_estimator("rf"), EstimatorKind::rf);
  EXPECT_EQ(to_string(EstimatorKind::cnn), "cnn");
  EXPECT_THROW(parse_estimator("svm"), Error);
  for (auto kind : {EstimatorKind::knn, EstimatorKind::rf, EstimatorKind::cnn}) {
    EstimatorConfig c;
    c.kind = kind;
    const auto e = make_estimator(c);
    EXPECT_FALSE(e->trained());
    EXPECT_THROW(e->predict(Image(32, 32)), Error);
    EXPECT_THROW(e->fit({}), Error);
  }
}

TEST(Knn, NearestSelfAndDegenerateK) {
  const auto train = toy_samples(20, 3);
  const auto one = make_estimator(knn(1));
  one->fit(train);
  for (const auto& s : train) {
    const auto p = one->predict(s.image);
    EXPECT_LE(angular_error(p, s.gaze), 1e-6);
  }
  const auto all = make_estimator(knn(100));
  all->fit(train);
  GazeVector mean{0, 0, 0};
  for (const auto& s : train)
    for (int k = 0; k < 3; ++k) mean[k] += s.gaze[k];
  const double n = norm(mean);
  const auto p = all->predict(train[0].image);
  for (int k = 0; k < 3; ++k) EXPECT_NEAR(p[k], mean[k] / n, 1e-12);
}

TEST(Knn, OppositeLabelsTieRule) {
  const Image img(32, 32, 0.5f);
  const std::vector<GazeSample> train{GazeSample::from_angles(img, 0.3, 0.1, Domain::synthetic)};
  auto flipped = train[0];
  for (auto& g : flipped.gaze) g = -g;
  const auto est = make_estimator(knn(2));
  est->fit({train[0], flipped});
  const auto p = est->predict(img);
  for (int k = 0; k < 3; ++k) EXPECT_EQ(p[k], train[0].gaze[k]);
}

TEST(Knn, DuplicationAndScalingInvariance) {
  const auto train = toy_samples(30, 4), test = toy_samples(8, 5);
  auto doubled = train;
  doubled.insert(doubled.end(), train.begin(), train.end());
  const auto a = make_estimator(knn(5)), b = make_estimator(knn(10));
  a->fit(train);
  b->fit(doubled);
  auto dim = [](std::vector<GazeSample> s) {
    for (auto& x : s)
      for (auto& v : x.image.data) v *= 0.6f;
    return s;
  };
  const auto c = make_estimator(knn(5));
  c->fit(dim(train));
  const auto dimmed_test = dim(test);
  for (std::size_t i = 0; i < test.size(); ++i) {
    const auto pa = a->predict(test[i].image);
    EXPECT_LE(angular_error(pa, b->predict(test[i].image)), 1e-5);
    EXPECT_LE(angular_error(pa, c->predict(dimmed_test[i].image)), 1e-5);
  }
}

TEST(Knn, BeatsChanceOnToys) {
  const auto est = make_estimator(knn(5));
  est->fit(toy_samples(200, 6));
  const double err = mean_error(*est, toy_samples(50, 7));
  EXPECT_LT(err, 90.0);
  EXPECT_LT(err, 15.0);
}

TEST(RandomForest, SingleTreeSingleSample) {
  EstimatorConfig c;
  c.kind = EstimatorKind::rf;
  c.trees = 1;
  const auto est = make_estimator(c);
  const auto s = toy_samples(1, 8);
  est->fit(s);
  EXPECT_LE(angular_error(est->predict(s[0].image), s[0].gaze), 1e-9);
  c.trees = 20;
  const auto forest = make_estimator(c);
  forest->fit(toy_samples(150, 9));
  const auto p = forest->predict(toy_samples(1, 10)[0].image);
  EXPECT_NEAR(norm(p), 1.0, 1e-6);
  EXPECT_LT(mean_error(*forest, toy_samples(30, 10)), 90.0);
}

TEST(Cnn, FitsToyData) {
  EstimatorConfig c;
  c.kind = EstimatorKind::cnn;
  c.cnn_max_epochs = 10;
  const auto est = make_estimator(c);
  const auto train = toy_samples(200, 11);
  est->fit(train);
  EXPECT_TRUE(est->trained());
  EXPECT_NEAR(norm(est->predict(train[0].image)), 1.0, 1e-6);
  EXPECT_LT(mean_error(*est, train), 5.0);
}

TEST(LabelPreservation, ZeroForIdenticalAndPairErrors) {
  const auto est = make_estimator(knn(3));
  const auto train = toy_samples(20, 12);
  est->fit(train);
  std::vector<Image> raw;
  for (const auto& s : toy_samples(5, 13)) raw.push_back(s.image);
  EXPECT_EQ(label_preservation(*est, raw, raw), 0.0);
  auto shorter = raw;
  shorter.pop_back();
  EXPECT_THROW(label_preservation(*est, raw, shorter), Error);
  auto resized = raw;
  resized[0] = Image(40, 40);
  EXPECT_THROW(label_preservation(*est, raw, resized), Error);
}

TEST(Benchmark, RowsCsvAndTable) {
  const auto dir = temp_dir("benchmark");
  eyegen::DatasetSpec spec;
  spec.count = 12;
  spec.seed = 14;
  const auto syn = eyegen::generate_dataset(spec, dir / "syn");
  spec.seed = 15;
  const auto syn2 = eyegen::generate_dataset(spec, dir / "syn2");
  EstimatorConfig k1 = knn(1), rf;
  rf.kind = EstimatorKind::rf;
  rf.trees = 3;
  const auto rows = benchmark({syn, syn2}, syn, {k1, rf});
  ASSERT_EQ(rows.size(), 4u);
  EXPECT_EQ(rows[0].estimator, "knn");
  EXPECT_EQ(rows[0].n, 12u);
  EXPECT_LE(rows[0].mean_error_deg, 1e-6);
  for (const auto& r : rows) EXPECT_GE(r.mean_error_deg, 0.0);
  write_benchmark_csv(rows, dir / "b.csv");
  const auto back = read_benchmark_csv(dir / "b.csv");
  ASSERT_EQ(back.size(), rows.size());
  EXPECT_EQ(back[3].train_set, rows[3].train_set);
  EXPECT_EQ(back[2].mean_error_deg, rows[2].mean_error_deg);
  std::ifstream in(dir / "b.csv");
  std::string header;
  std::getline(in, header);
  EXPECT_EQ(header, kBenchmarkHeader);

  const auto table = table1_rows(rows, {{rows[0].train_set, Domain::synthetic}});
  ASSERT_EQ(table.size(), published_table1().size() + rows.size());
  EXPECT_EQ(table.back().source, "measured");
  EXPECT_EQ(table[published_table1().size()].r_s, "S");
  write_table1_csv(table, dir / "t.csv");
  std::ifstream t(dir / "t.csv");
  std::getline(t, header);
  EXPECT_EQ(header, kTable1Header);
  EXPECT_THROW(benchmark({dir / "missing.csv"}, syn, {k1}), Error);
}

TEST(Table1, PublishedValues) {
  const std::vector<std::pair<std::string, double>> expected{
      {"ALR", 16.7}, {"SVR", 16.6}, {"RF", 15.4}, {"CNN with UT", 13.2}, {"K-NN with UT (ours)", 8.9},
      {"CNN with UT (ours)", 10.2}, {"K-NN with Refined UnityEyes", 10.2}, {"CNN with Refined UnityEyes", 11.5},
      {"CNN with Refined UnityEyes (SimGANs)", 8.0}, {"K-NN with Refined UnityEyes (ours)", 8.3},
      {"CNN with Refined UnityEyes (ours)", 7.7}};
  const auto rows = published_table1();
  ASSERT_EQ(rows.size(), expected.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    EXPECT_EQ(rows[i].method, expected[i].first);
    ASSERT_TRUE(rows[i].error_deg.has_value());
    EXPECT_EQ(*rows[i].error_deg, expected[i].second);
    EXPECT_EQ(rows[i].r_s, i < 6 ? "R" : "S");
  }
}
