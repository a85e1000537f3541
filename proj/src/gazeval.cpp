#include "eyeref/gazeval.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "eyeref/io.hpp"
#include "eyeref/nn/optim.hpp"

namespace eyeref::gaze {

double angular_error(const GazeVector& a, const GazeVector& b) {
  if (std::abs(norm(a) - 1.0) > 1e-6 || std::abs(norm(b) - 1.0) > 1e-6)
    throw Error("NonUnitInput", "angular_error", "angular_error needs unit vectors");
  return rad_to_deg(std::acos(std::clamp(dot(a, b), -1.0, 1.0)));
}

std::vector<double> featurize(const Image& image) {
  std::vector<double> v(image.plane());
  for (int y = 0; y < image.height; ++y)
    for (int x = 0; x < image.width; ++x)
      v[static_cast<std::size_t>(y) * image.width + x] =
          0.299 * image.at(0, y, x) + 0.587 * image.at(1, y, x) + 0.114 * image.at(2, y, x);
  return v;
}

std::vector<double> featurize(const Image& image, int width, int height) {
  return featurize(resample(image, height, width));
}

std::string to_string(EstimatorKind k) {
  switch (k) {
    case EstimatorKind::knn: return "knn";
    case EstimatorKind::rf: return "rf";
    case EstimatorKind::cnn: return "cnn";
  }
  return "?";
}

EstimatorKind parse_estimator(const std::string& text) {
  if (text == "knn") return EstimatorKind::knn;
  if (text == "rf") return EstimatorKind::rf;
  if (text == "cnn") return EstimatorKind::cnn;
  throw Error("ParseError", text, "unknown estimator '" + text + "'");
}

namespace {

void require_samples(const std::vector<GazeSample>& train) {
  if (train.empty()) throw Error("EmptyDataset", "train", "estimator needs training samples");
}

GazeVector unit_or(const GazeVector& sum, const GazeVector& fallback) {
  if (norm(sum) < 1e-9) return fallback;
  return normalized(sum);
}

// ---------------------------------------------------------------------------

class KnnEstimator final : public GazeEstimator {
 public:
  explicit KnnEstimator(const EstimatorConfig& c) : config_(c) {
    if (c.k < 1) throw Error("InvalidParams", "k");
  }
  EstimatorKind kind() const override { return EstimatorKind::knn; }
  bool trained() const override { return !labels_.empty(); }

  void fit(const std::vector<GazeSample>& train) override {
    require_samples(train);
    dim_ = static_cast<std::size_t>(config_.input_width) * config_.input_height;
    data_.clear();
    labels_.clear();
    for (const auto& s : train) {
      const auto f = featurize(s.image, config_.input_width, config_.input_height);
      data_.insert(data_.end(), f.begin(), f.end());
      labels_.push_back(s.gaze);
    }
  }

  GazeVector predict(const Image& image) const override {
    if (!trained()) throw Error("NotTrained", "knn");
    const auto f = featurize(image, config_.input_width, config_.input_height);
    std::vector<std::pair<double, std::size_t>> d(labels_.size());
    for (std::size_t i = 0; i < labels_.size(); ++i) {
      double s = 0.0;
      const double* row = data_.data() + i * dim_;
      for (std::size_t j = 0; j < dim_; ++j) s += (row[j] - f[j]) * (row[j] - f[j]);
      d[i] = {s, i};
    }
    const std::size_t k = std::min<std::size_t>(config_.k, d.size());
    std::partial_sort(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(k), d.end());
    GazeVector sum{0, 0, 0};
    for (std::size_t i = 0; i < k; ++i)
      for (int c = 0; c < 3; ++c) sum[c] += labels_[d[i].second][c];
    return unit_or(sum, labels_[d[0].second]);
  }

 private:
  EstimatorConfig config_;
  std::size_t dim_ = 0;
  std::vector<double> data_;
  std::vector<GazeVector> labels_;
};

// ---------------------------------------------------------------------------

class ForestEstimator final : public GazeEstimator {
 public:
  explicit ForestEstimator(const EstimatorConfig& c) : config_(c) {
    if (c.trees < 1) throw Error("InvalidParams", "trees");
  }
  EstimatorKind kind() const override { return EstimatorKind::rf; }
  bool trained() const override { return !trees_.empty(); }

  void fit(const std::vector<GazeSample>& train) override {
    require_samples(train);
    x_.clear();
    y_.clear();
    for (const auto& s : train) {
      x_.push_back(featurize(s.image, config_.input_width, config_.input_height));
      y_.push_back(s.gaze);
    }
    Rng rng(Rng::mix(config_.seed, 0xf0));
    trees_.clear();
    for (int t = 0; t < config_.trees; ++t) {
      std::vector<std::size_t> idx(x_.size());
      for (auto& i : idx) i = rng.index(x_.size());
      Tree tree;
      grow(tree, idx, rng);
      trees_.push_back(std::move(tree));
    }
    x_.clear();
    y_.clear();
  }

  GazeVector predict(const Image& image) const override {
    if (!trained()) throw Error("NotTrained", "rf");
    const auto f = featurize(image, config_.input_width, config_.input_height);
    GazeVector sum{0, 0, 0};
    for (const auto& t : trees_) {
      int n = 0;
      while (t[n].feature >= 0) n = f[t[n].feature] <= t[n].threshold ? t[n].left : t[n].right;
      for (int c = 0; c < 3; ++c) sum[c] += t[n].value[c];
    }
    return unit_or(sum, trees_.front().front().value);
  }

 private:
  struct TreeNode {
    int feature = -1;  // -1: leaf
    double threshold = 0.0;
    int left = -1, right = -1;
    GazeVector value{0, 0, 1};
  };
  using Tree = std::vector<TreeNode>;

  int grow(Tree& tree, std::vector<std::size_t> idx, Rng& rng) {
    const int id = static_cast<int>(tree.size());
    tree.emplace_back();
    GazeVector mean{0, 0, 0};
    for (auto i : idx)
      for (int c = 0; c < 3; ++c) mean[c] += y_[i][c];
    for (auto& m : mean) m /= static_cast<double>(idx.size());
    tree[id].value = mean;
    if (idx.size() < 2) return id;

    const std::size_t dims = x_[0].size();
    const std::size_t mtry = std::max<std::size_t>(1, static_cast<std::size_t>(std::sqrt(static_cast<double>(dims))));
    double best_gain = 1e-12;
    int best_feature = -1;
    double best_threshold = 0.0;
    auto sse_total = [&]() {
      double s = 0.0;
      for (auto i : idx)
        for (int c = 0; c < 3; ++c) s += (y_[i][c] - mean[c]) * (y_[i][c] - mean[c]);
      return s;
    }();
    std::vector<std::size_t> order = idx;
    for (std::size_t trial = 0; trial < mtry; ++trial) {
      const std::size_t f = rng.index(dims);
      std::sort(order.begin(), order.end(), [&](auto a, auto b) { return x_[a][f] < x_[b][f]; });
      // Sweep split points keeping running sums of the left side.
      GazeVector ls{0, 0, 0}, lq{0, 0, 0}, ts{0, 0, 0}, tq{0, 0, 0};
      for (auto i : order)
        for (int c = 0; c < 3; ++c) {
          ts[c] += y_[i][c];
          tq[c] += y_[i][c] * y_[i][c];
        }
      const double n = static_cast<double>(order.size());
      for (std::size_t s = 0; s + 1 < order.size(); ++s) {
        for (int c = 0; c < 3; ++c) {
          ls[c] += y_[order[s]][c];
          lq[c] += y_[order[s]][c] * y_[order[s]][c];
        }
        const double a = x_[order[s]][f], b = x_[order[s + 1]][f];
        if (!(a < b)) continue;
        const double nl = static_cast<double>(s + 1), nr = n - nl;
        double sse = 0.0;
        for (int c = 0; c < 3; ++c)
          sse += (lq[c] - ls[c] * ls[c] / nl) + ((tq[c] - lq[c]) - (ts[c] - ls[c]) * (ts[c] - ls[c]) / nr);
        const double gain = sse_total - sse;
        if (gain > best_gain) {
          best_gain = gain;
          best_feature = static_cast<int>(f);
          best_threshold = 0.5 * (a + b);
        }
      }
    }
    if (best_feature < 0) return id;
    std::vector<std::size_t> left, right;
    for (auto i : idx) (x_[i][best_feature] <= best_threshold ? left : right).push_back(i);
    tree[id].feature = best_feature;
    tree[id].threshold = best_threshold;
    const int l = grow(tree, std::move(left), rng);
    const int r = grow(tree, std::move(right), rng);
    tree[id].left = l;
    tree[id].right = r;
    return id;
  }

  EstimatorConfig config_;
  std::vector<std::vector<double>> x_;
  std::vector<GazeVector> y_;
  std::vector<Tree> trees_;
};

// ---------------------------------------------------------------------------

class CnnEstimator final : public GazeEstimator {
 public:
  explicit CnnEstimator(const EstimatorConfig& c) : config_(c) {}
  EstimatorKind kind() const override { return EstimatorKind::cnn; }
  bool trained() const override { return trained_; }

  void fit(const std::vector<GazeSample>& train) override {
    require_samples(train);
    Rng rng(Rng::mix(config_.seed, 0xc0));
    const int h = config_.cnn_height, w = config_.cnn_width;
    conv1_ = nn::Conv2d<float>(1, 16, 5, 1, 2, rng);
    conv2_ = nn::Conv2d<float>(16, 32, 3, 1, 1, rng);
    const int flat = 32 * ((h / 2) / 2) * ((w / 2) / 2);
    fc1_ = nn::Linear<float>(flat, 48, rng);
    fc2_ = nn::Linear<float>(48, 3, rng);

    std::vector<nn::Tensor<float>> inputs;
    for (const auto& s : train) inputs.push_back(input(s.image));
    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.index(i)]);
    const std::size_t n_val = train.size() >= 10 ? train.size() / 10 : 0;
    std::vector<std::size_t> val(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_val));
    std::vector<std::size_t> fit_set(order.begin() + static_cast<std::ptrdiff_t>(n_val), order.end());
    if (val.empty()) val = fit_set;

    nn::Adam<float> opt(params(), config_.cnn_learning_rate);
    double best = std::numeric_limits<double>::infinity();
    std::vector<std::vector<float>> best_params;
    int stale = 0;
    trained_ = true;
    for (int epoch = 0; epoch < config_.cnn_max_epochs && stale < config_.cnn_patience; ++epoch) {
      for (std::size_t i = fit_set.size(); i > 1; --i) std::swap(fit_set[i - 1], fit_set[rng.index(i)]);
      for (auto k : fit_set) {
        const auto& g = train[k].gaze;
        const float target[3] = {static_cast<float>(g[0]), static_cast<float>(g[1]), static_cast<float>(g[2])};
        const auto loss = nn::mse(forward(inputs[k]), std::span<const float>(target, 3));
        if (!std::isfinite(loss.item())) throw Error("DivergenceDetected", "cnn", "gaze CNN loss is not finite");
        nn::backward(loss);
        opt.step();
      }
      double err = 0.0;
      for (auto k : val) err += angular_error(head(inputs[k]), train[k].gaze);
      err /= static_cast<double>(val.size());
      if (err < best - 1e-9) {
        best = err;
        stale = 0;
        best_params.clear();
        for (const auto& p : params()) best_params.emplace_back(p.tensor.values().begin(), p.tensor.values().end());
      } else {
        ++stale;
      }
    }
    auto ps = params();
    for (std::size_t i = 0; i < ps.size(); ++i)
      std::copy(best_params[i].begin(), best_params[i].end(), ps[i].tensor.mutable_values().begin());
  }

  GazeVector predict(const Image& image) const override {
    if (!trained_) throw Error("NotTrained", "cnn");
    return head(input(image));
  }

 private:
  nn::Tensor<float> input(const Image& image) const {
    const auto f = featurize(image, config_.cnn_width, config_.cnn_height);
    std::vector<float> v(f.size());
    for (std::size_t i = 0; i < f.size(); ++i) v[i] = static_cast<float>(f[i] - 0.5);
    return nn::Tensor<float>({1, config_.cnn_height, config_.cnn_width}, std::move(v));
  }
  nn::Tensor<float> forward(const nn::Tensor<float>& x) const {
    auto y = nn::avg_pool2(nn::relu(conv1_(x)));
    y = nn::avg_pool2(nn::relu(conv2_(y)));
    return fc2_(nn::relu(fc1_(y)));
  }
  GazeVector head(const nn::Tensor<float>& x) const {
    const auto out = forward(x);
    const auto v = out.values();
    return unit_or({v[0], v[1], v[2]}, {0, 0, 1});
  }
  nn::ParamList<float> params() const {
    nn::ParamList<float> out;
    conv1_.collect(out, "conv1");
    conv2_.collect(out, "conv2");
    fc1_.collect(out, "fc1");
    fc2_.collect(out, "fc2");
    return out;
  }

  EstimatorConfig config_;
  bool trained_ = false;
  nn::Conv2d<float> conv1_, conv2_;
  nn::Linear<float> fc1_, fc2_;
};

}  // namespace

std::unique_ptr<GazeEstimator> make_estimator(const EstimatorConfig& config) {
  switch (config.kind) {
    case EstimatorKind::knn: return std::make_unique<KnnEstimator>(config);
    case EstimatorKind::rf: return std::make_unique<ForestEstimator>(config);
    case EstimatorKind::cnn: return std::make_unique<CnnEstimator>(config);
  }
  throw Error("InvalidParams", "kind");
}

double mean_error(const GazeEstimator& estimator, const std::vector<GazeSample>& test) {
  if (test.empty()) throw Error("EmptyDataset", "test", "no test samples");
  double s = 0.0;
  for (const auto& t : test) s += angular_error(estimator.predict(t.image), normalized(t.gaze));
  return s / static_cast<double>(test.size());
}

double label_preservation(const GazeEstimator& estimator, const std::vector<Image>& raw, const std::vector<Image>& refined) {
  if (raw.size() != refined.size() || raw.empty())
    throw Error("PairMismatch", "count", "raw and refined sets must pair up one to one");
  double s = 0.0;
  for (std::size_t i = 0; i < raw.size(); ++i) {
    if (raw[i].height != refined[i].height || raw[i].width != refined[i].width)
      throw Error("PairMismatch", std::to_string(i), "pair " + std::to_string(i) + " differs in size");
    s += angular_error(estimator.predict(raw[i]), estimator.predict(refined[i]));
  }
  return s / static_cast<double>(raw.size());
}

std::vector<BenchmarkRow> benchmark(const std::vector<std::filesystem::path>& train_manifests,
                                    const std::filesystem::path& test_manifest,
                                    const std::vector<EstimatorConfig>& estimators) {
  const auto test = load_manifest(test_manifest);
  std::vector<BenchmarkRow> rows;
  for (const auto& est : estimators)
    for (const auto& tm : train_manifests) {
      const auto start = std::chrono::steady_clock::now();
      const auto train = load_manifest(tm);
      auto model = make_estimator(est);
      model->fit(train);
      BenchmarkRow row;
      row.estimator = to_string(est.kind);
      row.train_set = tm.string();
      row.test_set = test_manifest.string();
      row.n = test.size();
      row.mean_error_deg = test.empty() ? 0.0 : mean_error(*model, test);
      row.runtime_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      rows.push_back(row);
    }
  return rows;
}

namespace {

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) out += c == '"' ? std::string("\"\"") : std::string(1, c);
  return out + "\"";
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out(1);
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        out.back() += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        out.back() += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.emplace_back();
    } else if (c != '\r') {
      out.back() += c;
    }
  }
  return out;
}

}  // namespace

void write_benchmark_csv(const std::vector<BenchmarkRow>& rows, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("IOError", path.string(), "cannot write '" + path.string() + "'");
  out << kBenchmarkHeader << "\n";
  for (const auto& r : rows)
    out << r.estimator << "," << csv_field(r.train_set) << "," << csv_field(r.test_set) << "," << r.n << ","
        << format_exact(r.mean_error_deg) << "," << format_exact(r.runtime_s) << "\n";
}

std::vector<BenchmarkRow> read_benchmark_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("MissingFile", path.string(), "cannot open '" + path.string() + "'");
  std::string line;
  std::getline(in, line);
  if (line != kBenchmarkHeader) throw Error("ParseError", "0", "unexpected benchmark header");
  std::vector<BenchmarkRow> rows;
  int row = 0;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    const auto f = split_csv(line);
    if (f.size() != 6) throw Error("ParseError", std::to_string(row), "benchmark row " + std::to_string(row) + ": wrong field count");
    try {
      rows.push_back({f[0], f[1], f[2], static_cast<std::size_t>(std::stoull(f[3])), std::stod(f[4]), std::stod(f[5])});
    } catch (const std::logic_error&) {
      throw Error("ParseError", std::to_string(row), "benchmark row " + std::to_string(row) + ": bad number");
    }
  }
  return rows;
}

std::vector<Table1Row> published_table1() {
  return {
      {"ALR", 16.7, "R", "published"},
      {"SVR", 16.6, "R", "published"},
      {"RF", 15.4, "R", "published"},
      {"CNN with UT", 13.2, "R", "published"},
      {"K-NN with UT (ours)", 8.9, "R", "published"},
      {"CNN with UT (ours)", 10.2, "R", "published"},
      {"K-NN with Refined UnityEyes", 10.2, "S", "published"},
      {"CNN with Refined UnityEyes", 11.5, "S", "published"},
      {"CNN with Refined UnityEyes (SimGANs)", 8.0, "S", "published"},
      {"K-NN with Refined UnityEyes (ours)", 8.3, "S", "published"},
      {"CNN with Refined UnityEyes (ours)", 7.7, "S", "published"},
  };
}

std::vector<Table1Row> table1_rows(const std::vector<BenchmarkRow>& measured,
                                   const std::vector<std::pair<std::string, Domain>>& train_domains) {
  auto rows = published_table1();
  for (const auto& m : measured) {
    std::string rs;
    for (const auto& [set, d] : train_domains)
      if (set == m.train_set) rs = d == Domain::real ? "R" : "S";
    const std::string name = m.estimator == "knn" ? "K-NN" : m.estimator == "rf" ? "RF" : "CNN";
    rows.push_back({name + " with " + std::filesystem::path(m.train_set).parent_path().filename().string() + "/" +
                        std::filesystem::path(m.train_set).filename().string(),
                    m.mean_error_deg, rs, "measured"});
  }
  return rows;
}

void write_table1_csv(const std::vector<Table1Row>& rows, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("IOError", path.string(), "cannot write '" + path.string() + "'");
  out << kTable1Header << "\n";
  for (const auto& r : rows)
    out << csv_field(r.method) << "," << (r.error_deg ? format_exact(*r.error_deg) : std::string()) << "," << r.r_s << ","
        << r.source << "\n";
}

}  // namespace eyeref::gaze
