#pragma once

#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "eyeref/core.hpp"

namespace eyeref::gaze {

/// Degrees between two unit vectors. Errors: NonUnitInput (|norm-1| > 1e-6).
double angular_error(const GazeVector& a, const GazeVector& b);

/// Row-major grayscale vector (0.299 R + 0.587 G + 0.114 B) of the image as given.
std::vector<double> featurize(const Image& image);

/// Resamples to width x height first (area filter), then featurize.
std::vector<double> featurize(const Image& image, int width, int height);

enum class EstimatorKind { knn, rf, cnn };
std::string to_string(EstimatorKind k);
/// Errors: ParseError(text).
EstimatorKind parse_estimator(const std::string& text);

struct EstimatorConfig {
  EstimatorKind kind = EstimatorKind::knn;
  int k = 50;
  int trees = 20;
  int input_width = 15;  // knn / rf pixel grid
  int input_height = 9;
  int cnn_width = 30;  // cnn input grid
  int cnn_height = 18;
  int cnn_max_epochs = 80;
  int cnn_patience = 5;  // epochs without validation improvement
  double cnn_learning_rate = 1e-3;
  std::uint64_t seed = 0;
};

class GazeEstimator {
 public:
  virtual ~GazeEstimator() = default;
  virtual EstimatorKind kind() const = 0;
  /// Errors: EmptyDataset.
  virtual void fit(const std::vector<GazeSample>& train) = 0;
  /// Unit vector. Errors: NotTrained.
  virtual GazeVector predict(const Image& image) const = 0;
  virtual bool trained() const = 0;
};

std::unique_ptr<GazeEstimator> make_estimator(const EstimatorConfig& config);

/// Mean angular error in degrees of `estimator` over `test`.
double mean_error(const GazeEstimator& estimator, const std::vector<GazeSample>& test);

/// Mean angular shift between predictions on raw and refined images.
/// Errors: PairMismatch (different lengths or image sizes).
double label_preservation(const GazeEstimator& estimator, const std::vector<Image>& raw, const std::vector<Image>& refined);

struct BenchmarkRow {
  std::string estimator;
  std::string train_set;
  std::string test_set;
  std::size_t n = 0;  // test samples
  double mean_error_deg = 0.0;
  double runtime_s = 0.0;
};

inline constexpr const char* kBenchmarkHeader = "estimator,train_set,test_set,n,mean_error_deg,runtime_s";

/// One row per (estimator, training manifest), in argument order.
std::vector<BenchmarkRow> benchmark(const std::vector<std::filesystem::path>& train_manifests,
                                    const std::filesystem::path& test_manifest,
                                    const std::vector<EstimatorConfig>& estimators);

void write_benchmark_csv(const std::vector<BenchmarkRow>& rows, const std::filesystem::path& path);
/// Errors: MissingFile, ParseError(row).
std::vector<BenchmarkRow> read_benchmark_csv(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Comparison table: published reference rows followed by measured rows.

struct Table1Row {
  std::string method;
  std::optional<double> error_deg;  // empty: no value available
  std::string r_s;                  // "R" (trained on real) or "S" (synthetic/refined)
  std::string source;               // "published" or "measured"
};

inline constexpr const char* kTable1Header = "method,error_deg,r_s,source";

/// Published reference values of the comparison table.
std::vector<Table1Row> published_table1();

/// Published rows followed by one measured row per benchmark row; r_s comes
/// from `train_domains` (train_set -> domain of its samples) when known.
std::vector<Table1Row> table1_rows(const std::vector<BenchmarkRow>& measured,
                                   const std::vector<std::pair<std::string, Domain>>& train_domains = {});

void write_table1_csv(const std::vector<Table1Row>& rows, const std::filesystem::path& path);

}  // namespace eyeref::gaze
