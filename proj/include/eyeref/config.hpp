#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace eyeref {

/// Every tunable of the refinement pipeline. Defaults are the published
/// loss weights and layer preferences; see docs/config.md for the key list.
struct RefinerConfig {
  // Style-loss mixing between the unmasked (global) and masked (local) terms.
  double lambda_g = 1.0;
  double lambda_l = 1.0;
  // L_total = eta * sum_l beta_l * style_l + mu * content + theta * photorealism
  double eta = 1e2;
  double theta = 1e4;
  double mu = 1e2;
  // Generator objective = adv_weight * adversarial + lambda * L_total
  double lambda = 1.0;
  double adv_weight = 1.0;
  double matting_eps = 1e-5;

  std::string local_content_layer = "conv4_2";
  std::string global_content_layer = "conv3_2";
  std::vector<std::string> local_style_layers{"conv1_1", "conv2_1", "conv3_1", "conv4_1", "conv5_1"};
  std::vector<std::string> global_style_layers{"conv1_2", "conv2_2", "conv3_3", "conv4_3", "conv5_3"};
  /// Per-layer style weights; layers absent from the map weigh 0.
  std::map<std::string, double> beta;
  /// Per-layer content weights; layers absent from the map weigh 0.
  std::map<std::string, double> alpha;

  int global_resolution = 64;  // enhancer works at twice this
  int percept_width = 64;      // channels of the first perceptual module
  std::string percept_weights; // empty: seeded random extractor
  std::string disc_tap = "conv3_1";
  int disc_width = 64;
  int g1_width = 32;
  int g1_residual_units = 3;
  int g2_width = 16;
  int g2_residual_units = 2;

  std::vector<int> stage_iters{300, 200, 200};
  int batch_size = 1;
  double learning_rate = 2e-4;
  double stage3_decay = 0.1;
  int checkpoint_every = 0;  // 0: only at stage boundaries
  std::uint64_t seed = 0;

  RefinerConfig();

  int enhancer_resolution() const { return 2 * global_resolution; }
  double beta_of(const std::string& layer) const;
  double alpha_of(const std::string& layer) const;
  /// Throws InvalidWeight(name) on any negative weight.
  void validate() const;
};

/// Parses `key = value` lines (`#` starts a comment). Absent keys keep
/// their defaults. Errors: ParseError(line), InvalidWeight(name).
RefinerConfig parse_config(const std::string& text);

/// Errors: MissingFile(path) plus those of parse_config.
RefinerConfig load_config(const std::filesystem::path& path);

/// Writes every key so that load_config(save_config(c)) == c.
std::string format_config(const RefinerConfig& config);

/// Applies one key/value override (same semantics as a config line).
void apply_config_key(RefinerConfig& config, const std::string& key, const std::string& value);

}  // namespace eyeref
