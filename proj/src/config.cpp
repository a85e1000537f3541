#include "eyeref/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "eyeref/core.hpp"

namespace eyeref {
namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

double parse_double(const std::string& key, const std::string& value) {
  std::size_t used = 0;
  double v = 0.0;
  try {
    v = std::stod(value, &used);
  } catch (const std::exception&) {
    throw Error("ParseError", key, "expected a number for '" + key + "'");
  }
  if (used != value.size() || !std::isfinite(v)) throw Error("ParseError", key, "expected a number for '" + key + "'");
  return v;
}

long long parse_int(const std::string& key, const std::string& value) {
  long long v = 0;
  auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), v);
  if (ec != std::errc() || ptr != value.data() + value.size())
    throw Error("ParseError", key, "expected an integer for '" + key + "'");
  return v;
}

std::vector<std::string> split_list(const std::string& value) {
  std::vector<std::string> out;
  std::stringstream ss(value);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::string join(const std::vector<std::string>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + v[i];
  return out;
}

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace

RefinerConfig::RefinerConfig() {
  for (const auto& l : local_style_layers) beta[l] = 0.2;
  for (const auto& l : global_style_layers) beta[l] = 0.2;
  alpha[local_content_layer] = 1.0;
  alpha[global_content_layer] = 1.0;
}

double RefinerConfig::beta_of(const std::string& layer) const {
  auto it = beta.find(layer);
  return it == beta.end() ? 0.0 : it->second;
}

double RefinerConfig::alpha_of(const std::string& layer) const {
  auto it = alpha.find(layer);
  return it == alpha.end() ? 0.0 : it->second;
}

void RefinerConfig::validate() const {
  const std::pair<const char*, double> weights[] = {
      {"lambda_g", lambda_g}, {"lambda_l", lambda_l}, {"eta", eta},       {"theta", theta},
      {"mu", mu},             {"lambda", lambda},     {"adv_weight", adv_weight}};
  for (auto [name, w] : weights)
    if (w < 0.0) throw Error("InvalidWeight", name);
  if (!(matting_eps > 0.0)) throw Error("InvalidWeight", "matting_eps");
  for (const auto& [l, w] : beta)
    if (w < 0.0) throw Error("InvalidWeight", "beta." + l);
  for (const auto& [l, w] : alpha)
    if (w < 0.0) throw Error("InvalidWeight", "alpha." + l);
  if (learning_rate < 0.0) throw Error("InvalidWeight", "learning_rate");
  if (stage3_decay < 0.0) throw Error("InvalidWeight", "stage3_decay");
  for (int s : stage_iters)
    if (s < 0) throw Error("InvalidWeight", "stage_iters");
}

void apply_config_key(RefinerConfig& c, const std::string& key, const std::string& value) {
  auto number = [&] { return parse_double(key, value); };
  auto integer = [&] { return parse_int(key, value); };

  if (key == "lambda_g") c.lambda_g = number();
  else if (key == "lambda_l") c.lambda_l = number();
  else if (key == "eta") c.eta = number();
  else if (key == "theta") c.theta = number();
  else if (key == "mu") c.mu = number();
  else if (key == "lambda") c.lambda = number();
  else if (key == "adv_weight") c.adv_weight = number();
  else if (key == "matting_eps") c.matting_eps = number();
  else if (key == "local_content_layer" || key == "global_content_layer") {
    // Moving a content layer moves its unit weight along with it.
    std::string& slot = key == "local_content_layer" ? c.local_content_layer : c.global_content_layer;
    const double w = c.alpha_of(slot);
    c.alpha.erase(slot);
    slot = value;
    c.alpha[slot] = w;
  } else if (key == "local_style_layers" || key == "global_style_layers") {
    auto& slot = key == "local_style_layers" ? c.local_style_layers : c.global_style_layers;
    for (const auto& l : slot) c.beta.erase(l);
    slot = split_list(value);
    for (const auto& l : slot) c.beta[l] = slot.empty() ? 0.0 : 1.0 / static_cast<double>(slot.size());
  } else if (key.rfind("beta.", 0) == 0) c.beta[key.substr(5)] = number();
  else if (key.rfind("alpha.", 0) == 0) c.alpha[key.substr(6)] = number();
  else if (key == "global_resolution") c.global_resolution = static_cast<int>(integer());
  else if (key == "percept_width") c.percept_width = static_cast<int>(integer());
  else if (key == "percept_weights") c.percept_weights = value;
  else if (key == "disc_tap") c.disc_tap = value;
  else if (key == "disc_width") c.disc_width = static_cast<int>(integer());
  else if (key == "g1_width") c.g1_width = static_cast<int>(integer());
  else if (key == "g1_residual_units") c.g1_residual_units = static_cast<int>(integer());
  else if (key == "g2_width") c.g2_width = static_cast<int>(integer());
  else if (key == "g2_residual_units") c.g2_residual_units = static_cast<int>(integer());
  else if (key == "stage_iters") {
    auto parts = split_list(value);
    if (parts.size() != 3) throw Error("ParseError", key, "stage_iters needs three comma-separated counts");
    c.stage_iters.clear();
    for (const auto& p : parts) c.stage_iters.push_back(static_cast<int>(parse_int(key, p)));
  } else if (key == "batch_size") c.batch_size = static_cast<int>(integer());
  else if (key == "learning_rate") c.learning_rate = number();
  else if (key == "stage3_decay") c.stage3_decay = number();
  else if (key == "checkpoint_every") c.checkpoint_every = static_cast<int>(integer());
  else if (key == "seed") c.seed = static_cast<std::uint64_t>(integer());
  else throw Error("ParseError", key, "unknown key '" + key + "'");

  if (c.global_resolution < 8) throw Error("ParseError", key, "global_resolution must be >= 8");
  if (c.batch_size < 1) throw Error("ParseError", key, "batch_size must be >= 1");
}

RefinerConfig parse_config(const std::string& text) {
  RefinerConfig c;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw Error("ParseError", std::to_string(lineno), "line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw Error("ParseError", std::to_string(lineno), "line " + std::to_string(lineno) + ": empty key");
    try {
      apply_config_key(c, key, value);
    } catch (const Error& e) {
      if (e.code() != "ParseError") throw;
      throw Error("ParseError", std::to_string(lineno), "line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  c.validate();
  return c;
}

RefinerConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("MissingFile", path.string(), "cannot open config '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string format_config(const RefinerConfig& c) {
  std::ostringstream os;
  os << "lambda_g = " << fmt(c.lambda_g) << "\n"
     << "lambda_l = " << fmt(c.lambda_l) << "\n"
     << "eta = " << fmt(c.eta) << "\n"
     << "theta = " << fmt(c.theta) << "\n"
     << "mu = " << fmt(c.mu) << "\n"
     << "lambda = " << fmt(c.lambda) << "\n"
     << "adv_weight = " << fmt(c.adv_weight) << "\n"
     << "matting_eps = " << fmt(c.matting_eps) << "\n"
     << "local_content_layer = " << c.local_content_layer << "\n"
     << "global_content_layer = " << c.global_content_layer << "\n"
     << "local_style_layers = " << join(c.local_style_layers) << "\n"
     << "global_style_layers = " << join(c.global_style_layers) << "\n";
  for (const auto& [l, w] : c.beta) os << "beta." << l << " = " << fmt(w) << "\n";
  for (const auto& [l, w] : c.alpha) os << "alpha." << l << " = " << fmt(w) << "\n";
  os << "global_resolution = " << c.global_resolution << "\n"
     << "percept_width = " << c.percept_width << "\n";
  if (!c.percept_weights.empty()) os << "percept_weights = " << c.percept_weights << "\n";
  os << "disc_tap = " << c.disc_tap << "\n"
     << "disc_width = " << c.disc_width << "\n"
     << "g1_width = " << c.g1_width << "\n"
     << "g1_residual_units = " << c.g1_residual_units << "\n"
     << "g2_width = " << c.g2_width << "\n"
     << "g2_residual_units = " << c.g2_residual_units << "\n"
     << "stage_iters = " << c.stage_iters[0] << "," << c.stage_iters[1] << "," << c.stage_iters[2] << "\n"
     << "batch_size = " << c.batch_size << "\n"
     << "learning_rate = " << fmt(c.learning_rate) << "\n"
     << "stage3_decay = " << fmt(c.stage3_decay) << "\n"
     << "checkpoint_every = " << c.checkpoint_every << "\n"
     << "seed = " << c.seed << "\n";
  return os.str();
}

}  // namespace eyeref
