#include "eyeref/refiner.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "eyeref/nn/optim.hpp"
#include "eyeref/nn/weights.hpp"

namespace eyeref {

using nn::Tensor;

namespace {

Tensor<float> mask_tensor(std::span<const float> masks, int h, int w) {
  if (masks.size() != 2ull * h * w) throw Error("MaskMismatch", "planes", "mask planes do not match the image size");
  return Tensor<float>({2, h, w}, std::vector<float>(masks.begin(), masks.end()));
}

Tensor<float> generator_input(const Tensor<float>& image, std::span<const float> masks) {
  return nn::concat<float>({nn::add_scalar(image, -0.5f), mask_tensor(masks, image.height(), image.width())});
}

/// Repeated 2x2 average pooling down to (h, w).
Tensor<float> pool_to(Tensor<float> x, int h, int w) {
  while (x.height() > h) x = nn::avg_pool2(x);
  if (x.height() != h || x.width() != w) throw Error("ShapeError", "pool_to", "sizes are not related by powers of two");
  return x;
}

std::vector<float> pool_planes(std::span<const float> planes, int h, int w) {
  const auto t = nn::avg_pool2(Tensor<float>({2, h, w}, std::vector<float>(planes.begin(), planes.end())));
  return t.value_vector();
}

// Damps the feature half of the head input so early updates stay small
// next to the image half.
constexpr float kHeadFeatureScale = 0.1f;

}  // namespace

std::vector<float> mask_planes(const ClassMask& mask, int height, int width) {
  const auto set = downsample_masks(mask, {{"m", {height, width}}});
  const auto& lm = set.at("m");
  std::vector<float> out;
  out.reserve(2ull * height * width);
  for (const auto& cls : lm.classes)
    for (double v : cls) out.push_back(static_cast<float>(v));
  return out;
}

// ---------------------------------------------------------------------------

GlobalGenerator::GlobalGenerator(int width, int residual_units, Rng& rng) : width_(width) {
  if (width < 1 || residual_units < 0) throw Error("InvalidParams", "g1");
  front1_ = nn::Conv2d<float>(5, width, 3, 1, 1, rng);
  front2_ = nn::Conv2d<float>(width, 2 * width, 3, 2, 1, rng);
  for (int i = 0; i < residual_units; ++i) res_.emplace_back(2 * width, rng);
  back_ = nn::ConvTranspose2d<float>(2 * width, width, 4, 2, 1, rng);
  head_ = nn::Conv2d<float>(width + 3, 3, 3, 1, 1, rng);
}

GlobalGenerator::Output GlobalGenerator::forward(const Tensor<float>& image, std::span<const float> masks) const {
  if (image.rank() != 3 || image.channels() != 3 || image.height() % 2 || image.width() % 2)
    throw Error("ShapeError", "g1", "global generator needs a 3-channel image with even sides");
  auto f = nn::relu(front1_(generator_input(image, masks)));
  f = nn::relu(front2_(f));
  for (const auto& r : res_) f = r(f);
  Output out;
  out.features = nn::relu(back_(f));
  const auto head_in = nn::concat<float>({nn::scale(out.features, kHeadFeatureScale), nn::add_scalar(image, -0.5f)});
  out.image = nn::clamp01(nn::add(image, head_(head_in)));
  return out;
}

void GlobalGenerator::identity_init() {
  for (auto& r : res_) r.second.zero();
  head_.zero();
}

nn::ParamList<float> GlobalGenerator::params() const {
  nn::ParamList<float> out;
  front1_.collect(out, "front1");
  front2_.collect(out, "front2");
  for (std::size_t i = 0; i < res_.size(); ++i) res_[i].collect(out, "res" + std::to_string(i));
  back_.collect(out, "back");
  head_.collect(out, "head");
  return out;
}

LocalEnhancer::LocalEnhancer(int width, int fuse_width, int residual_units, Rng& rng) {
  if (width < 1 || fuse_width < 1 || residual_units < 0) throw Error("InvalidParams", "g2");
  front1_ = nn::Conv2d<float>(5, width, 3, 1, 1, rng);
  front2_ = nn::Conv2d<float>(width, fuse_width, 3, 1, 1, rng);
  for (int i = 0; i < residual_units; ++i) res_.emplace_back(fuse_width, rng);
  back_ = nn::ConvTranspose2d<float>(fuse_width, width, 3, 1, 1, rng);
  head_ = nn::Conv2d<float>(width + 3, 3, 3, 1, 1, rng);
}

Tensor<float> LocalEnhancer::forward(const Tensor<float>& image, std::span<const float> masks,
                                     const GlobalGenerator::Output& global, const Tensor<float>& global_input) const {
  auto f = nn::relu(front1_(generator_input(image, masks)));
  f = nn::relu(front2_(f));
  const auto lifted_features = nn::upsample2(global.features);
  if (lifted_features.dims() != f.dims()) throw Error("ShapeError", "fusion", "enhancer and global feature maps differ in shape");
  f = nn::add(f, lifted_features);
  for (const auto& r : res_) f = r(f);
  const auto correction =
      head_(nn::concat<float>({nn::scale(nn::relu(back_(f)), kHeadFeatureScale), nn::add_scalar(image, -0.5f)}));
  const auto lifted = nn::add(image, nn::upsample2(nn::sub(global.image, global_input)));
  return nn::clamp01(nn::add(lifted, correction));
}

void LocalEnhancer::identity_init() {
  for (auto& r : res_) r.second.zero();
  head_.zero();
}

nn::ParamList<float> LocalEnhancer::params() const {
  nn::ParamList<float> out;
  front1_.collect(out, "front1");
  front2_.collect(out, "front2");
  for (std::size_t i = 0; i < res_.size(); ++i) res_[i].collect(out, "res" + std::to_string(i));
  back_.collect(out, "back");
  head_.collect(out, "head");
  return out;
}

Discriminator::Discriminator(int tap_channels, int width, Rng& rng)
    : conv_(tap_channels + 5, width, 3, 1, 1, rng), score_(width, 1, 1, 1, 0, rng) {
  // Scores start at 0 so the first adversarial gradients are bounded.
  score_.zero();
}

Tensor<float> Discriminator::forward(const Tensor<float>& image, const Tensor<float>& tap, std::span<const float> masks) const {
  const int h = tap.height(), w = tap.width();
  const auto color = pool_to(nn::add_scalar(image, -0.5f), h, w);
  const auto m = pool_to(mask_tensor(masks, image.height(), image.width()), h, w);
  return score_(nn::leaky_relu(conv_(nn::concat<float>({tap, color, m}))));
}

void Discriminator::zero() {
  conv_.zero();
  score_.zero();
}

nn::ParamList<float> Discriminator::params() const {
  nn::ParamList<float> out;
  conv_.collect(out, "conv");
  score_.collect(out, "score");
  return out;
}

GanLosses gan_objective(std::span<const double> real, std::span<const double> refined) {
  if (real.empty() || refined.empty()) throw Error("EmptyBatch", "scores", "adversarial losses need scores from both sets");
  double r = 0.0, f = 0.0, g = 0.0;
  for (double s : real) r += (s - 1.0) * (s - 1.0);
  for (double s : refined) {
    f += s * s;
    g += (s - 1.0) * (s - 1.0);
  }
  const double nr = static_cast<double>(real.size()), nf = static_cast<double>(refined.size());
  return {0.5 * r / nr + 0.5 * f / nf, g / nf};
}

// ---------------------------------------------------------------------------

RefinerModel::RefinerModel(const RefinerConfig& config) : config_(config) {
  config_.validate();
  perceptual_layer_index(config_.disc_tap);
  percept_ = std::make_shared<const PerceptualNet<float>>(
      make_perceptual_net(config_.percept_weights, config_.percept_width, Rng::mix(config_.seed, 1)));
  Rng rng(Rng::mix(config_.seed, 2));
  g1_ = GlobalGenerator(config_.g1_width, config_.g1_residual_units, rng);
  g2_ = LocalEnhancer(config_.g2_width, config_.g1_width, config_.g2_residual_units, rng);
  g1_.identity_init();
  g2_.identity_init();
  const auto topo = perceptual_topology(percept_->base());
  d_ = Discriminator(topo[perceptual_layer_index(config_.disc_tap)].out_channels, config_.disc_width, rng);
}

GlobalGenerator::Output RefinerModel::generate_global(const Image& image, const ClassMask& mask) const {
  validate_image(image);
  if (mask.height != image.height || mask.width != image.width)
    throw Error("MaskMismatch", "shape", "mask and image differ in size");
  const int r = global_resolution();
  const Image x = resample(image, r, r);
  return g1_.forward(image_tensor(x), mask_planes(mask, r, r));
}

Tensor<float> RefinerModel::generate(const Tensor<float>& image, std::span<const float> masks) const {
  if (image.rank() != 3 || image.height() % 2 || image.width() % 2)
    throw Error("ShapeError", "generate", "generator input needs even sides");
  const int h = image.height(), w = image.width();
  mask_tensor(masks, h, w);
  const auto x_g = nn::avg_pool2(image.detach());
  const auto global = g1_.forward(x_g, pool_planes(masks, h, w));
  return g2_.forward(image, masks, global, x_g);
}

Image RefinerModel::refine(const Image& image, const ClassMask& mask) const {
  validate_image(image);
  if (mask.height != image.height || mask.width != image.width)
    throw Error("MaskMismatch", "shape", "mask and image differ in size");
  const int r = enhancer_resolution();
  const Image x = resample(image, r, r);
  return tensor_image(generate(image_tensor(x), mask_planes(mask, r, r)));
}

Tensor<float> RefinerModel::discriminate(const Tensor<float>& image, std::span<const float> masks) const {
  const auto taps = percept_->forward(image, {config_.disc_tap});
  return d_.forward(image, taps.at(config_.disc_tap), masks);
}

Tensor<float> RefinerModel::discriminate(const Image& image, const ClassMask& mask) const {
  validate_image(image);
  if (mask.height != image.height || mask.width != image.width)
    throw Error("MaskMismatch", "shape", "mask and image differ in size");
  const int r = enhancer_resolution();
  return discriminate(image_tensor(resample(image, r, r)), mask_planes(mask, r, r));
}

nn::ParamList<float> RefinerModel::params() const {
  nn::ParamList<float> out;
  for (auto& p : g1_.params()) out.push_back({"g1." + p.name, p.tensor});
  for (auto& p : g2_.params()) out.push_back({"g2." + p.name, p.tensor});
  for (auto& p : d_.params()) out.push_back({"d." + p.name, p.tensor});
  return out;
}

void RefinerModel::save(const std::filesystem::path& path) const { nn::save_params(path, params()); }

void RefinerModel::load(const std::filesystem::path& path) { nn::load_params(path, params()); }

// ---------------------------------------------------------------------------

void write_loss_log(const std::vector<IterationLog>& log, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("IOError", path.string(), "cannot write '" + path.string() + "'");
  out << kLossLogHeader << "\n";
  for (const auto& r : log)
    out << r.iter << "," << format_exact(r.l_gs) << "," << format_exact(r.l_ls) << "," << format_exact(r.l_style_weighted)
        << "," << format_exact(r.content) << "," << format_exact(r.l_m) << "," << format_exact(r.l_total) << ","
        << format_exact(r.loss_d) << "," << format_exact(r.loss_g_adv) << "\n";
}

std::vector<IterationLog> read_loss_log(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("MissingFile", path.string(), "cannot open '" + path.string() + "'");
  std::string line;
  std::getline(in, line);
  if (line != kLossLogHeader) throw Error("ParseError", "0", "unexpected loss log header");
  std::vector<IterationLog> out;
  int row = 0;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string f;
    std::vector<std::string> fields;
    while (std::getline(ss, f, ',')) fields.push_back(f);
    if (fields.size() != 9) throw Error("ParseError", std::to_string(row), "loss log row " + std::to_string(row) + ": wrong field count");
    IterationLog r;
    try {
      r.iter = std::stoi(fields[0]);
      double* slots[] = {&r.l_gs, &r.l_ls, &r.l_style_weighted, &r.content, &r.l_m, &r.l_total, &r.loss_d, &r.loss_g_adv};
      for (int k = 0; k < 8; ++k) *slots[k] = std::stod(fields[k + 1]);
    } catch (const std::logic_error&) {
      throw Error("ParseError", std::to_string(row), "loss log row " + std::to_string(row) + ": bad number");
    }
    out.push_back(r);
  }
  return out;
}

namespace {

std::map<std::string, std::pair<int, int>> layer_sizes(const std::vector<std::string>& layers, int h, int w) {
  std::map<std::string, std::pair<int, int>> out;
  const auto topo = perceptual_topology(1);
  for (const auto& l : layers) {
    const int shift = topo[perceptual_layer_index(l)].module - 1;
    out[l] = {h >> shift, w >> shift};
  }
  return out;
}

struct PreparedImage {
  Tensor<float> image;
  std::vector<float> masks;
  LayerMaskSet layer_masks;  // local style layers
  FeatureStack<float> features;
};

PreparedImage prepare(const RefinerModel& model, const Image& image, const ClassMask& mask,
                      const std::vector<std::string>& feature_layers) {
  const auto& cfg = model.config();
  const int r = model.enhancer_resolution();
  validate_image(image);
  if (mask.height != image.height || mask.width != image.width)
    throw Error("MaskMismatch", "shape", "mask and image differ in size");
  PreparedImage p;
  p.image = image_tensor(resample(image, r, r));
  p.masks = mask_planes(mask, r, r);
  const ClassMask m = resample(mask, r, r);
  p.layer_masks = downsample_masks(m, layer_sizes(cfg.local_style_layers, r, r));
  for (const auto& [l, t] : model.percept().forward(p.image, feature_layers)) p.features.emplace(l, to_block(t));
  return p;
}

void fill_style_terms(IterationLog& log, const StyleLossTerms& t, const RefinerConfig& cfg) {
  log.l_gs = 0.0;
  log.l_ls = 0.0;
  for (const auto& [l, v] : t.global_style) log.l_gs += cfg.beta_of(l) * v;
  for (const auto& [l, v] : t.local_style) log.l_ls += cfg.beta_of(l) * v;
  log.l_style_weighted = t.weighted_style;
  log.content = t.content;
  log.l_m = t.photorealism;
  log.l_total = t.total;
}

std::string checkpoint_name(int stage, int iter) {
  return "stage" + std::to_string(stage) + "_iter" + std::to_string(iter) + ".ckpt";
}

}  // namespace

std::vector<IterationLog> train_refiner(RefinerModel& model, const RefinerData& data, const RefinerTrainOptions& options) {
  const RefinerConfig& cfg = model.config();
  if (data.synthetic.empty() || data.real.empty()) throw Error("EmptyDataset", "refiner", "refiner training needs synthetic and real images");
  if (data.synthetic.size() != data.synthetic_masks.size() || data.real.size() != data.real_masks.size())
    throw Error("MaskMismatch", "count", "every training image needs a mask");

  std::vector<std::string> style_layers = cfg.global_style_layers;
  style_layers.insert(style_layers.end(), cfg.local_style_layers.begin(), cfg.local_style_layers.end());
  std::vector<std::string> content_layers;
  for (const auto& [l, a] : cfg.alpha)
    if (a != 0.0) content_layers.push_back(l);
  auto real_layers = style_layers;
  real_layers.push_back(cfg.disc_tap);
  auto output_layers = loss_layers(cfg);
  output_layers.push_back(cfg.disc_tap);

  std::vector<PreparedImage> syn, real;
  std::vector<MattingLaplacian> laplacians;
  for (std::size_t i = 0; i < data.synthetic.size(); ++i) {
    syn.push_back(prepare(model, data.synthetic[i], data.synthetic_masks[i], content_layers));
    laplacians.push_back(matting_laplacian(tensor_image(syn.back().image), cfg.matting_eps));
  }
  std::vector<Tensor<float>> real_taps;
  for (std::size_t j = 0; j < data.real.size(); ++j) {
    real.push_back(prepare(model, data.real[j], data.real_masks[j], real_layers));
    const auto& tap = real.back().features.at(cfg.disc_tap);
    real_taps.emplace_back(std::vector<int>{tap.channels(), tap.height, tap.width},
                           std::vector<float>(tap.data.data(), tap.data.data() + tap.data.size()));
  }

  std::filesystem::path ckpt_dir;
  if (options.out_dir) {
    ckpt_dir = *options.out_dir / "refiner";
    std::filesystem::create_directories(ckpt_dir);
    model.save(ckpt_dir / checkpoint_name(0, 0));
  }

  const auto g1_params = model.g1().params();
  const auto g2_params = model.g2().params();
  const auto d_params = model.d().params();
  nn::Adam<float> d_opt(d_params, cfg.learning_rate, 0.5, 0.999);
  Rng rng(Rng::mix(cfg.seed, 3));
  const bool adversarial = cfg.adv_weight != 0.0;
  const bool generator_step = adversarial || cfg.lambda != 0.0;
  const int batch = cfg.batch_size;

  std::vector<IterationLog> history;
  int iter = 0;
  for (int stage = 1; stage <= 3; ++stage) {
    const int count = cfg.stage_iters.at(stage - 1);
    if (count == 0) continue;
    nn::set_trainable(g1_params, stage != 2);
    nn::set_trainable(g2_params, stage != 1);
    nn::ParamList<float> trainable = stage == 1 ? g1_params : stage == 2 ? g2_params : model.g1().params();
    if (stage == 3)
      for (const auto& p : g2_params) trainable.push_back(p);
    const double lr = cfg.learning_rate * (stage == 3 ? cfg.stage3_decay : 1.0);
    nn::Adam<float> g_opt(trainable, lr, 0.5, 0.999);
    d_opt.set_learning_rate(lr);

    for (int step = 0; step < count; ++step) {
      ++iter;
      IterationLog log;
      log.iter = iter;
      log.stage = stage;
      std::vector<std::pair<std::size_t, std::size_t>> picks;
      std::vector<Tensor<float>> outputs;
      for (int b = 0; b < batch; ++b) {
        const std::size_t i = rng.index(syn.size()), j = rng.index(real.size());
        picks.emplace_back(i, j);
        outputs.push_back(model.generate(syn[i].image, syn[i].masks));
      }

      if (adversarial) {
        for (int b = 0; b < batch; ++b) {
          const auto [i, j] = picks[b];
          const auto d_real = model.d().forward(real[j].image, real_taps[j], real[j].masks);
          const auto d_fake = model.discriminate(outputs[b].detach(), syn[i].masks);
          const std::vector<float> ones(d_real.size(), 1.0f), zeros(d_fake.size(), 0.0f);
          const auto loss_d = nn::add(nn::scale(nn::mse<float>(d_real, ones), 0.5f), nn::scale(nn::mse<float>(d_fake, zeros), 0.5f));
          log.loss_d += loss_d.item() / batch;
          nn::backward(loss_d);
        }
        d_opt.step(batch);
      }

      for (int b = 0; b < batch; ++b) {
        const auto [i, j] = picks[b];
        const auto taps = model.percept().forward(outputs[b], output_layers);
        LossTargets<float> targets;
        targets.style = real[j].features;
        targets.content = syn[i].features;
        targets.output_masks = syn[i].layer_masks;
        targets.style_masks = real[j].layer_masks;
        targets.laplacian = &laplacians[i];
        StyleLossTerms terms;
        const auto l_total = total_loss(outputs[b], taps, targets, cfg, &terms);
        IterationLog part;
        fill_style_terms(part, terms, cfg);
        const auto d_fake = model.d().forward(outputs[b], taps.at(cfg.disc_tap), syn[i].masks);
        const std::vector<float> ones(d_fake.size(), 1.0f);
        const auto loss_g_adv = nn::mse<float>(d_fake, ones);
        part.loss_g_adv = loss_g_adv.item();
        const auto objective = nn::add(nn::scale(loss_g_adv, static_cast<float>(cfg.adv_weight)),
                                       nn::scale(l_total, static_cast<float>(cfg.lambda)));
        log.l_gs += part.l_gs / batch;
        log.l_ls += part.l_ls / batch;
        log.l_style_weighted += part.l_style_weighted / batch;
        log.content += part.content / batch;
        log.l_m += part.l_m / batch;
        log.l_total += part.l_total / batch;
        log.loss_g_adv += part.loss_g_adv / batch;
        if (generator_step) nn::backward(objective);
      }
      log.objective = cfg.adv_weight * log.loss_g_adv + cfg.lambda * log.l_total;
      if (!std::isfinite(log.objective) || !std::isfinite(log.loss_d))
        throw Error("DivergenceDetected", std::to_string(iter), "refiner loss is not finite at iteration " + std::to_string(iter));
      if (generator_step) g_opt.step(batch);
      nn::zero_grads(d_params);
      history.push_back(log);
      if (options.on_iteration) options.on_iteration(log);

      const bool boundary = step + 1 == count;
      if (options.out_dir && (boundary || (cfg.checkpoint_every > 0 && iter % cfg.checkpoint_every == 0)))
        model.save(ckpt_dir / checkpoint_name(stage, iter));
    }
  }
  nn::set_trainable(g1_params, true);
  nn::set_trainable(g2_params, true);

  if (options.out_dir) {
    model.save(ckpt_dir / "final.ckpt");
    write_loss_log(history, *options.out_dir / "losses.csv");
  }
  return history;
}

std::filesystem::path refine_batch(const RefinerModel& model, const SegmenterNet* segmenter,
                                   const std::filesystem::path& manifest_in, const std::filesystem::path& out_dir) {
  const Manifest in = read_manifest(manifest_in);
  Manifest out;
  out.directory = out_dir;
  out.has_head_pose = in.has_head_pose;
  std::filesystem::create_directories(out_dir / "images");
  std::filesystem::create_directories(out_dir / "masks");
  char name[32];
  for (std::size_t k = 0; k < in.rows.size(); ++k) {
    const auto& row = in.rows[k];
    const auto image_path = resolve(in, row.image_path);
    if (!std::filesystem::exists(image_path)) throw Error("MissingImage", image_path.string(), "missing image '" + image_path.string() + "'");
    const Image image = load_image(image_path);
    ClassMask mask;
    if (!row.mask_path.empty()) {
      const auto mask_path = resolve(in, row.mask_path);
      if (!std::filesystem::exists(mask_path)) throw Error("MissingImage", mask_path.string(), "missing mask '" + mask_path.string() + "'");
      mask = load_mask(mask_path);
    } else if (segmenter) {
      mask = repair_orphans(segment(*segmenter, image));
    } else {
      throw Error("MaskMismatch", row.image_path, "no mask for '" + row.image_path + "' and no segmenter given");
    }
    const Image refined = model.refine(image, mask);
    std::snprintf(name, sizeof name, "%06zu.png", k);
    ManifestRow r = row;
    r.image_path = std::string("images/") + name;
    r.mask_path = std::string("masks/") + name;
    r.domain = to_string(Domain::refined);
    save_image(refined, out_dir / r.image_path);
    save_mask(resample(mask, refined.height, refined.width), out_dir / r.mask_path);
    out.rows.push_back(std::move(r));
  }
  const auto path = out_dir / "manifest.csv";
  write_manifest(out, path);
  return path;
}

}  // namespace eyeref
