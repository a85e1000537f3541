#include "eyeref/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <regex>

#include "eyeref/config.hpp"
#include "eyeref/eyegen.hpp"
#include "eyeref/gazeval.hpp"
#include "eyeref/io.hpp"
#include "eyeref/refiner.hpp"
#include "eyeref/segmenter.hpp"

namespace eyeref::cli {

namespace fs = std::filesystem;

namespace {

struct Common {
  std::uint64_t seed = 0;
  bool seed_given = false;
  std::string out_dir;
  int jobs = 1;
};

void add_common(CLI::App* app, Common& c, bool needs_out_dir = true) {
  app->add_option("--seed", c.seed, "random seed")->each([&c](const std::string&) { c.seed_given = true; });
  auto* o = app->add_option("--out-dir", c.out_dir, "directory receiving every artifact");
  if (needs_out_dir) o->required();
  app->add_option("--jobs", c.jobs, "worker cap (work runs on one thread)")->check(CLI::PositiveNumber);
}

std::string numbered(std::size_t k) {
  char name[32];
  std::snprintf(name, sizeof name, "%06zu.png", k);
  return name;
}

/// Accepts a checkpoint file, a checkpoint directory or a train-segmenter output directory.
SegmenterNet open_segmenter(const fs::path& p) {
  if (!fs::is_directory(p)) return load_segmenter(p);
  if (!fs::exists(p / "latest") && fs::exists(p / "segmenter" / "latest")) return load_segmenter(latest_checkpoint(p / "segmenter"));
  return load_segmenter(latest_checkpoint(p));
}

/// Masks from the manifest, else from the segmenter; all repaired.
std::vector<std::pair<Image, ClassMask>> masked_images(const fs::path& manifest, const SegmenterNet* seg) {
  std::vector<std::pair<Image, ClassMask>> out;
  for (auto& s : load_manifest(manifest)) {
    ClassMask m;
    if (s.mask) m = *s.mask;
    else if (seg) m = segment(*seg, s.image);
    else throw Error("MaskMismatch", manifest.string(), "manifest '" + manifest.string() + "' lacks masks and no segmenter was given");
    out.emplace_back(std::move(s.image), repair_orphans(m));
  }
  return out;
}

RefinerConfig effective_config(const std::string& config_path, const std::vector<std::string>& sets, const Common& c) {
  RefinerConfig cfg = config_path.empty() ? RefinerConfig{} : load_config(config_path);
  for (const auto& kv : sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw Error("ParseError", kv, "--set expects key=value, got '" + kv + "'");
    apply_config_key(cfg, kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (c.seed_given) cfg.seed = c.seed;
  cfg.validate();
  return cfg;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw Error("IOError", path.string(), "cannot write '" + path.string() + "'");
  out << text;
}

std::map<std::string, std::string> read_pairs(const fs::path& path) {
  std::ifstream in(path);
  std::map<std::string, std::string> out;
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find('=');
    if (eq != std::string::npos) out[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return out;
}

// ---------------------------------------------------------------------------

int cmd_synth(int n, int size, double gaze_range, const std::string& domain, const Common& c) {
  eyegen::DatasetSpec spec;
  spec.count = n;
  spec.size = size;
  spec.gaze_range = gaze_range;
  spec.seed = c.seed;
  const Domain d = parse_domain(domain);
  if (d == Domain::refined) throw Error("InvalidParams", "domain", "synth produces synthetic or real images only");
  if (d == Domain::real) spec.shift = eyegen::real_domain_shift(c.seed);
  std::cout << eyegen::generate_dataset(spec, c.out_dir).string() << "\n";
  return 0;
}

int cmd_segment(const std::string& manifest_path, const std::string& seg_path, const Common& c) {
  const auto seg = open_segmenter(seg_path);
  const Manifest in = read_manifest(manifest_path);
  const fs::path out_dir = c.out_dir;
  fs::create_directories(out_dir / "masks");
  Manifest out = in;
  out.directory = out_dir;
  for (std::size_t k = 0; k < in.rows.size(); ++k) {
    auto& row = out.rows[k];
    const auto image_path = fs::absolute(resolve(in, in.rows[k].image_path));
    if (!fs::exists(image_path)) throw Error("MissingImage", image_path.string(), "missing image '" + image_path.string() + "'");
    row.image_path = image_path.string();
    row.mask_path = "masks/" + numbered(k);
    save_mask(repair_orphans(segment(seg, load_image(image_path))), out_dir / row.mask_path);
  }
  write_manifest(out, out_dir / "manifest.csv");
  std::cout << (out_dir / "manifest.csv").string() << "\n";
  return 0;
}

int cmd_train_segmenter(const std::string& manifest, int epochs, int width, double lr, bool no_flip, const Common& c) {
  std::vector<std::pair<Image, ClassMask>> data;
  for (auto& s : load_manifest(manifest)) {
    if (!s.mask) throw Error("MaskMismatch", manifest, "segmenter training needs masks in '" + manifest + "'");
    data.emplace_back(std::move(s.image), std::move(*s.mask));
  }
  SegmenterTrainConfig cfg;
  cfg.width = width;
  cfg.learning_rate = lr;
  cfg.flip_augment = !no_flip;
  cfg.seed = c.seed;
  cfg.checkpoint_dir = fs::path(c.out_dir) / "segmenter";
  const auto result = train_segmenter(data, epochs, cfg);
  for (std::size_t e = 0; e < result.epoch_losses.size(); ++e)
    std::cout << "epoch " << e + 1 << " loss " << format_exact(result.epoch_losses[e]) << "\n";
  return 0;
}

int cmd_train_refiner(const std::string& config_path, const std::vector<std::string>& sets, const std::string& stage_iters,
                      const std::string& synthetic, const std::string& real, const std::string& seg_path, const Common& c) {
  auto sets_all = sets;
  if (!stage_iters.empty()) sets_all.push_back("stage_iters=" + stage_iters);
  const RefinerConfig cfg = effective_config(config_path, sets_all, c);
  std::optional<SegmenterNet> seg;
  if (!seg_path.empty()) seg = open_segmenter(seg_path);
  const SegmenterNet* segp = seg ? &*seg : nullptr;

  RefinerData data;
  for (auto& [img, m] : masked_images(synthetic, segp)) {
    data.synthetic.push_back(std::move(img));
    data.synthetic_masks.push_back(std::move(m));
  }
  for (auto& [img, m] : masked_images(real, segp)) {
    data.real.push_back(std::move(img));
    data.real_masks.push_back(std::move(m));
  }

  const fs::path out_dir = c.out_dir;
  fs::create_directories(out_dir);
  write_text(out_dir / "config.cfg", format_config(cfg));
  write_text(out_dir / "data.txt", "synthetic=" + fs::absolute(synthetic).string() + "\nreal=" + fs::absolute(real).string() + "\n");

  RefinerModel model(cfg);
  RefinerTrainOptions opts;
  opts.out_dir = out_dir;
  opts.on_iteration = [](const IterationLog& l) {
    if (l.iter % 50 == 0)
      std::cout << "iter " << l.iter << " stage " << l.stage << " objective " << format_exact(l.objective) << std::endl;
  };
  const auto log = train_refiner(model, data, opts);
  std::cout << "iterations " << log.size() << "\n";
  return 0;
}

int cmd_refine(const std::string& run_dir, const std::string& checkpoint, const std::string& config_path,
               const std::vector<std::string>& sets, const std::string& manifest, const std::string& seg_path, const Common& c) {
  std::string cfg_path = config_path;
  fs::path ckpt = checkpoint;
  if (!run_dir.empty()) {
    if (cfg_path.empty()) cfg_path = (fs::path(run_dir) / "config.cfg").string();
    if (ckpt.empty()) ckpt = fs::path(run_dir) / "refiner" / "final.ckpt";
  }
  if (ckpt.empty()) throw Error("MissingRun", "checkpoint", "refine needs --run or --checkpoint");
  RefinerModel model(effective_config(cfg_path, sets, c));
  model.load(ckpt);
  std::optional<SegmenterNet> seg;
  if (!seg_path.empty()) seg = open_segmenter(seg_path);
  std::cout << refine_batch(model, seg ? &*seg : nullptr, manifest, c.out_dir).string() << "\n";
  return 0;
}

int cmd_eval_gaze(const std::vector<std::string>& train, const std::string& test, const std::vector<std::string>& kinds,
                  int k, int trees, int input_w, int input_h, const Common& c) {
  std::vector<gaze::EstimatorConfig> ests;
  for (const auto& kind : kinds) {
    gaze::EstimatorConfig e;
    e.kind = gaze::parse_estimator(kind);
    e.k = k;
    e.trees = trees;
    e.input_width = input_w;
    e.input_height = input_h;
    e.seed = c.seed;
    ests.push_back(e);
  }
  std::vector<fs::path> train_paths(train.begin(), train.end());
  const auto rows = gaze::benchmark(train_paths, test, ests);
  const fs::path out_dir = c.out_dir;
  fs::create_directories(out_dir);
  gaze::write_benchmark_csv(rows, out_dir / "benchmark.csv");
  std::vector<std::pair<std::string, Domain>> domains;
  for (const auto& t : train) {
    const auto m = read_manifest(t);
    if (!m.rows.empty()) domains.emplace_back(t, parse_domain(m.rows.front().domain));
  }
  gaze::write_table1_csv(gaze::table1_rows(rows, domains), out_dir / "table1.csv");
  for (const auto& r : rows)
    std::cout << r.estimator << " " << r.train_set << " " << format_exact(r.mean_error_deg) << "\n";
  return 0;
}

// ---------------------------------------------------------------------------

Image grid(const std::vector<std::vector<Image>>& rows) {
  const int cell = rows.front().front().height, gap = 1;
  const int cols = static_cast<int>(rows.front().size()), n = static_cast<int>(rows.size());
  Image out(n * cell + (n - 1) * gap, cols * cell + (cols - 1) * gap, 1.0f);
  for (int r = 0; r < n; ++r)
    for (int k = 0; k < cols; ++k)
      for (int ch = 0; ch < 3; ++ch)
        for (int y = 0; y < cell; ++y)
          for (int x = 0; x < cell; ++x) out.at(ch, r * (cell + gap) + y, k * (cell + gap) + x) = rows[r][k].at(ch, y, x);
  return out;
}

}  // namespace

void report(const fs::path& run_dir, const fs::path& out_dir, int samples) {
  const fs::path ckpt_dir = run_dir / "refiner";
  if (!fs::is_directory(run_dir) || !fs::exists(run_dir / "config.cfg") || !fs::exists(run_dir / "losses.csv") ||
      !fs::is_directory(ckpt_dir))
    throw Error("MissingRun", run_dir.string(), "'" + run_dir.string() + "' is not a train-refiner run directory");
  fs::create_directories(out_dir);
  write_loss_log(read_loss_log(run_dir / "losses.csv"), out_dir / "losses.csv");

  std::vector<gaze::BenchmarkRow> measured;
  std::vector<std::pair<std::string, Domain>> domains;
  if (fs::exists(run_dir / "benchmark.csv")) {
    measured = gaze::read_benchmark_csv(run_dir / "benchmark.csv");
    for (const auto& r : measured)
      if (fs::exists(r.train_set)) {
        const auto m = read_manifest(r.train_set);
        if (!m.rows.empty()) domains.emplace_back(r.train_set, parse_domain(m.rows.front().domain));
      }
  }
  gaze::write_table1_csv(gaze::table1_rows(measured, domains), out_dir / "table1.csv");

  static const std::regex name(R"(stage(\d+)_iter(\d+)\.ckpt)");
  std::map<int, fs::path> ckpts;
  for (const auto& e : fs::directory_iterator(ckpt_dir)) {
    std::smatch m;
    const std::string f = e.path().filename().string();
    if (std::regex_match(f, m, name)) ckpts[std::stoi(m[2])] = e.path();
  }
  if (ckpts.empty()) return;
  const auto data = read_pairs(run_dir / "data.txt");
  if (!data.count("synthetic") || !data.count("real"))
    throw Error("MissingRun", (run_dir / "data.txt").string(), "run lacks data.txt naming its training manifests");
  const auto syn = load_manifest(data.at("synthetic"));
  const auto real = load_manifest(data.at("real"));
  RefinerModel model(load_config(run_dir / "config.cfg"));
  const int r = model.enhancer_resolution();
  const int n = std::min<int>({samples, static_cast<int>(syn.size()), static_cast<int>(real.size())});
  if (n < 1) throw Error("EmptyDataset", "report", "grids need at least one synthetic and one real image");
  for (const auto& [iter, path] : ckpts) {
    model.load(path);
    std::vector<std::vector<Image>> rows;
    for (int k = 0; k < n; ++k) {
      const auto& s = syn[k];
      if (!s.mask) throw Error("MaskMismatch", data.at("synthetic"), "grid samples need masks");
      rows.push_back({resample(s.image, r, r), model.refine(s.image, repair_orphans(*s.mask)), resample(real[k].image, r, r)});
    }
    save_image(grid(rows), out_dir / ("grid_iter" + std::to_string(iter) + ".png"));
  }
}

void report(const fs::path& run_dir, const fs::path& out_dir) { report(run_dir, out_dir, 4); }

int run(const std::vector<std::string>& args) {
  CLI::App app{"Eye-image refinement pipeline", "eyeref"};
  app.require_subcommand(1);
  Common c;

  auto* synth = app.add_subcommand("synth", "render a toy eye dataset");
  int n = 100, size = 32;
  double gaze_range = 0.5;
  std::string domain = "synthetic";
  synth->add_option("--n", n, "number of samples")->check(CLI::PositiveNumber);
  synth->add_option("--size", size, "image side in pixels")->check(CLI::Range(8, 4096));
  synth->add_option("--gaze-range", gaze_range, "max |yaw|, |pitch| in radians");
  synth->add_option("--domain", domain, "synthetic or real (real applies the fixed domain shift)");
  add_common(synth, c);

  std::string manifest, seg_path;
  auto* seg = app.add_subcommand("segment", "segment and repair every image of a manifest");
  seg->add_option("--manifest", manifest, "input manifest")->required();
  seg->add_option("--segmenter", seg_path, "segmenter checkpoint file or directory")->required();
  add_common(seg, c);

  auto* tseg = app.add_subcommand("train-segmenter", "train the eye-region segmenter");
  int epochs = 5, seg_width = 16;
  double seg_lr = 2e-3;
  bool no_flip = false;
  tseg->add_option("--train", manifest, "training manifest with masks")->required();
  tseg->add_option("--epochs", epochs, "training epochs")->check(CLI::PositiveNumber);
  tseg->add_option("--width", seg_width, "base channel width")->check(CLI::PositiveNumber);
  tseg->add_option("--lr", seg_lr, "Adam learning rate");
  tseg->add_flag("--no-flip", no_flip, "disable horizontal-flip augmentation");
  add_common(tseg, c);

  std::string config_path, stage_iters, synthetic, real;
  std::vector<std::string> sets;
  auto* trefine = app.add_subcommand("train-refiner", "train the refiner (writes checkpoints and losses.csv)");
  trefine->add_option("--config", config_path, "config file");
  trefine->add_option("--set", sets, "config override key=value (repeatable)");
  trefine->add_option("--stage-iters", stage_iters, "iterations per stage, e.g. 300,200,200");
  trefine->add_option("--synthetic", synthetic, "synthetic manifest")->required();
  trefine->add_option("--real", real, "real-domain manifest")->required();
  trefine->add_option("--segmenter", seg_path, "segmenter for manifests without masks");
  add_common(trefine, c);

  std::string run_dir, checkpoint;
  auto* refine = app.add_subcommand("refine", "refine every image of a manifest");
  refine->add_option("--run", run_dir, "train-refiner run directory (config.cfg, refiner/final.ckpt)");
  refine->add_option("--checkpoint", checkpoint, "refiner checkpoint (overrides the run's final.ckpt)");
  refine->add_option("--config", config_path, "config file (overrides the run's config.cfg)");
  refine->add_option("--set", sets, "config override key=value (repeatable)");
  refine->add_option("--manifest", manifest, "input manifest")->required();
  refine->add_option("--segmenter", seg_path, "segmenter for manifests without masks");
  add_common(refine, c);

  std::vector<std::string> train, estimators{"knn"};
  std::string test;
  int k = 50, trees = 20, input_w = 15, input_h = 9;
  auto* eval = app.add_subcommand("eval-gaze", "benchmark gaze estimators (benchmark.csv, table1.csv)");
  eval->add_option("--train", train, "training manifest (repeatable)")->required();
  eval->add_option("--test", test, "test manifest")->required();
  eval->add_option("--estimator", estimators, "knn, rf or cnn (repeatable)");
  eval->add_option("--k", k, "neighbours for knn")->check(CLI::PositiveNumber);
  eval->add_option("--trees", trees, "trees for rf")->check(CLI::PositiveNumber);
  eval->add_option("--input-width", input_w, "knn/rf input grid width")->check(CLI::PositiveNumber);
  eval->add_option("--input-height", input_h, "knn/rf input grid height")->check(CLI::PositiveNumber);
  add_common(eval, c);

  int samples = 4;
  auto* rep = app.add_subcommand("report", "write losses.csv, table1.csv and grid_iter{N}.png for a run");
  rep->add_option("--run", run_dir, "train-refiner run directory")->required();
  rep->add_option("--samples", samples, "grid rows")->check(CLI::PositiveNumber);
  add_common(rep, c);

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    std::cout << (app.get_subcommands().empty() ? app.help() : app.get_subcommands().front()->help());
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    std::cout << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    std::cerr << "usage error: " << e.what() << "\n" << app.help();
    return 2;
  }

  try {
    if (*synth) return cmd_synth(n, size, gaze_range, domain, c);
    if (*seg) return cmd_segment(manifest, seg_path, c);
    if (*tseg) return cmd_train_segmenter(manifest, epochs, seg_width, seg_lr, no_flip, c);
    if (*trefine) return cmd_train_refiner(config_path, sets, stage_iters, synthetic, real, seg_path, c);
    if (*refine) return cmd_refine(run_dir, checkpoint, config_path, sets, manifest, seg_path, c);
    if (*eval) return cmd_eval_gaze(train, test, estimators, k, trees, input_w, input_h, c);
    if (*rep) {
      report(run_dir, c.out_dir, samples);
      return 0;
    }
  } catch (const Error& e) {
    std::string msg = e.what();
    const std::string prefix = e.code() + ": ";
    if (msg.rfind(prefix, 0) == 0) msg = msg.substr(prefix.size());
    std::replace(msg.begin(), msg.end(), '\n', ' ');
    std::cerr << "ERROR " << e.code() << " " << msg << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "ERROR Internal " << e.what() << "\n";
    return 1;
  }
  return 2;
}

int run(int argc, char** argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run(args);
}

}  // namespace eyeref::cli
