#include "hiad/cli.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

#include "CLI11.hpp"
#include "hiad/data.hpp"
#include "hiad/error.hpp"
#include "hiad/metrics.hpp"
#include "hiad/pipeline.hpp"
#include "hiad/rng.hpp"
#include "json_io.hpp"

namespace hiad {

namespace fs = std::filesystem;

namespace {

struct RunConfig {
  PipelineConfig pipeline;
  fs::path dataset_root;
  std::string category;
  fs::path output;
  int workers = 1;
  int eval_size = 512;
};

Json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorKind::io, "cannot open '" + path.string() + "'");
  try {
    return Json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    fail(ErrorKind::config, "'" + path.string() + "': invalid JSON: " + e.what());
  }
}

RunConfig load_run_config(const std::string& path) {
  RunConfig rc;
  if (path.empty()) return rc;
  const Json j = read_json_file(path);
  rc.pipeline = pipeline_from_json(j, {"dataset", "output", "workers", "eval_size"});
  try {
    if (j.contains("dataset")) {
      const Json& d = j.at("dataset");
      if (d.contains("root")) rc.dataset_root = d.at("root").get<std::string>();
      if (d.contains("category")) rc.category = d.at("category").get<std::string>();
    }
    if (j.contains("output")) rc.output = j.at("output").get<std::string>();
    if (j.contains("workers")) rc.workers = j.at("workers").get<int>();
    if (j.contains("eval_size")) rc.eval_size = j.at("eval_size").get<int>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::config, "'" + path + "': " + e.what());
  }
  return rc;
}

SynthSpec load_synth_spec(const std::string& path) {
  SynthSpec s;
  if (path.empty()) return s;
  const Json j = read_json_file(path);
  try {
    for (const auto& item : j.items()) {
      const std::string& k = item.key();
      const Json& v = item.value();
      if (k == "schema") {
        require(v == "hiad-synth/1", ErrorKind::config, "synth spec: unsupported schema " + v.dump());
      } else if (k == "category") s.category = v.get<std::string>();
      else if (k == "resolution") s.resolution = v.get<int>();
      else if (k == "channels") s.channels = v.get<int>();
      else if (k == "texture") s.texture = parse_texture(v.get<std::string>());
      else if (k == "defect") s.defect = parse_defect_kind(v.get<std::string>());
      else if (k == "train_count") s.train_count = v.get<int>();
      else if (k == "test_normal") s.test_normal = v.get<int>();
      else if (k == "test_anomalous") s.test_anomalous = v.get<int>();
      else if (k == "defect_count") {
        s.defects_min = v.at(0).get<int>();
        s.defects_max = v.at(1).get<int>();
      } else if (k == "relative_area") {
        s.area_min = v.at(0).get<double>();
        s.area_max = v.at(1).get<double>();
      } else if (k == "contrast") s.contrast = v.get<double>();
      else if (k == "soft_edge") s.soft_edge = v.get<double>();
      else if (k == "texture_scale") s.texture_scale = v.get<double>();
      else if (k == "texture_amplitude") s.texture_amplitude = v.get<double>();
      else if (k == "grain") s.grain = v.get<double>();
      else if (k == "seed") s.seed = v.get<std::uint64_t>();
      else fail(ErrorKind::config, "synth spec: unknown key '" + k + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::config, "'" + path + "': " + e.what());
  }
  return s;
}

ImageSet train_set(const std::vector<SampleRecord>& records) {
  ImageSet set;
  std::vector<fs::path> paths;
  for (const SampleRecord& r : records)
    if (r.split == Split::train) {
      set.ids.push_back(r.id);
      paths.push_back(r.image);
    }
  set.load = [paths](std::size_t i) { return load_png(paths[i]); };
  return set;
}

// Creates `<dir>.partial`; commit() moves it onto `dir`, otherwise it is removed.
class StagedDir {
 public:
  explicit StagedDir(fs::path dir) : dir_(std::move(dir)) {
    require(!dir_.empty(), ErrorKind::config, "an output directory is required (--out)");
    tmp_ = dir_;
    tmp_ += ".partial";
    std::error_code ec;
    fs::remove_all(tmp_, ec);
    fs::create_directories(tmp_, ec);
    require(fs::is_directory(tmp_), ErrorKind::io, "cannot create '" + tmp_.string() + "'");
  }
  ~StagedDir() {
    std::error_code ec;
    if (!committed_) fs::remove_all(tmp_, ec);
  }
  const fs::path& path() const { return tmp_; }
  void commit() {
    std::error_code ec;
    fs::remove_all(dir_, ec);
    fs::rename(tmp_, dir_, ec);
    require(!ec, ErrorKind::io, "cannot move output into '" + dir_.string() + "'");
    committed_ = true;
  }

 private:
  fs::path dir_, tmp_;
  bool committed_ = false;
};

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  require(static_cast<bool>(out), ErrorKind::io, "cannot write '" + path.string() + "'");
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// Common flags shared by several subcommands.
struct Flags {
  std::string config;
  std::string out;
  std::string bundle;
  std::string data;
  std::string category;
  int workers = 0;
  std::optional<std::uint64_t> seed;
  int eval_size = 0;
  bool random_detector = false;
  std::string image;
  std::vector<std::string> images;
};

RunConfig resolve_run(const Flags& f) {
  RunConfig rc = load_run_config(f.config);
  if (f.workers > 0) rc.workers = f.workers;
  if (f.seed) rc.pipeline.seed = *f.seed;
  if (f.eval_size > 0) rc.eval_size = f.eval_size;
  if (!f.out.empty()) rc.output = f.out;
  if (!f.data.empty()) rc.dataset_root = f.data;
  if (!f.category.empty()) rc.category = f.category;
  require(rc.workers >= 1, ErrorKind::config, "worker count must be at least 1");
  require(rc.eval_size >= 1, ErrorKind::config, "eval size must be positive");
  return rc;
}

int cmd_fit(const Flags& f, std::ostream& out) {
  const RunConfig rc = resolve_run(f);
  require(!rc.dataset_root.empty() && !rc.category.empty(), ErrorKind::config,
          "fit needs a dataset root and category (config \"dataset\" or --data/--category)");
  require(!rc.output.empty(), ErrorKind::config, "fit needs an output bundle directory (--out)");
  const auto records = load_layout(rc.dataset_root, rc.category);
  const ImageSet train = train_set(records);
  const ImageTensor probe = train.load(0);
  const PipelineConfig resolved = resolve(rc.pipeline, probe.height, probe.width);
  WorkerPool pool(rc.workers);
  const auto t0 = std::chrono::steady_clock::now();
  FitReport report;
  const ModelBundle bundle = fit(train, resolved, pool, &report);
  save_bundle(bundle, rc.output);
  out << "fitted " << to_string(bundle.assignment.strategy) << " with " << bundle.pool_size() << " detector(s) on "
      << report.fit_ids.size() << " images (" << report.val_ids.size() << " for validation) in " << std::fixed
      << std::setprecision(2) << seconds_since(t0) << " s\n";
  for (int m = 0; m < bundle.pool_size(); ++m) out << "  detector " << m << ": " << bundle.group_sizes[m] << " patches\n";
  out << "bundle written to " << rc.output.string() << "\n";
  return 0;
}

int cmd_score(const Flags& f, std::ostream& out) {
  const RunConfig rc = resolve_run(f);
  require(!f.bundle.empty(), ErrorKind::config, "score needs --bundle");
  require(!f.images.empty(), ErrorKind::config, "score needs at least one image");
  const ModelBundle bundle = load_bundle(f.bundle);
  WorkerPool pool(rc.workers);
  StagedDir stage(rc.output);
  fs::create_directories(stage.path() / "heatmaps");
  nlohmann::ordered_json doc;
  doc["schema"] = "hiad-scores/1";
  nlohmann::ordered_json entries = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < f.images.size(); ++i) {
    const fs::path path = f.images[i];
    const ImageTensor img = load_png(path);
    const AnomalyResult r = infer(bundle, img, pool, path.stem().string());
    const float lo = 0.0f;
    const float hi = static_cast<float>(bundle.render_threshold ? std::max(2.0 * *bundle.render_threshold, 1.0)
                                                                : std::max(r.score, 1.0));
    const std::string heatmap = "heatmaps/" + std::to_string(i) + "_" + path.stem().string() + ".png";
    save_png(render_heatmap(r.map, lo, hi), stage.path() / heatmap);
    nlohmann::ordered_json e;
    e["image"] = path.string();
    e["score"] = r.score;
    e["heatmap"] = heatmap;
    entries.push_back(e);
    out << path.string() << "  " << std::setprecision(6) << r.score << "\n";
  }
  doc["images"] = entries;
  write_file(stage.path() / "scores.json", doc.dump(2) + "\n");
  stage.commit();
  return 0;
}

int cmd_eval(const Flags& f, std::ostream& out) {
  const RunConfig rc = resolve_run(f);
  require(!rc.dataset_root.empty() && !rc.category.empty(), ErrorKind::config,
          "eval needs a dataset root and category (config \"dataset\" or --data/--category)");
  require(f.random_detector || !f.bundle.empty(), ErrorKind::config, "eval needs --bundle or --random-detector");
  const auto records = load_layout(rc.dataset_root, rc.category);
  std::optional<ModelBundle> bundle;
  if (!f.random_detector) bundle = load_bundle(f.bundle);
  WorkerPool pool(rc.workers);
  StagedDir stage(rc.output);

  PixelEvaluator pixels(rc.eval_size);
  std::vector<double> image_scores;
  std::vector<std::uint8_t> image_labels;
  std::size_t index = 0;
  for (const SampleRecord& r : records) {
    if (r.split != Split::test) continue;
    const ImageTensor img = load_png(r.image);
    ScalarMap mask = r.mask ? load_png_map(*r.mask) : ScalarMap(img.height, img.width);
    for (float& v : mask.data) v = v > 0.5f ? 1.0f : 0.0f;
    ScalarMap map;
    if (bundle) {
      AnomalyResult res = infer(*bundle, img, pool, r.id);
      image_scores.push_back(res.score);
      map = std::move(res.map);
    } else {
      Rng rng(derive_seed(rc.pipeline.seed, index));
      map = ScalarMap(img.height, img.width);
      for (float& v : map.data) v = static_cast<float>(rng.uniform());
      image_scores.push_back(*std::max_element(map.data.begin(), map.data.end()));
    }
    image_labels.push_back(r.anomalous ? 1 : 0);
    pixels.add(map, mask);
    ++index;
  }
  require(index > 0, ErrorKind::ingestion, "no test images under '" + (rc.dataset_root / rc.category).string() + "'");
  const PixelMetrics pm = pixels.finish();
  EvalReport report;
  report.i_auc = evaluate_images(image_scores, image_labels);
  report.p_auc = pm.p_auc;
  report.p_ap = pm.p_ap;
  report.p_f1 = pm.p_f1;
  report.pro = pm.pro;
  report.eval_size = rc.eval_size;
  report.images = image_labels.size();
  report.anomalous_images = static_cast<std::size_t>(std::count(image_labels.begin(), image_labels.end(), 1));
  report.positive_pixels = pm.positive_pixels;
  write_file(stage.path() / "report.json", report.to_json());
  write_file(stage.path() / "report.txt", report.to_table());
  stage.commit();
  out << report.to_table();
  return 0;
}

int cmd_synth(const Flags& f, std::ostream& out) {
  SynthSpec spec = load_synth_spec(f.config);
  if (f.seed) spec.seed = *f.seed;
  require(!f.out.empty(), ErrorKind::config, "synth needs an output directory (--out)");
  validate(spec);
  WorkerPool pool(std::max(1, f.workers));
  synth_generate(spec, f.out, pool);
  out << "wrote " << spec.train_count + spec.test_normal + spec.test_anomalous << " images to "
      << (fs::path(f.out) / spec.category).string() << "\n";
  return 0;
}

// Fixed, well-separated colors for detector indices.
void detector_color(int d, float rgb[3]) {
  const double h = std::fmod(d * 0.618033988749895, 1.0) * 6.0;
  const double x = 1.0 - std::abs(std::fmod(h, 2.0) - 1.0);
  const double table[6][3] = {{1, x, 0}, {x, 1, 0}, {0, 1, x}, {0, x, 1}, {x, 0, 1}, {1, 0, x}};
  const int sector = std::min(5, static_cast<int>(h));
  for (int c = 0; c < 3; ++c) rgb[c] = static_cast<float>(0.25 + 0.7 * table[sector][c]);
}

int cmd_inspect(const Flags& f, std::ostream& out) {
  const RunConfig rc = resolve_run(f);
  require(!f.bundle.empty(), ErrorKind::config, "inspect-assignment needs --bundle");
  require(!rc.output.empty(), ErrorKind::config, "inspect-assignment needs --out <file.png>");
  const ModelBundle bundle = load_bundle(f.bundle);
  const PatchGrid& g = bundle.grid;
  std::vector<int> owner(g.count());
  if (bundle.assignment.strategy == Strategy::ra) {
    require(!f.image.empty(), ErrorKind::config, "RA routes by feature: pass --image to color a specific image");
    const ImageTensor img = load_png(f.image);
    WorkerPool pool(rc.workers);
    const FeatureMap fused = build_fused_features(img, FeatureExtractor(bundle.config.extractor), g,
                                                  bundle.config.fusion, pool, fs::path(f.image).stem().string());
    const auto pfs = patchify_features(fused, g);
    for (int i = 0; i < g.count(); ++i) owner[i] = pool_route(bundle.assignment, pfs[i].pos, pfs[i]);
  } else {
    for (int i = 0; i < g.count(); ++i) owner[i] = pool_route(bundle.assignment, g.position(i), PatchFeature{});
  }
  const int scale = std::max(1, (std::max(g.image_h, g.image_w) + 511) / 512);
  const int h = g.image_h / scale, w = g.image_w / scale;
  ImageTensor img(3, h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      // Last covering patch in row-major order decides the color.
      const int py = y * scale, px = x * scale;
      int d = -1;
      for (int i = 0; i < g.count(); ++i) {
        const PatchPos p = g.position(i);
        if (py >= g.top(p.row) && py < g.top(p.row) + g.patch_h && px >= g.left(p.col) && px < g.left(p.col) + g.patch_w)
          d = owner[i];
      }
      float rgb[3] = {0, 0, 0};
      if (d >= 0) detector_color(d, rgb);
      const bool border = (py % g.stride_h) < scale || (px % g.stride_w) < scale;
      for (int c = 0; c < 3; ++c) img.at(c, y, x) = border ? rgb[c] * 0.6f : rgb[c];
    }
  const fs::path target = rc.output;
  if (target.has_parent_path()) fs::create_directories(target.parent_path());
  fs::path tmp = target;
  tmp += ".partial";
  save_png(img, tmp);
  std::error_code ec;
  fs::rename(tmp, target, ec);
  require(!ec, ErrorKind::io, "cannot write '" + target.string() + "'");
  for (int r = 0; r < g.rows; ++r) {
    for (int c = 0; c < g.cols; ++c) out << (c ? " " : "") << owner[g.index({r, c})];
    out << "\n";
  }
  return 0;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"High-resolution anomaly detection engine", "hiad"};
  app.require_subcommand(1);
  Flags f;
  std::uint64_t seed = 0;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", f.config, "Run configuration (JSON)");
    sub->add_option("--workers", f.workers, "Worker threads")->check(CLI::PositiveNumber);
    sub->add_option("--seed", seed, "Master seed for every stochastic step");
    sub->add_option("--out", f.out, "Output location");
  };
  CLI::App* fit_cmd = app.add_subcommand("fit", "Fit a model bundle on the training images of a dataset");
  add_common(fit_cmd);
  fit_cmd->add_option("--data", f.data, "Dataset root");
  fit_cmd->add_option("--category", f.category, "Dataset category");

  CLI::App* score_cmd = app.add_subcommand("score", "Score images; writes heatmaps and scores.json");
  add_common(score_cmd);
  score_cmd->add_option("--bundle", f.bundle, "Model bundle directory")->required();
  score_cmd->add_option("images", f.images, "PNG images")->required();

  CLI::App* eval_cmd = app.add_subcommand("eval", "Evaluate a bundle on the test split of a dataset");
  add_common(eval_cmd);
  eval_cmd->add_option("--bundle", f.bundle, "Model bundle directory");
  eval_cmd->add_option("--data", f.data, "Dataset root");
  eval_cmd->add_option("--category", f.category, "Dataset category");
  eval_cmd->add_option("--eval-size", f.eval_size, "Side length used for pixel metrics")->check(CLI::PositiveNumber);
  eval_cmd->add_flag("--random-detector", f.random_detector, "Score with uniform random maps instead of a bundle");

  CLI::App* synth_cmd = app.add_subcommand("synth", "Generate a synthetic dataset");
  add_common(synth_cmd);

  CLI::App* inspect_cmd = app.add_subcommand("inspect-assignment", "Render detector membership of patch positions");
  add_common(inspect_cmd);
  inspect_cmd->add_option("--bundle", f.bundle, "Model bundle directory")->required();
  inspect_cmd->add_option("--image", f.image, "Image used for feature-routed (RA) bundles");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  }
  for (CLI::App* sub : app.get_subcommands())
    if (sub->count("--seed")) f.seed = seed;

  try {
    if (fit_cmd->parsed()) return cmd_fit(f, out);
    if (score_cmd->parsed()) return cmd_score(f, out);
    if (eval_cmd->parsed()) return cmd_eval(f, out);
    if (synth_cmd->parsed()) return cmd_synth(f, out);
    if (inspect_cmd->parsed()) return cmd_inspect(f, out);
  } catch (const Error& e) {
    err << "hiad: " << to_string(e.kind()) << ": " << e.what() << "\n";
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    err << "hiad: " << e.what() << "\n";
    return 1;
  }
  return 1;
}

}  // namespace hiad
