#include <bit>
#include <cstring>
#include <fstream>
#include <set>

#include "hiad/error.hpp"
#include "hiad/pipeline.hpp"
#include "json_io.hpp"

namespace hiad {

static_assert(std::endian::native == std::endian::little, "raw arrays are stored little-endian");

namespace fs = std::filesystem;

namespace {

constexpr const char* kManifest = "manifest.json";
constexpr const char* kBundleFormat = "hiad-bundle";

[[noreturn]] void config_error(const std::string& msg) { fail(ErrorKind::config, "config: " + msg); }

template <class T>
T get(const Json& j, const char* key, const std::string& what) {
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    config_error("'" + std::string(key) + "' in " + what + " is missing or has the wrong type");
  }
}

template <class T>
void read_opt(const Json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    config_error("'" + std::string(key) + "' has the wrong type");
  }
}

void read_pair(const Json& j, const char* key, int& a, int& b) {
  if (!j.contains(key)) return;
  const Json& v = j.at(key);
  if (v.is_number_integer()) {
    a = b = v.get<int>();
    return;
  }
  if (!v.is_array() || v.size() != 2 || !v[0].is_number_integer() || !v[1].is_number_integer())
    config_error("'" + std::string(key) + "' must be an integer or a [height, width] pair");
  a = v[0].get<int>();
  b = v[1].get<int>();
}

std::string extractor_kind_name(ExtractorKind k) { return k == ExtractorKind::filter_bank ? "filter_bank" : "precomputed"; }

ExtractorKind parse_extractor_kind(const std::string& s) {
  if (s == "filter_bank") return ExtractorKind::filter_bank;
  if (s == "precomputed") return ExtractorKind::precomputed;
  config_error("unknown extractor kind '" + s + "' (expected filter_bank or precomputed)");
}

// ---- raw arrays ----

template <class T>
const char* dtype_name();
template <>
const char* dtype_name<float>() { return "f32"; }
template <>
const char* dtype_name<double>() { return "f64"; }
template <>
const char* dtype_name<std::uint32_t>() { return "u32"; }

template <class T>
Json write_array(const fs::path& dir, const std::string& file, const std::vector<T>& data,
                 std::vector<std::size_t> shape) {
  std::ofstream out(dir / file, std::ios::binary);
  out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size() * sizeof(T)));
  if (!out) fail(ErrorKind::io, "cannot write '" + (dir / file).string() + "'");
  Json j;
  j["file"] = file;
  j["dtype"] = dtype_name<T>();
  j["shape"] = shape;
  return j;
}

template <class T>
std::vector<T> read_array(const fs::path& dir, const Json& desc, std::size_t expected_count) {
  std::string file;
  std::vector<std::size_t> shape;
  try {
    file = desc.at("file").get<std::string>();
    shape = desc.at("shape").get<std::vector<std::size_t>>();
    if (desc.at("dtype").get<std::string>() != dtype_name<T>())
      fail(ErrorKind::format, "bundle array '" + file + "' has dtype " + desc.at("dtype").get<std::string>() +
                                  ", expected " + dtype_name<T>());
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::format, std::string("bundle manifest: malformed array descriptor: ") + e.what());
  }
  std::size_t count = 1;
  for (std::size_t s : shape) count *= s;
  const fs::path path = dir / file;
  require(count == expected_count, ErrorKind::format,
          "'" + path.string() + "': manifest shape holds " + std::to_string(count) + " values, expected " +
              std::to_string(expected_count));
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  require(static_cast<bool>(in), ErrorKind::format, "'" + path.string() + "' is missing");
  const auto bytes = static_cast<std::size_t>(in.tellg());
  require(bytes == count * sizeof(T), ErrorKind::format,
          "'" + path.string() + "' holds " + std::to_string(bytes) + " bytes, expected " +
              std::to_string(count * sizeof(T)));
  std::vector<T> data(count);
  in.seekg(0);
  in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(bytes));
  require(static_cast<bool>(in), ErrorKind::io, "cannot read '" + path.string() + "'");
  return data;
}

Json save_detector(const fs::path& dir, const std::string& stem, const Detector& d) {
  Json j;
  if (const auto* g = std::get_if<GaussianDetector>(&d)) {
    const std::size_t cells = static_cast<std::size_t>(g->cells_h()) * g->cells_w();
    j["kind"] = "gaussian";
    j["cells"] = {g->cells_h(), g->cells_w()};
    j["dim"] = g->dim();
    j["epsilon"] = g->epsilon();
    j["mean"] = write_array(dir, stem + ".mean.f64", g->means(), {cells, static_cast<std::size_t>(g->dim())});
    j["factor"] = write_array(dir, stem + ".factor.f64", g->factors(), {cells, g->packed_size()});
  } else {
    const auto& b = std::get<MemoryBankDetector>(d);
    j["kind"] = "bank";
    j["dim"] = b.dim();
    j["ratio"] = b.ratio();
    j["seed"] = b.seed();
    j["bank"] = write_array(dir, stem + ".bank.f32", b.bank(), {b.size(), static_cast<std::size_t>(b.dim())});
  }
  return j;
}

Detector load_detector(const fs::path& dir, const Json& j) {
  try {
    const std::string kind = j.at("kind").get<std::string>();
    const int dim = j.at("dim").get<int>();
    require(dim > 0, ErrorKind::format, "bundle: detector dimension must be positive");
    if (kind == "gaussian") {
      const int ch = j.at("cells").at(0).get<int>(), cw = j.at("cells").at(1).get<int>();
      require(ch > 0 && cw > 0, ErrorKind::format, "bundle: detector cell grid must be positive");
      const std::size_t cells = static_cast<std::size_t>(ch) * cw;
      auto means = read_array<double>(dir, j.at("mean"), cells * dim);
      auto factors = read_array<double>(dir, j.at("factor"), cells * (static_cast<std::size_t>(dim) * (dim + 1) / 2));
      return GaussianDetector::from_parameters(ch, cw, dim, j.at("epsilon").get<double>(), std::move(means),
                                               std::move(factors));
    }
    if (kind == "bank") {
      const auto shape = j.at("bank").at("shape").get<std::vector<std::size_t>>();
      require(shape.size() == 2 && shape[1] == static_cast<std::size_t>(dim) && shape[0] > 0, ErrorKind::format,
              "bundle: bank shape does not match the detector dimension");
      auto bank = read_array<float>(dir, j.at("bank"), shape[0] * dim);
      return MemoryBankDetector::from_bank(std::move(bank), dim, j.at("ratio").get<double>(),
                                           j.at("seed").get<std::uint64_t>());
    }
    fail(ErrorKind::format, "bundle: unknown detector kind '" + kind + "'");
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::format, std::string("bundle manifest: malformed detector entry: ") + e.what());
  }
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) fail(ErrorKind::io, "cannot write '" + path.string() + "'");
}

}  // namespace

std::string to_string(DetectorKind kind) { return kind == DetectorKind::gaussian ? "gaussian" : "bank"; }

DetectorKind parse_detector_kind(const std::string& name) {
  if (name == "gaussian") return DetectorKind::gaussian;
  if (name == "bank") return DetectorKind::bank;
  config_error("unknown detector kind '" + name + "' (expected gaussian or bank)");
}

Json pipeline_to_json(const PipelineConfig& c) {
  Json j;
  j["schema"] = kConfigSchema;
  j["patch"] = {c.patch_h, c.patch_w};
  j["stride"] = {c.stride_h, c.stride_w};
  j["fusion_weights"] = c.fusion.weights;
  j["strategy"] = to_string(c.strategy);
  j["detectors"] = c.detectors;
  j["detector"] = {{"kind", to_string(c.detector.kind)},
                   {"epsilon", c.detector.epsilon},
                   {"coreset_ratio", c.detector.coreset_ratio}};
  j["extractor"] = {{"kind", extractor_kind_name(c.extractor.kind)},
                    {"strides", c.extractor.strides},
                    {"channels", c.extractor.channels},
                    {"version", c.extractor.version},
                    {"features_dir", c.extractor.features_dir.generic_string()}};
  j["low_res"] = {{"enabled", c.low_res_enabled}, {"size", {c.low_res_h, c.low_res_w}}};
  j["validation_fraction"] = c.validation_fraction;
  j["seed"] = c.seed;
  j["seeds"] = {{"split", c.seeds.split}, {"pseudo", c.seeds.pseudo}, {"cluster", c.seeds.cluster},
                {"coreset", c.seeds.coreset}};
  return j;
}

PipelineConfig pipeline_from_json(const Json& j, std::initializer_list<const char*> extra_keys) {
  if (!j.is_object()) config_error("the configuration must be a JSON object");
  std::set<std::string> allowed{"schema",    "patch",   "stride",   "fusion_weights",      "strategy", "detectors",
                                "detector",  "extractor", "low_res", "validation_fraction", "seed",     "seeds"};
  for (const char* k : extra_keys) allowed.insert(k);
  for (const auto& item : j.items())
    if (!allowed.count(item.key())) config_error("unknown key '" + item.key() + "'");
  if (j.contains("schema") && j.at("schema") != kConfigSchema)
    config_error("unsupported schema " + j.at("schema").dump() + " (expected \"" + kConfigSchema + "\")");

  PipelineConfig c;
  read_pair(j, "patch", c.patch_h, c.patch_w);
  read_pair(j, "stride", c.stride_h, c.stride_w);
  read_opt(j, "fusion_weights", c.fusion.weights);
  if (j.contains("strategy")) c.strategy = parse_strategy(get<std::string>(j, "strategy", "config"));
  read_opt(j, "detectors", c.detectors);
  if (j.contains("detector")) {
    const Json& d = j.at("detector");
    if (d.contains("kind")) c.detector.kind = parse_detector_kind(get<std::string>(d, "kind", "detector"));
    read_opt(d, "epsilon", c.detector.epsilon);
    read_opt(d, "coreset_ratio", c.detector.coreset_ratio);
  }
  if (j.contains("extractor")) {
    const Json& e = j.at("extractor");
    if (e.contains("kind")) c.extractor.kind = parse_extractor_kind(get<std::string>(e, "kind", "extractor"));
    read_opt(e, "strides", c.extractor.strides);
    read_opt(e, "channels", c.extractor.channels);
    read_opt(e, "version", c.extractor.version);
    if (e.contains("features_dir")) c.extractor.features_dir = get<std::string>(e, "features_dir", "extractor");
  }
  if (j.contains("low_res")) {
    const Json& l = j.at("low_res");
    read_opt(l, "enabled", c.low_res_enabled);
    read_pair(l, "size", c.low_res_h, c.low_res_w);
  }
  read_opt(j, "validation_fraction", c.validation_fraction);
  read_opt(j, "seed", c.seed);
  if (j.contains("seeds")) {
    const Json& s = j.at("seeds");
    read_opt(s, "split", c.seeds.split);
    read_opt(s, "pseudo", c.seeds.pseudo);
    read_opt(s, "cluster", c.seeds.cluster);
    read_opt(s, "coreset", c.seeds.coreset);
  }
  return c;
}

std::string config_to_json(const PipelineConfig& config) { return pipeline_to_json(config).dump(2) + "\n"; }

PipelineConfig config_from_json(const std::string& text) {
  Json j;
  try {
    j = Json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    config_error(std::string("invalid JSON: ") + e.what());
  }
  return pipeline_from_json(j);
}

void save_bundle(const ModelBundle& b, const fs::path& dir) {
  // Written next to the target and renamed into place, so a failure leaves no partial bundle.
  const fs::path parent = dir.has_parent_path() ? dir.parent_path() : fs::path(".");
  std::error_code ec;
  fs::create_directories(parent, ec);
  const fs::path tmp = parent / (dir.filename().string() + ".partial");
  fs::remove_all(tmp, ec);
  if (!fs::create_directory(tmp, ec)) fail(ErrorKind::io, "cannot create '" + tmp.string() + "'");
  try {
    Json m;
    m["format"] = kBundleFormat;
    m["version"] = ModelBundle::kFormatVersion;
    m["config"] = pipeline_to_json(b.config);
    m["image"] = {{"height", b.image_h}, {"width", b.image_w}, {"channels", b.image_channels}};
    m["grid"] = {{"image", {b.grid.image_h, b.grid.image_w}},
                 {"patch", {b.grid.patch_h, b.grid.patch_w}},
                 {"stride", {b.grid.stride_h, b.grid.stride_w}},
                 {"rows", b.grid.rows},
                 {"cols", b.grid.cols}};
    Json a;
    a["strategy"] = to_string(b.assignment.strategy);
    a["detectors"] = b.assignment.detectors;
    a["rows"] = b.assignment.rows;
    a["cols"] = b.assignment.cols;
    if (b.assignment.strategy == Strategy::ra) {
      a["dim"] = b.assignment.dim;
      a["centroids"] = write_array(tmp, "assignment.centroids.f64", b.assignment.centroids,
                                   {static_cast<std::size_t>(b.assignment.detectors),
                                    static_cast<std::size_t>(b.assignment.dim)});
    } else {
      a["table"] = write_array(tmp, "assignment.table.u32", b.assignment.table,
                               {static_cast<std::size_t>(b.assignment.rows), static_cast<std::size_t>(b.assignment.cols)});
    }
    m["assignment"] = a;
    Json dets = Json::array();
    for (std::size_t d = 0; d < b.detectors.size(); ++d)
      dets.push_back(save_detector(tmp, "detector_" + std::to_string(d), b.detectors[d]));
    m["detectors"] = dets;
    m["low_res"] = b.low_detector ? Json{{"size", {b.low_h, b.low_w}}, {"detector", save_detector(tmp, "low", *b.low_detector)}}
                                  : Json(nullptr);
    std::vector<double> norm = b.normalization.mean;
    norm.insert(norm.end(), b.normalization.scale.begin(), b.normalization.scale.end());
    m["normalization"] = write_array(tmp, "normalization.f64", norm, {2, b.normalization.mean.size()});
    m["render_threshold"] = b.render_threshold ? Json(*b.render_threshold) : Json(nullptr);
    m["group_sizes"] = b.group_sizes;
    write_text(tmp / kManifest, m.dump(2) + "\n");
  } catch (...) {
    fs::remove_all(tmp, ec);
    throw;
  }
  fs::remove_all(dir, ec);
  fs::rename(tmp, dir, ec);
  if (ec) {
    fs::remove_all(tmp, ec);
    fail(ErrorKind::io, "cannot move bundle into '" + dir.string() + "'");
  }
}

ModelBundle load_bundle(const fs::path& dir) {
  const fs::path manifest = dir / kManifest;
  std::ifstream in(manifest);
  require(static_cast<bool>(in), ErrorKind::io, "cannot open '" + manifest.string() + "'");
  Json m;
  try {
    m = Json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    fail(ErrorKind::format, "'" + manifest.string() + "': " + e.what());
  }
  ModelBundle b;
  try {
    require(m.at("format") == kBundleFormat, ErrorKind::format, "'" + manifest.string() + "' is not a model bundle");
    const int version = m.at("version").get<int>();
    require(version == ModelBundle::kFormatVersion, ErrorKind::format,
            "'" + manifest.string() + "': bundle version " + std::to_string(version) + " is not supported (expected " +
                std::to_string(ModelBundle::kFormatVersion) + ")");
    b.config = pipeline_from_json(m.at("config"));
    b.image_h = m.at("image").at("height").get<int>();
    b.image_w = m.at("image").at("width").get<int>();
    b.image_channels = m.at("image").at("channels").get<int>();
    b.grid = compute_grid(b.image_h, b.image_w, b.config.patch_h, b.config.patch_w, b.config.stride_h,
                          b.config.stride_w);
    require(m.at("grid").at("rows").get<int>() == b.grid.rows && m.at("grid").at("cols").get<int>() == b.grid.cols,
            ErrorKind::format, "'" + manifest.string() + "': grid does not match the configuration");

    const Json& a = m.at("assignment");
    b.assignment.strategy = parse_strategy(a.at("strategy").get<std::string>());
    b.assignment.detectors = a.at("detectors").get<int>();
    b.assignment.rows = a.at("rows").get<int>();
    b.assignment.cols = a.at("cols").get<int>();
    require(b.assignment.rows == b.grid.rows && b.assignment.cols == b.grid.cols && b.assignment.detectors >= 1,
            ErrorKind::format, "'" + manifest.string() + "': assignment does not match the grid");
    if (b.assignment.strategy == Strategy::ra) {
      b.assignment.dim = a.at("dim").get<int>();
      b.assignment.centroids = read_array<double>(
          dir, a.at("centroids"), static_cast<std::size_t>(b.assignment.detectors) * b.assignment.dim);
    } else {
      b.assignment.table = read_array<std::uint32_t>(dir, a.at("table"), static_cast<std::size_t>(b.grid.count()));
      for (std::uint32_t t : b.assignment.table)
        require(t < static_cast<std::uint32_t>(b.assignment.detectors), ErrorKind::format,
                "'" + (dir / "assignment.table.u32").string() + "' routes to a detector outside the pool");
    }
    const Json& dets = m.at("detectors");
    require(dets.is_array() && static_cast<int>(dets.size()) == b.assignment.detectors, ErrorKind::format,
            "'" + manifest.string() + "': detector count does not match the assignment");
    for (const Json& d : dets) b.detectors.push_back(load_detector(dir, d));
    if (!m.at("low_res").is_null()) {
      b.low_h = m.at("low_res").at("size").at(0).get<int>();
      b.low_w = m.at("low_res").at("size").at(1).get<int>();
      b.low_detector = load_detector(dir, m.at("low_res").at("detector"));
    }
    const std::size_t entries = b.detectors.size() + 1;
    const std::vector<double> norm = read_array<double>(dir, m.at("normalization"), 2 * entries);
    b.normalization.mean.assign(norm.begin(), norm.begin() + static_cast<std::ptrdiff_t>(entries));
    b.normalization.scale.assign(norm.begin() + static_cast<std::ptrdiff_t>(entries), norm.end());
    if (!m.at("render_threshold").is_null()) b.render_threshold = m.at("render_threshold").get<double>();
    b.group_sizes = m.at("group_sizes").get<std::vector<std::uint64_t>>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::format, "'" + manifest.string() + "': " + e.what());
  }
  return b;
}

}  // namespace hiad
