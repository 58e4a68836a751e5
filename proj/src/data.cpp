#include "hiad/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numbers>

#include "hiad/error.hpp"
#include "hiad/metrics.hpp"
#include "hiad/rng.hpp"
#include "json.hpp"

namespace hiad {

namespace fs = std::filesystem;

namespace {

std::vector<fs::path> png_files(const fs::path& dir) {
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".png") out.push_back(e.path());
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<fs::path> subdirs(const fs::path& dir) {
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_directory()) out.push_back(e.path());
  std::sort(out.begin(), out.end());
  return out;
}

std::string record_id(const fs::path& category_root, const fs::path& image) {
  fs::path rel = fs::relative(image, category_root);
  rel.replace_extension();
  return rel.generic_string();
}

}  // namespace

std::vector<SampleRecord> load_layout(const fs::path& root, const std::string& category) {
  const fs::path base = root / category;
  require(fs::is_directory(base), ErrorKind::ingestion, "dataset category '" + base.string() + "' does not exist");
  const fs::path train_good = base / "train" / "good";
  require(fs::is_directory(train_good), ErrorKind::ingestion, "missing directory '" + train_good.string() + "'");
  std::vector<SampleRecord> records;
  for (const fs::path& p : png_files(train_good))
    records.push_back({p, Split::train, false, "good", std::nullopt, category, record_id(base, p)});
  require(!records.empty(), ErrorKind::ingestion, "no training images in '" + train_good.string() + "'");

  const fs::path test = base / "test";
  if (!fs::is_directory(test)) return records;
  for (const fs::path& type_dir : subdirs(test)) {
    const std::string type = type_dir.filename().string();
    const bool anomalous = type != "good";
    const fs::path gt_dir = base / "ground_truth" / type;
    std::vector<fs::path> masks;
    if (anomalous && fs::is_directory(gt_dir)) masks = png_files(gt_dir);
    std::vector<bool> used(masks.size(), false);
    std::vector<std::string> missing;
    for (const fs::path& p : png_files(type_dir)) {
      SampleRecord r{p, Split::test, anomalous, type, std::nullopt, category, record_id(base, p)};
      if (anomalous) {
        const std::string stem = p.stem().string();
        for (std::size_t m = 0; m < masks.size(); ++m) {
          const std::string ms = masks[m].stem().string();
          if (ms == stem + "_mask" || ms == stem) {
            r.mask = masks[m];
            used[m] = true;
            break;
          }
        }
        if (!r.mask) missing.push_back(p.string());
      }
      records.push_back(std::move(r));
    }
    if (!missing.empty()) {
      std::string msg = "anomalous test images without a mask in '" + gt_dir.string() + "':";
      for (const auto& m : missing) msg += " " + m;
      for (std::size_t m = 0; m < masks.size(); ++m)
        if (!used[m]) msg += "; unmatched mask " + masks[m].string();
      fail(ErrorKind::ingestion, msg);
    }
  }
  return records;
}

std::string to_string(Texture t) {
  switch (t) {
    case Texture::grid: return "grid";
    case Texture::wood: return "wood";
    case Texture::speckle: return "speckle";
  }
  return "?";
}

std::string to_string(DefectKind d) {
  switch (d) {
    case DefectKind::rectangle: return "rectangle";
    case DefectKind::blob: return "blob";
    case DefectKind::scratch: return "scratch";
    case DefectKind::pitting: return "pitting";
  }
  return "?";
}

Texture parse_texture(const std::string& s) {
  if (s == "grid") return Texture::grid;
  if (s == "wood") return Texture::wood;
  if (s == "speckle") return Texture::speckle;
  fail(ErrorKind::config, "unknown texture '" + s + "' (expected grid, wood or speckle)");
}

DefectKind parse_defect_kind(const std::string& s) {
  if (s == "rectangle") return DefectKind::rectangle;
  if (s == "blob") return DefectKind::blob;
  if (s == "scratch") return DefectKind::scratch;
  if (s == "pitting") return DefectKind::pitting;
  fail(ErrorKind::config, "unknown defect kind '" + s + "' (expected rectangle, blob, scratch or pitting)");
}

void validate(const SynthSpec& s) {
  require(s.resolution >= 64 && s.resolution % 64 == 0, ErrorKind::config,
          "synth: resolution must be a positive multiple of 64");
  require(s.channels == 1 || s.channels == 3, ErrorKind::config, "synth: channels must be 1 or 3");
  require(s.train_count >= 0 && s.test_normal >= 0 && s.test_anomalous >= 0, ErrorKind::config,
          "synth: sample counts must be non-negative");
  require(s.defects_min >= 1 && s.defects_max >= s.defects_min, ErrorKind::config,
          "synth: defect count range must satisfy 1 <= min <= max");
  require(s.area_min > 0.0 && s.area_max >= s.area_min && s.area_max <= 0.05, ErrorKind::config,
          "synth: relative defect areas must lie in (0, 0.05]");
  require(s.contrast > 0.0 && s.contrast <= 1.0, ErrorKind::config, "synth: contrast must lie in (0, 1]");
  require(s.soft_edge >= 0.0 && s.texture_scale >= 2.0 && s.grain >= 0.0 && s.texture_amplitude >= 0.0,
          ErrorKind::config, "synth: soft edge, texture scale, amplitude and grain must be non-negative (scale >= 2)");
}

namespace {

constexpr double kTau = 2.0 * std::numbers::pi;
constexpr int kSpeckleWaves = 24;

struct Wave {
  double fx, fy, amp;
};

// Frequencies and orientations depend only on the SynthSpec; phases vary per image.
std::vector<Wave> speckle_waves(const SynthSpec& s) {
  Rng rng(derive_seed(s.seed, 0x5eed));
  std::vector<Wave> waves;
  for (int k = 0; k < kSpeckleWaves; ++k) {
    const double f = rng.uniform(0.5, 1.0) / s.texture_scale;
    const double theta = rng.uniform(0.0, std::numbers::pi);
    waves.push_back({f * std::cos(theta), f * std::sin(theta), s.texture_amplitude * std::sqrt(2.0 / kSpeckleWaves)});
  }
  return waves;
}

ScalarMap render_texture(const SynthSpec& s, Rng& rng) {
  const int n = s.resolution;
  ScalarMap v(n, n);
  const double p = s.texture_scale;
  switch (s.texture) {
    case Texture::speckle: {
      std::vector<double> cx(n), sx(n), cy(n), sy(n);
      for (const Wave& w : speckle_waves(s)) {
        const double phase = rng.uniform(0.0, kTau);
        for (int x = 0; x < n; ++x) {
          cx[x] = std::cos(kTau * w.fx * x + phase);
          sx[x] = std::sin(kTau * w.fx * x + phase);
        }
        for (int y = 0; y < n; ++y) {
          cy[y] = std::cos(kTau * w.fy * y);
          sy[y] = std::sin(kTau * w.fy * y);
        }
        for (int y = 0; y < n; ++y) {
          float* row = v.data.data() + static_cast<std::size_t>(y) * n;
          for (int x = 0; x < n; ++x) row[x] += static_cast<float>(w.amp * (cx[x] * cy[y] - sx[x] * sy[y]));
        }
      }
      for (float& x : v.data) x += 0.5f;
      break;
    }
    case Texture::grid: {
      const double ox = rng.uniform(0.0, p), oy = rng.uniform(0.0, p);
      const double width = std::max(1.0, p / 8.0);
      // Two-level pattern with the requested standard deviation and mean 0.5.
      const double frac = 1.0 - (1.0 - width / p) * (1.0 - width / p);
      const double lo_hi = s.texture_amplitude * std::sqrt((1.0 - frac) / frac);
      for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x) {
          const bool line = std::fmod(x + ox, p) < width || std::fmod(y + oy, p) < width;
          v.at(y, x) = static_cast<float>(line ? 0.5 + lo_hi : 0.5 - lo_hi * frac / (1.0 - frac));
        }
      break;
    }
    case Texture::wood: {
      const double phase = rng.uniform(0.0, kTau), warp_phase = rng.uniform(0.0, kTau);
      for (int y = 0; y < n; ++y) {
        const double warp = 0.5 * p * std::sin(kTau * y / (8.0 * p) + warp_phase);
        for (int x = 0; x < n; ++x)
          v.at(y, x) = static_cast<float>(0.5 + std::sqrt(2.0) * s.texture_amplitude * std::sin(kTau * (x + warp) / p + phase));
      }
      break;
    }
  }
  if (s.grain > 0.0)
    for (float& x : v.data) x += static_cast<float>(rng.uniform(-s.grain, s.grain));
  return v;
}

// Weight in [0, 1] of one defect shape; zero outside.
struct Shape {
  DefectKind kind;
  double cy, cx;
  double a, b;       // half extents (rectangle/blob) or half length / half width (scratch)
  double cos_t, sin_t;
  double soft;

  double weight(double y, double x) const {
    const double dy = y - cy, dx = x - cx;
    double inner;  // distance to the boundary, positive inside
    switch (kind) {
      case DefectKind::rectangle: inner = std::min(a - std::abs(dy), b - std::abs(dx)); break;
      case DefectKind::blob:
      case DefectKind::pitting: {
        const double r = std::sqrt((dy / a) * (dy / a) + (dx / b) * (dx / b));
        inner = (1.0 - r) * std::min(a, b);
        break;
      }
      case DefectKind::scratch: {
        const double along = dx * cos_t + dy * sin_t;
        const double across = -dx * sin_t + dy * cos_t;
        inner = std::min(a - std::abs(along), b - std::abs(across));
        break;
      }
      default: inner = -1.0;
    }
    if (inner <= 0.0) return 0.0;
    return soft > 0.0 ? std::min(1.0, inner / soft) : 1.0;
  }
  // Conservative bounding half-extents.
  double extent_y() const { return kind == DefectKind::scratch ? a * std::abs(sin_t) + b * std::abs(cos_t) : a; }
  double extent_x() const { return kind == DefectKind::scratch ? a * std::abs(cos_t) + b * std::abs(sin_t) : b; }
};

constexpr double kMinSide = 16.0;

Shape make_shape(const SynthSpec& s, Rng& rng) {
  const int n = s.resolution;
  const double area = rng.uniform(s.area_min, s.area_max) * n * n;
  Shape sh{s.defect, 0, 0, 0, 0, 1, 0, s.soft_edge};
  const double aspect = std::exp(rng.uniform(std::log(0.5), std::log(2.0)));
  switch (s.defect) {
    case DefectKind::rectangle: {
      const double h = std::max(kMinSide, std::sqrt(area / aspect));
      const double w = std::max(kMinSide, area / h);
      sh.a = h / 2;
      sh.b = w / 2;
      break;
    }
    case DefectKind::blob:
    case DefectKind::pitting: {
      const double a = std::sqrt(area / (std::numbers::pi * aspect));
      sh.a = std::max(kMinSide / 2, a);
      sh.b = std::max(kMinSide / 2, a * aspect);
      break;
    }
    case DefectKind::scratch: {
      const double width = 3.0;
      const double angle = rng.uniform(0.25, 0.75) * std::numbers::pi / 2 + (rng.uniform() < 0.5 ? 0.0 : std::numbers::pi / 2);
      sh.cos_t = std::cos(angle);
      sh.sin_t = std::sin(angle);
      // Long enough that both sides of the bounding box reach the minimum.
      const double length = std::max(area / width, (kMinSide + width) / std::min(std::abs(sh.cos_t), std::abs(sh.sin_t)));
      sh.a = length / 2;
      sh.b = width / 2;
      break;
    }
  }
  const double ey = std::ceil(sh.extent_y()) + 2, ex = std::ceil(sh.extent_x()) + 2;
  sh.cy = rng.uniform(ey, n - ey);
  sh.cx = rng.uniform(ex, n - ex);
  return sh;
}

std::uint64_t sample_seed(const SynthSpec& s, SampleKind kind, int index) {
  return derive_seed(s.seed, (static_cast<std::uint64_t>(kind) + 1) << 32 | static_cast<std::uint32_t>(index));
}

std::vector<Rect> boxes_of(const ScalarMap& mask, const std::vector<Shape>& shapes) {
  std::vector<Rect> out;
  for (const Shape& sh : shapes) {
    const int y0 = std::max(0, static_cast<int>(std::floor(sh.cy - sh.extent_y())));
    const int y1 = std::min(mask.height - 1, static_cast<int>(std::ceil(sh.cy + sh.extent_y())));
    const int x0 = std::max(0, static_cast<int>(std::floor(sh.cx - sh.extent_x())));
    const int x1 = std::min(mask.width - 1, static_cast<int>(std::ceil(sh.cx + sh.extent_x())));
    int top = mask.height, left = mask.width, bottom = -1, right = -1;
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x)
        if (sh.weight(y + 0.5, x + 0.5) > 0.0) {
          top = std::min(top, y);
          bottom = std::max(bottom, y);
          left = std::min(left, x);
          right = std::max(right, x);
        }
    if (bottom >= 0) out.push_back({top, left, bottom - top + 1, right - left + 1});
  }
  return out;
}

}  // namespace

SynthSample render_sample(const SynthSpec& s, SampleKind kind, int index) {
  validate(s);
  Rng rng(sample_seed(s, kind, index));
  const int n = s.resolution;
  const ScalarMap base = render_texture(s, rng);
  ScalarMap offset(n, n);
  SynthSample out;
  out.mask = ScalarMap(n, n);
  std::vector<Shape> shapes;
  if (kind == SampleKind::test_defect) {
    const int count = static_cast<int>(rng.between(s.defects_min, s.defects_max));
    for (int d = 0; d < count; ++d) {
      const Shape sh = make_shape(s, rng);
      const double sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
      const int y0 = std::max(0, static_cast<int>(sh.cy - sh.extent_y()) - 1);
      const int y1 = std::min(n - 1, static_cast<int>(sh.cy + sh.extent_y()) + 1);
      const int x0 = std::max(0, static_cast<int>(sh.cx - sh.extent_x()) - 1);
      const int x1 = std::min(n - 1, static_cast<int>(sh.cx + sh.extent_x()) + 1);
      for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x) {
          const double w = sh.weight(y + 0.5, x + 0.5);
          if (w <= 0.0) continue;
          out.mask.at(y, x) = 1.0f;
          // Pitting flips the sign per pixel, so the region has zero mean.
          const double px = sh.kind == DefectKind::pitting && rng.uniform() < 0.5 ? -sign : sign;
          offset.at(y, x) += static_cast<float>(px * s.contrast * w);
        }
      shapes.push_back(sh);
    }
    out.boxes = boxes_of(out.mask, shapes);
    out.relative_area = relative_defect_area(out.mask);
  }
  // Per-channel tint keeps color images from being pure gray.
  static constexpr float kTint[3][3] = {{1.04f, 0.97f, 0.92f}, {1.1f, 0.9f, 0.7f}, {1.0f, 1.0f, 1.0f}};
  const float* tint = kTint[static_cast<int>(s.texture)];
  out.image = ImageTensor(s.channels, n, n);
  for (int c = 0; c < s.channels; ++c) {
    const float t = s.channels == 3 ? tint[c] : 1.0f;
    auto plane = out.image.plane(c);
    for (std::size_t i = 0; i < plane.size(); ++i)
      plane[i] = std::clamp(base.data[i] * t + offset.data[i], 0.0f, 1.0f);
  }
  return out;
}

void synth_generate(const SynthSpec& s, const fs::path& out_dir, WorkerPool& pool) {
  validate(s);
  struct Job {
    SampleKind kind;
    int index;
    std::string rel;  // relative path without extension
  };
  std::vector<Job> jobs;
  const std::string defect_dir = to_string(s.defect);
  auto name = [](int i) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%03d", i);
    return std::string(buf);
  };
  for (int i = 0; i < s.train_count; ++i) jobs.push_back({SampleKind::train, i, "train/good/" + name(i)});
  for (int i = 0; i < s.test_normal; ++i) jobs.push_back({SampleKind::test_good, i, "test/good/" + name(i)});
  for (int i = 0; i < s.test_anomalous; ++i)
    jobs.push_back({SampleKind::test_defect, i, "test/" + defect_dir + "/" + name(i)});

  std::error_code ec;
  fs::create_directories(out_dir, ec);
  const fs::path final_dir = out_dir / s.category;
  const fs::path tmp = out_dir / (s.category + ".partial");
  fs::remove_all(tmp, ec);
  for (const char* d : {"train/good", "test/good"}) fs::create_directories(tmp / d, ec);
  if (s.test_anomalous > 0) {
    fs::create_directories(tmp / "test" / defect_dir, ec);
    fs::create_directories(tmp / "ground_truth" / defect_dir, ec);
  }
  require(fs::is_directory(tmp / "train" / "good"), ErrorKind::io, "cannot create '" + tmp.string() + "'");

  std::vector<SynthSample> meta(jobs.size());
  try {
    pool.parallel_for(jobs.size(), [&](std::size_t j) {
      SynthSample sample = render_sample(s, jobs[j].kind, jobs[j].index);
      save_png(sample.image, tmp / (jobs[j].rel + ".png"));
      if (jobs[j].kind == SampleKind::test_defect)
        save_png(sample.mask, 0.0f, 1.0f, tmp / "ground_truth" / defect_dir / (name(jobs[j].index) + "_mask.png"));
      meta[j].boxes = std::move(sample.boxes);
      meta[j].relative_area = sample.relative_area;
    });
    nlohmann::ordered_json stats;
    stats["category"] = s.category;
    stats["resolution"] = s.resolution;
    stats["texture"] = to_string(s.texture);
    stats["defect"] = to_string(s.defect);
    stats["contrast"] = s.contrast;
    stats["seed"] = s.seed;
    nlohmann::ordered_json samples = nlohmann::ordered_json::array();
    for (std::size_t j = 0; j < jobs.size(); ++j) {
      nlohmann::ordered_json e;
      e["id"] = jobs[j].rel;
      e["label"] = jobs[j].kind == SampleKind::test_defect ? "anomaly" : "normal";
      e["relative_area"] = meta[j].relative_area;
      nlohmann::ordered_json boxes = nlohmann::ordered_json::array();
      for (const Rect& r : meta[j].boxes) boxes.push_back({r.top, r.left, r.height, r.width});
      e["boxes"] = boxes;
      samples.push_back(e);
    }
    stats["samples"] = samples;
    std::ofstream out(tmp / "stats.json", std::ios::binary);
    out << stats.dump(2) << "\n";
    if (!out) fail(ErrorKind::io, "cannot write '" + (tmp / "stats.json").string() + "'");
  } catch (...) {
    fs::remove_all(tmp, ec);
    throw;
  }
  fs::remove_all(final_dir, ec);
  fs::rename(tmp, final_dir, ec);
  if (ec) {
    fs::remove_all(tmp, ec);
    fail(ErrorKind::io, "cannot move dataset into '" + final_dir.string() + "'");
  }
}

}  // namespace hiad
