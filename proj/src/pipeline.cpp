#include "hiad/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "hiad/error.hpp"
#include "hiad/metrics.hpp"
#include "hiad/rng.hpp"

namespace hiad {

namespace {

enum SeedStream : std::uint64_t { kSplit = 1, kPseudo = 2, kCluster = 3, kCoreset = 4 };

constexpr std::uint64_t kLowResStream = 0xFFFFFFFFull;
constexpr int kCalibrationSize = 256;

bool is_power_of_two(int v) { return v > 0 && (v & (v - 1)) == 0; }

int auto_detectors(Strategy s, const PatchGrid& grid, int image_h, int image_w) {
  switch (s) {
    case Strategy::a2o: return 1;
    case Strategy::o2o: return grid.count();
    default: return std::min(std::max(image_h, image_w) > 3000 ? 8 : 4, grid.count());
  }
}

ImageTensor to_low_res(const ImageTensor& img, int h, int w) {
  if (img.height == h && img.width == w) return img;
  if (img.height % h == 0 && img.width % w == 0 && img.height / h == img.width / w && is_power_of_two(img.height / h)) {
    ImageTensor cur = img;
    while (cur.height > h) cur = downsample_by2(cur);
    return cur;
  }
  return resize_bilinear(img, h, w);
}

struct RawPatch {
  int detector = 0;
  ScalarMap pixels;
};

std::vector<PatchFeature> patch_features(const ModelBundle& b, const FeatureExtractor& extractor,
                                         const ImageTensor& img, WorkerPool& pool, const std::string& id) {
  const FeatureMap fused = build_fused_features(img, extractor, b.grid, b.config.fusion, pool, id);
  return patchify_features(fused, b.grid);
}

std::vector<RawPatch> score_high_raw(const ModelBundle& b, const ImageTensor& img, WorkerPool& pool,
                                     const std::string& id) {
  const FeatureExtractor extractor(b.config.extractor);
  const std::vector<PatchFeature> pfs = patch_features(b, extractor, img, pool, id);
  std::vector<RawPatch> out(pfs.size());
  pool.parallel_for(pfs.size(), [&](std::size_t i) {
    const int d = pool_route(b.assignment, pfs[i].pos, pfs[i]);
    out[i] = {d, score(b.detectors[d], pfs[i]).pixels};
  });
  return out;
}

PatchFeature low_res_feature(const PipelineConfig& c, const FeatureExtractor& extractor, const ImageTensor& img,
                             const std::string& id) {
  const ImageTensor low = to_low_res(img, c.low_res_h, c.low_res_w);
  return PatchFeature::from_map(extractor(low, PatchContext{id, 0, {0, 0}, true}));
}

ScalarMap score_low_raw(const ModelBundle& b, const ImageTensor& img, const std::string& id) {
  const FeatureExtractor extractor(b.config.extractor);
  return score(*b.low_detector, low_res_feature(b.config, extractor, img, id)).pixels;
}

// Running mean / sum of squared deviations, merged in a fixed order.
struct Moments {
  double n = 0.0, mean = 0.0, m2 = 0.0;

  void merge_values(const std::vector<float>& v) {
    if (v.empty()) return;
    double s = 0.0;
    for (float x : v) s += x;
    const double local_mean = s / static_cast<double>(v.size());
    double local_m2 = 0.0;
    for (float x : v) local_m2 += (x - local_mean) * (x - local_mean);
    merge(static_cast<double>(v.size()), local_mean, local_m2);
  }
  void merge(double nb, double mb, double m2b) {
    const double total = n + nb;
    const double delta = mb - mean;
    mean += delta * nb / total;
    m2 += m2b + delta * delta * n * nb / total;
    n = total;
  }
  double scale() const { return std::max(std::sqrt(m2 / n), kMinScale); }
};

Detector fit_detector(const DetectorConfig& dc, const std::vector<const PatchFeature*>& group, std::uint64_t seed,
                      WorkerPool& pool) {
  const PatchFeature& first = *group.front();
  if (dc.kind == DetectorKind::gaussian) {
    CellSamples samples(first.cells_h(), first.cells_w(), first.cell_dim());
    for (const PatchFeature* pf : group) samples.add(*pf);
    return GaussianDetector::fit(samples, dc.epsilon);
  }
  std::vector<float> cells;
  cells.reserve(group.size() * first.cell_count() * first.cell_dim());
  for (const PatchFeature* pf : group) {
    const std::vector<float> m = pf->cell_matrix();
    cells.insert(cells.end(), m.begin(), m.end());
  }
  return MemoryBankDetector::fit(cells, first.cell_dim(), dc.coreset_ratio, seed, pool);
}

}  // namespace

PipelineConfig resolve(const PipelineConfig& config, int image_h, int image_w) {
  PipelineConfig c = config;
  require(image_h >= 1 && image_w >= 1, ErrorKind::geometry, "image size must be positive");
  require(c.patch_h >= 1 && c.patch_w >= 1, ErrorKind::config, "patch size must be positive");
  if (c.stride_h == 0) c.stride_h = c.patch_h;
  if (c.stride_w == 0) c.stride_w = c.patch_w;
  if (c.fusion.weights.empty()) c.fusion = default_fusion(image_h, image_w);
  validate(c.fusion);
  validate(c.extractor);
  require(c.validation_fraction > 0.0 && c.validation_fraction < 1.0, ErrorKind::config,
          "validation fraction must lie in (0, 1)");

  const int levels = c.fusion.levels();
  const int scale = 1 << levels;
  require(image_h % scale == 0 && image_w % scale == 0, ErrorKind::geometry,
          "image " + std::to_string(image_h) + "x" + std::to_string(image_w) + " is not divisible by 2^" +
              std::to_string(levels) + " required by the fusion rates");
  PatchGrid grid;
  for (int k = 0; k <= levels; ++k) {
    try {
      const PatchGrid g = compute_grid(image_h >> k, image_w >> k, c.patch_h, c.patch_w, c.stride_h, c.stride_w);
      if (k == 0) grid = g;
    } catch (const Error& e) {
      fail(ErrorKind::geometry, "pyramid level " + std::to_string(k) + ": " + e.what());
    }
  }
  for (int s : c.extractor.strides)
    require(c.patch_h % s == 0 && c.patch_w % s == 0 && c.stride_h % s == 0 && c.stride_w % s == 0,
            ErrorKind::geometry,
            "patch " + std::to_string(c.patch_h) + "x" + std::to_string(c.patch_w) + " with stride " +
                std::to_string(c.stride_h) + "x" + std::to_string(c.stride_w) + " is not divisible by feature stride " +
                std::to_string(s));

  if (c.low_res_enabled) {
    require(c.low_res_h >= 1 && c.low_res_w >= 1 && c.low_res_h <= image_h && c.low_res_w <= image_w,
            ErrorKind::geometry,
            "low-res size " + std::to_string(c.low_res_h) + "x" + std::to_string(c.low_res_w) +
                " must be positive and no larger than the image");
    for (int s : c.extractor.strides)
      require(c.low_res_h % s == 0 && c.low_res_w % s == 0, ErrorKind::geometry,
              "low-res size " + std::to_string(c.low_res_h) + "x" + std::to_string(c.low_res_w) +
                  " is not divisible by feature stride " + std::to_string(s));
  }

  const int auto_m = auto_detectors(c.strategy, grid, image_h, image_w);
  if (c.detectors == 0) c.detectors = auto_m;
  require(c.detectors >= 1 && c.detectors <= grid.count(), ErrorKind::config,
          to_string(c.strategy) + ": " + std::to_string(c.detectors) + " detectors for a grid of " +
              std::to_string(grid.count()) + " positions");
  require(c.strategy != Strategy::a2o || c.detectors == 1, ErrorKind::config, "A2O uses exactly one detector");
  require(c.strategy != Strategy::o2o || c.detectors == grid.count(), ErrorKind::config,
          "O2O uses one detector per position (" + std::to_string(grid.count()) + ")");

  if (c.detector.kind == DetectorKind::gaussian)
    require(c.detector.epsilon > 0.0 && std::isfinite(c.detector.epsilon), ErrorKind::config,
            "gaussian epsilon must be positive");
  else
    require(c.detector.coreset_ratio > 0.0 && c.detector.coreset_ratio <= 1.0, ErrorKind::config,
            "coreset ratio must lie in (0, 1]");

  if (c.seeds.split == 0) c.seeds.split = derive_seed(c.seed, kSplit);
  if (c.seeds.pseudo == 0) c.seeds.pseudo = derive_seed(c.seed, kPseudo);
  if (c.seeds.cluster == 0) c.seeds.cluster = derive_seed(c.seed, kCluster);
  if (c.seeds.coreset == 0) c.seeds.coreset = derive_seed(c.seed, kCoreset);
  return c;
}

ScalarMap normalize(const ScalarMap& map, const NormalizationStats& stats, int detector) {
  require(detector >= 0 && detector < static_cast<int>(stats.mean.size()), ErrorKind::contract,
          "normalize: no statistics for detector " + std::to_string(detector));
  const double mu = stats.mean[detector];
  const double sigma = std::max(stats.scale[detector], kMinScale);
  ScalarMap out(map.height, map.width);
  for (std::size_t i = 0; i < map.size(); ++i) out.data[i] = static_cast<float>((map.data[i] - mu) / sigma);
  return out;
}

ScalarMap fuse_branches(const ScalarMap& high, const ScalarMap& low) {
  require(high.height == low.height && high.width == low.width, ErrorKind::contract,
          "branch maps differ in size");
  ScalarMap out(high.height, high.width);
  for (std::size_t i = 0; i < high.size(); ++i) out.data[i] = std::max(high.data[i], low.data[i]);
  return out;
}

ImageSet image_set_from_files(const std::vector<std::filesystem::path>& paths) {
  ImageSet set;
  for (const auto& p : paths) set.ids.push_back(p.stem().string());
  set.load = [paths](std::size_t i) { return load_png(paths[i]); };
  return set;
}

std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_validation(std::size_t count, double fraction,
                                                                               std::uint64_t seed) {
  require(fraction > 0.0 && fraction < 1.0, ErrorKind::config, "validation fraction must lie in (0, 1)");
  std::vector<std::size_t> order(count);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  for (std::size_t i = count; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  const auto n_val = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(count)));
  std::vector<std::size_t> val(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_val));
  std::vector<std::size_t> fit(order.begin() + static_cast<std::ptrdiff_t>(n_val), order.end());
  std::sort(val.begin(), val.end());
  std::sort(fit.begin(), fit.end());
  return {fit, val};
}

PseudoAnomaly make_pseudo_anomaly(const ImageTensor& img, std::uint64_t seed, int patch_h, int patch_w) {
  if (patch_h <= 0) patch_h = img.height;
  if (patch_w <= 0) patch_w = img.width;
  Rng rng(seed);
  PseudoAnomaly out{img, ScalarMap(img.height, img.width), {}};
  const int count = static_cast<int>(rng.between(1, 3));
  for (int r = 0; r < count; ++r) {
    Rect rect;
    rect.height = std::clamp(static_cast<int>(std::lround(rng.uniform(0.05, 0.15) * patch_h)), 1, img.height);
    rect.width = std::clamp(static_cast<int>(std::lround(rng.uniform(0.05, 0.15) * patch_w)), 1, img.width);
    rect.top = static_cast<int>(rng.between(0, img.height - rect.height));
    rect.left = static_cast<int>(rng.between(0, img.width - rect.width));
    float color[3];
    for (float& c : color) c = static_cast<float>(rng.uniform());
    for (int ch = 0; ch < img.channels; ++ch)
      for (int y = rect.top; y < rect.top + rect.height; ++y)
        for (int x = rect.left; x < rect.left + rect.width; ++x) out.image.at(ch, y, x) = color[ch];
    for (int y = rect.top; y < rect.top + rect.height; ++y)
      for (int x = rect.left; x < rect.left + rect.width; ++x) out.mask.at(y, x) = 1.0f;
    out.rects.push_back(rect);
  }
  return out;
}

AnomalyResult infer(const ModelBundle& bundle, const ImageTensor& img, WorkerPool& pool, const std::string& image_id,
                    InferOptions options) {
  require(img.height == bundle.image_h && img.width == bundle.image_w, ErrorKind::contract,
          "image " + std::to_string(img.height) + "x" + std::to_string(img.width) + " does not match the model (" +
              std::to_string(bundle.image_h) + "x" + std::to_string(bundle.image_w) + ")");
  const std::vector<RawPatch> raw = score_high_raw(bundle, img, pool, image_id);
  std::vector<ScalarMap> patches(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i)
    patches[i] = normalize(raw[i].pixels, bundle.normalization, raw[i].detector);
  AnomalyResult result;
  ScalarMap high = aggregate(patches, bundle.grid);
  const bool use_low = options.low_res && bundle.low_detector.has_value();
  if (use_low) {
    const ScalarMap low_raw = score_low_raw(bundle, img, image_id);
    ScalarMap low = resize_bilinear(normalize(low_raw, bundle.normalization, bundle.pool_size()), img.height,
                                    img.width);
    result.map = fuse_branches(high, low);
    if (options.keep_branches) result.low = std::move(low);
  } else {
    result.map = high;
  }
  if (options.keep_branches) result.high = std::move(high);
  result.score = *std::max_element(result.map.data.begin(), result.map.data.end());
  return result;
}

ModelBundle fit(const ImageSet& train, const PipelineConfig& config, WorkerPool& pool, FitReport* report) {
  require(train.size() >= 2, ErrorKind::fit, "fit needs at least two training images");
  const ImageTensor probe = train.load(0);
  ModelBundle b;
  b.config = resolve(config, probe.height, probe.width);
  const PipelineConfig& c = b.config;
  b.image_h = probe.height;
  b.image_w = probe.width;
  b.image_channels = probe.channels;
  b.grid = compute_grid(b.image_h, b.image_w, c.patch_h, c.patch_w, c.stride_h, c.stride_w);
  if (c.low_res_enabled) {
    b.low_h = c.low_res_h;
    b.low_w = c.low_res_w;
  }

  auto [fit_ids, val_ids] = split_validation(train.size(), c.validation_fraction, c.seeds.split);
  require(!val_ids.empty(), ErrorKind::config,
          "validation split is empty: " + std::to_string(train.size()) + " images at fraction " +
              std::to_string(c.validation_fraction));
  require(!fit_ids.empty(), ErrorKind::config, "no images left for fitting after the validation split");

  auto load = [&](std::size_t i) {
    ImageTensor img = train.load(i);
    require(img.height == b.image_h && img.width == b.image_w, ErrorKind::contract,
            "training image '" + train.ids[i] + "' is " + std::to_string(img.height) + "x" +
                std::to_string(img.width) + ", expected " + std::to_string(b.image_h) + "x" +
                std::to_string(b.image_w));
    return img;
  };

  // Features of every fit image, both branches.
  const FeatureExtractor extractor(c.extractor);
  std::vector<std::vector<PatchFeature>> per_image;
  std::vector<PatchFeature> low_features;
  for (std::size_t i : fit_ids) {
    const ImageTensor img = load(i);
    per_image.push_back(patch_features(b, extractor, img, pool, train.ids[i]));
    if (c.low_res_enabled) low_features.push_back(low_res_feature(c, extractor, img, train.ids[i]));
  }

  switch (c.strategy) {
    case Strategy::a2o: b.assignment = assign_a2o(b.grid); break;
    case Strategy::o2o: b.assignment = assign_o2o(b.grid); break;
    case Strategy::na: b.assignment = assign_na(b.grid, c.detectors); break;
    case Strategy::sca: b.assignment = assign_sca(b.grid, per_image, c.detectors, c.seeds.cluster); break;
    case Strategy::ra: b.assignment = assign_ra_fit(b.grid, per_image, c.detectors, c.seeds.cluster); break;
  }
  const int m_count = b.assignment.detectors;

  std::vector<std::vector<const PatchFeature*>> groups(m_count);
  for (const auto& image : per_image)
    for (const PatchFeature& pf : image) groups[pool_route(b.assignment, pf.pos, pf)].push_back(&pf);
  for (int m = 0; m < m_count; ++m) {
    require(!groups[m].empty(), ErrorKind::fit,
            "detector " + std::to_string(m) + " received no training patches (" + to_string(c.strategy) + ")");
    b.group_sizes.push_back(groups[m].size());
  }

  b.detectors.resize(m_count);
  if (c.detector.kind == DetectorKind::gaussian) {
    pool.parallel_for(m_count, [&](std::size_t m) {
      b.detectors[m] = fit_detector(c.detector, groups[m], 0, serial_pool());
    });
  } else {
    for (int m = 0; m < m_count; ++m)
      b.detectors[m] = fit_detector(c.detector, groups[m], derive_seed(c.seeds.coreset, m), pool);
  }
  if (c.low_res_enabled) {
    std::vector<const PatchFeature*> low_group;
    for (const PatchFeature& pf : low_features) low_group.push_back(&pf);
    b.low_detector = fit_detector(c.detector, low_group, derive_seed(c.seeds.coreset, kLowResStream), pool);
  }
  per_image.clear();
  low_features.clear();

  // Normalization from clean validation pixels, merged in validation order.
  std::vector<Moments> moments(m_count + 1);
  for (std::size_t i : val_ids) {
    const ImageTensor img = load(i);
    for (const RawPatch& p : score_high_raw(b, img, pool, train.ids[i])) moments[p.detector].merge_values(p.pixels.data);
    if (c.low_res_enabled) moments[m_count].merge_values(score_low_raw(b, img, train.ids[i]).data);
  }
  Moments pooled;
  for (int m = 0; m < m_count; ++m)
    if (moments[m].n > 0) pooled.merge(moments[m].n, moments[m].mean, moments[m].m2);
  b.normalization.mean.resize(m_count + 1);
  b.normalization.scale.resize(m_count + 1);
  for (int m = 0; m <= m_count; ++m) {
    // A detector that saw no validation patch (RA) inherits the pooled statistics.
    const Moments& src = moments[m].n > 0 ? moments[m] : pooled;
    b.normalization.mean[m] = src.mean;
    b.normalization.scale[m] = src.n > 0 ? src.scale() : 1.0;
  }

  // Pseudo-anomaly gate and render threshold. Precomputed features exist only
  // for the original images, so the gate cannot run on edited copies.
  double inside = 0.0, outside = 0.0;
  if (c.extractor.kind == ExtractorKind::filter_bank) {
    double sum_in = 0.0, sum_out = 0.0;
    std::size_t n_in = 0, n_out = 0;
    std::vector<float> pos, neg;
    const int cal_h = std::min(kCalibrationSize, b.image_h), cal_w = std::min(kCalibrationSize, b.image_w);
    for (std::size_t k = 0; k < val_ids.size(); ++k) {
      const std::size_t i = val_ids[k];
      const PseudoAnomaly pa = make_pseudo_anomaly(load(i), derive_seed(c.seeds.pseudo, i), c.patch_h, c.patch_w);
      const AnomalyResult r = infer(b, pa.image, pool, train.ids[i]);
      for (std::size_t p = 0; p < r.map.size(); ++p) {
        if (pa.mask.data[p] > 0.5f) {
          sum_in += r.map.data[p];
          ++n_in;
        } else {
          sum_out += r.map.data[p];
          ++n_out;
        }
      }
      const ScalarMap m = resize_bilinear(r.map, cal_h, cal_w);
      const ScalarMap g = resize_mask(pa.mask, cal_h, cal_w);
      for (std::size_t p = 0; p < m.size(); ++p) (g.data[p] > 0.5f ? pos : neg).push_back(m.data[p]);
    }
    inside = sum_in / static_cast<double>(n_in);
    outside = n_out ? sum_out / static_cast<double>(n_out) : 0.0;
    if (!(inside > outside))
      fail(ErrorKind::calibration, "sanity gate failed: mean normalized score inside pseudo-anomalies (" +
                                       std::to_string(inside) + ") does not exceed the mean outside (" +
                                       std::to_string(outside) + ")");
    if (!pos.empty() && !neg.empty()) b.render_threshold = rank_metrics(pos, neg).f1.threshold;
  }
  if (report) *report = {fit_ids, val_ids, inside, outside};
  return b;
}

}  // namespace hiad
