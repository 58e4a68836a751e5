#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "hiad/assignment.hpp"
#include "hiad/detectors.hpp"
#include "hiad/features.hpp"
#include "hiad/fusion.hpp"
#include "hiad/imagery.hpp"
#include "hiad/parallel.hpp"
#include "hiad/tiling.hpp"

namespace hiad {

struct DetectorConfig {
  DetectorKind kind = DetectorKind::gaussian;
  double epsilon = 0.01;        // gaussian: covariance ridge
  double coreset_ratio = 0.1;   // bank: fraction of cells kept
  bool operator==(const DetectorConfig&) const = default;
};

/// Seeds for every stochastic step. Zero means "derive from the master seed".
struct SeedSet {
  std::uint64_t split = 0;
  std::uint64_t pseudo = 0;
  std::uint64_t cluster = 0;
  std::uint64_t coreset = 0;
  bool operator==(const SeedSet&) const = default;
};

struct PipelineConfig {
  int patch_h = 512, patch_w = 512;
  int stride_h = 0, stride_w = 0;  // 0: equal to the patch size
  /// Empty weights: pick rates from the image size (halve down to 1024 px).
  FusionSpec fusion{{}};
  Strategy strategy = Strategy::a2o;
  int detectors = 0;  // 0: 1 for A2O, I*J for O2O, 4 up to 2K and 8 above for NA/SCA/RA
  DetectorConfig detector;
  ExtractorSpec extractor;
  bool low_res_enabled = true;
  int low_res_h = 512, low_res_w = 512;
  double validation_fraction = 0.2;
  std::uint64_t seed = 0;
  SeedSet seeds;
  bool operator==(const PipelineConfig&) const = default;
};

/// Replaces every "auto" field with its concrete value for the given image size
/// and checks the geometry of both branches at every pyramid level.
PipelineConfig resolve(const PipelineConfig& config, int image_h, int image_w);

/// Per-detector z-score parameters. Index M (the last entry) is the low-res detector.
struct NormalizationStats {
  std::vector<double> mean;
  std::vector<double> scale;
  bool operator==(const NormalizationStats&) const = default;
};

inline constexpr double kMinScale = 1e-12;

/// (s - mean_d) / scale_d per pixel.
ScalarMap normalize(const ScalarMap& map, const NormalizationStats& stats, int detector);

struct ModelBundle {
  static constexpr int kFormatVersion = 1;

  PipelineConfig config;  // resolved
  int image_h = 0, image_w = 0, image_channels = 0;
  PatchGrid grid;
  Assignment assignment;
  std::vector<Detector> detectors;
  std::optional<Detector> low_detector;
  int low_h = 0, low_w = 0;
  NormalizationStats normalization;
  /// F1-optimal threshold on pseudo-anomalous validation maps (absent for precomputed features).
  std::optional<double> render_threshold;
  std::vector<std::uint64_t> group_sizes;  // training patches routed to each detector

  int pool_size() const { return static_cast<int>(detectors.size()); }
  bool operator==(const ModelBundle&) const = default;
};

struct AnomalyResult {
  ScalarMap map;   // S = max(S_H, S_L)
  double score = 0.0;
  ScalarMap high;  // S_H (kept on request)
  ScalarMap low;   // S_L upsampled (kept on request; empty when the branch is off)
};

/// Training images addressed by index; loaded lazily so large sets need not fit in memory.
struct ImageSet {
  std::vector<std::string> ids;
  std::function<ImageTensor(std::size_t)> load;
  std::size_t size() const { return ids.size(); }
};

ImageSet image_set_from_files(const std::vector<std::filesystem::path>& paths);

/// Seeded shuffle, then the first round(fraction * N) ids become the validation set.
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_validation(std::size_t count, double fraction,
                                                                               std::uint64_t seed);

struct Rect {
  int top = 0, left = 0, height = 0, width = 0;
  bool operator==(const Rect&) const = default;
};

struct PseudoAnomaly {
  ImageTensor image;
  ScalarMap mask;
  std::vector<Rect> rects;
};

/// One to three rectangles with sides uniform in [5%, 15%] of the patch size,
/// placed uniformly inside the image and filled with a random color.
PseudoAnomaly make_pseudo_anomaly(const ImageTensor& img, std::uint64_t seed, int patch_h = 0, int patch_w = 0);

struct FitReport {
  std::vector<std::size_t> fit_ids;
  std::vector<std::size_t> val_ids;
  double gate_inside = 0.0;
  double gate_outside = 0.0;
};

ModelBundle fit(const ImageSet& train, const PipelineConfig& config, WorkerPool& pool = serial_pool(),
                FitReport* report = nullptr);

struct InferOptions {
  bool low_res = true;        // false: S = S_H (branch ablation)
  bool keep_branches = false;
};

AnomalyResult infer(const ModelBundle& bundle, const ImageTensor& img, WorkerPool& pool = serial_pool(),
                    const std::string& image_id = "", InferOptions options = {});

/// Element-wise maximum of two equally sized maps.
ScalarMap fuse_branches(const ScalarMap& high, const ScalarMap& low);

/// Bundle directory: manifest.json plus one little-endian raw array per tensor.
void save_bundle(const ModelBundle& bundle, const std::filesystem::path& dir);
ModelBundle load_bundle(const std::filesystem::path& dir);

std::string config_to_json(const PipelineConfig& config);
PipelineConfig config_from_json(const std::string& text);

}  // namespace hiad
