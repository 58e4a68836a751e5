#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "hiad/imagery.hpp"
#include "hiad/parallel.hpp"

namespace hiad {

// Ranking metrics. Labels are 0/1; ties are always handled as groups, so the
// results never depend on sort stability. Single-class inputs raise
// ErrorKind::undefined_metric.

double auroc(std::span<const double> scores, std::span<const std::uint8_t> labels);
double auroc(std::span<const float> scores, std::span<const std::uint8_t> labels);

double average_precision(std::span<const double> scores, std::span<const std::uint8_t> labels);
double average_precision(std::span<const float> scores, std::span<const std::uint8_t> labels);

struct F1Max {
  double f1 = 0.0;
  double threshold = 0.0;  // predict positive when score >= threshold
};
F1Max f1_max(std::span<const double> scores, std::span<const std::uint8_t> labels);
F1Max f1_max(std::span<const float> scores, std::span<const std::uint8_t> labels);

/// All three ranking metrics from one pass over pre-split scores.
struct RankMetrics {
  double auroc = 0.0;
  double average_precision = 0.0;
  F1Max f1;
};
/// `positives` and `negatives` are reordered in place.
RankMetrics rank_metrics(std::vector<float>& positives, std::vector<float>& negatives);

struct Components {
  int count = 0;
  int height = 0, width = 0;
  std::vector<int> labels;  // 0 = background, 1..count numbered by first pixel in raster order
};

/// Two-pass union-find labelling of pixels > 0.5. connectivity is 4 or 8.
Components connected_components(const ScalarMap& mask, int connectivity = 8);

/// Per-region overlap averaged over ground-truth components, integrated over
/// false-positive rates [0, fpr_limit] with the trapezoid rule and divided by
/// fpr_limit. Thresholds are the distinct map values, or `thresholds`
/// quantiles of them when there are more.
double pro(const ScalarMap& map, const ScalarMap& mask, double fpr_limit = 0.3, int thresholds = 512);

struct PixelMetrics {
  double p_auc = 0.0;
  double p_ap = 0.0;
  double p_f1 = 0.0;
  double pro = 0.0;
  std::size_t images = 0;
  std::size_t images_with_defects = 0;
  std::size_t positive_pixels = 0;
  std::size_t pixels = 0;
};

/// Accumulates maps and masks resized to eval_size x eval_size. Pixel metrics
/// pool every pixel; PRO is averaged over images whose mask has foreground.
class PixelEvaluator {
 public:
  explicit PixelEvaluator(int eval_size = 512, double fpr_limit = 0.3, int thresholds = 512);
  void add(const ScalarMap& map, const ScalarMap& mask);
  PixelMetrics finish() const;
  int eval_size() const { return eval_size_; }

 private:
  int eval_size_;
  double fpr_limit_;
  int thresholds_;
  std::vector<float> positives_, negatives_;
  std::vector<double> pro_values_;
  std::size_t images_ = 0;
};

PixelMetrics evaluate_pixels(const std::vector<ScalarMap>& maps, const std::vector<ScalarMap>& masks,
                             int eval_size = 512);

double evaluate_images(std::span<const double> image_scores, std::span<const std::uint8_t> image_labels);

/// Fraction of mask pixels that are foreground.
double relative_defect_area(const ScalarMap& mask);

struct EvalReport {
  double i_auc = 0.0;
  double p_auc = 0.0;
  double p_ap = 0.0;
  double p_f1 = 0.0;
  double pro = 0.0;
  int eval_size = 0;
  std::size_t images = 0;
  std::size_t anomalous_images = 0;
  std::size_t positive_pixels = 0;

  std::string to_json() const;
  std::string to_table() const;
};

}  // namespace hiad
