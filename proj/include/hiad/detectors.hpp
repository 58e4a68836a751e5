#pragma once

#include <cstdint>
#include <span>
#include <variant>
#include <vector>

#include "hiad/fusion.hpp"
#include "hiad/imagery.hpp"
#include "hiad/parallel.hpp"

namespace hiad {

/// Scores of one patch: per feature cell and bilinearly upsampled to pixels.
struct ScorePatch {
  PatchPos pos{};
  ScalarMap cells;
  ScalarMap pixels;
};

ScorePatch make_score_patch(PatchPos pos, ScalarMap cells, int pixel_h, int pixel_w);

/// Training descriptors grouped by cell position within a patch.
struct CellSamples {
  int cells_h = 0;
  int cells_w = 0;
  int dim = 0;
  std::vector<std::vector<float>> per_cell;  // per_cell[p] holds n x dim values

  CellSamples() = default;
  CellSamples(int h, int w, int d) : cells_h(h), cells_w(w), dim(d), per_cell(static_cast<std::size_t>(h) * w) {}

  void add(const PatchFeature& pf);
  std::size_t samples(int cell) const { return per_cell[cell].size() / dim; }
};

/// Per-cell multivariate Gaussian; scores are Mahalanobis distances.
class GaussianDetector {
 public:
  GaussianDetector() = default;

  /// Mean and unbiased covariance (divisor N-1) per cell, plus epsilon * I.
  static GaussianDetector fit(const CellSamples& samples, double epsilon);

  /// Rebuilds a detector from stored parameters (packed lower Cholesky factors).
  static GaussianDetector from_parameters(int cells_h, int cells_w, int dim, double epsilon, std::vector<double> means,
                                          std::vector<double> factors);

  /// sqrt((f - mu)^T Sigma^-1 (f - mu)) for one cell, via a triangular solve.
  double score_cell(int cell, std::span<const float> feature) const;
  ScalarMap score_cells(const PatchFeature& pf) const;
  ScorePatch score(const PatchFeature& pf) const;

  int cells_h() const { return cells_h_; }
  int cells_w() const { return cells_w_; }
  int dim() const { return dim_; }
  double epsilon() const { return epsilon_; }
  std::span<const double> mean(int cell) const;
  /// Packed row-major lower triangle of the Cholesky factor of Sigma + epsilon * I.
  std::span<const double> factor(int cell) const;
  const std::vector<double>& means() const { return means_; }
  const std::vector<double>& factors() const { return factors_; }
  std::size_t packed_size() const { return static_cast<std::size_t>(dim_) * (dim_ + 1) / 2; }

  bool operator==(const GaussianDetector&) const = default;

 private:
  int cells_h_ = 0, cells_w_ = 0, dim_ = 0;
  double epsilon_ = 0.01;
  std::vector<double> means_;
  std::vector<double> factors_;
};

GaussianDetector gaussian_fit(const CellSamples& samples, double epsilon = 0.01);
ScorePatch gaussian_score(const GaussianDetector& det, const PatchFeature& pf);

/// Greedy farthest-point (k-center) selection of `count` rows starting at
/// `first`. Deterministic; ties go to the lowest index.
std::vector<std::size_t> greedy_k_center(std::span<const float> candidates, int dim, std::size_t count,
                                         std::size_t first, WorkerPool& pool = serial_pool());

/// ceil(ratio * N) rows chosen by greedy_k_center from a seeded random start.
std::vector<std::size_t> coreset_select(std::span<const float> candidates, int dim, double ratio, std::uint64_t seed,
                                        WorkerPool& pool = serial_pool());

std::size_t coreset_size(std::size_t candidates, double ratio);

/// Memory bank of normal cell descriptors; scores are Euclidean distances to
/// the nearest bank entry (exact search).
class MemoryBankDetector {
 public:
  MemoryBankDetector() = default;

  static MemoryBankDetector fit(std::span<const float> samples, int dim, double ratio, std::uint64_t seed,
                                WorkerPool& pool = serial_pool());
  static MemoryBankDetector from_bank(std::vector<float> bank, int dim, double ratio, std::uint64_t seed);

  double nearest_distance(std::span<const float> query) const;
  ScalarMap score_cells(const PatchFeature& pf) const;
  ScorePatch score(const PatchFeature& pf) const;

  int dim() const { return dim_; }
  std::size_t size() const { return dim_ ? bank_.size() / dim_ : 0; }
  double ratio() const { return ratio_; }
  std::uint64_t seed() const { return seed_; }
  const std::vector<float>& bank() const { return bank_; }

  bool operator==(const MemoryBankDetector& o) const {
    return dim_ == o.dim_ && ratio_ == o.ratio_ && seed_ == o.seed_ && bank_ == o.bank_;
  }

 private:
  void build_index();
  double nearest_distance(const float* query, std::vector<float>& scratch) const;

  int dim_ = 0;
  double ratio_ = 1.0;
  std::uint64_t seed_ = 0;
  std::vector<float> bank_;     // size x dim, selection order
  std::vector<float> blocked_;  // [block][dim][lane] copy for scanning
};

MemoryBankDetector bank_fit(std::span<const float> samples, int dim, double ratio, std::uint64_t seed,
                            WorkerPool& pool = serial_pool());
ScorePatch bank_score(const MemoryBankDetector& det, const PatchFeature& pf);

enum class DetectorKind { gaussian, bank };

using Detector = std::variant<GaussianDetector, MemoryBankDetector>;

DetectorKind kind_of(const Detector& d);
ScorePatch score(const Detector& d, const PatchFeature& pf);

}  // namespace hiad
