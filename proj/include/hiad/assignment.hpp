#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "hiad/fusion.hpp"
#include "hiad/tiling.hpp"

namespace hiad {

struct KMeansModel {
  int clusters = 0;
  int dim = 0;
  std::vector<double> centroids;  // clusters x dim
  std::vector<int> labels;        // per training point, nearest centroid (ties -> lowest index)
  double inertia = 0.0;
  int iterations = 0;
  std::uint64_t seed = 0;
  std::vector<double> inertia_history;  // one entry per assignment step

  std::span<const double> centroid(int m) const {
    return {centroids.data() + static_cast<std::size_t>(m) * dim, static_cast<std::size_t>(dim)};
  }
};

/// k-means++ seeding followed by Lloyd iterations until the largest centroid
/// shift drops below `tol` or `max_iters` is reached. An empty cluster is
/// moved onto the point farthest from its centroid.
KMeansModel kmeans(std::span<const double> points, int dim, int clusters, std::uint64_t seed, int max_iters = 100,
                   double tol = 1e-6);

/// argmin_m ||p - c_m||^2, ties to the lowest index.
template <class T>
int nearest_centroid(std::span<const double> centroids, int dim, const T* point) {
  const int m_count = static_cast<int>(centroids.size() / dim);
  int best = 0;
  double best_d = 0.0;
  for (int m = 0; m < m_count; ++m) {
    const double* c = centroids.data() + static_cast<std::size_t>(m) * dim;
    double d = 0.0;
    for (int k = 0; k < dim; ++k) {
      const double diff = static_cast<double>(point[k]) - c[k];
      d += diff * diff;
    }
    if (m == 0 || d < best_d) {
      best = m;
      best_d = d;
    }
  }
  return best;
}

enum class Strategy { a2o, o2o, na, sca, ra };

std::string to_string(Strategy s);
Strategy parse_strategy(const std::string& name);

/// Routing function from (position, feature) to a detector index.
struct Assignment {
  Strategy strategy = Strategy::a2o;
  int detectors = 1;
  int rows = 0, cols = 0;
  std::vector<std::uint32_t> table;  // rows x cols, row-major (all strategies but RA)
  int dim = 0;
  std::vector<double> centroids;     // detectors x dim (RA only)

  bool operator==(const Assignment&) const = default;
};

Assignment assign_a2o(const PatchGrid& grid);
Assignment assign_o2o(const PatchGrid& grid);

/// M contiguous near-square rectangular blocks numbered row-major.
Assignment assign_na(const PatchGrid& grid, int detectors);

/// Clusters the per-position mean features; table = cluster label. Empty
/// clusters are dropped and the remaining labels renumbered in order, so the
/// pool may end up with fewer than M detectors.
Assignment assign_sca(const PatchGrid& grid, const std::vector<std::vector<PatchFeature>>& per_image, int detectors,
                      std::uint64_t seed);

/// Clusters every training patch feature; routing picks the nearest centroid.
Assignment assign_ra_fit(const PatchGrid& grid, const std::vector<std::vector<PatchFeature>>& per_image, int detectors,
                         std::uint64_t seed);
int assign_ra_route(const Assignment& a, std::span<const float> feature);

int pool_route(const Assignment& a, PatchPos pos, const PatchFeature& feature);

}  // namespace hiad
