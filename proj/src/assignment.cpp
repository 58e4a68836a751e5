#include "hiad/assignment.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

#include "hiad/error.hpp"
#include "hiad/rng.hpp"

namespace hiad {

namespace {

double sq_distance(const double* a, const double* b, int dim) {
  double s = 0.0;
  for (int k = 0; k < dim; ++k) {
    const double d = a[k] - b[k];
    s += d * d;
  }
  return s;
}

// Returns inertia; fills labels and per-point distance to the assigned centroid.
double assign_points(std::span<const double> points, int dim, const std::vector<double>& centroids,
                     std::vector<int>& labels, std::vector<double>& dist) {
  const std::size_t n = points.size() / dim;
  double inertia = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double* p = points.data() + i * dim;
    labels[i] = nearest_centroid(centroids, dim, p);
    dist[i] = sq_distance(p, centroids.data() + static_cast<std::size_t>(labels[i]) * dim, dim);
    inertia += dist[i];
  }
  return inertia;
}

std::vector<double> kmeans_pp(std::span<const double> points, int dim, int clusters, Rng& rng) {
  const std::size_t n = points.size() / dim;
  std::vector<double> centroids;
  centroids.reserve(static_cast<std::size_t>(clusters) * dim);
  std::vector<bool> chosen(n, false);
  auto take = [&](std::size_t i) {
    chosen[i] = true;
    centroids.insert(centroids.end(), points.begin() + static_cast<std::ptrdiff_t>(i * dim),
                     points.begin() + static_cast<std::ptrdiff_t>((i + 1) * dim));
  };
  take(static_cast<std::size_t>(rng.below(n)));
  std::vector<double> d2(n, std::numeric_limits<double>::infinity());
  for (int m = 1; m < clusters; ++m) {
    const double* last = centroids.data() + static_cast<std::size_t>(m - 1) * dim;
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      d2[i] = std::min(d2[i], sq_distance(points.data() + i * dim, last, dim));
      total += d2[i];
    }
    std::size_t pick = n;
    if (total > 0.0) {
      const double target = rng.uniform() * total;
      double run = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        if (d2[i] <= 0.0) continue;
        run += d2[i];
        pick = i;
        if (run > target) break;
      }
    } else {
      for (std::size_t i = 0; i < n; ++i)
        if (!chosen[i]) {
          pick = i;
          break;
        }
    }
    take(pick);
  }
  return centroids;
}

std::vector<double> flat_features(const std::vector<std::vector<PatchFeature>>& per_image, std::size_t& dim_out,
                                  std::size_t positions) {
  require(!per_image.empty(), ErrorKind::fit, "assignment: no training features");
  const std::size_t dim = per_image.front().front().values.size();
  std::vector<double> out;
  out.reserve(per_image.size() * positions * dim);
  for (const auto& image : per_image) {
    require(image.size() == positions, ErrorKind::contract, "assignment: feature set does not cover the grid");
    for (const PatchFeature& pf : image) {
      require(pf.values.size() == dim, ErrorKind::contract, "assignment: patch features differ in length");
      out.insert(out.end(), pf.values.begin(), pf.values.end());
    }
  }
  dim_out = dim;
  return out;
}

int split_sizes(int total, int parts, int index) { return total / parts + (index < total % parts ? 1 : 0); }

}  // namespace

KMeansModel kmeans(std::span<const double> points, int dim, int clusters, std::uint64_t seed, int max_iters,
                   double tol) {
  require(dim > 0 && points.size() % dim == 0, ErrorKind::contract, "kmeans: points must be an n x dim matrix");
  const std::size_t n = points.size() / dim;
  require(clusters >= 1, ErrorKind::config, "kmeans: cluster count must be at least 1");
  require(static_cast<std::size_t>(clusters) <= n, ErrorKind::config,
          "kmeans: " + std::to_string(clusters) + " clusters requested for " + std::to_string(n) + " points");
  Rng rng(seed);
  KMeansModel model;
  model.clusters = clusters;
  model.dim = dim;
  model.seed = seed;
  model.centroids = kmeans_pp(points, dim, clusters, rng);
  model.labels.assign(n, 0);
  std::vector<double> dist(n);
  std::vector<double> sums(static_cast<std::size_t>(clusters) * dim);
  std::vector<std::size_t> counts(clusters);

  for (int it = 0; it < max_iters; ++it) {
    model.inertia_history.push_back(assign_points(points, dim, model.centroids, model.labels, dist));
    ++model.iterations;
    std::fill(sums.begin(), sums.end(), 0.0);
    std::fill(counts.begin(), counts.end(), 0);
    for (std::size_t i = 0; i < n; ++i) {
      const int m = model.labels[i];
      ++counts[m];
      for (int k = 0; k < dim; ++k) sums[static_cast<std::size_t>(m) * dim + k] += points[i * dim + k];
    }
    std::vector<double> next = model.centroids;
    for (int m = 0; m < clusters; ++m)
      if (counts[m] > 0)
        for (int k = 0; k < dim; ++k)
          next[static_cast<std::size_t>(m) * dim + k] = sums[static_cast<std::size_t>(m) * dim + k] / counts[m];
    // Recompute distances against the updated centroids before repairing empties.
    for (std::size_t i = 0; i < n; ++i)
      dist[i] = sq_distance(points.data() + i * dim, next.data() + static_cast<std::size_t>(model.labels[i]) * dim, dim);
    for (int m = 0; m < clusters; ++m) {
      if (counts[m] > 0) continue;
      std::size_t far = 0;
      for (std::size_t i = 1; i < n; ++i)
        if (dist[i] > dist[far]) far = i;
      if (dist[far] <= 0.0) continue;
      std::copy_n(points.begin() + static_cast<std::ptrdiff_t>(far * dim), dim,
                  next.begin() + static_cast<std::ptrdiff_t>(m) * dim);
      dist[far] = 0.0;
    }
    double shift = 0.0;
    for (int m = 0; m < clusters; ++m)
      shift = std::max(shift, std::sqrt(sq_distance(next.data() + static_cast<std::size_t>(m) * dim,
                                                    model.centroids.data() + static_cast<std::size_t>(m) * dim, dim)));
    model.centroids = std::move(next);
    if (shift < tol) break;
  }
  model.inertia = assign_points(points, dim, model.centroids, model.labels, dist);
  model.inertia_history.push_back(model.inertia);
  return model;
}

std::string to_string(Strategy s) {
  switch (s) {
    case Strategy::a2o: return "A2O";
    case Strategy::o2o: return "O2O";
    case Strategy::na: return "NA";
    case Strategy::sca: return "SCA";
    case Strategy::ra: return "RA";
  }
  return "?";
}

Strategy parse_strategy(const std::string& name) {
  std::string upper = name;
  for (char& c : upper) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  if (upper == "A2O") return Strategy::a2o;
  if (upper == "O2O") return Strategy::o2o;
  if (upper == "NA") return Strategy::na;
  if (upper == "SCA") return Strategy::sca;
  if (upper == "RA") return Strategy::ra;
  fail(ErrorKind::config, "unknown assignment strategy '" + name + "' (expected A2O, O2O, NA, SCA or RA)");
}

Assignment assign_a2o(const PatchGrid& grid) {
  Assignment a;
  a.strategy = Strategy::a2o;
  a.detectors = 1;
  a.rows = grid.rows;
  a.cols = grid.cols;
  a.table.assign(grid.count(), 0);
  return a;
}

Assignment assign_o2o(const PatchGrid& grid) {
  Assignment a;
  a.strategy = Strategy::o2o;
  a.detectors = grid.count();
  a.rows = grid.rows;
  a.cols = grid.cols;
  a.table.resize(grid.count());
  for (int i = 0; i < grid.count(); ++i) a.table[i] = static_cast<std::uint32_t>(i);
  return a;
}

Assignment assign_na(const PatchGrid& grid, int detectors) {
  const int rows = grid.rows, cols = grid.cols;
  require(detectors >= 1 && detectors <= rows * cols, ErrorKind::config,
          "NA: cannot split " + std::to_string(rows) + "x" + std::to_string(cols) + " positions into " +
              std::to_string(detectors) + " neighborhoods");
  // Block rows near sqrt(M * I / J); bump until every band fits its block columns.
  int bands = static_cast<int>(std::lround(std::sqrt(static_cast<double>(detectors) * rows / cols)));
  bands = std::clamp(bands, 1, std::min(rows, detectors));
  while ((detectors + bands - 1) / bands > cols) ++bands;
  Assignment a;
  a.strategy = Strategy::na;
  a.detectors = detectors;
  a.rows = rows;
  a.cols = cols;
  a.table.resize(grid.count());
  int row0 = 0, label0 = 0;
  for (int b = 0; b < bands; ++b) {
    const int band_rows = split_sizes(rows, bands, b);
    const int blocks = split_sizes(detectors, bands, b);
    int col0 = 0;
    for (int k = 0; k < blocks; ++k) {
      const int block_cols = split_sizes(cols, blocks, k);
      for (int i = row0; i < row0 + band_rows; ++i)
        for (int j = col0; j < col0 + block_cols; ++j) a.table[i * cols + j] = static_cast<std::uint32_t>(label0 + k);
      col0 += block_cols;
    }
    row0 += band_rows;
    label0 += blocks;
  }
  return a;
}

Assignment assign_sca(const PatchGrid& grid, const std::vector<std::vector<PatchFeature>>& per_image, int detectors,
                      std::uint64_t seed) {
  const int positions = grid.count();
  require(detectors >= 1 && detectors <= positions, ErrorKind::config,
          "SCA: " + std::to_string(detectors) + " detectors for " + std::to_string(positions) + " positions");
  std::size_t dim = 0;
  const std::vector<double> flat = flat_features(per_image, dim, positions);
  std::vector<double> means(static_cast<std::size_t>(positions) * dim, 0.0);
  for (std::size_t n = 0; n < per_image.size(); ++n)
    for (int p = 0; p < positions; ++p)
      for (std::size_t k = 0; k < dim; ++k)
        means[p * dim + k] += flat[(n * positions + p) * dim + k];
  for (double& v : means) v /= static_cast<double>(per_image.size());

  const KMeansModel km = kmeans(means, static_cast<int>(dim), detectors, seed);
  std::map<int, std::uint32_t> renumber;
  for (int label : km.labels) renumber.emplace(label, 0);
  std::uint32_t next = 0;
  for (auto& [label, id] : renumber) id = next++;

  Assignment a;
  a.strategy = Strategy::sca;
  a.detectors = static_cast<int>(renumber.size());
  a.rows = grid.rows;
  a.cols = grid.cols;
  a.table.resize(positions);
  for (int p = 0; p < positions; ++p) a.table[p] = renumber.at(km.labels[p]);
  return a;
}

Assignment assign_ra_fit(const PatchGrid& grid, const std::vector<std::vector<PatchFeature>>& per_image, int detectors,
                         std::uint64_t seed) {
  std::size_t dim = 0;
  const std::vector<double> flat = flat_features(per_image, dim, grid.count());
  const KMeansModel km = kmeans(flat, static_cast<int>(dim), detectors, seed);
  for (int a = 0; a < detectors; ++a)
    for (int b = a + 1; b < detectors; ++b)
      require(sq_distance(km.centroid(a).data(), km.centroid(b).data(), static_cast<int>(dim)) > 0.0, ErrorKind::fit,
              "RA: centroids " + std::to_string(a) + " and " + std::to_string(b) +
                  " coincide; there are fewer distinct patch features than detectors");
  Assignment out;
  out.strategy = Strategy::ra;
  out.detectors = detectors;
  out.rows = grid.rows;
  out.cols = grid.cols;
  out.dim = static_cast<int>(dim);
  out.centroids = km.centroids;
  return out;
}

int assign_ra_route(const Assignment& a, std::span<const float> feature) {
  require(a.strategy == Strategy::ra && !a.centroids.empty(), ErrorKind::contract, "RA routing on a non-RA assignment");
  require(static_cast<int>(feature.size()) == a.dim, ErrorKind::contract,
          "RA routing: feature length " + std::to_string(feature.size()) + " does not match centroid length " +
              std::to_string(a.dim));
  return nearest_centroid(a.centroids, a.dim, feature.data());
}

int pool_route(const Assignment& a, PatchPos pos, const PatchFeature& feature) {
  if (a.strategy == Strategy::ra) return assign_ra_route(a, feature.values);
  require(pos.row >= 0 && pos.row < a.rows && pos.col >= 0 && pos.col < a.cols, ErrorKind::contract,
          "routing: position (" + std::to_string(pos.row) + "," + std::to_string(pos.col) + ") is outside the grid");
  return static_cast<int>(a.table[static_cast<std::size_t>(pos.row) * a.cols + pos.col]);
}

}  // namespace hiad
