#pragma once

// Straightforward reference implementations used to check the optimized code.
// They favour obviousness over speed and share no code with the library.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <set>
#include <utility>
#include <vector>

#include "hiad/imagery.hpp"

namespace oracle {

// Pair counting: each (positive, negative) pair scores 1 when ordered, 0.5 when tied.
inline double auroc(const std::vector<double>& s, const std::vector<std::uint8_t>& y) {
  double wins = 0.0, pairs = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i)
    for (std::size_t j = 0; j < s.size(); ++j)
      if (y[i] == 1 && y[j] == 0) {
        pairs += 1.0;
        wins += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
      }
  return wins / pairs;
}

inline std::vector<double> thresholds_desc(const std::vector<double>& s) {
  std::set<double> u(s.begin(), s.end());
  return {u.rbegin(), u.rend()};
}

struct Counts {
  double tp = 0, fp = 0, fn = 0;
};

inline Counts counts_at(const std::vector<double>& s, const std::vector<std::uint8_t>& y, double t) {
  Counts c;
  for (std::size_t i = 0; i < s.size(); ++i) {
    const bool pred = s[i] >= t;
    if (pred && y[i]) c.tp += 1;
    if (pred && !y[i]) c.fp += 1;
    if (!pred && y[i]) c.fn += 1;
  }
  return c;
}

// Step-wise AP: sum over every distinct threshold of recall gain times precision.
inline double average_precision(const std::vector<double>& s, const std::vector<std::uint8_t>& y) {
  double positives = 0;
  for (auto v : y) positives += v;
  double ap = 0.0, prev_recall = 0.0;
  for (double t : thresholds_desc(s)) {
    const Counts c = counts_at(s, y, t);
    const double recall = c.tp / positives;
    if (c.tp + c.fp > 0) ap += (recall - prev_recall) * (c.tp / (c.tp + c.fp));
    prev_recall = recall;
  }
  return ap;
}

// Highest threshold reaching the best F1.
inline std::pair<double, double> f1_max(const std::vector<double>& s, const std::vector<std::uint8_t>& y) {
  double best = -1.0, best_t = 0.0;
  for (double t : thresholds_desc(s)) {
    const Counts c = counts_at(s, y, t);
    const double f1 = 2 * c.tp / (2 * c.tp + c.fp + c.fn);
    if (f1 > best) {
      best = f1;
      best_t = t;
    }
  }
  return {best, best_t};
}

// Iterative flood fill, labels numbered in raster order of the first pixel.
inline std::vector<int> flood_labels(const hiad::ScalarMap& m, int connectivity, int* count = nullptr) {
  const int h = m.height, w = m.width;
  std::vector<int> lab(m.size(), 0);
  int next = 0;
  for (int y0 = 0; y0 < h; ++y0)
    for (int x0 = 0; x0 < w; ++x0) {
      if (!(m.at(y0, x0) > 0.5f) || lab[y0 * w + x0]) continue;
      ++next;
      std::vector<std::pair<int, int>> stack{{y0, x0}};
      lab[y0 * w + x0] = next;
      while (!stack.empty()) {
        auto [y, x] = stack.back();
        stack.pop_back();
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx) {
            if ((dy == 0 && dx == 0) || (connectivity == 4 && dy != 0 && dx != 0)) continue;
            const int yy = y + dy, xx = x + dx;
            if (yy < 0 || xx < 0 || yy >= h || xx >= w) continue;
            if (m.at(yy, xx) > 0.5f && !lab[yy * w + xx]) {
              lab[yy * w + xx] = next;
              stack.push_back({yy, xx});
            }
          }
      }
    }
  if (count) *count = next;
  return lab;
}

// PRO from every distinct threshold, recomputing counts from scratch each time.
inline double pro(const hiad::ScalarMap& map, const hiad::ScalarMap& mask, double limit) {
  int regions = 0;
  const std::vector<int> lab = flood_labels(mask, 8, &regions);
  std::vector<double> values(map.data.begin(), map.data.end());
  std::vector<double> fpr{0.0}, overlap{0.0};
  double negatives = 0;
  for (int l : lab) negatives += l == 0;
  for (double t : thresholds_desc(values)) {
    double fp = 0;
    std::vector<double> hit(regions + 1, 0.0), size(regions + 1, 0.0);
    for (std::size_t i = 0; i < map.size(); ++i) {
      size[lab[i]] += 1;
      if (map.data[i] >= t) {
        if (lab[i] == 0)
          fp += 1;
        else
          hit[lab[i]] += 1;
      }
    }
    double o = 0.0;
    for (int r = 1; r <= regions; ++r) o += hit[r] / size[r];
    fpr.push_back(fp / negatives);
    overlap.push_back(o / regions);
  }
  double area = 0.0;
  for (std::size_t k = 1; k < fpr.size(); ++k) {
    if (fpr[k] >= limit) {
      const double span = fpr[k] - fpr[k - 1];
      const double at = span > 0 ? overlap[k - 1] + (overlap[k] - overlap[k - 1]) * (limit - fpr[k - 1]) / span
                                 : overlap[k];
      area += (limit - fpr[k - 1]) * (overlap[k - 1] + at) / 2;
      break;
    }
    area += (fpr[k] - fpr[k - 1]) * (overlap[k - 1] + overlap[k]) / 2;
  }
  return area / limit;
}

// Bilinear sample with half-pixel centres and clamped source coordinates.
inline double bilinear_at(const hiad::ScalarMap& m, int oy, int ox, int out_h, int out_w) {
  auto coord = [](int o, int in, int out) {
    const double c = (o + 0.5) * in / out - 0.5;
    return std::clamp(c, 0.0, static_cast<double>(in - 1));
  };
  const double sy = coord(oy, m.height, out_h), sx = coord(ox, m.width, out_w);
  const int y0 = static_cast<int>(std::floor(sy)), x0 = static_cast<int>(std::floor(sx));
  const int y1 = std::min(y0 + 1, m.height - 1), x1 = std::min(x0 + 1, m.width - 1);
  const double fy = sy - y0, fx = sx - x0;
  return (1 - fy) * ((1 - fx) * m.at(y0, x0) + fx * m.at(y0, x1)) + fy * ((1 - fx) * m.at(y1, x0) + fx * m.at(y1, x1));
}

// Averages every patch into an accumulator and divides by the per-pixel count.
inline hiad::ScalarMap accumulate_patches(const std::vector<hiad::ScalarMap>& patches, int h, int w, int stride_h,
                                          int stride_w, int cols) {
  std::vector<double> sum(static_cast<std::size_t>(h) * w, 0.0), cnt(sum.size(), 0.0);
  for (std::size_t k = 0; k < patches.size(); ++k) {
    const int top = static_cast<int>(k / cols) * stride_h, left = static_cast<int>(k % cols) * stride_w;
    const auto& p = patches[k];
    for (int y = 0; y < p.height; ++y)
      for (int x = 0; x < p.width; ++x) {
        sum[(top + y) * w + left + x] += p.at(y, x);
        cnt[(top + y) * w + left + x] += 1;
      }
  }
  hiad::ScalarMap out(h, w);
  for (std::size_t i = 0; i < sum.size(); ++i) out.data[i] = static_cast<float>(sum[i] / cnt[i]);
  return out;
}

// Mahalanobis distance with the covariance inverted by a dense LU solve.
inline double mahalanobis(const std::vector<std::vector<double>>& samples, double eps, const std::vector<double>& q) {
  const int n = static_cast<int>(samples.size()), d = static_cast<int>(q.size());
  Eigen::VectorXd mu = Eigen::VectorXd::Zero(d);
  for (const auto& s : samples) mu += Eigen::Map<const Eigen::VectorXd>(s.data(), d);
  mu /= n;
  Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(d, d);
  for (const auto& s : samples) {
    const Eigen::VectorXd c = Eigen::Map<const Eigen::VectorXd>(s.data(), d) - mu;
    cov += c * c.transpose();
  }
  cov /= (n - 1);
  cov += eps * Eigen::MatrixXd::Identity(d, d);
  const Eigen::VectorXd diff = Eigen::Map<const Eigen::VectorXd>(q.data(), d) - mu;
  const Eigen::VectorXd sol = cov.fullPivLu().solve(diff);
  return std::sqrt(diff.dot(sol));
}

// Exhaustive nearest-neighbour distance in double precision.
inline double nearest(const std::vector<float>& bank, int dim, const float* q) {
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t r = 0; r < bank.size() / dim; ++r) {
    double d = 0.0;
    for (int k = 0; k < dim; ++k) {
      const double diff = static_cast<double>(q[k]) - bank[r * dim + k];
      d += diff * diff;
    }
    best = std::min(best, d);
  }
  return std::sqrt(best);
}

// Farthest-point traversal recomputing every distance each round.
inline std::vector<std::size_t> k_center(const std::vector<float>& pts, int dim, std::size_t count, std::size_t first) {
  const std::size_t n = pts.size() / dim;
  auto dist = [&](std::size_t a, std::size_t b) {
    double d = 0.0;
    for (int k = 0; k < dim; ++k) {
      const double diff = static_cast<double>(pts[a * dim + k]) - pts[b * dim + k];
      d += diff * diff;
    }
    return d;
  };
  std::vector<std::size_t> sel{first};
  while (sel.size() < count) {
    double best = -1.0;
    std::size_t arg = 0;
    for (std::size_t i = 0; i < n; ++i) {
      double m = std::numeric_limits<double>::infinity();
      for (std::size_t s : sel) m = std::min(m, dist(i, s));
      if (m > best) {
        best = m;
        arg = i;
      }
    }
    sel.push_back(arg);
  }
  return sel;
}

inline int argmin_centroid(const std::vector<double>& centroids, int dim, const float* q) {
  int best = -1;
  double best_d = 0.0;
  for (int m = 0; m < static_cast<int>(centroids.size()) / dim; ++m) {
    double d = 0.0;
    for (int k = 0; k < dim; ++k) d += (q[k] - centroids[m * dim + k]) * (q[k] - centroids[m * dim + k]);
    if (best < 0 || d < best_d) {
      best = m;
      best_d = d;
    }
  }
  return best;
}

}  // namespace oracle
