#include "hiad/detectors.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>

#include "hiad/error.hpp"
#include "hiad/rng.hpp"

namespace hiad {

namespace {

constexpr int kLanes = 8;

// Rows of a row-major matrix regrouped as [block][dim][lane], zero padded.
std::vector<float> to_blocked(std::span<const float> rows, int dim) {
  const std::size_t n = rows.size() / dim;
  const std::size_t blocks = (n + kLanes - 1) / kLanes;
  std::vector<float> out(blocks * dim * kLanes, 0.0f);
  for (std::size_t r = 0; r < n; ++r) {
    const std::size_t b = r / kLanes, lane = r % kLanes;
    for (int d = 0; d < dim; ++d) out[(b * dim + d) * kLanes + lane] = rows[r * dim + d];
  }
  return out;
}

// Squared float distances from `query` to the kLanes rows of one block.
inline void block_distances(const float* block, const float* query, int dim, float* out) {
  float acc[kLanes] = {};
  for (int d = 0; d < dim; ++d) {
    const float q = query[d];
    const float* col = block + d * kLanes;
    for (int l = 0; l < kLanes; ++l) {
      const float diff = col[l] - q;
      acc[l] += diff * diff;
    }
  }
  for (int l = 0; l < kLanes; ++l) out[l] = acc[l];
}

double exact_sq_distance(const float* a, const float* b, int dim) {
  double s = 0.0;
  for (int d = 0; d < dim; ++d) {
    const double diff = static_cast<double>(a[d]) - static_cast<double>(b[d]);
    s += diff * diff;
  }
  return s;
}

}  // namespace

ScorePatch make_score_patch(PatchPos pos, ScalarMap cells, int pixel_h, int pixel_w) {
  ScorePatch sp;
  sp.pos = pos;
  sp.pixels = resize_bilinear(cells, pixel_h, pixel_w);
  sp.cells = std::move(cells);
  return sp;
}

void CellSamples::add(const PatchFeature& pf) {
  require(pf.cells_h() == cells_h && pf.cells_w() == cells_w && pf.cell_dim() == dim, ErrorKind::contract,
          "CellSamples::add: patch feature shape does not match");
  std::vector<float> v(dim);
  for (int y = 0; y < cells_h; ++y)
    for (int x = 0; x < cells_w; ++x) {
      pf.cell_vector(y, x, v.data());
      auto& bucket = per_cell[static_cast<std::size_t>(y) * cells_w + x];
      bucket.insert(bucket.end(), v.begin(), v.end());
    }
}

// --- Gaussian ---------------------------------------------------------------

GaussianDetector GaussianDetector::fit(const CellSamples& samples, double epsilon) {
  require(samples.dim > 0 && samples.cells_h > 0 && samples.cells_w > 0, ErrorKind::fit,
          "gaussian_fit: empty sample layout");
  require(epsilon >= 0.0 && std::isfinite(epsilon), ErrorKind::config, "gaussian_fit: epsilon must be non-negative");
  GaussianDetector det;
  det.cells_h_ = samples.cells_h;
  det.cells_w_ = samples.cells_w;
  det.dim_ = samples.dim;
  det.epsilon_ = epsilon;
  const int dim = samples.dim;
  const std::size_t cells = samples.per_cell.size();
  det.means_.resize(cells * dim);
  det.factors_.resize(cells * det.packed_size());

  Eigen::MatrixXd cov(dim, dim);
  std::vector<double> centered(dim);
  for (std::size_t cell = 0; cell < cells; ++cell) {
    const auto& values = samples.per_cell[cell];
    require(values.size() % dim == 0, ErrorKind::contract, "gaussian_fit: ragged sample vectors");
    const std::size_t n = values.size() / dim;
    require(n >= 2, ErrorKind::fit,
            "gaussian_fit: cell " + std::to_string(cell) + " has " + std::to_string(n) + " samples, need at least 2");
    double* mu = det.means_.data() + cell * dim;
    std::fill(mu, mu + dim, 0.0);
    for (std::size_t s = 0; s < n; ++s)
      for (int d = 0; d < dim; ++d) mu[d] += values[s * dim + d];
    for (int d = 0; d < dim; ++d) mu[d] /= static_cast<double>(n);

    cov.setZero();
    for (std::size_t s = 0; s < n; ++s) {
      for (int d = 0; d < dim; ++d) centered[d] = values[s * dim + d] - mu[d];
      for (int r = 0; r < dim; ++r)
        for (int c = 0; c <= r; ++c) cov(r, c) += centered[r] * centered[c];
    }
    for (int r = 0; r < dim; ++r) {
      for (int c = 0; c <= r; ++c) {
        cov(r, c) /= static_cast<double>(n - 1);
        cov(c, r) = cov(r, c);
      }
      cov(r, r) += epsilon;
    }
    Eigen::LLT<Eigen::MatrixXd> llt(cov);
    if (llt.info() != Eigen::Success)
      fail(ErrorKind::numeric, "gaussian_fit: covariance of cell " + std::to_string(cell) +
                                   " is not positive definite after regularization");
    const Eigen::MatrixXd lower = llt.matrixL();
    double* packed = det.factors_.data() + cell * det.packed_size();
    for (int r = 0; r < dim; ++r)
      for (int c = 0; c <= r; ++c) *packed++ = lower(r, c);
  }
  return det;
}

GaussianDetector GaussianDetector::from_parameters(int cells_h, int cells_w, int dim, double epsilon,
                                                   std::vector<double> means, std::vector<double> factors) {
  GaussianDetector det;
  det.cells_h_ = cells_h;
  det.cells_w_ = cells_w;
  det.dim_ = dim;
  det.epsilon_ = epsilon;
  const std::size_t cells = static_cast<std::size_t>(cells_h) * cells_w;
  require(cells_h > 0 && cells_w > 0 && dim > 0, ErrorKind::format, "gaussian detector: bad dimensions");
  require(means.size() == cells * dim, ErrorKind::format, "gaussian detector: mean array has wrong length");
  require(factors.size() == cells * det.packed_size(), ErrorKind::format,
          "gaussian detector: factor array has wrong length");
  det.means_ = std::move(means);
  det.factors_ = std::move(factors);
  for (std::size_t cell = 0; cell < cells; ++cell) {
    const double* l = det.factors_.data() + cell * det.packed_size();
    for (int r = 0; r < dim; ++r)
      require(l[static_cast<std::size_t>(r) * (r + 1) / 2 + r] > 0.0, ErrorKind::format,
              "gaussian detector: factor of cell " + std::to_string(cell) + " has a non-positive diagonal");
  }
  return det;
}

std::span<const double> GaussianDetector::mean(int cell) const {
  return {means_.data() + static_cast<std::size_t>(cell) * dim_, static_cast<std::size_t>(dim_)};
}

std::span<const double> GaussianDetector::factor(int cell) const {
  return {factors_.data() + static_cast<std::size_t>(cell) * packed_size(), packed_size()};
}

double GaussianDetector::score_cell(int cell, std::span<const float> feature) const {
  require(static_cast<int>(feature.size()) == dim_, ErrorKind::contract,
          "gaussian_score: feature length " + std::to_string(feature.size()) + " does not match " +
              std::to_string(dim_));
  const double* mu = means_.data() + static_cast<std::size_t>(cell) * dim_;
  const double* l = factors_.data() + static_cast<std::size_t>(cell) * packed_size();
  double y[512];
  std::vector<double> heap;
  double* ys = y;
  if (dim_ > 512) {
    heap.resize(dim_);
    ys = heap.data();
  }
  double total = 0.0;
  for (int r = 0; r < dim_; ++r) {
    const double* row = l + static_cast<std::size_t>(r) * (r + 1) / 2;
    double v = static_cast<double>(feature[r]) - mu[r];
    for (int c = 0; c < r; ++c) v -= row[c] * ys[c];
    ys[r] = v / row[r];
    total += ys[r] * ys[r];
  }
  return std::sqrt(total);
}

ScalarMap GaussianDetector::score_cells(const PatchFeature& pf) const {
  require(pf.cells_h() == cells_h_ && pf.cells_w() == cells_w_ && pf.cell_dim() == dim_, ErrorKind::contract,
          "gaussian_score: patch feature shape does not match the fitted detector");
  ScalarMap out(cells_h_, cells_w_);
  std::vector<float> v(dim_);
  for (int y = 0; y < cells_h_; ++y)
    for (int x = 0; x < cells_w_; ++x) {
      pf.cell_vector(y, x, v.data());
      out.at(y, x) = static_cast<float>(score_cell(y * cells_w_ + x, v));
    }
  return out;
}

ScorePatch GaussianDetector::score(const PatchFeature& pf) const {
  return make_score_patch(pf.pos, score_cells(pf), pf.pixel_h(), pf.pixel_w());
}

GaussianDetector gaussian_fit(const CellSamples& samples, double epsilon) {
  return GaussianDetector::fit(samples, epsilon);
}

ScorePatch gaussian_score(const GaussianDetector& det, const PatchFeature& pf) { return det.score(pf); }

// --- coreset ----------------------------------------------------------------

std::size_t coreset_size(std::size_t candidates, double ratio) {
  require(ratio > 0.0 && ratio <= 1.0, ErrorKind::config, "coreset ratio must lie in (0, 1]");
  const double exact = ratio * static_cast<double>(candidates);
  auto size = static_cast<std::size_t>(std::ceil(exact - 1e-9 * exact));
  return std::clamp<std::size_t>(size, 1, candidates);
}

std::vector<std::size_t> greedy_k_center(std::span<const float> candidates, int dim, std::size_t count,
                                         std::size_t first, WorkerPool& pool) {
  require(dim > 0 && !candidates.empty() && candidates.size() % dim == 0, ErrorKind::contract,
          "coreset: candidates must be a non-empty n x dim matrix");
  const std::size_t n = candidates.size() / dim;
  require(count >= 1 && count <= n && first < n, ErrorKind::contract, "coreset: bad selection size or start");
  const std::vector<float> blocked = to_blocked(candidates, dim);
  const std::size_t blocks = (n + kLanes - 1) / kLanes;
  std::vector<float> min_dist(blocks * kLanes, std::numeric_limits<float>::infinity());
  for (std::size_t r = n; r < min_dist.size(); ++r) min_dist[r] = -1.0f;  // padding lanes never win

  std::vector<std::size_t> selected;
  selected.reserve(count);
  std::size_t current = first;
  const std::size_t chunks = std::max<std::size_t>(1, std::min<std::size_t>(blocks, pool.workers() * 4));
  const std::size_t per_chunk = (blocks + chunks - 1) / chunks;
  std::vector<std::pair<float, std::size_t>> best(chunks);
  std::vector<float> center(dim);

  while (true) {
    selected.push_back(current);
    if (selected.size() == count) break;
    std::copy_n(candidates.begin() + static_cast<std::ptrdiff_t>(current * dim), dim, center.begin());
    min_dist[current] = -1.0f;
    pool.parallel_for(chunks, [&](std::size_t c) {
      const std::size_t b0 = c * per_chunk, b1 = std::min(blocks, b0 + per_chunk);
      float local_best = -std::numeric_limits<float>::infinity();
      std::size_t local_index = 0;
      float d[kLanes];
      for (std::size_t b = b0; b < b1; ++b) {
        block_distances(blocked.data() + b * dim * kLanes, center.data(), dim, d);
        float* md = min_dist.data() + b * kLanes;
        for (int l = 0; l < kLanes; ++l) {
          if (md[l] >= 0.0f && d[l] < md[l]) md[l] = d[l];
          if (md[l] > local_best) {
            local_best = md[l];
            local_index = b * kLanes + l;
          }
        }
      }
      best[c] = {local_best, local_index};
    });
    float top = -std::numeric_limits<float>::infinity();
    std::size_t top_index = 0;
    for (std::size_t c = 0; c < chunks; ++c)
      if (best[c].first > top) {
        top = best[c].first;
        top_index = best[c].second;
      }
    current = top_index;
  }
  return selected;
}

std::vector<std::size_t> coreset_select(std::span<const float> candidates, int dim, double ratio, std::uint64_t seed,
                                        WorkerPool& pool) {
  require(dim > 0 && !candidates.empty() && candidates.size() % dim == 0, ErrorKind::contract,
          "coreset: candidates must be a non-empty n x dim matrix");
  const std::size_t n = candidates.size() / dim;
  const std::size_t count = coreset_size(n, ratio);
  Rng rng(seed);
  const std::size_t first = static_cast<std::size_t>(rng.below(n));
  return greedy_k_center(candidates, dim, count, first, pool);
}

// --- memory bank ------------------------------------------------------------

MemoryBankDetector MemoryBankDetector::fit(std::span<const float> samples, int dim, double ratio, std::uint64_t seed,
                                           WorkerPool& pool) {
  require(dim > 0 && !samples.empty() && samples.size() % dim == 0, ErrorKind::fit,
          "bank_fit: samples must be a non-empty n x dim matrix");
  const auto chosen = coreset_select(samples, dim, ratio, seed, pool);
  std::vector<float> bank;
  bank.reserve(chosen.size() * dim);
  for (std::size_t idx : chosen)
    bank.insert(bank.end(), samples.begin() + static_cast<std::ptrdiff_t>(idx * dim),
                samples.begin() + static_cast<std::ptrdiff_t>((idx + 1) * dim));
  return from_bank(std::move(bank), dim, ratio, seed);
}

MemoryBankDetector MemoryBankDetector::from_bank(std::vector<float> bank, int dim, double ratio, std::uint64_t seed) {
  require(dim > 0 && !bank.empty() && bank.size() % dim == 0, ErrorKind::format,
          "memory bank: bank must be a non-empty n x dim matrix");
  MemoryBankDetector det;
  det.dim_ = dim;
  det.ratio_ = ratio;
  det.seed_ = seed;
  det.bank_ = std::move(bank);
  det.build_index();
  return det;
}

void MemoryBankDetector::build_index() { blocked_ = to_blocked(bank_, dim_); }

double MemoryBankDetector::nearest_distance(const float* query, std::vector<float>& scratch) const {
  const std::size_t n = size();
  const std::size_t blocks = (n + kLanes - 1) / kLanes;
  scratch.resize(blocks * kLanes);
  float best = std::numeric_limits<float>::infinity();
  for (std::size_t b = 0; b < blocks; ++b) {
    float* d = scratch.data() + b * kLanes;
    block_distances(blocked_.data() + b * dim_ * kLanes, query, dim_, d);
    const int lanes = static_cast<int>(std::min<std::size_t>(kLanes, n - b * kLanes));
    for (int l = 0; l < lanes; ++l) best = std::min(best, d[l]);
  }
  // Float screening, then an exact double pass over every entry that could be the minimum.
  const double slack = 1e-5 + 4.0 * dim_ * 6e-8;
  const float limit = static_cast<float>(static_cast<double>(best) * (1.0 + slack) + 1e-30);
  double exact = std::numeric_limits<double>::infinity();
  for (std::size_t r = 0; r < n; ++r)
    if (scratch[r] <= limit) exact = std::min(exact, exact_sq_distance(query, bank_.data() + r * dim_, dim_));
  return std::sqrt(exact);
}

double MemoryBankDetector::nearest_distance(std::span<const float> query) const {
  require(static_cast<int>(query.size()) == dim_, ErrorKind::contract,
          "bank_score: query length " + std::to_string(query.size()) + " does not match " + std::to_string(dim_));
  std::vector<float> scratch;
  return nearest_distance(query.data(), scratch);
}

ScalarMap MemoryBankDetector::score_cells(const PatchFeature& pf) const {
  require(pf.cell_dim() == dim_, ErrorKind::contract, "bank_score: patch feature dimension does not match the bank");
  const std::vector<float> cells = pf.cell_matrix();
  ScalarMap out(pf.cells_h(), pf.cells_w());
  std::vector<float> scratch;
  for (std::size_t c = 0; c < out.data.size(); ++c)
    out.data[c] = static_cast<float>(nearest_distance(cells.data() + c * dim_, scratch));
  return out;
}

ScorePatch MemoryBankDetector::score(const PatchFeature& pf) const {
  return make_score_patch(pf.pos, score_cells(pf), pf.pixel_h(), pf.pixel_w());
}

MemoryBankDetector bank_fit(std::span<const float> samples, int dim, double ratio, std::uint64_t seed,
                            WorkerPool& pool) {
  return MemoryBankDetector::fit(samples, dim, ratio, seed, pool);
}

ScorePatch bank_score(const MemoryBankDetector& det, const PatchFeature& pf) { return det.score(pf); }

DetectorKind kind_of(const Detector& d) {
  return std::holds_alternative<GaussianDetector>(d) ? DetectorKind::gaussian : DetectorKind::bank;
}

ScorePatch score(const Detector& d, const PatchFeature& pf) {
  return std::visit([&](const auto& det) { return det.score(pf); }, d);
}

}  // namespace hiad
