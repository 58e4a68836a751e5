#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "hiad/detectors.hpp"
#include "hiad/error.hpp"
#include "hiad/rng.hpp"
#include "oracles.hpp"

using namespace hiad;

namespace {

// Single-layer patch feature with cells given row-major, dim values each.
PatchFeature make_pf(int dim, int h, int w, const std::vector<float>& cells) {
  FeatureMap fm;
  fm.layers.emplace_back(dim, h, w, 8);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < dim; ++c) fm.layers[0].at(c, y, x) = cells[(y * w + x) * dim + c];
  return PatchFeature::from_map(fm);
}

double gaussian_sample(Rng& rng) {
  // Box-Muller on the portable uniform source.
  const double u1 = 1.0 - rng.uniform(), u2 = rng.uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.141592653589793 * u2);
}

}  // namespace

TEST(Gaussian, OneDimensionalHandCase) {
  CellSamples s(1, 1, 1);
  s.add(make_pf(1, 1, 1, {0.0f}));
  s.add(make_pf(1, 1, 1, {2.0f}));
  const GaussianDetector det = gaussian_fit(s, 0.01);
  EXPECT_DOUBLE_EQ(det.mean(0)[0], 1.0);
  EXPECT_NEAR(det.factor(0)[0] * det.factor(0)[0], 2.01, 1e-12);
  const std::vector<float> q{3.0f};
  EXPECT_NEAR(det.score_cell(0, q), std::sqrt(4.0 / 2.01), 1e-9);
  EXPECT_NEAR(det.score_cell(0, q), 1.4106912, 1e-7);
  const std::vector<float> mu{1.0f};
  EXPECT_EQ(det.score_cell(0, mu), 0.0);
}

TEST(Gaussian, IdenticalSamplesGiveRidgeCovariance) {
  CellSamples s(1, 1, 3);
  for (int i = 0; i < 4; ++i) s.add(make_pf(3, 1, 1, {0.5f, -1.0f, 2.0f}));
  const GaussianDetector det = gaussian_fit(s, 0.04);
  const auto f = det.factor(0);
  // Packed lower triangle of sqrt(0.04) * I.
  EXPECT_NEAR(f[0], 0.2, 1e-12);
  EXPECT_NEAR(f[1], 0.0, 1e-12);
  EXPECT_NEAR(f[2], 0.2, 1e-12);
  EXPECT_NEAR(f[5], 0.2, 1e-12);
}

TEST(Gaussian, MonteCarloRecoversParameters) {
  Rng rng(17);
  CellSamples s(1, 1, 2);
  for (int i = 0; i < 10000; ++i)
    s.add(make_pf(2, 1, 1, {static_cast<float>(3.0 + gaussian_sample(rng)), static_cast<float>(-1.0 + gaussian_sample(rng))}));
  const GaussianDetector det = gaussian_fit(s, 0.0);
  EXPECT_NEAR(det.mean(0)[0], 3.0, 0.05);
  EXPECT_NEAR(det.mean(0)[1], -1.0, 0.05);
  const auto f = det.factor(0);
  EXPECT_NEAR(f[0] * f[0], 1.0, 0.1);
  EXPECT_NEAR(f[1] * f[0], 0.0, 0.1);
  EXPECT_NEAR(f[1] * f[1] + f[2] * f[2], 1.0, 0.1);
}

TEST(Gaussian, MatchesDenseSolveOracle) {
  Rng rng(23);
  const int dim = 8, n = 30;
  std::vector<std::vector<double>> samples;
  CellSamples s(1, 1, dim);
  for (int i = 0; i < n; ++i) {
    std::vector<float> v(dim);
    std::vector<double> d(dim);
    for (int k = 0; k < dim; ++k) d[k] = v[k] = static_cast<float>(rng.uniform(-1, 1) + (k ? 0.5 * v[k - 1] : 0.0));
    samples.push_back(d);
    s.add(make_pf(dim, 1, 1, v));
  }
  const GaussianDetector det = gaussian_fit(s, 0.01);
  for (int q = 0; q < 200; ++q) {
    std::vector<float> f(dim);
    std::vector<double> fd(dim);
    for (int k = 0; k < dim; ++k) fd[k] = f[k] = static_cast<float>(rng.uniform(-2, 2));
    EXPECT_NEAR(det.score_cell(0, f), oracle::mahalanobis(samples, 0.01, fd), 1e-6);
  }
}

TEST(Gaussian, ScorePatchShapeAndErrors) {
  CellSamples s(2, 3, 2);
  Rng rng(2);
  for (int i = 0; i < 5; ++i) {
    std::vector<float> v(12);
    for (float& x : v) x = static_cast<float>(rng.uniform());
    s.add(make_pf(2, 2, 3, v));
  }
  const GaussianDetector det = gaussian_fit(s);
  const ScorePatch sp = gaussian_score(det, make_pf(2, 2, 3, std::vector<float>(12, 0.5f)));
  EXPECT_EQ(sp.cells.height, 2);
  EXPECT_EQ(sp.cells.width, 3);
  EXPECT_EQ(sp.pixels.height, 16);
  EXPECT_EQ(sp.pixels.width, 24);
  EXPECT_THROW(gaussian_score(det, make_pf(3, 2, 3, std::vector<float>(18))), Error);
  CellSamples one(1, 1, 1);
  one.add(make_pf(1, 1, 1, {1.0f}));
  try {
    gaussian_fit(one);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::fit);
  }
}

TEST(Gaussian, FromParametersRoundTrip) {
  CellSamples s(1, 2, 2);
  Rng rng(9);
  for (int i = 0; i < 6; ++i) {
    std::vector<float> v(4);
    for (float& x : v) x = static_cast<float>(rng.uniform());
    s.add(make_pf(2, 1, 2, v));
  }
  const GaussianDetector det = gaussian_fit(s);
  const GaussianDetector back =
      GaussianDetector::from_parameters(1, 2, 2, det.epsilon(), det.means(), det.factors());
  EXPECT_EQ(back, det);
}

TEST(Coreset, SizesAndHandTrace) {
  EXPECT_EQ(coreset_size(1000, 0.1), 100u);
  EXPECT_EQ(coreset_size(5, 1.0), 5u);
  EXPECT_EQ(coreset_size(7, 0.5), 4u);
  EXPECT_EQ(coreset_size(3, 0.001), 1u);
  EXPECT_THROW(coreset_size(3, 0.0), Error);
  const std::vector<float> pts{0.0f, 1.0f, 10.0f};
  EXPECT_EQ(greedy_k_center(pts, 1, 2, 0), (std::vector<std::size_t>{0, 2}));
  EXPECT_EQ(greedy_k_center(pts, 1, 3, 0), (std::vector<std::size_t>{0, 2, 1}));
}

TEST(Coreset, MatchesBruteForceGreedy) {
  Rng rng(31);
  const int dim = 5;
  std::vector<float> pts(300 * dim);
  for (float& v : pts) v = static_cast<float>(rng.uniform());
  WorkerPool three(3);
  EXPECT_EQ(greedy_k_center(pts, dim, 40, 7), oracle::k_center(pts, dim, 40, 7));
  EXPECT_EQ(greedy_k_center(pts, dim, 40, 7, three), oracle::k_center(pts, dim, 40, 7));
}

TEST(Coreset, DuplicatesAvoidedUntilForced) {
  Rng rng(3);
  std::vector<float> base(20 * 2);
  for (float& v : base) v = static_cast<float>(rng.uniform());
  std::vector<float> pts = base;
  pts.insert(pts.end(), base.begin(), base.end());  // every point twice
  const auto sel = greedy_k_center(pts, 2, 20, 0);
  std::set<std::pair<float, float>> seen;
  for (std::size_t i : sel) EXPECT_TRUE(seen.insert({pts[i * 2], pts[i * 2 + 1]}).second);
  const auto all = coreset_select(pts, 2, 1.0, 5);
  EXPECT_EQ(std::set<std::size_t>(all.begin(), all.end()).size(), 40u);
}

TEST(Bank, HandCaseAndZeroDistance) {
  const MemoryBankDetector det = MemoryBankDetector::from_bank({0, 0, 1, 0}, 2, 1.0, 0);
  const std::vector<float> q{0.5f, 1.0f};
  EXPECT_NEAR(det.nearest_distance(q), std::sqrt(1.25), 1e-9);
  const std::vector<float> on{1.0f, 0.0f};
  EXPECT_EQ(det.nearest_distance(on), 0.0);
}

TEST(Bank, FitSizes) {
  Rng rng(4);
  std::vector<float> five(5 * 3), thousand(1000 * 3);
  for (float& v : five) v = static_cast<float>(rng.uniform());
  for (float& v : thousand) v = static_cast<float>(rng.uniform());
  EXPECT_EQ(bank_fit(five, 3, 1.0, 1).size(), 5u);
  EXPECT_EQ(bank_fit(thousand, 3, 0.1, 1).size(), 100u);
  EXPECT_EQ(bank_fit(thousand, 3, 0.1, 1), bank_fit(thousand, 3, 0.1, 1));
}

TEST(Bank, MatchesExhaustiveScan) {
  Rng rng(5);
  const int dim = 24;
  std::vector<float> bank(777 * dim);
  for (float& v : bank) v = static_cast<float>(rng.uniform());
  const MemoryBankDetector det = MemoryBankDetector::from_bank(bank, dim, 1.0, 0);
  for (int q = 0; q < 300; ++q) {
    std::vector<float> f(dim);
    // Some queries sit almost on a bank entry to exercise the exact re-check.
    const std::size_t near = rng.below(777);
    for (int k = 0; k < dim; ++k)
      f[k] = q % 3 == 0 ? bank[near * dim + k] + static_cast<float>(rng.uniform(-1e-4, 1e-4))
                        : static_cast<float>(rng.uniform());
    EXPECT_EQ(det.nearest_distance(f), oracle::nearest(bank, dim, f.data()));
  }
}

TEST(Bank, ScorePatchAndDimMismatch) {
  const MemoryBankDetector det = MemoryBankDetector::from_bank({0, 0, 1, 0}, 2, 1.0, 0);
  const ScorePatch sp = bank_score(det, make_pf(2, 1, 2, {0, 0, 0.5f, 1}));
  EXPECT_EQ(sp.cells.data[0], 0.0f);
  EXPECT_NEAR(sp.cells.data[1], std::sqrt(1.25), 1e-6);
  EXPECT_THROW(bank_score(det, make_pf(3, 1, 1, {0, 0, 0})), Error);
  const Detector d = det;
  EXPECT_EQ(kind_of(d), DetectorKind::bank);
}
