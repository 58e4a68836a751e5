#include <gtest/gtest.h>

#include "hiad/error.hpp"
#include "hiad/rng.hpp"
#include "hiad/tiling.hpp"
#include "oracles.hpp"

using namespace hiad;

namespace {

ScalarMap ramp(int h, int w) {
  ScalarMap m(h, w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) m.at(y, x) = static_cast<float>(y * w + x);
  return m;
}

}  // namespace

TEST(Grid, Counts) {
  EXPECT_EQ(compute_grid(2048, 2048, 512, 512, 512, 512).rows, 4);
  EXPECT_EQ(compute_grid(2048, 2048, 512, 512, 512, 512).cols, 4);
  EXPECT_EQ(compute_grid(512, 512, 512, 512, 512, 512).count(), 1);
  const PatchGrid g = compute_grid(1024, 1024, 512, 512, 256, 256);
  EXPECT_EQ(g.rows, 3);
  EXPECT_EQ(g.cols, 3);
  const PatchGrid r = compute_grid(512, 1024, 256, 256, 256, 256);
  EXPECT_EQ(r.rows, 2);
  EXPECT_EQ(r.cols, 4);
}

TEST(Grid, InexactTilingNamesTheAxis) {
  try {
    compute_grid(1000, 1024, 256, 256, 256, 256);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::geometry);
    EXPECT_NE(std::string(e.what()).find("height"), std::string::npos) << e.what();
  }
  EXPECT_THROW(compute_grid(1024, 1000, 256, 256, 256, 256), Error);
  EXPECT_THROW(compute_grid(256, 256, 512, 512, 512, 512), Error);
  EXPECT_THROW(compute_grid(512, 512, 256, 256, 0, 256), Error);
}

TEST(Divide, QuadrantsAndSinglePatch) {
  const ScalarMap img = ramp(4, 4);
  const auto parts = divide(img, compute_grid(4, 4, 2, 2, 2, 2));
  ASSERT_EQ(parts.size(), 4u);
  EXPECT_EQ(parts[3].data, (std::vector<float>{10, 11, 14, 15}));
  const auto whole = divide(img, compute_grid(4, 4, 4, 4, 4, 4));
  EXPECT_EQ(whole[0], img);
  EXPECT_THROW(divide(img, compute_grid(8, 8, 4, 4, 4, 4)), Error);
}

TEST(Divide, OverlappingCrop) {
  const ScalarMap img = ramp(4, 4);
  const PatchGrid g = compute_grid(4, 4, 2, 2, 1, 1);
  const auto parts = divide(img, g);
  ASSERT_EQ(parts.size(), 9u);
  EXPECT_EQ(parts[g.index({1, 1})], crop(img, 1, 1, 2, 2));
  EXPECT_EQ(parts[g.index({1, 1})].data, (std::vector<float>{5, 6, 9, 10}));
}

TEST(Aggregate, RowOverlapAverages) {
  const PatchGrid g = compute_grid(1, 3, 1, 2, 1, 1);
  ScalarMap a(1, 2), b(1, 2);
  a.data = {1, 2};
  b.data = {3, 4};
  const ScalarMap out = aggregate(std::vector<ScalarMap>{a, b}, g);
  EXPECT_EQ(out.data, (std::vector<float>{1, 2.5f, 4}));
}

TEST(Aggregate, InverseOfDivideIsBitExact) {
  Rng rng(5);
  ScalarMap img(96, 64);
  for (float& v : img.data) v = static_cast<float>(rng.uniform(-10, 10));
  for (int p : {8, 16, 32}) {
    const PatchGrid g = compute_grid(96, 64, p, p, p, p);
    EXPECT_EQ(aggregate(divide(img, g), g), img);
  }
}

TEST(Aggregate, MatchesAccumulateOracle) {
  Rng rng(6);
  ScalarMap img(64, 64);
  for (float& v : img.data) v = static_cast<float>(rng.uniform());
  const PatchGrid g = compute_grid(64, 64, 32, 32, 16, 16);
  auto parts = divide(img, g);
  for (auto& p : parts)
    for (float& v : p.data) v += static_cast<float>(rng.uniform());  // make overlaps disagree
  const ScalarMap got = aggregate(parts, g);
  const ScalarMap want = oracle::accumulate_patches(parts, 64, 64, 16, 16, g.cols);
  for (std::size_t i = 0; i < got.size(); ++i) EXPECT_NEAR(got.data[i], want.data[i], 1e-6);
}

TEST(Aggregate, WrongPatchCountOrSize) {
  const PatchGrid g = compute_grid(4, 4, 2, 2, 2, 2);
  EXPECT_THROW(aggregate(std::vector<ScalarMap>(3, ScalarMap(2, 2)), g), Error);
  EXPECT_THROW(aggregate(std::vector<ScalarMap>(4, ScalarMap(3, 2)), g), Error);
}

TEST(Aggregate, MultiChannelImages) {
  Rng rng(8);
  ImageTensor img(3, 32, 48);
  for (float& v : img.data) v = static_cast<float>(rng.uniform());
  const PatchGrid g = compute_grid(32, 48, 16, 16, 16, 16);
  EXPECT_EQ(aggregate(divide(img, g), g), img);
}

TEST(Coverage, CountsAndScaledGrid) {
  const PatchGrid g = compute_grid(4, 4, 2, 2, 1, 1);
  const auto c = coverage_counts(g);
  EXPECT_EQ(c[0], 1);
  EXPECT_EQ(c[5], 4);
  EXPECT_EQ(c[1], 2);
  const PatchGrid big = compute_grid(1024, 1024, 512, 512, 256, 256);
  const PatchGrid s = big.scaled(8);
  EXPECT_EQ(s.image_h, 128);
  EXPECT_EQ(s.patch_h, 64);
  EXPECT_EQ(s.stride_h, 32);
  EXPECT_EQ(s.rows, 3);
  EXPECT_THROW(big.scaled(3), Error);
}
