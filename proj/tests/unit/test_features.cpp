#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "hiad/error.hpp"
#include "hiad/features.hpp"
#include "hiad/rng.hpp"

using namespace hiad;
namespace fs = std::filesystem;

namespace {

ImageTensor step_image(int n, int edge) {
  ImageTensor img(3, n, n, 0.0f);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < n; ++y)
      for (int x = edge; x < n; ++x) img.at(c, y, x) = 1.0f;
  return img;
}

FeatureMap random_features(std::uint64_t seed) {
  Rng rng(seed);
  FeatureMap fm;
  fm.layers.emplace_back(5, 8, 8, 8);
  fm.layers.emplace_back(3, 4, 4, 16);
  for (auto& l : fm.layers)
    for (float& v : l.data) v = static_cast<float>(rng.uniform(-2, 2));
  return fm;
}

fs::path temp_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("hiad_unit_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST(FilterBank, LayerGeometry) {
  const FeatureMap fm = extract(ExtractorSpec{}, ImageTensor(3, 64, 32, 0.5f));
  ASSERT_EQ(fm.layers.size(), 2u);
  EXPECT_EQ(fm.layers[0].channels, kFilterBankChannels);
  EXPECT_EQ(fm.layers[0].height, 8);
  EXPECT_EQ(fm.layers[0].width, 4);
  EXPECT_EQ(fm.layers[1].height, 4);
  EXPECT_EQ(fm.layers[1].stride, 16);
  EXPECT_NO_THROW(validate_feature_map(fm, 64, 32));
  EXPECT_THROW(validate_feature_map(fm, 64, 64), Error);
}

TEST(FilterBank, ConstantPatch) {
  const FeatureMap fm = extract(ExtractorSpec{}, ImageTensor(3, 32, 32, 0.3f));
  for (const auto& l : fm.layers)
    for (int c = 0; c < l.channels; ++c)
      for (int y = 0; y < l.height; ++y)
        for (int x = 0; x < l.width; ++x) {
          if (c < 3)
            EXPECT_NEAR(l.at(c, y, x), 0.3f, 1e-6);
          else if (c >= 6)
            EXPECT_EQ(l.at(c, y, x), 0.0f) << "channel " << c;
        }
}

TEST(FilterBank, VerticalStepEdge) {
  // Edge between x=11 and x=12: the horizontal derivative is 0.5 at both pixels.
  const FeatureMap fm = extract(ExtractorSpec{}, step_image(32, 12));
  const FeatureLayer& l = fm.layers[0];
  for (int y = 0; y < l.height; ++y) {
    EXPECT_NEAR(l.at(6, y, 1), 2 * 8 * 0.5 / 64, 1e-7);  // 0 degrees
    EXPECT_EQ(l.at(8, y, 1), 0.0f);                       // 90 degrees
    EXPECT_NEAR(l.at(10, y, 1), 2 * 8 * 0.25 / 64, 1e-7);
    EXPECT_EQ(l.at(6, y, 0), 0.0f);
    EXPECT_EQ(l.at(6, y, 3), 0.0f);
  }
}

TEST(FilterBank, DeterministicAndGrayReplication) {
  Rng rng(4);
  ImageTensor gray(1, 32, 32);
  for (float& v : gray.data) v = static_cast<float>(rng.uniform());
  EXPECT_EQ(extract(ExtractorSpec{}, gray), extract(ExtractorSpec{}, gray));
  ImageTensor rgb(3, 32, 32);
  for (int c = 0; c < 3; ++c) std::copy(gray.data.begin(), gray.data.end(), rgb.plane(c).begin());
  const FeatureMap a = extract(ExtractorSpec{}, gray), b = extract(ExtractorSpec{}, rgb);
  for (std::size_t l = 0; l < a.layers.size(); ++l)
    for (std::size_t i = 0; i < a.layers[l].data.size(); ++i) EXPECT_NEAR(a.layers[l].data[i], b.layers[l].data[i], 1e-6);
}

TEST(FilterBank, RejectsBadGeometryAndSpecs) {
  EXPECT_THROW(extract(ExtractorSpec{}, ImageTensor(3, 40, 32)), Error);
  ExtractorSpec bad;
  bad.strides = {8, 12};
  EXPECT_THROW(validate(bad), Error);
  ExtractorSpec wrong_channels;
  wrong_channels.channels = {12, 7};
  EXPECT_THROW(validate(wrong_channels), Error);
  ExtractorSpec version;
  version.version = "fb-v9";
  EXPECT_THROW(validate(version), Error);
}

TEST(FeatureFile, RoundTripIsBitIdentical) {
  const fs::path dir = temp_dir("feat_rt");
  const FeatureMap fm = random_features(1);
  write_features(dir / "a.feat", "test/good/001", fm);
  const auto [id, back] = read_features(dir / "a.feat");
  EXPECT_EQ(id, "test/good/001");
  EXPECT_EQ(back, fm);
}

TEST(FeatureFile, HeaderLayout) {
  const fs::path dir = temp_dir("feat_layout");
  FeatureMap fm;
  fm.layers.emplace_back(2, 1, 1, 4);
  fm.layers[0].data = {1.5f, -2.0f};
  write_features(dir / "h.feat", "ab", fm);
  std::ifstream in(dir / "h.feat", std::ios::binary);
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  // magic 8 + version 2 + layers 2 + 4 u32 + id length 4 + id 2 + 2 floats
  ASSERT_EQ(bytes.size(), 8u + 2 + 2 + 16 + 4 + 2 + 8);
  EXPECT_EQ(bytes.substr(0, 8), "HIADFEAT");
  EXPECT_EQ(static_cast<unsigned char>(bytes[8]), 1);
  EXPECT_EQ(static_cast<unsigned char>(bytes[10]), 1);
  EXPECT_EQ(static_cast<unsigned char>(bytes[12]), 2);   // C
  EXPECT_EQ(static_cast<unsigned char>(bytes[24]), 4);   // s
  EXPECT_EQ(static_cast<unsigned char>(bytes[28]), 2);   // id length
  EXPECT_EQ(bytes.substr(32, 2), "ab");
}

TEST(FeatureFile, TruncationAndBadMagicAreFormatErrors) {
  const fs::path dir = temp_dir("feat_bad");
  write_features(dir / "a.feat", "x", random_features(2));
  std::ifstream in(dir / "a.feat", std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  for (std::size_t cut : {std::size_t{3}, std::size_t{20}, bytes.size() - 1}) {
    std::ofstream(dir / "t.feat", std::ios::binary) << bytes.substr(0, cut);
    try {
      read_features(dir / "t.feat");
      FAIL() << "cut at " << cut;
    } catch (const Error& e) {
      EXPECT_EQ(e.kind(), ErrorKind::format);
      EXPECT_NE(std::string(e.what()).find("offset"), std::string::npos);
    }
  }
  std::string magic = bytes;
  magic[0] = 'X';
  std::ofstream(dir / "m.feat", std::ios::binary) << magic;
  EXPECT_THROW(read_features(dir / "m.feat"), Error);
  std::ofstream(dir / "e.feat", std::ios::binary) << bytes << "extra";
  EXPECT_THROW(read_features(dir / "e.feat"), Error);
}

TEST(FeatureFile, WideDescriptorGeometryAccepted) {
  FeatureMap fm;
  fm.layers.emplace_back(256, 64, 64, 8);
  EXPECT_NO_THROW(validate_feature_map(fm, 512, 512));
}

TEST(FeatureFile, PrecomputedExtractorReadsByContext) {
  const fs::path dir = temp_dir("feat_ctx");
  ExtractorSpec spec;
  spec.kind = ExtractorKind::precomputed;
  spec.channels = {5, 3};
  spec.version = "external";
  spec.features_dir = dir;
  const PatchContext ctx{"img7", 1, {0, 1}, false};
  EXPECT_EQ(feature_file_name(ctx), fs::path("img7") / "rate1_r0_c1.feat");
  EXPECT_EQ(feature_file_name(PatchContext{"img7", 0, {}, true}), fs::path("img7") / "low.feat");
  fs::create_directories(dir / "img7");
  const FeatureMap fm = random_features(3);
  write_features(dir / feature_file_name(ctx), "img7", fm);
  const FeatureExtractor ex(spec);
  EXPECT_EQ(ex(ImageTensor(3, 64, 64), ctx), fm);
  EXPECT_THROW(ex(ImageTensor(3, 128, 128), ctx), Error);  // geometry mismatch
  write_features(dir / "img7" / "rate0_r0_c0.feat", "other", fm);
  EXPECT_THROW(ex(ImageTensor(3, 64, 64), PatchContext{"img7", 0, {0, 0}, false}), Error);
}
