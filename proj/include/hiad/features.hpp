#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "hiad/imagery.hpp"
#include "hiad/tiling.hpp"

namespace hiad {

/// One feature layer: channels x height x width cells, each cell covering
/// stride x stride input pixels. Planar, channel-major.
struct FeatureLayer {
  int channels = 0;
  int height = 0;
  int width = 0;
  int stride = 1;
  std::vector<float> data;

  FeatureLayer() = default;
  FeatureLayer(int c, int h, int w, int s) : channels(c), height(h), width(w), stride(s), data(static_cast<std::size_t>(c) * h * w, 0.0f) {}

  std::size_t plane_size() const { return static_cast<std::size_t>(height) * width; }
  float& at(int c, int y, int x) { return data[c * plane_size() + static_cast<std::size_t>(y) * width + x]; }
  float at(int c, int y, int x) const { return data[c * plane_size() + static_cast<std::size_t>(y) * width + x]; }

  bool operator==(const FeatureLayer&) const = default;
};

struct FeatureMap {
  std::vector<FeatureLayer> layers;
  bool operator==(const FeatureMap&) const = default;
};

enum class ExtractorKind { filter_bank, precomputed };

/// Built-in filter bank channel layout, per layer.
inline constexpr int kFilterBankChannels = 12;
inline constexpr const char* kFilterBankVersion = "fb-v1";

struct ExtractorSpec {
  ExtractorKind kind = ExtractorKind::filter_bank;
  std::vector<int> strides{8, 16};
  std::vector<int> channels{kFilterBankChannels, kFilterBankChannels};
  std::string version = kFilterBankVersion;
  /// Root of precomputed feature files (precomputed kind only).
  std::filesystem::path features_dir;

  int max_stride() const { return strides.back(); }
  bool operator==(const ExtractorSpec&) const = default;
};

void validate(const ExtractorSpec& spec);

/// Checks h_l * s_l == input dims and finiteness for every layer.
void validate_feature_map(const FeatureMap& fm, int input_h, int input_w);

/// Deterministic filter bank ("fb-v1"). Layer l analyses the patch after
/// 2x2 mean pooling down by strides[l] / strides[0], computes 3x3 stencil
/// responses with edge clamping, and pools mean |response| over cells of
/// strides[0] pixels at that scale. Per layer channels:
///   0-2  local color means (3x3)
///   3-5  local color standard deviations (3x3)
///   6-9  oriented gradient energies at 0, 45, 90, 135 degrees (gray)
///   10   Laplacian energy
///   11   center-surround difference
/// Single-channel images replicate gray into the three color slots.
FeatureMap extract(const ExtractorSpec& spec, const ImageTensor& patch);

/// Where a patch comes from; the precomputed extractor uses it to locate files.
struct PatchContext {
  std::string image_id;
  int rate = 0;
  PatchPos pos{};
  bool low_res = false;
};

/// Relative file name of a precomputed feature file for the given context.
std::filesystem::path feature_file_name(const PatchContext& ctx);

/// Dispatches on ExtractorSpec::kind. The precomputed path reads
/// `<features_dir>/<feature_file_name(ctx)>` and checks its layers against the ExtractorSpec.
class FeatureExtractor {
 public:
  explicit FeatureExtractor(ExtractorSpec spec);
  const ExtractorSpec& spec() const { return spec_; }
  FeatureMap operator()(const ImageTensor& patch, const PatchContext& ctx) const;

 private:
  ExtractorSpec spec_;
};

/// Binary feature file (little-endian): "HIADFEAT", u16 version = 1, u16 layer
/// count, per layer u32 C, h, w, s, u32 id length + UTF-8 id, then per layer
/// C*h*w f32 values (channel-major, row-major).
void write_features(const std::filesystem::path& path, const std::string& image_id, const FeatureMap& fm);
std::pair<std::string, FeatureMap> read_features(const std::filesystem::path& path);

}  // namespace hiad
