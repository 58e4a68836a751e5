#pragma once

#include <string>
#include <vector>

#include "hiad/features.hpp"
#include "hiad/parallel.hpp"
#include "hiad/tiling.hpp"

namespace hiad {

/// Downsampling rates {0..K} and one weight per rate.
struct FusionSpec {
  std::vector<double> weights{1.0};

  int levels() const { return static_cast<int>(weights.size()) - 1; }
  bool operator==(const FusionSpec&) const = default;
};

/// Weights in [0, 1], summing to 1 within 1e-9.
void validate(const FusionSpec& spec);

FusionSpec equal_weights(int levels);

/// Halve until the shorter side reaches 1024 pixels; equal weights.
FusionSpec default_fusion(int image_h, int image_w);

/// sum_k w_k * Up(x_k, 2^k), bilinear upsampling to the rate-0 cell grid.
FeatureLayer fuse_layer(const std::vector<FeatureLayer>& per_rate, const FusionSpec& spec);

/// Extracts features for every patch of every pyramid level, aggregates them
/// per layer into full-image maps and fuses the rates.
FeatureMap build_fused_features(const ImageTensor& img, const FeatureExtractor& extractor, const PatchGrid& grid,
                                const FusionSpec& spec, WorkerPool& pool, const std::string& image_id = "");

/// Per-layer cell blocks of one patch, concatenated layer after layer
/// (channel-major within a layer).
struct PatchFeature {
  struct Block {
    int channels = 0, height = 0, width = 0, stride = 0;
    std::size_t offset = 0;
    bool operator==(const Block&) const = default;
  };

  PatchPos pos{};
  std::vector<Block> layers;
  std::vector<float> values;

  static PatchFeature from_map(const FeatureMap& fm, PatchPos pos = {});

  int cells_h() const { return layers.front().height; }
  int cells_w() const { return layers.front().width; }
  int cell_count() const { return cells_h() * cells_w(); }
  int pixel_h() const { return layers.front().height * layers.front().stride; }
  int pixel_w() const { return layers.front().width * layers.front().stride; }

  /// Length of a per-cell descriptor: sum of layer channel counts.
  int cell_dim() const;

  /// Descriptor of cell (y, x) on the finest layer's grid; coarser layers
  /// contribute the cell that contains it.
  void cell_vector(int y, int x, float* out) const;

  /// All cell descriptors, row-major cells x cell_dim.
  std::vector<float> cell_matrix() const;

  bool operator==(const PatchFeature&) const = default;
};

/// Cuts a full-image feature map into per-patch features following `grid`
/// (pixel units). Patch size and stride must be divisible by every layer stride.
std::vector<PatchFeature> patchify_features(const FeatureMap& fused, const PatchGrid& grid);

}  // namespace hiad
