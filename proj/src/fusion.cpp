#include "hiad/fusion.hpp"

#include <cmath>

#include "hiad/error.hpp"

namespace hiad {

void validate(const FusionSpec& spec) {
  require(!spec.weights.empty(), ErrorKind::config, "fusion: at least one rate is required");
  double total = 0.0;
  for (double w : spec.weights) {
    require(w >= 0.0 && w <= 1.0 && std::isfinite(w), ErrorKind::config, "fusion: weights must lie in [0, 1]");
    total += w;
  }
  require(std::fabs(total - 1.0) <= 1e-9, ErrorKind::config,
          "fusion: weights sum to " + std::to_string(total) + ", expected 1");
}

FusionSpec equal_weights(int levels) {
  require(levels >= 0, ErrorKind::config, "fusion: negative level count");
  return FusionSpec{std::vector<double>(levels + 1, 1.0 / (levels + 1))};
}

FusionSpec default_fusion(int image_h, int image_w) {
  int levels = 0;
  int side = std::min(image_h, image_w);
  while (side > 1024 && side % 2 == 0) {
    side /= 2;
    ++levels;
  }
  return equal_weights(levels);
}

FeatureLayer fuse_layer(const std::vector<FeatureLayer>& per_rate, const FusionSpec& spec) {
  validate(spec);
  require(per_rate.size() == spec.weights.size(), ErrorKind::config,
          "fuse_layer: " + std::to_string(per_rate.size()) + " rates but " + std::to_string(spec.weights.size()) +
              " weights");
  const FeatureLayer& base = per_rate.front();
  for (std::size_t k = 1; k < per_rate.size(); ++k) {
    const FeatureLayer& x = per_rate[k];
    const int f = 1 << k;
    require(x.height * f == base.height && x.width * f == base.width && x.channels == base.channels,
            ErrorKind::geometry,
            "fuse_layer: rate " + std::to_string(k) + " map " + std::to_string(x.height) + "x" +
                std::to_string(x.width) + "x" + std::to_string(x.channels) + " is inconsistent with rate 0 map " +
                std::to_string(base.height) + "x" + std::to_string(base.width) + "x" + std::to_string(base.channels));
  }
  const std::size_t plane = base.plane_size();
  FeatureLayer out(base.channels, base.height, base.width, base.stride);
  std::vector<double> acc(plane);
  for (int c = 0; c < base.channels; ++c) {
    std::fill(acc.begin(), acc.end(), 0.0);
    for (std::size_t k = 0; k < per_rate.size(); ++k) {
      const FeatureLayer& x = per_rate[k];
      ScalarMap channel(x.height, x.width);
      std::copy_n(x.data.begin() + static_cast<std::ptrdiff_t>(c * x.plane_size()), x.plane_size(), channel.data.begin());
      const ScalarMap up = resize_bilinear(channel, base.height, base.width);
      const double w = spec.weights[k];
      for (std::size_t p = 0; p < plane; ++p) acc[p] += w * static_cast<double>(up.data[p]);
    }
    for (std::size_t p = 0; p < plane; ++p) out.data[c * plane + p] = static_cast<float>(acc[p]);
  }
  return out;
}

FeatureMap build_fused_features(const ImageTensor& img, const FeatureExtractor& extractor, const PatchGrid& grid,
                                const FusionSpec& spec, WorkerPool& pool, const std::string& image_id) {
  validate(spec);
  require(img.height == grid.image_h && img.width == grid.image_w, ErrorKind::geometry,
          "build_fused_features: image does not match grid");
  const int levels = spec.levels();
  const auto pyramid = build_pyramid(img, levels);
  const auto& strides = extractor.spec().strides;
  std::vector<std::vector<FeatureLayer>> per_layer(strides.size());  // [layer][rate]

  for (int k = 0; k <= levels; ++k) {
    const ImageTensor& level = pyramid[k];
    PatchGrid level_grid;
    try {
      level_grid = compute_grid(level.height, level.width, grid.patch_h, grid.patch_w, grid.stride_h, grid.stride_w);
    } catch (const Error& e) {
      fail(ErrorKind::geometry, "pyramid level " + std::to_string(k) + " (" + std::to_string(level.height) + "x" +
                                    std::to_string(level.width) + "): " + e.what());
    }
    std::vector<FeatureMap> patch_features(level_grid.count());
    pool.parallel_for(patch_features.size(), [&](std::size_t idx) {
      const PatchPos pos = level_grid.position(static_cast<int>(idx));
      const ImageTensor patch =
          crop(level, level_grid.top(pos.row), level_grid.left(pos.col), level_grid.patch_h, level_grid.patch_w);
      patch_features[idx] = extractor(patch, PatchContext{image_id, k, pos, false});
    });
    for (std::size_t l = 0; l < strides.size(); ++l) {
      std::vector<FeatureLayer> blocks;
      blocks.reserve(patch_features.size());
      for (auto& fm : patch_features) blocks.push_back(std::move(fm.layers[l]));
      per_layer[l].push_back(aggregate(blocks, level_grid.scaled(strides[l])));
    }
  }

  FeatureMap fused;
  for (auto& rates : per_layer) fused.layers.push_back(fuse_layer(rates, spec));
  return fused;
}

PatchFeature PatchFeature::from_map(const FeatureMap& fm, PatchPos pos) {
  PatchFeature pf;
  pf.pos = pos;
  std::size_t offset = 0;
  for (const FeatureLayer& l : fm.layers) {
    pf.layers.push_back({l.channels, l.height, l.width, l.stride, offset});
    offset += l.data.size();
  }
  pf.values.reserve(offset);
  for (const FeatureLayer& l : fm.layers) pf.values.insert(pf.values.end(), l.data.begin(), l.data.end());
  return pf;
}

int PatchFeature::cell_dim() const {
  int d = 0;
  for (const Block& b : layers) d += b.channels;
  return d;
}

void PatchFeature::cell_vector(int y, int x, float* out) const {
  const int base_stride = layers.front().stride;
  for (const Block& b : layers) {
    const int f = b.stride / base_stride;
    const int ly = y / f, lx = x / f;
    const std::size_t plane = static_cast<std::size_t>(b.height) * b.width;
    const float* src = values.data() + b.offset + static_cast<std::size_t>(ly) * b.width + lx;
    for (int c = 0; c < b.channels; ++c) *out++ = src[c * plane];
  }
}

std::vector<float> PatchFeature::cell_matrix() const {
  const int dim = cell_dim();
  std::vector<float> m(static_cast<std::size_t>(cell_count()) * dim);
  for (int y = 0; y < cells_h(); ++y)
    for (int x = 0; x < cells_w(); ++x)
      cell_vector(y, x, m.data() + static_cast<std::size_t>(y * cells_w() + x) * dim);
  return m;
}

std::vector<PatchFeature> patchify_features(const FeatureMap& fused, const PatchGrid& grid) {
  require(!fused.layers.empty(), ErrorKind::contract, "patchify_features: empty feature map");
  std::vector<PatchGrid> layer_grids;
  for (const FeatureLayer& l : fused.layers) {
    const PatchGrid g = grid.scaled(l.stride);
    require(g.image_h == l.height && g.image_w == l.width, ErrorKind::geometry,
            "patchify_features: layer at stride " + std::to_string(l.stride) + " has " + std::to_string(l.height) +
                "x" + std::to_string(l.width) + " cells, grid expects " + std::to_string(g.image_h) + "x" +
                std::to_string(g.image_w));
    layer_grids.push_back(g);
  }
  std::vector<PatchFeature> out;
  out.reserve(grid.count());
  for (int i = 0; i < grid.rows; ++i)
    for (int j = 0; j < grid.cols; ++j) {
      FeatureMap block;
      for (std::size_t l = 0; l < fused.layers.size(); ++l) {
        const PatchGrid& g = layer_grids[l];
        block.layers.push_back(crop(fused.layers[l], g.top(i), g.left(j), g.patch_h, g.patch_w));
      }
      out.push_back(PatchFeature::from_map(block, {i, j}));
    }
  return out;
}

}  // namespace hiad
