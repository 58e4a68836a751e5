#pragma once

#include <algorithm>
#include <cstddef>
#include <string>
#include <vector>

#include "hiad/error.hpp"
#include "hiad/imagery.hpp"

namespace hiad {

struct PatchPos {
  int row = 0;
  int col = 0;
  bool operator==(const PatchPos&) const = default;
};

/// Exact tiling geometry: rows x cols patches of patch_h x patch_w placed every stride pixels.
struct PatchGrid {
  int image_h = 0, image_w = 0;
  int patch_h = 0, patch_w = 0;
  int stride_h = 0, stride_w = 0;
  int rows = 0, cols = 0;

  int count() const { return rows * cols; }
  int index(PatchPos p) const { return p.row * cols + p.col; }
  PatchPos position(int index) const { return {index / cols, index % cols}; }
  int top(int row) const { return row * stride_h; }
  int left(int col) const { return col * stride_w; }

  /// Same tiling expressed in units of `factor` pixels (feature cells). Every
  /// dimension must divide evenly.
  PatchGrid scaled(int factor) const;

  bool operator==(const PatchGrid&) const = default;
};

PatchGrid compute_grid(int image_h, int image_w, int patch_h, int patch_w, int stride_h, int stride_w);

/// Per-pixel count of covering patches.
std::vector<int> coverage_counts(const PatchGrid& grid);

namespace detail {

template <class Raster>
Raster make_like(const Raster& proto, int h, int w) {
  Raster out;
  if constexpr (requires { out.stride; }) out.stride = proto.stride;
  if constexpr (requires { out.channels = 1; }) out.channels = proto.channels;
  out.height = h;
  out.width = w;
  out.data.assign(static_cast<std::size_t>(proto.channels) * h * w, 0.0f);
  return out;
}

inline std::string dims(int h, int w) { return std::to_string(h) + "x" + std::to_string(w); }

}  // namespace detail

/// Copies the h x w window at (top, left), all channels.
template <class Raster>
Raster crop(const Raster& src, int top, int left, int h, int w) {
  require(top >= 0 && left >= 0 && top + h <= src.height && left + w <= src.width, ErrorKind::geometry,
          "crop: window " + detail::dims(h, w) + " at (" + std::to_string(top) + "," + std::to_string(left) +
              ") exceeds " + detail::dims(src.height, src.width));
  Raster out = detail::make_like(src, h, w);
  const std::size_t src_plane = static_cast<std::size_t>(src.height) * src.width;
  const std::size_t dst_plane = static_cast<std::size_t>(h) * w;
  for (int c = 0; c < src.channels; ++c)
    for (int y = 0; y < h; ++y) {
      const float* s = src.data.data() + c * src_plane + static_cast<std::size_t>(top + y) * src.width + left;
      float* d = out.data.data() + c * dst_plane + static_cast<std::size_t>(y) * w;
      std::copy(s, s + w, d);
    }
  return out;
}

/// Row-major I x J patches of `img`.
template <class Raster>
std::vector<Raster> divide(const Raster& img, const PatchGrid& grid) {
  require(img.height == grid.image_h && img.width == grid.image_w, ErrorKind::geometry,
          "divide: image " + detail::dims(img.height, img.width) + " does not match grid " +
              detail::dims(grid.image_h, grid.image_w));
  std::vector<Raster> patches;
  patches.reserve(grid.count());
  for (int i = 0; i < grid.rows; ++i)
    for (int j = 0; j < grid.cols; ++j) patches.push_back(crop(img, grid.top(i), grid.left(j), grid.patch_h, grid.patch_w));
  return patches;
}

/// Inverse of divide: overlapping pixels are averaged. Reduction runs in
/// row-major patch order, so the result is bit-deterministic.
template <class Raster>
Raster aggregate(const std::vector<Raster>& patches, const PatchGrid& grid) {
  require(static_cast<int>(patches.size()) == grid.count() && !patches.empty(), ErrorKind::geometry,
          "aggregate: expected " + std::to_string(grid.count()) + " patches, got " + std::to_string(patches.size()));
  const int channels = patches.front().channels;
  for (const Raster& p : patches)
    require(p.height == grid.patch_h && p.width == grid.patch_w && p.channels == channels, ErrorKind::geometry,
            "aggregate: patch " + detail::dims(p.height, p.width) + " does not match grid patch size " +
                detail::dims(grid.patch_h, grid.patch_w));
  Raster out = detail::make_like(patches.front(), grid.image_h, grid.image_w);
  const bool overlapping = grid.stride_h < grid.patch_h || grid.stride_w < grid.patch_w;
  const std::size_t dst_plane = static_cast<std::size_t>(grid.image_h) * grid.image_w;
  const std::size_t src_plane = static_cast<std::size_t>(grid.patch_h) * grid.patch_w;
  for (int i = 0; i < grid.rows; ++i)
    for (int j = 0; j < grid.cols; ++j) {
      const Raster& p = patches[grid.index({i, j})];
      for (int c = 0; c < channels; ++c)
        for (int y = 0; y < grid.patch_h; ++y) {
          const float* s = p.data.data() + c * src_plane + static_cast<std::size_t>(y) * grid.patch_w;
          float* d = out.data.data() + c * dst_plane + static_cast<std::size_t>(grid.top(i) + y) * grid.image_w +
                     grid.left(j);
          if (overlapping)
            for (int x = 0; x < grid.patch_w; ++x) d[x] += s[x];
          else
            std::copy(s, s + grid.patch_w, d);
        }
    }
  if (overlapping) {
    const std::vector<int> counts = coverage_counts(grid);
    for (int c = 0; c < channels; ++c)
      for (std::size_t p = 0; p < dst_plane; ++p) out.data[c * dst_plane + p] /= static_cast<float>(counts[p]);
  }
  return out;
}

}  // namespace hiad
