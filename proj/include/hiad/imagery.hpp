#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <vector>

namespace hiad {

/// Planar (channel-major, then row-major) image with values in [0, 1].
struct ImageTensor {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<float> data;

  ImageTensor() = default;
  ImageTensor(int c, int h, int w, float fill = 0.0f)
      : channels(c), height(h), width(w), data(static_cast<std::size_t>(c) * h * w, fill) {}

  std::size_t plane_size() const { return static_cast<std::size_t>(height) * width; }
  float& at(int c, int y, int x) { return data[c * plane_size() + static_cast<std::size_t>(y) * width + x]; }
  float at(int c, int y, int x) const { return data[c * plane_size() + static_cast<std::size_t>(y) * width + x]; }
  std::span<float> plane(int c) { return {data.data() + c * plane_size(), plane_size()}; }
  std::span<const float> plane(int c) const { return {data.data() + c * plane_size(), plane_size()}; }

  bool operator==(const ImageTensor&) const = default;
};

/// Dense single-channel float raster (anomaly maps, masks).
struct ScalarMap {
  int height = 0;
  int width = 0;
  std::vector<float> data;

  ScalarMap() = default;
  ScalarMap(int h, int w, float fill = 0.0f)
      : height(h), width(w), data(static_cast<std::size_t>(h) * w, fill) {}

  static constexpr int channels = 1;
  std::size_t size() const { return data.size(); }
  float& at(int y, int x) { return data[static_cast<std::size_t>(y) * width + x]; }
  float at(int y, int x) const { return data[static_cast<std::size_t>(y) * width + x]; }

  bool operator==(const ScalarMap&) const = default;
};

ImageTensor load_png(const std::filesystem::path& path);

/// Loads a PNG as a single-channel map (RGB inputs are averaged). Masks use this.
ScalarMap load_png_map(const std::filesystem::path& path);

/// Writes an 8-bit grayscale or RGB PNG. Values are quantized with round-half-up.
void save_png(const ImageTensor& img, const std::filesystem::path& path);

/// Writes an 8-bit grayscale PNG; `lo` maps to 0 and `hi` maps to 255, values outside clamp.
void save_png(const ScalarMap& map, float lo, float hi, const std::filesystem::path& path);

/// round-half-up 8-bit quantization of v over [lo, hi].
unsigned char quantize8(float v, float lo, float hi);

/// Colors a score map with a fixed perceptual ramp (viridis control points) over [lo, hi].
ImageTensor render_heatmap(const ScalarMap& map, float lo, float hi);

/// 2x2 mean pooling; both dimensions must be even.
ImageTensor downsample_by2(const ImageTensor& img);

/// Bilinear resampling with half-pixel centers and edge clamping.
ScalarMap resize_bilinear(const ScalarMap& map, int out_h, int out_w);

/// Same convention as resize_bilinear, applied per channel.
ImageTensor resize_bilinear(const ImageTensor& img, int out_h, int out_w);

/// Area-average resampling of a binary mask followed by a strict "> 0.5" threshold.
ScalarMap resize_mask(const ScalarMap& mask, int out_h, int out_w);

/// Levels 0..levels, each obtained from the previous one by downsample_by2.
std::vector<ImageTensor> build_pyramid(const ImageTensor& img, int levels);

/// Average of the color channels (identity for single-channel images).
ScalarMap to_gray(const ImageTensor& img);

}  // namespace hiad
