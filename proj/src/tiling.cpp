#include "hiad/tiling.hpp"

namespace hiad {

namespace {

int axis_count(const char* axis, int image, int patch, int stride) {
  require(image > 0 && patch > 0 && stride > 0, ErrorKind::geometry,
          std::string("compute_grid: ") + axis + " dimensions must be positive");
  require(patch <= image, ErrorKind::geometry,
          std::string("compute_grid: ") + axis + " patch " + std::to_string(patch) + " exceeds image " +
              std::to_string(image));
  const int remainder = (image - patch) % stride;
  require(remainder == 0, ErrorKind::geometry,
          std::string("compute_grid: inexact tiling along ") + axis + ": (" + std::to_string(image) + " - " +
              std::to_string(patch) + ") mod " + std::to_string(stride) + " = " + std::to_string(remainder));
  return (image - patch) / stride + 1;
}

}  // namespace

PatchGrid compute_grid(int image_h, int image_w, int patch_h, int patch_w, int stride_h, int stride_w) {
  PatchGrid g;
  g.image_h = image_h;
  g.image_w = image_w;
  g.patch_h = patch_h;
  g.patch_w = patch_w;
  g.stride_h = stride_h;
  g.stride_w = stride_w;
  g.rows = axis_count("height", image_h, patch_h, stride_h);
  g.cols = axis_count("width", image_w, patch_w, stride_w);
  return g;
}

PatchGrid PatchGrid::scaled(int factor) const {
  const bool ok = factor > 0 && image_h % factor == 0 && image_w % factor == 0 && patch_h % factor == 0 &&
                  patch_w % factor == 0 && stride_h % factor == 0 && stride_w % factor == 0;
  require(ok, ErrorKind::geometry,
          "grid with patch " + detail::dims(patch_h, patch_w) + " and stride " + detail::dims(stride_h, stride_w) +
              " is not divisible by feature stride " + std::to_string(factor));
  PatchGrid g = *this;
  g.image_h /= factor;
  g.image_w /= factor;
  g.patch_h /= factor;
  g.patch_w /= factor;
  g.stride_h /= factor;
  g.stride_w /= factor;
  return g;
}

std::vector<int> coverage_counts(const PatchGrid& grid) {
  // Separable: count(y, x) = rows covering y * cols covering x.
  auto axis = [](int image, int patch, int stride, int n) {
    std::vector<int> c(image, 0);
    for (int k = 0; k < n; ++k)
      for (int t = 0; t < patch; ++t) ++c[k * stride + t];
    return c;
  };
  const auto cy = axis(grid.image_h, grid.patch_h, grid.stride_h, grid.rows);
  const auto cx = axis(grid.image_w, grid.patch_w, grid.stride_w, grid.cols);
  std::vector<int> counts(static_cast<std::size_t>(grid.image_h) * grid.image_w);
  for (int y = 0; y < grid.image_h; ++y)
    for (int x = 0; x < grid.image_w; ++x) counts[static_cast<std::size_t>(y) * grid.image_w + x] = cy[y] * cx[x];
  return counts;
}

}  // namespace hiad
