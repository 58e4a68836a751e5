#include "hiad/imagery.hpp"

#include <png.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <memory>
#include <string>

#include "hiad/error.hpp"

namespace hiad {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const { std::fclose(f); }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_file(const std::filesystem::path& path, const char* mode) {
  FilePtr f(std::fopen(path.c_str(), mode));
  if (!f) fail(ErrorKind::io, "cannot open '" + path.string() + "'");
  return f;
}

void png_error_fn(png_structp png, png_const_charp msg) {
  auto* text = static_cast<std::string*>(png_get_error_ptr(png));
  if (text) *text = msg;
  png_longjmp(png, 1);
}

void png_warning_fn(png_structp, png_const_charp) {}

// Decoded PNG samples, interleaved; 1 or 3 color channels after alpha removal.
struct RawPng {
  int channels = 0;
  int height = 0;
  int width = 0;
  int bit_depth = 0;
  std::vector<float> planar;
};

RawPng read_png(const std::filesystem::path& path) {
  FilePtr file = open_file(path, "rb");
  std::array<unsigned char, 8> sig{};
  if (std::fread(sig.data(), 1, sig.size(), file.get()) != sig.size() || png_sig_cmp(sig.data(), 0, 8) != 0)
    fail(ErrorKind::format, "'" + path.string() + "' is not a PNG file");

  std::string message;
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &message, png_error_fn, png_warning_fn);
  if (!png) fail(ErrorKind::io, "libpng initialization failed");
  png_infop info = png_create_info_struct(png);
  std::vector<png_bytep> rows;
  std::vector<unsigned char> buffer;
  RawPng out;
  int color_type = 0;
  int samples = 0;

  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    fail(ErrorKind::format, "'" + path.string() + "': " + message);
  }
  png_init_io(png, file.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  out.width = static_cast<int>(png_get_image_width(png, info));
  out.height = static_cast<int>(png_get_image_height(png, info));
  out.bit_depth = png_get_bit_depth(png, info);
  color_type = png_get_color_type(png, info);
  const bool supported_depth = out.bit_depth == 8 || out.bit_depth == 16;
  const bool supported_color = color_type == PNG_COLOR_TYPE_GRAY || color_type == PNG_COLOR_TYPE_RGB ||
                               color_type == PNG_COLOR_TYPE_GRAY_ALPHA || color_type == PNG_COLOR_TYPE_RGB_ALPHA;
  if (!supported_depth || !supported_color) {
    png_destroy_read_struct(&png, &info, nullptr);
    fail(ErrorKind::format, "'" + path.string() + "': unsupported PNG color type " + std::to_string(color_type) +
                                " / bit depth " + std::to_string(out.bit_depth));
  }
  if (out.bit_depth == 16) png_set_swap(png);  // host little-endian 16-bit samples
  png_read_update_info(png, info);
  samples = png_get_channels(png, info);
  const std::size_t row_bytes = png_get_rowbytes(png, info);
  buffer.resize(row_bytes * out.height);
  rows.resize(out.height);
  for (int y = 0; y < out.height; ++y) rows[y] = buffer.data() + row_bytes * y;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  out.channels = (color_type & PNG_COLOR_MASK_COLOR) ? 3 : 1;
  const float maxval = out.bit_depth == 16 ? 65535.0f : 255.0f;
  const std::size_t plane = static_cast<std::size_t>(out.width) * out.height;
  out.planar.resize(plane * out.channels);
  for (int y = 0; y < out.height; ++y) {
    for (int x = 0; x < out.width; ++x) {
      for (int c = 0; c < out.channels; ++c) {
        const std::size_t s = static_cast<std::size_t>(x) * samples + c;
        unsigned v;
        if (out.bit_depth == 16) {
          std::uint16_t u;
          std::memcpy(&u, rows[y] + 2 * s, 2);
          v = u;
        } else {
          v = rows[y][s];
        }
        out.planar[c * plane + static_cast<std::size_t>(y) * out.width + x] = static_cast<float>(v) / maxval;
      }
    }
  }
  return out;
}

void write_png8(const std::filesystem::path& path, int channels, int height, int width,
                const std::vector<unsigned char>& interleaved) {
  FilePtr file = open_file(path, "wb");
  std::string message;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &message, png_error_fn, png_warning_fn);
  if (!png) fail(ErrorKind::io, "libpng initialization failed");
  png_infop info = png_create_info_struct(png);
  std::vector<png_bytep> rows(height);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    fail(ErrorKind::io, "'" + path.string() + "': " + message);
  }
  png_init_io(png, file.get());
  png_set_IHDR(png, info, width, height, 8, channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_set_compression_level(png, 3);
  for (int y = 0; y < height; ++y)
    rows[y] = const_cast<png_bytep>(interleaved.data() + static_cast<std::size_t>(y) * width * channels);
  png_write_info(png, info);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  if (std::fflush(file.get()) != 0) fail(ErrorKind::io, "cannot write '" + path.string() + "'");
}

struct AxisTap {
  int i0, i1;
  float w1;
};

std::vector<AxisTap> bilinear_taps(int in, int out) {
  std::vector<AxisTap> taps(out);
  const double scale = static_cast<double>(in) / out;
  for (int i = 0; i < out; ++i) {
    double s = (i + 0.5) * scale - 0.5;
    s = std::clamp(s, 0.0, static_cast<double>(in - 1));
    const int i0 = static_cast<int>(std::floor(s));
    const int i1 = std::min(i0 + 1, in - 1);
    taps[i] = {i0, i1, static_cast<float>(s - i0)};
  }
  return taps;
}

void resize_plane(std::span<const float> src, int h, int w, std::span<float> dst, int out_h, int out_w) {
  const auto ty = bilinear_taps(h, out_h);
  const auto tx = bilinear_taps(w, out_w);
  std::vector<float> row0(out_w), row1(out_w);
  auto hinterp = [&](int y, std::vector<float>& row) {
    const float* r = src.data() + static_cast<std::size_t>(y) * w;
    for (int x = 0; x < out_w; ++x) {
      const AxisTap& t = tx[x];
      row[x] = r[t.i0] + t.w1 * (r[t.i1] - r[t.i0]);
    }
  };
  int cached0 = -1, cached1 = -1;
  for (int y = 0; y < out_h; ++y) {
    const AxisTap& t = ty[y];
    if (cached0 != t.i0) {
      if (cached1 == t.i0) {
        std::swap(row0, row1);
        cached0 = t.i0;
        cached1 = -1;
      } else {
        hinterp(t.i0, row0);
        cached0 = t.i0;
      }
    }
    if (cached1 != t.i1) {
      hinterp(t.i1, row1);
      cached1 = t.i1;
    }
    float* out = dst.data() + static_cast<std::size_t>(y) * out_w;
    for (int x = 0; x < out_w; ++x) out[x] = row0[x] + t.w1 * (row1[x] - row0[x]);
  }
}

// Per-axis area weights: output cell i covers [i*in/out, (i+1)*in/out) in source units.
struct AreaTap {
  int src;
  double weight;
};

std::vector<std::vector<AreaTap>> area_taps(int in, int out) {
  std::vector<std::vector<AreaTap>> taps(out);
  for (int i = 0; i < out; ++i) {
    // Exact rational bounds: [i*in, (i+1)*in) / out.
    const long long lo_num = static_cast<long long>(i) * in;
    const long long hi_num = static_cast<long long>(i + 1) * in;
    const int first = static_cast<int>(lo_num / out);
    const int last = static_cast<int>((hi_num - 1) / out);
    for (int s = first; s <= last; ++s) {
      const long long a = std::max(lo_num, static_cast<long long>(s) * out);
      const long long b = std::min(hi_num, static_cast<long long>(s + 1) * out);
      taps[i].push_back({s, static_cast<double>(b - a) / static_cast<double>(in)});
    }
  }
  return taps;
}

}  // namespace

unsigned char quantize8(float v, float lo, float hi) {
  double t = hi > lo ? (static_cast<double>(v) - lo) / (static_cast<double>(hi) - lo) : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  return static_cast<unsigned char>(std::floor(t * 255.0 + 0.5));
}

ImageTensor load_png(const std::filesystem::path& path) {
  RawPng raw = read_png(path);
  ImageTensor img;
  img.channels = raw.channels;
  img.height = raw.height;
  img.width = raw.width;
  img.data = std::move(raw.planar);
  return img;
}

ScalarMap load_png_map(const std::filesystem::path& path) {
  ImageTensor img = load_png(path);
  if (img.channels == 1) {
    ScalarMap map;
    map.height = img.height;
    map.width = img.width;
    map.data = std::move(img.data);
    return map;
  }
  return to_gray(img);
}

void save_png(const ImageTensor& img, const std::filesystem::path& path) {
  require(img.channels == 1 || img.channels == 3, ErrorKind::contract, "save_png: channels must be 1 or 3");
  std::vector<unsigned char> bytes(img.data.size());
  const std::size_t plane = img.plane_size();
  for (std::size_t p = 0; p < plane; ++p)
    for (int c = 0; c < img.channels; ++c)
      bytes[p * img.channels + c] = quantize8(img.data[c * plane + p], 0.0f, 1.0f);
  write_png8(path, img.channels, img.height, img.width, bytes);
}

void save_png(const ScalarMap& map, float lo, float hi, const std::filesystem::path& path) {
  std::vector<unsigned char> bytes(map.data.size());
  for (std::size_t i = 0; i < bytes.size(); ++i) bytes[i] = quantize8(map.data[i], lo, hi);
  write_png8(path, 1, map.height, map.width, bytes);
}

ImageTensor render_heatmap(const ScalarMap& map, float lo, float hi) {
  // viridis at t = 0, 0.25, 0.5, 0.75, 1
  static constexpr std::array<std::array<float, 3>, 5> ramp{{{0.267f, 0.005f, 0.329f},
                                                            {0.229f, 0.322f, 0.546f},
                                                            {0.128f, 0.567f, 0.551f},
                                                            {0.369f, 0.789f, 0.383f},
                                                            {0.993f, 0.906f, 0.144f}}};
  ImageTensor out(3, map.height, map.width);
  const std::size_t plane = out.plane_size();
  for (std::size_t p = 0; p < plane; ++p) {
    double t = hi > lo ? (static_cast<double>(map.data[p]) - lo) / (static_cast<double>(hi) - lo) : 0.0;
    t = std::clamp(t, 0.0, 1.0) * 4.0;
    const int k = std::min(3, static_cast<int>(t));
    const float f = static_cast<float>(t - k);
    for (int c = 0; c < 3; ++c) out.data[c * plane + p] = ramp[k][c] + f * (ramp[k + 1][c] - ramp[k][c]);
  }
  return out;
}

ImageTensor downsample_by2(const ImageTensor& img) {
  require(img.height % 2 == 0 && img.width % 2 == 0, ErrorKind::geometry,
          "downsample_by2: dimensions " + std::to_string(img.height) + "x" + std::to_string(img.width) +
              " must both be even");
  ImageTensor out(img.channels, img.height / 2, img.width / 2);
  for (int c = 0; c < img.channels; ++c) {
    for (int y = 0; y < out.height; ++y) {
      const float* r0 = img.data.data() + c * img.plane_size() + static_cast<std::size_t>(2 * y) * img.width;
      const float* r1 = r0 + img.width;
      float* o = out.data.data() + c * out.plane_size() + static_cast<std::size_t>(y) * out.width;
      for (int x = 0; x < out.width; ++x) o[x] = ((r0[2 * x] + r0[2 * x + 1]) + (r1[2 * x] + r1[2 * x + 1])) * 0.25f;
    }
  }
  return out;
}

ScalarMap resize_bilinear(const ScalarMap& map, int out_h, int out_w) {
  require(out_h >= 1 && out_w >= 1, ErrorKind::contract, "resize_bilinear: output size must be positive");
  require(map.height >= 1 && map.width >= 1, ErrorKind::contract, "resize_bilinear: empty input");
  if (out_h == map.height && out_w == map.width) return map;
  ScalarMap out(out_h, out_w);
  resize_plane(map.data, map.height, map.width, out.data, out_h, out_w);
  return out;
}

ImageTensor resize_bilinear(const ImageTensor& img, int out_h, int out_w) {
  require(out_h >= 1 && out_w >= 1, ErrorKind::contract, "resize_bilinear: output size must be positive");
  if (out_h == img.height && out_w == img.width) return img;
  ImageTensor out(img.channels, out_h, out_w);
  for (int c = 0; c < img.channels; ++c) resize_plane(img.plane(c), img.height, img.width, out.plane(c), out_h, out_w);
  return out;
}

ScalarMap resize_mask(const ScalarMap& mask, int out_h, int out_w) {
  require(out_h >= 1 && out_w >= 1, ErrorKind::contract, "resize_mask: output size must be positive");
  for (float v : mask.data)
    require(v == 0.0f || v == 1.0f, ErrorKind::contract, "resize_mask: input mask is not binary");
  if (out_h == mask.height && out_w == mask.width) return mask;
  const auto ty = area_taps(mask.height, out_h);
  const auto tx = area_taps(mask.width, out_w);
  // Rows first, then columns.
  std::vector<double> rows(static_cast<std::size_t>(out_h) * mask.width, 0.0);
  for (int y = 0; y < out_h; ++y)
    for (const AreaTap& t : ty[y]) {
      const float* src = mask.data.data() + static_cast<std::size_t>(t.src) * mask.width;
      double* dst = rows.data() + static_cast<std::size_t>(y) * mask.width;
      for (int x = 0; x < mask.width; ++x) dst[x] += t.weight * src[x];
    }
  ScalarMap out(out_h, out_w);
  for (int y = 0; y < out_h; ++y) {
    const double* src = rows.data() + static_cast<std::size_t>(y) * mask.width;
    for (int x = 0; x < out_w; ++x) {
      double coverage = 0.0;
      for (const AreaTap& t : tx[x]) coverage += t.weight * src[t.src];
      out.at(y, x) = coverage > 0.5 ? 1.0f : 0.0f;
    }
  }
  return out;
}

std::vector<ImageTensor> build_pyramid(const ImageTensor& img, int levels) {
  require(levels >= 0, ErrorKind::config, "build_pyramid: level count must be non-negative");
  const int factor = 1 << levels;
  require(img.height % factor == 0 && img.width % factor == 0, ErrorKind::geometry,
          "build_pyramid: " + std::to_string(img.height) + "x" + std::to_string(img.width) +
              " is not divisible by 2^" + std::to_string(levels));
  std::vector<ImageTensor> out;
  out.reserve(levels + 1);
  out.push_back(img);
  for (int k = 1; k <= levels; ++k) out.push_back(downsample_by2(out.back()));
  return out;
}

ScalarMap to_gray(const ImageTensor& img) {
  ScalarMap g(img.height, img.width);
  if (img.channels == 1) {
    g.data = img.data;
    return g;
  }
  const std::size_t plane = img.plane_size();
  for (std::size_t p = 0; p < plane; ++p)
    g.data[p] = (img.data[p] + img.data[plane + p] + img.data[2 * plane + p]) * (1.0f / 3.0f);
  return g;
}

}  // namespace hiad
