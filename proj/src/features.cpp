#include "hiad/features.hpp"

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>

#include "hiad/error.hpp"

namespace hiad {

namespace {

static_assert(std::endian::native == std::endian::little, "feature files assume a little-endian host");

// Plane with a one-pixel clamped border.
struct Padded {
  int h = 0, w = 0;
  std::vector<float> v;
  const float* row(int y) const { return v.data() + static_cast<std::size_t>(y + 1) * (w + 2) + 1; }
};

Padded pad_clamped(std::span<const float> plane, int h, int w) {
  Padded p{h, w, std::vector<float>(static_cast<std::size_t>(h + 2) * (w + 2))};
  for (int y = -1; y <= h; ++y) {
    const int sy = std::clamp(y, 0, h - 1);
    float* dst = p.v.data() + static_cast<std::size_t>(y + 1) * (w + 2);
    const float* src = plane.data() + static_cast<std::size_t>(sy) * w;
    dst[0] = src[0];
    std::copy(src, src + w, dst + 1);
    dst[w + 1] = src[w - 1];
  }
  return p;
}

float pairwise_sum(const float* v, std::size_t n) {
  if (n == 1) return v[0];
  if (n == 2) return v[0] + v[1];
  const std::size_t half = n / 2;
  return pairwise_sum(v, half) + pairwise_sum(v + half, n - half);
}

constexpr int kColorMean = 0;
constexpr int kColorStd = 3;
constexpr int kGrad0 = 6;
constexpr int kGrad45 = 7;
constexpr int kGrad90 = 8;
constexpr int kGrad135 = 9;
constexpr int kLaplacian = 10;
constexpr int kCenterSurround = 11;

// Responses of one analysis-scale image pooled over `cell` x `cell` blocks.
FeatureLayer filter_bank_layer(const ImageTensor& img, int cell, int stride) {
  const int h = img.height, w = img.width;
  FeatureLayer layer(kFilterBankChannels, h / cell, w / cell, stride);
  std::array<Padded, 3> color;
  for (int c = 0; c < 3; ++c) color[c] = pad_clamped(img.plane(img.channels == 3 ? c : 0), h, w);
  const Padded gray = img.channels == 3 ? pad_clamped(to_gray(img).data, h, w) : color[0];

  // Responses for one cell row, laid out [channel][cell col][y within cell][x within cell].
  const std::size_t cell_area = static_cast<std::size_t>(cell) * cell;
  std::vector<float> block(static_cast<std::size_t>(kFilterBankChannels) * layer.width * cell_area);
  auto slot = [&](int ch, int x, int yy) -> float& {
    const int cx = x / cell;
    return block[(static_cast<std::size_t>(ch) * layer.width + cx) * cell_area + static_cast<std::size_t>(yy) * cell +
                 (x - cx * cell)];
  };

  for (int cy = 0; cy < layer.height; ++cy) {
    for (int yy = 0; yy < cell; ++yy) {
      const int y = cy * cell + yy;
      for (int c = 0; c < 3; ++c) {
        const float* up = color[c].row(y - 1);
        const float* mid = color[c].row(y);
        const float* dn = color[c].row(y + 1);
        for (int x = 0; x < w; ++x) {
          const float center = mid[x];
          const std::array<float, 8> d{up[x - 1] - center, up[x] - center, up[x + 1] - center, mid[x - 1] - center,
                                       mid[x + 1] - center, dn[x - 1] - center, dn[x] - center, dn[x + 1] - center};
          float sum = 0.0f, sq = 0.0f;
          for (float v : d) {
            sum += v;
            sq += v * v;
          }
          const float mean_off = sum / 9.0f;
          const float var = sq / 9.0f - mean_off * mean_off;
          slot(kColorMean + c, x, yy) = std::fabs(center + mean_off);
          slot(kColorStd + c, x, yy) = std::sqrt(std::max(0.0f, var));
        }
      }
      const float* up = gray.row(y - 1);
      const float* mid = gray.row(y);
      const float* dn = gray.row(y + 1);
      for (int x = 0; x < w; ++x) {
        const float a00 = up[x - 1], a01 = up[x], a02 = up[x + 1];
        const float a10 = mid[x - 1], a11 = mid[x], a12 = mid[x + 1];
        const float a20 = dn[x - 1], a21 = dn[x], a22 = dn[x + 1];
        // Every stencil is a sum of pixel differences, so constant input gives exactly 0.
        const float g0 = ((a02 - a00) + 2.0f * (a12 - a10) + (a22 - a20)) / 8.0f;
        const float g90 = ((a20 - a00) + 2.0f * (a21 - a01) + (a22 - a02)) / 8.0f;
        const float g45 = ((a01 - a10) + 2.0f * (a02 - a20) + (a12 - a21)) / 8.0f;
        const float g135 = (2.0f * (a22 - a00) + (a12 - a01) + (a21 - a10)) / 8.0f;
        const float lap = ((a01 - a11) + (a21 - a11) + (a10 - a11) + (a12 - a11)) / 4.0f;
        const float cs = ((a11 - a00) + (a11 - a01) + (a11 - a02) + (a11 - a10) + (a11 - a12) + (a11 - a20) +
                          (a11 - a21) + (a11 - a22)) /
                         8.0f;
        slot(kGrad0, x, yy) = std::fabs(g0);
        slot(kGrad45, x, yy) = std::fabs(g45);
        slot(kGrad90, x, yy) = std::fabs(g90);
        slot(kGrad135, x, yy) = std::fabs(g135);
        slot(kLaplacian, x, yy) = std::fabs(lap);
        slot(kCenterSurround, x, yy) = std::fabs(cs);
      }
    }
    const float inv_area = 1.0f / static_cast<float>(cell_area);
    for (int ch = 0; ch < kFilterBankChannels; ++ch)
      for (int cx = 0; cx < layer.width; ++cx) {
        const float* vals = block.data() + (static_cast<std::size_t>(ch) * layer.width + cx) * cell_area;
        layer.at(ch, cy, cx) = pairwise_sum(vals, cell_area) * inv_area;
      }
  }
  return layer;
}

bool is_power_of_two(int v) { return v > 0 && (v & (v - 1)) == 0; }

// --- binary helpers ---------------------------------------------------------

template <class T>
void put(std::string& out, T v) {
  char bytes[sizeof(T)];
  std::memcpy(bytes, &v, sizeof(T));
  out.append(bytes, sizeof(T));
}

class Reader {
 public:
  Reader(const std::string& bytes, const std::filesystem::path& path) : bytes_(bytes), path_(path) {}

  template <class T>
  T get(const char* what) {
    need(sizeof(T), what);
    T v;
    std::memcpy(&v, bytes_.data() + offset_, sizeof(T));
    offset_ += sizeof(T);
    return v;
  }

  std::string take(std::size_t n, const char* what) {
    need(n, what);
    std::string s = bytes_.substr(offset_, n);
    offset_ += n;
    return s;
  }

  void read_floats(float* dst, std::size_t n, const char* what) {
    need(n * sizeof(float), what);
    std::memcpy(dst, bytes_.data() + offset_, n * sizeof(float));
    offset_ += n * sizeof(float);
  }

  std::size_t offset() const { return offset_; }
  std::size_t remaining() const { return bytes_.size() - offset_; }

  [[noreturn]] void error(const std::string& msg) const {
    fail(ErrorKind::format, "'" + path_.string() + "' at offset " + std::to_string(offset_) + ": " + msg);
  }

 private:
  void need(std::size_t n, const char* what) {
    if (remaining() < n) error(std::string("truncated while reading ") + what);
  }
  const std::string& bytes_;
  std::filesystem::path path_;
  std::size_t offset_ = 0;
};

constexpr char kMagic[8] = {'H', 'I', 'A', 'D', 'F', 'E', 'A', 'T'};
constexpr std::uint16_t kFeatureVersion = 1;

}  // namespace

void validate(const ExtractorSpec& spec) {
  require(!spec.strides.empty(), ErrorKind::config, "extractor: at least one layer is required");
  require(spec.channels.size() == spec.strides.size(), ErrorKind::config,
          "extractor: channel list and stride list differ in length");
  for (std::size_t l = 0; l < spec.strides.size(); ++l) {
    require(is_power_of_two(spec.strides[l]), ErrorKind::config,
            "extractor: layer stride " + std::to_string(spec.strides[l]) + " is not a power of two");
    require(l == 0 || spec.strides[l] > spec.strides[l - 1], ErrorKind::config,
            "extractor: layer strides must be strictly increasing");
    require(spec.channels[l] > 0, ErrorKind::config, "extractor: channel counts must be positive");
    if (spec.kind == ExtractorKind::filter_bank)
      require(spec.channels[l] == kFilterBankChannels, ErrorKind::config,
              "extractor: the filter bank produces " + std::to_string(kFilterBankChannels) + " channels per layer");
  }
  if (spec.kind == ExtractorKind::filter_bank)
    require(spec.version == kFilterBankVersion, ErrorKind::config,
            "extractor: unknown filter bank version '" + spec.version + "'");
}

void validate_feature_map(const FeatureMap& fm, int input_h, int input_w) {
  require(!fm.layers.empty(), ErrorKind::format, "feature map has no layers");
  for (std::size_t l = 0; l < fm.layers.size(); ++l) {
    const FeatureLayer& layer = fm.layers[l];
    require(layer.height * layer.stride == input_h && layer.width * layer.stride == input_w, ErrorKind::geometry,
            "feature layer " + std::to_string(l) + ": " + std::to_string(layer.height) + "x" +
                std::to_string(layer.width) + " cells at stride " + std::to_string(layer.stride) +
                " do not cover " + std::to_string(input_h) + "x" + std::to_string(input_w));
    require(layer.data.size() == static_cast<std::size_t>(layer.channels) * layer.height * layer.width,
            ErrorKind::format, "feature layer " + std::to_string(l) + ": data size mismatch");
    for (float v : layer.data)
      require(std::isfinite(v), ErrorKind::numeric, "feature layer " + std::to_string(l) + " contains non-finite values");
  }
}

FeatureMap extract(const ExtractorSpec& spec, const ImageTensor& patch) {
  validate(spec);
  require(spec.kind == ExtractorKind::filter_bank, ErrorKind::config,
          "extract: precomputed features must be read through FeatureExtractor");
  require(patch.channels == 1 || patch.channels == 3, ErrorKind::contract, "extract: patch must have 1 or 3 channels");
  const int smax = spec.max_stride();
  require(patch.height % smax == 0 && patch.width % smax == 0, ErrorKind::geometry,
          "extract: patch " + std::to_string(patch.height) + "x" + std::to_string(patch.width) +
              " is not divisible by the largest layer stride " + std::to_string(smax));
  const int cell = spec.strides.front();
  FeatureMap fm;
  ImageTensor scaled = patch;
  int factor = 1;
  for (int stride : spec.strides) {
    while (factor < stride / cell) {
      scaled = downsample_by2(scaled);
      factor *= 2;
    }
    fm.layers.push_back(filter_bank_layer(scaled, cell, stride));
  }
  return fm;
}

std::filesystem::path feature_file_name(const PatchContext& ctx) {
  std::filesystem::path dir(ctx.image_id);
  if (ctx.low_res) return dir / "low.feat";
  return dir / ("rate" + std::to_string(ctx.rate) + "_r" + std::to_string(ctx.pos.row) + "_c" +
                std::to_string(ctx.pos.col) + ".feat");
}

FeatureExtractor::FeatureExtractor(ExtractorSpec spec) : spec_(std::move(spec)) { validate(spec_); }

FeatureMap FeatureExtractor::operator()(const ImageTensor& patch, const PatchContext& ctx) const {
  if (spec_.kind == ExtractorKind::filter_bank) return extract(spec_, patch);
  const auto path = spec_.features_dir / feature_file_name(ctx);
  auto [id, fm] = read_features(path);
  require(id == ctx.image_id, ErrorKind::format,
          "'" + path.string() + "' declares image id '" + id + "', expected '" + ctx.image_id + "'");
  require(fm.layers.size() == spec_.strides.size(), ErrorKind::format,
          "'" + path.string() + "' has " + std::to_string(fm.layers.size()) + " layers, expected " +
              std::to_string(spec_.strides.size()));
  for (std::size_t l = 0; l < fm.layers.size(); ++l)
    require(fm.layers[l].stride == spec_.strides[l] && fm.layers[l].channels == spec_.channels[l], ErrorKind::format,
            "'" + path.string() + "' layer " + std::to_string(l) + " does not match the extractor spec");
  validate_feature_map(fm, patch.height, patch.width);
  return fm;
}

void write_features(const std::filesystem::path& path, const std::string& image_id, const FeatureMap& fm) {
  require(!fm.layers.empty() && fm.layers.size() <= 0xFFFF, ErrorKind::contract, "write_features: bad layer count");
  std::string out;
  out.append(kMagic, sizeof(kMagic));
  put<std::uint16_t>(out, kFeatureVersion);
  put<std::uint16_t>(out, static_cast<std::uint16_t>(fm.layers.size()));
  for (const FeatureLayer& l : fm.layers) {
    require(l.data.size() == static_cast<std::size_t>(l.channels) * l.height * l.width, ErrorKind::contract,
            "write_features: layer data size mismatch");
    for (float v : l.data) require(std::isfinite(v), ErrorKind::contract, "write_features: non-finite value");
    put<std::uint32_t>(out, static_cast<std::uint32_t>(l.channels));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(l.height));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(l.width));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(l.stride));
  }
  put<std::uint32_t>(out, static_cast<std::uint32_t>(image_id.size()));
  out += image_id;
  for (const FeatureLayer& l : fm.layers)
    out.append(reinterpret_cast<const char*>(l.data.data()), l.data.size() * sizeof(float));
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) fail(ErrorKind::io, "cannot open '" + path.string() + "' for writing");
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) fail(ErrorKind::io, "cannot write '" + path.string() + "'");
}

std::pair<std::string, FeatureMap> read_features(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) fail(ErrorKind::io, "cannot open '" + path.string() + "'");
  const std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  Reader r(bytes, path);
  if (r.take(sizeof(kMagic), "magic") != std::string(kMagic, sizeof(kMagic))) r.error("bad magic");
  const auto version = r.get<std::uint16_t>("version");
  if (version != kFeatureVersion) r.error("unsupported version " + std::to_string(version));
  const auto count = r.get<std::uint16_t>("layer count");
  if (count == 0) r.error("zero layers");
  FeatureMap fm;
  std::size_t payload = 0;
  for (int l = 0; l < count; ++l) {
    const auto c = r.get<std::uint32_t>("layer channels");
    const auto h = r.get<std::uint32_t>("layer height");
    const auto w = r.get<std::uint32_t>("layer width");
    const auto s = r.get<std::uint32_t>("layer stride");
    if (c == 0 || h == 0 || w == 0 || s == 0) r.error("layer " + std::to_string(l) + " has a zero dimension");
    const std::size_t n = static_cast<std::size_t>(c) * h * w;
    if (n > (std::size_t{1} << 32)) r.error("layer " + std::to_string(l) + " is implausibly large");
    payload += n * sizeof(float);
    FeatureLayer layer;
    layer.channels = static_cast<int>(c);
    layer.height = static_cast<int>(h);
    layer.width = static_cast<int>(w);
    layer.stride = static_cast<int>(s);
    fm.layers.push_back(std::move(layer));
  }
  const auto id_len = r.get<std::uint32_t>("image id length");
  std::string id = r.take(id_len, "image id");
  if (r.remaining() != payload)
    r.error("payload holds " + std::to_string(r.remaining()) + " bytes, header declares " + std::to_string(payload));
  for (std::size_t l = 0; l < fm.layers.size(); ++l) {
    FeatureLayer& layer = fm.layers[l];
    layer.data.resize(static_cast<std::size_t>(layer.channels) * layer.height * layer.width);
    r.read_floats(layer.data.data(), layer.data.size(), "layer data");
    for (float v : layer.data)
      if (!std::isfinite(v)) r.error("layer " + std::to_string(l) + " contains non-finite values");
  }
  const int h0 = fm.layers[0].height * fm.layers[0].stride;
  const int w0 = fm.layers[0].width * fm.layers[0].stride;
  for (std::size_t l = 1; l < fm.layers.size(); ++l)
    if (fm.layers[l].height * fm.layers[l].stride != h0 || fm.layers[l].width * fm.layers[l].stride != w0)
      r.error("layer " + std::to_string(l) + " covers a different input size than layer 0");
  return {std::move(id), std::move(fm)};
}

}  // namespace hiad
