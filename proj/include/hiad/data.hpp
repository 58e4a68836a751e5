#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "hiad/imagery.hpp"
#include "hiad/parallel.hpp"
#include "hiad/pipeline.hpp"

namespace hiad {

enum class Split { train, test };

struct SampleRecord {
  std::filesystem::path image;
  Split split = Split::train;
  bool anomalous = false;
  std::string defect_type;  // "good" for normal samples
  std::optional<std::filesystem::path> mask;
  std::string category;
  /// Path relative to the category root without extension, e.g. "test/scratch/003".
  std::string id;
};

/// Scans <root>/<category>/{train/good, test/<type>, ground_truth/<type>}.
/// Masks are paired by stem as "<stem>_mask.png" or "<stem>.png".
std::vector<SampleRecord> load_layout(const std::filesystem::path& root, const std::string& category);

enum class Texture { grid, wood, speckle };
enum class DefectKind { rectangle, blob, scratch, pitting };

std::string to_string(Texture t);
std::string to_string(DefectKind d);
Texture parse_texture(const std::string& s);
DefectKind parse_defect_kind(const std::string& s);

struct SynthSpec {
  std::string category = "synthetic";
  int resolution = 1024;  // square images
  int channels = 3;
  Texture texture = Texture::speckle;
  DefectKind defect = DefectKind::blob;
  int train_count = 10;
  int test_normal = 5;
  int test_anomalous = 5;
  int defects_min = 1, defects_max = 1;
  double area_min = 1e-4, area_max = 1e-4;  // per defect, relative to the image
  double contrast = 0.05;
  /// Width in pixels of the linear ramp at defect borders (0: hard edge).
  double soft_edge = 0.0;
  /// Texture feature size in pixels at this resolution.
  double texture_scale = 16.0;
  /// Standard deviation of the texture intensity.
  double texture_amplitude = 0.1;
  /// Per-pixel grain amplitude (uniform, +-).
  double grain = 0.02;
  std::uint64_t seed = 0;
};

void validate(const SynthSpec& spec);

enum class SampleKind { train, test_good, test_defect };

struct SynthSample {
  ImageTensor image;
  ScalarMap mask;  // all zero for normal samples
  std::vector<Rect> boxes;
  double relative_area = 0.0;
};

/// Renders one sample in memory; identical to what synth_generate writes before quantization.
SynthSample render_sample(const SynthSpec& spec, SampleKind kind, int index);

/// Writes the load_layout structure plus <category>/stats.json. Deterministic per seed.
void synth_generate(const SynthSpec& spec, const std::filesystem::path& out_dir, WorkerPool& pool = serial_pool());

}  // namespace hiad
