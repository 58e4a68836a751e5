#pragma once

#include <string>

#include "hiad/data.hpp"
#include "hiad/pipeline.hpp"

namespace acceptance {

// Speckle texture with clearly visible blob defects.
inline hiad::SynthSpec small_suite(int resolution, std::uint64_t seed) {
  hiad::SynthSpec s;
  s.resolution = resolution;
  s.texture = hiad::Texture::speckle;
  s.defect = hiad::DefectKind::blob;
  s.area_min = 0.002;
  s.area_max = 0.01;
  s.contrast = 0.2;
  s.soft_edge = 8.0;
  s.seed = seed;
  return s;
}

// The first `count` normal training renders, produced on demand.
inline hiad::ImageSet synth_train_set(const hiad::SynthSpec& spec, int count, int downsample_to = 0) {
  hiad::ImageSet set;
  for (int i = 0; i < count; ++i) set.ids.push_back("train/good/" + std::to_string(i));
  set.load = [spec, downsample_to](std::size_t i) {
    hiad::ImageTensor img = hiad::render_sample(spec, hiad::SampleKind::train, static_cast<int>(i)).image;
    while (downsample_to > 0 && img.height > downsample_to) img = hiad::downsample_by2(img);
    return img;
  };
  return set;
}

}  // namespace acceptance
