#pragma once

#include <initializer_list>
#include <string>

#include "hiad/pipeline.hpp"
#include "json.hpp"

namespace hiad {

using Json = nlohmann::ordered_json;

inline constexpr const char* kConfigSchema = "hiad-config/1";

Json pipeline_to_json(const PipelineConfig& c);
/// Reads every pipeline key present in `j`; absent keys keep their defaults.
/// Keys outside the pipeline set and `extra_keys` are rejected.
PipelineConfig pipeline_from_json(const Json& j, std::initializer_list<const char*> extra_keys = {});

std::string to_string(DetectorKind kind);
DetectorKind parse_detector_kind(const std::string& name);

}  // namespace hiad
