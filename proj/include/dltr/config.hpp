#pragma once

// JSON configuration loading. Every key is optional; unknown keys throw so
// typos do not silently fall back to defaults.

#include <string>

#include "dltr/pipeline.hpp"

namespace dltr {

/// Parses a JSON object (dotted spec keys as nested objects, e.g.
/// {"odometry": {"qc_diag": [...]}, "daicp": {"gamma": 80}}).
PipelineConfig parse_pipeline_config(const std::string& json_text);

/// Reads and parses a config file; throws std::runtime_error when the file
/// cannot be opened.
PipelineConfig load_pipeline_config(const std::string& path);

}  // namespace dltr
