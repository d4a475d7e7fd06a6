#pragma once

// Run configuration: a JSON document with nested sections in which every key
// is required and unknown keys are rejected. Any key can be overridden with
// "section.key=value" strings (the value is parsed as JSON, falling back to a
// plain string).

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "factormap/data.hpp"
#include "factormap/pipeline.hpp"

namespace factormap {

struct DatasetConfig {
  std::string kind = "synthetic";  // synthetic | tum | simple
  std::string path;
  int max_frames = 0;  // 0 keeps all frames
  // Used for tum, and for simple datasets without intrinsics.txt / bounds.txt.
  CameraIntrinsics intrinsics{56.0, 56.0, 32.0, 32.0, 64, 64};
  SceneBounds bounds{{-2.5, -2.5, 0.0}, {2.5, 2.5, 2.5}};
};

struct OutputConfig {
  std::string dir = "out";
  std::string run_id = "run";
  int snapshot_every = 0;
  bool snapshot_final = true;
  int view_stride = 10;
  int pixel_stride = 4;
  double opacity_floor = 0.5;
  int eval_coarse = 32;
  int eval_fine = 64;
  double eval_threshold = 0.05;  // completion-ratio distance for synthetic runs, meters
};

struct RunConfig {
  std::uint64_t seed = 0;
  int threads = 1;
  MappingConfig mapping;
  DatasetConfig dataset;
  SyntheticSceneSpec synthetic;
  OutputConfig output;

  void validate() const;
  SnapshotOptions snapshot_options() const;
};

std::string config_to_json(const RunConfig& cfg);
// Strict parse; ConfigError names the offending key.
RunConfig config_from_json(const std::string& text);
RunConfig load_config(const std::filesystem::path& path, const std::vector<std::string>& overrides = {});
// Applies overrides to a JSON document, e.g. "field.res=64".
std::string apply_overrides(const std::string& json_text, const std::vector<std::string>& overrides);

std::string scene_spec_to_json(const SyntheticSceneSpec& spec);
SyntheticSceneSpec scene_spec_from_json(const std::string& text);

}  // namespace factormap
