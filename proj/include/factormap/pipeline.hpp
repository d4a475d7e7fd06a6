#pragma once

// Two-stage mapping schedule: joint initialization over the first frames with
// the per-ray sampler schedule, then windowed map-only updates as frames
// arrive.

#include <cstdint>
#include <deque>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "factormap/data.hpp"
#include "factormap/field.hpp"
#include "factormap/objective.hpp"
#include "factormap/random.hpp"
#include "factormap/render.hpp"
#include "factormap/sampler.hpp"

namespace factormap {

struct ScheduleConfig {
  int init_frames = 15;
  int sampler_iters = 4;
  std::vector<int> sample_counts{32, 64, 64, 64};
  std::vector<int> window_kernels{0, 3, 4, 5};  // entry 0 unused: iteration 1 is stratified
  double mix_ratio = 0.4;
  double score_beta = 0.5;
  IntervalSearch search;
  int init_iters = 400;  // split evenly across the sampler iterations
  int init_rays_per_iter = 1024;

  int active_window = 20;
  int local_frames = 5;
  int iters_per_update = 20;
  int frames_per_update = 5;
  int rays_per_iter = 1024;
  int update_coarse = 32;
  int update_fine = 64;
  int keyframe_stride = 10;
  double near_min = 0.1;
  int max_skips = 3;  // consecutive non-finite iterations before aborting

  void validate() const;
};

struct LearningRates {
  double grid = 0.02;
  double decoder = 0.001;
  double pose = 1e-3;
};

struct MappingConfig {
  FieldShape shape;
  SceneBounds bounds;
  double grid_std = 0.1;
  double density_bias = -4.0;
  ScheduleConfig schedule;
  LearningRates lr;
  LossWeights weights;
  RenderOptions render;
  double noise_variance = 1.0;  // isotropic Q for the uncertainty diagnostic
  int threads = 1;

  void validate() const;
};

struct WindowFrame {
  int id = 0;
  std::shared_ptr<const Image> image;
  Pose pose;
};

struct FrameWindow {
  int capacity = 20;
  std::vector<WindowFrame> frames;  // ascending id

  std::vector<int> ids() const;
};

using KeyframeSet = std::vector<WindowFrame>;  // ascending id

struct MapState {
  FactorizedField field;
  Adam optimizer;
  KeyframeSet keyframes;
  bool decoder_frozen = false;
  int frames_processed = 0;
  CameraIntrinsics intrinsics;
};

// Loss summary of one optimization pass.
struct StepStats {
  double color = 0.0;
  double warp = 0.0;
  double total = 0.0;
  double mahalanobis = 0.0;  // per-window distance of the last iteration, scaled by 1/w
  double psnr = 0.0;         // over the last iteration's rays
  int iterations = 0;
  int skipped = 0;
};

struct InitResult {
  MapState state;
  std::vector<WindowFrame> frames;  // the init frames with their final poses
  StepStats stats;
  double initial_loss = 0.0;
  double final_loss = 0.0;
};

// All sample counts a ray receives during init iteration `stage`.
std::vector<int> init_sample_schedule(const ScheduleConfig& cfg);

// Builds the stage-`stage` sample set of one ray: stratified bootstrap, then
// `stage` sliding-window refinements driven by density-only renders.
RaySamples init_ray_samples(const FactorizedField& field, const Ray& ray, double near, double far,
                            int stage, const ScheduleConfig& cfg, const RenderOptions& render,
                            Rng& rng);

// `frames` must hold exactly init_frames frames. Frames without a pose get
// one estimated jointly with the map; frame 0 defaults to identity.
InitResult initialize(const std::vector<TrainFrame>& frames, const CameraIntrinsics& intr,
                      const MappingConfig& cfg, Rng& rng);

// Newest `local_frames` locals plus up to active_window - local_frames
// keyframes at uniform stride floor(i * |K| / slots); deduplicated by id.
FrameWindow select_window(const KeyframeSet& keyframes, const std::deque<WindowFrame>& locals,
                          const ScheduleConfig& cfg);

// Drops as many of the oldest locals as frames arrive and appends the new ones.
void advance_window(std::deque<WindowFrame>& locals, const std::vector<WindowFrame>& incoming,
                    const ScheduleConfig& cfg);

// iters_per_update iterations over the window, stepping grid parameters only.
StepStats map_update(MapState& state, const FrameWindow& window, const MappingConfig& cfg, Rng& rng);

struct MetricsRow {
  int step = 0;  // 0 for initialization, then one per update
  int frame = 0;  // frames processed after this step
  StepStats stats;
};

struct SnapshotOptions {
  int every = 0;        // frames; 0 disables periodic snapshots
  bool final = true;    // also snapshot after the last update
  int view_stride = 10; // extraction uses every view_stride-th processed pose
  ExtractOptions extract;
};

struct RunCallbacks {
  std::function<void(const MetricsRow&)> on_metrics;
  std::function<void(int step, double seconds)> on_timing;
  // Called with the frame count that triggered it and every processed pose so far.
  std::function<void(const MapState&, int frame, const std::vector<WindowFrame>& processed)>
      on_snapshot;
};

struct RunResult {
  MapState state;
  std::vector<WindowFrame> processed;
  std::vector<MetricsRow> rows;
  GlobalUncertainty uncertainty;
  int updates = 0;
};

RunResult run_sequence(const FrameSource& source, const MappingConfig& cfg,
                       const SnapshotOptions& snapshots, std::uint64_t seed,
                       const RunCallbacks& callbacks = {});

// Writes out/snap_{frame:06}/ with cloud.ply, rgb_{id}.png, depth_{id}.png
// (newest processed view) and metrics.csv (rows so far).
void write_snapshot(const std::filesystem::path& dir, const MapState& state, int frame,
                    const std::vector<WindowFrame>& processed, const std::vector<MetricsRow>& rows,
                    const SnapshotOptions& options);

std::string metrics_csv_header();
std::string metrics_csv_line(const MetricsRow& row);

// Binary map checkpoint; see docs/checkpoint.md.
void save_checkpoint(const MapState& state, const std::filesystem::path& path);
MapState load_checkpoint(const std::filesystem::path& path);

}  // namespace factormap
