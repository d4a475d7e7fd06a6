#pragma once

// Dataset ingestion (TUM RGB-D and a plain directory layout), the procedural
// synthetic scene used as a verification oracle, and artifact export
// (PNG images, ASCII PLY point clouds).

#include <array>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "factormap/field.hpp"
#include "factormap/geometry.hpp"
#include "factormap/image.hpp"
#include "factormap/random.hpp"
#include "factormap/render.hpp"

namespace factormap {

struct Frame {
  int id = 0;
  double timestamp = 0.0;
  Image image;
  std::optional<Pose> pose;
  std::optional<DepthMap> gt_depth;  // camera z in meters; evaluation only
};

// What the mapper is allowed to see of a frame.
struct TrainFrame {
  int id = 0;
  std::shared_ptr<const Image> image;
  std::optional<Pose> pose;
};

class FrameSource {
 public:
  virtual ~FrameSource() = default;
  virtual std::size_t size() const = 0;
  virtual TrainFrame frame(std::size_t index) const = 0;
  virtual CameraIntrinsics intrinsics() const = 0;
};

// In-memory sequence; strips ground-truth depth from what it hands out.
class FrameSequence : public FrameSource {
 public:
  FrameSequence(std::vector<Frame> frames, CameraIntrinsics intr);
  std::size_t size() const override { return images_.size(); }
  TrainFrame frame(std::size_t index) const override;
  CameraIntrinsics intrinsics() const override { return intr_; }

 private:
  std::vector<std::shared_ptr<const Image>> images_;
  std::vector<std::optional<Pose>> poses_;
  std::vector<int> ids_;
  CameraIntrinsics intr_;
};

// ---------------------------------------------------------------------------
// Images.

Image read_png(const std::filesystem::path& path);
// 8-bit RGB, values clamped from [0, 1]. Written to a temporary then renamed.
void write_png(const Image& image, const std::filesystem::path& path);
// 16-bit single channel, value = round(depth * scale) (TUM uses scale 5000).
void write_depth_png(const DepthMap& depth, const std::filesystem::path& path,
                     double scale = 5000.0);
DepthMap read_depth_png(const std::filesystem::path& path, double scale = 5000.0);

// ---------------------------------------------------------------------------
// TUM RGB-D.

struct TumRecord {
  double timestamp = 0.0;
  std::filesystem::path rgb_path;
  Pose pose;
  bool renormalized = false;
};

struct TumSequenceInfo {
  std::vector<TumRecord> records;
  int dropped = 0;       // rgb frames without a pose within the tolerance
  int renormalized = 0;  // poses whose quaternion needed renormalizing
};

// Reads rgb.txt and groundtruth.txt, associating each image with the nearest
// pose within `max_dt` seconds. Throws DataError with file and line context.
TumSequenceInfo load_tum(const std::filesystem::path& dir, double max_dt = 0.02);

// Lazily decoding TUM source.
class TumSource : public FrameSource {
 public:
  TumSource(TumSequenceInfo info, CameraIntrinsics intr);
  std::size_t size() const override { return info_.records.size(); }
  TrainFrame frame(std::size_t index) const override;
  CameraIntrinsics intrinsics() const override { return intr_; }
  const TumSequenceInfo& info() const { return info_; }

 private:
  TumSequenceInfo info_;
  CameraIntrinsics intr_;
};

// ---------------------------------------------------------------------------
// Plain directory layout: frames/%06d.png, traj.txt (one "tx ty tz qx qy qz qw"
// per frame), optional intrinsics.txt ("fx fy cx cy width height"),
// bounds.txt ("minx miny minz maxx maxy maxz") and depth/%06d.png.

struct SimpleDataset {
  std::filesystem::path dir;
  std::vector<Pose> poses;
  std::optional<CameraIntrinsics> intrinsics;
  std::optional<SceneBounds> bounds;
};

SimpleDataset load_simple(const std::filesystem::path& dir);
void write_simple(const std::filesystem::path& dir, const std::vector<Frame>& frames,
                  const CameraIntrinsics& intr, const std::optional<SceneBounds>& bounds);

class SimpleSource : public FrameSource {
 public:
  SimpleSource(SimpleDataset ds, CameraIntrinsics intr);
  std::size_t size() const override { return ds_.poses.size(); }
  TrainFrame frame(std::size_t index) const override;
  CameraIntrinsics intrinsics() const override { return intr_; }

 private:
  SimpleDataset ds_;
  CameraIntrinsics intr_;
};

// ---------------------------------------------------------------------------
// Synthetic scene.

struct SceneBox {
  Vec3 min = Vec3::Zero();
  Vec3 max = Vec3::Ones();
};

struct SyntheticSceneSpec {
  Vec3 room_min{-2.5, -2.5, 0.0};
  Vec3 room_max{2.5, 2.5, 2.5};
  std::vector<SceneBox> boxes{{{-0.6, -0.5, 0.0}, {0.2, 0.3, 0.9}},
                              {{0.5, 0.4, 0.0}, {1.1, 1.0, 0.5}}};
  double checker_period = 0.5;
  // Per-face checker colors: every channel of the light and dark squares is
  // drawn uniformly from these ranges.
  std::array<double, 2> light_range{0.25, 0.95};
  std::array<double, 2> dark_range{0.05, 0.6};
  Vec3 background{0.0, 0.0, 0.0};
  double far = 20.0;  // depth assigned to rays that hit nothing
  // Circular trajectory around `look_at`, sweeping `orbit_sweep` radians.
  Vec3 orbit_center{0.0, 0.0, 1.2};
  double orbit_radius = 1.4;
  double orbit_start = 0.0;
  double orbit_sweep = 6.283185307179586;
  Vec3 look_at{0.0, 0.0, 0.6};
  int frame_count = 60;
  CameraIntrinsics intrinsics{56.0, 56.0, 32.0, 32.0, 64, 64};

  void validate() const;
  SceneBounds bounds() const { return {room_min, room_max}; }
};

// Face colors are drawn from `rng`; everything else is analytic.
struct SyntheticScene {
  SyntheticSceneSpec spec;
  std::vector<std::array<Vec3, 2>> face_colors;  // 6 room faces, then 6 per box

  struct Hit {
    double t = 0.0;
    Vec3 color = Vec3::Zero();
    bool hit = false;
  };
  // Nearest surface along a unit-direction ray.
  Hit trace(const Ray& ray) const;
};

SyntheticScene make_scene(const SyntheticSceneSpec& spec, Rng& rng);
Pose orbit_pose(const SyntheticSceneSpec& spec, int index);
Pose look_at_pose(const Vec3& eye, const Vec3& target, const Vec3& up = Vec3::UnitZ());
// One frame per trajectory pose, with analytic color and gt depth.
std::vector<Frame> synth_scene(const SyntheticSceneSpec& spec, Rng& rng);
Frame render_synthetic(const SyntheticScene& scene, const Pose& pose, int id);

// Surface points obtained by lifting gt depth of every `view_stride`-th frame
// at every `pixel_stride`-th pixel.
struct ColoredPoint {
  Vec3 position = Vec3::Zero();
  std::array<std::uint8_t, 3> color{};
  bool operator==(const ColoredPoint&) const = default;
};
using ColoredPointCloud = std::vector<ColoredPoint>;

ColoredPointCloud gt_surface_points(const std::vector<Frame>& frames, const CameraIntrinsics& intr,
                                    int view_stride = 1, int pixel_stride = 1);

// ---------------------------------------------------------------------------
// Point clouds.

struct ExtractOptions {
  int pixel_stride = 4;
  double opacity_floor = 0.5;
  ViewRenderOptions render;
};

// Renders each view at every `pixel_stride`-th pixel and lifts pixels whose
// opacity reaches the floor to colored points at their normalized depth,
// deduplicated on a voxel grid of half the field cell size.
ColoredPointCloud extract_pointcloud(const FactorizedField& field, const std::vector<Pose>& views,
                                     const CameraIntrinsics& intr, const ExtractOptions& options);

// ASCII PLY: x y z (float), red green blue (uchar).
void write_ply(const ColoredPointCloud& cloud, const std::filesystem::path& path);
ColoredPointCloud read_ply(const std::filesystem::path& path);

// Writes `contents` to a temporary sibling and renames it into place.
void write_file_atomic(const std::filesystem::path& path, const std::string& contents);

}  // namespace factormap
