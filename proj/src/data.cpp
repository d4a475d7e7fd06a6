#include "factormap/data.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <sstream>
#include <unordered_set>

#include "factormap/error.hpp"

namespace factormap {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------

FrameSequence::FrameSequence(std::vector<Frame> frames, CameraIntrinsics intr) : intr_(intr) {
  for (Frame& f : frames) {
    images_.push_back(std::make_shared<const Image>(std::move(f.image)));
    poses_.push_back(f.pose);
    ids_.push_back(f.id);
  }
}

TrainFrame FrameSequence::frame(std::size_t index) const {
  if (index >= images_.size()) throw DataError("frame index out of range");
  return {ids_[index], images_[index], poses_[index]};
}

// ---------------------------------------------------------------------------

void write_file_atomic(const fs::path& path, const std::string& contents) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary);
    if (!os) throw DataError("cannot open " + tmp.string() + " for writing");
    os << contents;
    if (!os) throw DataError("write failed: " + tmp.string());
  }
  fs::rename(tmp, path);
}

Image read_png(const fs::path& path) {
  png_image img;
  std::memset(&img, 0, sizeof(img));
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.c_str()))
    throw DataError("cannot read PNG " + path.string() + ": " + img.message);
  img.format = PNG_FORMAT_RGB;
  std::vector<png_byte> buf(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, buf.data(), 0, nullptr)) {
    png_image_free(&img);
    throw DataError("cannot decode PNG " + path.string() + ": " + img.message);
  }
  Image out(static_cast<int>(img.width), static_cast<int>(img.height));
  for (std::size_t i = 0; i < buf.size(); ++i) out.data()[i] = buf[i] / 255.0f;
  return out;
}

void write_png(const Image& image, const fs::path& path) {
  if (image.empty()) throw InvalidInput("write_png: empty image");
  std::vector<png_byte> buf(image.data().size());
  for (std::size_t i = 0; i < buf.size(); ++i) {
    const float v = std::clamp(image.data()[i], 0.0f, 1.0f);
    buf[i] = static_cast<png_byte>(std::lround(v * 255.0f));
  }
  png_image img;
  std::memset(&img, 0, sizeof(img));
  img.version = PNG_IMAGE_VERSION;
  img.width = image.width();
  img.height = image.height();
  img.format = PNG_FORMAT_RGB;
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  if (!png_image_write_to_file(&img, tmp.c_str(), 0, buf.data(), 0, nullptr))
    throw DataError("cannot write PNG " + path.string() + ": " + img.message);
  fs::rename(tmp, path);
}

void write_depth_png(const DepthMap& depth, const fs::path& path, double scale) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  FILE* fp = std::fopen(tmp.c_str(), "wb");
  if (!fp) throw DataError("cannot open " + tmp.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
    throw DataError("cannot write depth PNG " + path.string());
  }
  png_init_io(png, fp);
  png_set_IHDR(png, info, depth.width, depth.height, 16, PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<png_byte> row(2ull * depth.width);
  for (int v = 0; v < depth.height; ++v) {
    for (int u = 0; u < depth.width; ++u) {
      const double d = std::clamp(std::round(depth.at(u, v) * scale), 0.0, 65535.0);
      const auto q = static_cast<std::uint16_t>(d);
      row[2 * u] = static_cast<png_byte>(q >> 8);
      row[2 * u + 1] = static_cast<png_byte>(q & 0xff);
    }
    png_write_row(png, row.data());
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  std::fclose(fp);
  fs::rename(tmp, path);
}

DepthMap read_depth_png(const fs::path& path, double scale) {
  FILE* fp = std::fopen(path.c_str(), "rb");
  if (!fp) throw DataError("cannot open " + path.string());
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    throw DataError("cannot decode depth PNG " + path.string());
  }
  png_init_io(png, fp);
  png_read_info(png, info);
  const int w = static_cast<int>(png_get_image_width(png, info));
  const int h = static_cast<int>(png_get_image_height(png, info));
  if (png_get_bit_depth(png, info) != 16 || png_get_color_type(png, info) != PNG_COLOR_TYPE_GRAY) {
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    throw DataError("depth PNG must be 16-bit grayscale: " + path.string());
  }
  DepthMap out(w, h);
  std::vector<png_byte> row(2ull * w);
  for (int v = 0; v < h; ++v) {
    png_read_row(png, row.data(), nullptr);
    for (int u = 0; u < w; ++u) {
      const int q = (row[2 * u] << 8) | row[2 * u + 1];
      out.at(u, v) = q / scale;
    }
  }
  png_destroy_read_struct(&png, &info, nullptr);
  std::fclose(fp);
  return out;
}

// ---------------------------------------------------------------------------
// TUM

namespace {

struct TimedLine {
  double timestamp;
  std::string rest;
  int line;
};

std::vector<TimedLine> read_timed_lines(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw DataError("missing file: " + path.string());
  std::vector<TimedLine> out;
  std::string line;
  int n = 0;
  while (std::getline(is, line)) {
    ++n;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    std::istringstream ls(line);
    double ts;
    if (!(ls >> ts)) throw DataError(path.string() + ":" + std::to_string(n) + ": bad timestamp");
    std::string rest;
    std::getline(ls, rest);
    const auto b = rest.find_first_not_of(" \t");
    const auto e = rest.find_last_not_of(" \t\r");
    rest = b == std::string::npos ? "" : rest.substr(b, e - b + 1);
    if (rest.empty()) throw DataError(path.string() + ":" + std::to_string(n) + ": missing fields");
    out.push_back({ts, rest, n});
  }
  return out;
}

}  // namespace

TumSequenceInfo load_tum(const fs::path& dir, double max_dt) {
  const std::vector<TimedLine> rgb = read_timed_lines(dir / "rgb.txt");
  std::vector<TimedLine> gt_lines = read_timed_lines(dir / "groundtruth.txt");
  struct Stamped {
    double ts;
    Pose pose;
    bool renormalized;
  };
  std::vector<Stamped> gt;
  for (const TimedLine& l : gt_lines) {
    try {
      bool renorm = false;
      const Pose p = Pose::parse_tum(l.rest, &renorm);
      gt.push_back({l.timestamp, p, renorm});
    } catch (const InvalidInput& e) {
      throw DataError((dir / "groundtruth.txt").string() + ":" + std::to_string(l.line) + ": " + e.what());
    }
  }
  std::stable_sort(gt.begin(), gt.end(), [](const Stamped& a, const Stamped& b) { return a.ts < b.ts; });

  TumSequenceInfo info;
  for (const TimedLine& l : rgb) {
    std::istringstream ls(l.rest);
    std::string file;
    ls >> file;
    if (gt.empty()) {
      ++info.dropped;
      continue;
    }
    auto it = std::lower_bound(gt.begin(), gt.end(), l.timestamp,
                               [](const Stamped& s, double t) { return s.ts < t; });
    const Stamped* best = nullptr;
    double best_dt = 0.0;
    for (auto cand : {it, it == gt.begin() ? gt.end() : it - 1}) {
      if (cand == gt.end()) continue;
      const double dt = std::abs(cand->ts - l.timestamp);
      if (!best || dt < best_dt) {
        best = &*cand;
        best_dt = dt;
      }
    }
    if (!best || best_dt > max_dt) {
      ++info.dropped;
      continue;
    }
    info.records.push_back({l.timestamp, dir / file, best->pose, best->renormalized});
    if (best->renormalized) ++info.renormalized;
  }
  return info;
}

TumSource::TumSource(TumSequenceInfo info, CameraIntrinsics intr)
    : info_(std::move(info)), intr_(intr) {}

TrainFrame TumSource::frame(std::size_t index) const {
  if (index >= info_.records.size()) throw DataError("frame index out of range");
  const TumRecord& r = info_.records[index];
  return {static_cast<int>(index), std::make_shared<const Image>(read_png(r.rgb_path)), r.pose};
}

// ---------------------------------------------------------------------------
// Simple directory layout

namespace {

std::string frame_name(int i) {
  std::ostringstream os;
  os << std::setw(6) << std::setfill('0') << i << ".png";
  return os.str();
}

}  // namespace

SimpleDataset load_simple(const fs::path& dir) {
  SimpleDataset ds;
  ds.dir = dir;
  std::ifstream traj(dir / "traj.txt");
  if (!traj) throw DataError("missing file: " + (dir / "traj.txt").string());
  std::string line;
  int n = 0;
  while (std::getline(traj, line)) {
    ++n;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    try {
      ds.poses.push_back(Pose::parse_tum(line));
    } catch (const InvalidInput& e) {
      throw DataError((dir / "traj.txt").string() + ":" + std::to_string(n) + ": " + e.what());
    }
  }
  if (std::ifstream is(dir / "intrinsics.txt"); is) {
    CameraIntrinsics k;
    if (!(is >> k.fx >> k.fy >> k.cx >> k.cy >> k.width >> k.height))
      throw DataError("malformed " + (dir / "intrinsics.txt").string());
    ds.intrinsics = k;
  }
  if (std::ifstream is(dir / "bounds.txt"); is) {
    SceneBounds b;
    if (!(is >> b.min.x() >> b.min.y() >> b.min.z() >> b.max.x() >> b.max.y() >> b.max.z()))
      throw DataError("malformed " + (dir / "bounds.txt").string());
    ds.bounds = b;
  }
  return ds;
}

void write_simple(const fs::path& dir, const std::vector<Frame>& frames,
                  const CameraIntrinsics& intr, const std::optional<SceneBounds>& bounds) {
  std::ostringstream traj;
  for (std::size_t i = 0; i < frames.size(); ++i) {
    write_png(frames[i].image, dir / "frames" / frame_name(static_cast<int>(i)));
    if (frames[i].gt_depth) write_depth_png(*frames[i].gt_depth, dir / "depth" / frame_name(static_cast<int>(i)));
    traj << frames[i].pose.value_or(Pose::identity()).to_tum() << '\n';
  }
  write_file_atomic(dir / "traj.txt", traj.str());
  std::ostringstream k;
  k << std::setprecision(17) << intr.fx << ' ' << intr.fy << ' ' << intr.cx << ' ' << intr.cy
    << ' ' << intr.width << ' ' << intr.height << '\n';
  write_file_atomic(dir / "intrinsics.txt", k.str());
  if (bounds) {
    std::ostringstream b;
    b << std::setprecision(17) << bounds->min.x() << ' ' << bounds->min.y() << ' '
      << bounds->min.z() << ' ' << bounds->max.x() << ' ' << bounds->max.y() << ' '
      << bounds->max.z() << '\n';
    write_file_atomic(dir / "bounds.txt", b.str());
  }
}

SimpleSource::SimpleSource(SimpleDataset ds, CameraIntrinsics intr)
    : ds_(std::move(ds)), intr_(intr) {}

TrainFrame SimpleSource::frame(std::size_t index) const {
  if (index >= ds_.poses.size()) throw DataError("frame index out of range");
  const fs::path p = ds_.dir / "frames" / frame_name(static_cast<int>(index));
  return {static_cast<int>(index), std::make_shared<const Image>(read_png(p)), ds_.poses.at(index)};
}

// ---------------------------------------------------------------------------
// Synthetic scene

void SyntheticSceneSpec::validate() const {
  if (!(room_min.array() < room_max.array()).all()) throw InvalidInput("scene: empty room");
  for (const SceneBox& b : boxes) {
    if (!(b.min.array() < b.max.array()).all()) throw InvalidInput("scene: empty box");
    if (!(b.min.array() >= room_min.array()).all() || !(b.max.array() <= room_max.array()).all())
      throw InvalidInput("scene: box outside the room");
  }
  if (frame_count < 1) throw InvalidInput("scene: frame_count must be positive");
  if (!(checker_period > 0.0)) throw InvalidInput("scene: checker period must be positive");
  for (const auto& r : {light_range, dark_range})
    if (!(0.0 <= r[0] && r[0] <= r[1] && r[1] <= 1.0)) throw InvalidInput("scene: palette range outside [0, 1]");
  intrinsics.validate();
  for (int i = 0; i < frame_count; ++i) {
    const Vec3 eye = orbit_pose(*this, i).translation;
    if (!(eye.array() > room_min.array()).all() || !(eye.array() < room_max.array()).all())
      throw InvalidInput("scene: trajectory leaves the room");
    for (const SceneBox& b : boxes) {
      if ((eye.array() >= b.min.array()).all() && (eye.array() <= b.max.array()).all())
        throw InvalidInput("scene: trajectory passes through a box");
    }
  }
}

Pose look_at_pose(const Vec3& eye, const Vec3& target, const Vec3& up) {
  const Vec3 f = (target - eye).normalized();
  Vec3 right = f.cross(up);
  if (right.norm() < 1e-9) right = f.unitOrthogonal();
  right.normalize();
  const Vec3 down = f.cross(right);
  Mat3 r;
  r.col(0) = right;
  r.col(1) = down;
  r.col(2) = f;
  return Pose::from_rt(r, eye);
}

Pose orbit_pose(const SyntheticSceneSpec& spec, int index) {
  const double a = spec.orbit_start + spec.orbit_sweep * index / static_cast<double>(spec.frame_count);
  const Vec3 eye =
      spec.orbit_center + spec.orbit_radius * Vec3(std::cos(a), std::sin(a), 0.0);
  return look_at_pose(eye, spec.look_at);
}

SyntheticScene make_scene(const SyntheticSceneSpec& spec, Rng& rng) {
  spec.validate();
  SyntheticScene s;
  s.spec = spec;
  const std::size_t faces = 6 * (1 + spec.boxes.size());
  for (std::size_t f = 0; f < faces; ++f) {
    Vec3 a, b;
    for (int c = 0; c < 3; ++c) a[c] = rng.uniform(spec.light_range[0], spec.light_range[1]);
    for (int c = 0; c < 3; ++c) b[c] = rng.uniform(spec.dark_range[0], spec.dark_range[1]);
    s.face_colors.push_back({a, b});
  }
  return s;
}

namespace {

Vec3 face_texture(const SyntheticScene& s, int face, int axis, const Vec3& p) {
  const auto [b, c] = plane_axes(axis);
  const double per = s.spec.checker_period;
  const long i = static_cast<long>(std::floor(p[b] / per)) + static_cast<long>(std::floor(p[c] / per));
  const Vec3& base = s.face_colors[face][i & 1];
  const double shade =
      0.8 + 0.2 * std::sin(2.0 * std::numbers::pi * (p[b] + 0.5 * p[c]) / (3.0 * per));
  return base * shade;
}

}  // namespace

SyntheticScene::Hit SyntheticScene::trace(const Ray& ray) const {
  Hit best;
  best.t = std::numeric_limits<double>::infinity();
  // Room interior: the ray leaves through the face whose slab closes first.
  {
    double t_exit = std::numeric_limits<double>::infinity();
    int axis = -1;
    for (int a = 0; a < 3; ++a) {
      const double d = ray.direction[a];
      if (d == 0.0) continue;
      const double plane = d > 0.0 ? spec.room_max[a] : spec.room_min[a];
      const double t = (plane - ray.origin[a]) / d;
      if (t < t_exit) {
        t_exit = t;
        axis = a;
      }
    }
    const bool inside =
        (ray.origin.array() > spec.room_min.array()).all() && (ray.origin.array() < spec.room_max.array()).all();
    if (inside && axis >= 0 && t_exit > 0.0) {
      const int face = 2 * axis + (ray.direction[axis] > 0.0 ? 1 : 0);
      best = {t_exit, face_texture(*this, face, axis, ray.at(t_exit)), true};
    }
  }
  for (std::size_t k = 0; k < spec.boxes.size(); ++k) {
    const SceneBox& box = spec.boxes[k];
    double t_enter = -std::numeric_limits<double>::infinity();
    double t_exit = std::numeric_limits<double>::infinity();
    int axis = -1;
    bool miss = false;
    for (int a = 0; a < 3 && !miss; ++a) {
      const double o = ray.origin[a];
      const double d = ray.direction[a];
      if (d == 0.0) {
        miss = o < box.min[a] || o > box.max[a];
        continue;
      }
      double t0 = (box.min[a] - o) / d;
      double t1 = (box.max[a] - o) / d;
      if (t0 > t1) std::swap(t0, t1);
      if (t0 > t_enter) {
        t_enter = t0;
        axis = a;
      }
      t_exit = std::min(t_exit, t1);
    }
    if (miss || axis < 0 || t_enter > t_exit || t_enter <= 0.0 || t_enter >= best.t) continue;
    const int face = 6 * static_cast<int>(k + 1) + 2 * axis + (ray.direction[axis] > 0.0 ? 0 : 1);
    best = {t_enter, face_texture(*this, face, axis, ray.at(t_enter)), true};
  }
  if (!best.hit) best = {spec.far, spec.background, false};
  return best;
}

Frame render_synthetic(const SyntheticScene& scene, const Pose& pose, int id) {
  const CameraIntrinsics& k = scene.spec.intrinsics;
  Frame f;
  f.id = id;
  f.timestamp = id;
  f.pose = pose;
  f.image = Image(k.width, k.height);
  f.gt_depth = DepthMap(k.width, k.height);
  for (int v = 0; v < k.height; ++v) {
    for (int u = 0; u < k.width; ++u) {
      const PixelCoord px = pixel_center(u, v);
      const Ray ray = ray_for_pixel(k, pose, px);
      const SyntheticScene::Hit hit = scene.trace(ray);
      f.image.set(u, v, hit.color);
      f.gt_depth->at(u, v) = hit.hit ? hit.t / k.pixel_to_camera(px.u, px.v).norm() : scene.spec.far;
    }
  }
  return f;
}

std::vector<Frame> synth_scene(const SyntheticSceneSpec& spec, Rng& rng) {
  const SyntheticScene scene = make_scene(spec, rng);
  std::vector<Frame> frames;
  frames.reserve(spec.frame_count);
  for (int i = 0; i < spec.frame_count; ++i)
    frames.push_back(render_synthetic(scene, orbit_pose(spec, i), i));
  return frames;
}

namespace {

std::array<std::uint8_t, 3> to_bytes(const Vec3& c) {
  std::array<std::uint8_t, 3> out;
  for (int k = 0; k < 3; ++k)
    out[k] = static_cast<std::uint8_t>(std::lround(std::clamp(c[k], 0.0, 1.0) * 255.0));
  return out;
}

}  // namespace

ColoredPointCloud gt_surface_points(const std::vector<Frame>& frames, const CameraIntrinsics& intr,
                                    int view_stride, int pixel_stride) {
  ColoredPointCloud cloud;
  for (std::size_t i = 0; i < frames.size(); i += std::max(1, view_stride)) {
    const Frame& f = frames[i];
    if (!f.gt_depth || !f.pose) continue;
    for (int v = 0; v < intr.height; v += std::max(1, pixel_stride)) {
      for (int u = 0; u < intr.width; u += std::max(1, pixel_stride)) {
        const double z = f.gt_depth->at(u, v);
        if (!(z > 0.0)) continue;
        cloud.push_back({unproject(intr, *f.pose, pixel_center(u, v), z), to_bytes(f.image.at(u, v))});
      }
    }
  }
  return cloud;
}

// ---------------------------------------------------------------------------
// Point clouds

ColoredPointCloud extract_pointcloud(const FactorizedField& field, const std::vector<Pose>& views,
                                     const CameraIntrinsics& intr, const ExtractOptions& options) {
  if (views.empty()) throw InvalidInput("extract_pointcloud: need at least one view");
  intr.validate();
  const SceneBounds& bounds = field.bounds();
  const Vec3 voxel = 0.5 * bounds.extent() / (field.shape().res - 1);
  std::unordered_set<std::uint64_t> occupied;
  ColoredPointCloud cloud;
  RayTape tape;
  const int stride = std::max(1, options.pixel_stride);
  for (std::size_t vi = 0; vi < views.size(); ++vi) {
    for (int v = 0; v < intr.height; v += stride) {
      for (int u = 0; u < intr.width; u += stride) {
        const Ray ray = ray_for_pixel(intr, views[vi], pixel_center(u, v));
        double near = 0.0, far = 0.0;
        if (!ray_span(bounds, ray, options.render.near_min, &near, &far)) continue;
        // Seeded by pixel only, so identical views give identical points.
        Rng rng(Rng::derive_seed({options.render.seed, static_cast<std::uint64_t>(v) * intr.width + u}));
        const RaySamples s = importance_samples(field, ray, near, far, options.render.coarse,
                                                options.render.fine, rng, options.render.render);
        const RenderResult& r = tape.forward(field, ray, s, options.render.render);
        if (r.opacity < options.opacity_floor) continue;
        const Vec3 p = ray.at(r.normalized_depth);
        if (!p.allFinite() || !bounds.contains(p)) continue;
        const Vec3 cell = (p - bounds.min).cwiseQuotient(voxel);
        const auto ix = static_cast<std::uint64_t>(std::floor(cell.x()));
        const auto iy = static_cast<std::uint64_t>(std::floor(cell.y()));
        const auto iz = static_cast<std::uint64_t>(std::floor(cell.z()));
        const std::uint64_t key = (ix << 42) ^ (iy << 21) ^ iz;
        if (!occupied.insert(key).second) continue;
        cloud.push_back({p, to_bytes(r.color)});
      }
    }
  }
  return cloud;
}

void write_ply(const ColoredPointCloud& cloud, const fs::path& path) {
  std::string out;
  out.reserve(64 + cloud.size() * 48);
  out += "ply\nformat ascii 1.0\nelement vertex " + std::to_string(cloud.size()) +
         "\nproperty float x\nproperty float y\nproperty float z\n"
         "property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n";
  char line[128];
  for (const ColoredPoint& p : cloud) {
    std::snprintf(line, sizeof(line), "%.9g %.9g %.9g %u %u %u\n",
                  static_cast<double>(static_cast<float>(p.position.x())),
                  static_cast<double>(static_cast<float>(p.position.y())),
                  static_cast<double>(static_cast<float>(p.position.z())), p.color[0], p.color[1],
                  p.color[2]);
    out += line;
  }
  write_file_atomic(path, out);
}

ColoredPointCloud read_ply(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open " + path.string());
  std::string line;
  if (!std::getline(is, line) || line.rfind("ply", 0) != 0) throw DataError(path.string() + ": not a PLY file");
  std::size_t count = 0;
  bool in_vertex = false;
  bool ascii = false;
  std::vector<std::string> props;
  int n = 1;
  while (std::getline(is, line)) {
    ++n;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::istringstream ls(line);
    std::string kw;
    ls >> kw;
    if (kw == "format") {
      std::string fmt;
      ls >> fmt;
      ascii = fmt == "ascii";
    } else if (kw == "element") {
      std::string name;
      ls >> name;
      in_vertex = name == "vertex";
      if (in_vertex) ls >> count;
    } else if (kw == "property" && in_vertex) {
      std::string type, name;
      ls >> type >> name;
      props.push_back(name);
    } else if (kw == "end_header") {
      break;
    }
  }
  if (!ascii) throw DataError(path.string() + ": only ASCII PLY is supported");
  auto index_of = [&](const std::string& name) {
    const auto it = std::find(props.begin(), props.end(), name);
    return it == props.end() ? -1 : static_cast<int>(it - props.begin());
  };
  const int ix = index_of("x"), iy = index_of("y"), iz = index_of("z");
  const int ir = index_of("red"), ig = index_of("green"), ib = index_of("blue");
  if (ix < 0 || iy < 0 || iz < 0) throw DataError(path.string() + ": missing x/y/z properties");
  ColoredPointCloud cloud;
  cloud.reserve(count);
  std::vector<double> vals(props.size());
  for (std::size_t i = 0; i < count; ++i) {
    ++n;
    if (!std::getline(is, line)) throw DataError(path.string() + ": truncated vertex list");
    std::istringstream ls(line);
    for (double& v : vals) {
      if (!(ls >> v)) throw DataError(path.string() + ":" + std::to_string(n) + ": malformed vertex");
    }
    ColoredPoint p;
    p.position = {static_cast<float>(vals[ix]), static_cast<float>(vals[iy]), static_cast<float>(vals[iz])};
    if (ir >= 0 && ig >= 0 && ib >= 0) {
      p.color = {static_cast<std::uint8_t>(vals[ir]), static_cast<std::uint8_t>(vals[ig]),
                 static_cast<std::uint8_t>(vals[ib])};
    }
    cloud.push_back(p);
  }
  return cloud;
}

}  // namespace factormap
