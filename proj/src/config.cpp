#include "factormap/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "factormap/error.hpp"
#include "json.hpp"

namespace factormap {

using nlohmann::json;

namespace {

// Reads the keys of one JSON object, remembering which were consumed so that
// leftovers can be reported as unknown.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError("config key " + where() + " must be an object");
  }

  template <typename T>
  T get(const std::string& key) {
    const json& v = at(key);
    try {
      if constexpr (std::is_same_v<T, bool>) {
        if (!v.is_boolean()) throw ConfigError("");
      } else if constexpr (std::is_integral_v<T>) {
        if (!v.is_number_integer()) throw ConfigError("");
        if (std::is_unsigned_v<T> && v.is_number_integer() && !v.is_number_unsigned() && v.get<std::int64_t>() < 0)
          throw ConfigError("");
      } else if constexpr (std::is_floating_point_v<T>) {
        if (!v.is_number()) throw ConfigError("");
      } else if constexpr (std::is_same_v<T, std::string>) {
        if (!v.is_string()) throw ConfigError("");
      }
      return v.get<T>();
    } catch (const std::exception&) {
      throw ConfigError("config key " + name(key) + " has the wrong type");
    }
  }

  Vec3 vec3(const std::string& key) {
    const json& v = at(key);
    if (!v.is_array() || v.size() != 3 || !v[0].is_number() || !v[1].is_number() || !v[2].is_number())
      throw ConfigError("config key " + name(key) + " must be an array of 3 numbers");
    return {v[0].get<double>(), v[1].get<double>(), v[2].get<double>()};
  }

  std::array<double, 2> range(const std::string& key) {
    const json& v = at(key);
    if (!v.is_array() || v.size() != 2 || !v[0].is_number() || !v[1].is_number())
      throw ConfigError("config key " + name(key) + " must be an array of 2 numbers");
    return {v[0].get<double>(), v[1].get<double>()};
  }

  std::vector<int> ints(const std::string& key) {
    const json& v = at(key);
    if (!v.is_array()) throw ConfigError("config key " + name(key) + " must be an array");
    std::vector<int> out;
    for (const json& e : v) {
      if (!e.is_number_integer()) throw ConfigError("config key " + name(key) + " must hold integers");
      out.push_back(e.get<int>());
    }
    return out;
  }

  Section sub(const std::string& key) { return Section(at(key), name(key)); }
  const json& raw(const std::string& key) { return at(key); }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!used_.count(it.key())) throw ConfigError("unknown config key: " + name(it.key()));
    }
  }

 private:
  const json& at(const std::string& key) {
    used_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) throw ConfigError("missing config key: " + name(key));
    return *it;
  }
  std::string name(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }
  std::string where() const { return path_.empty() ? "<root>" : path_; }

  const json& j_;
  std::string path_;
  std::set<std::string> used_;
};

json vec(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }

json intrinsics_json(const CameraIntrinsics& k) {
  return {{"fx", k.fx}, {"fy", k.fy}, {"cx", k.cx}, {"cy", k.cy}, {"width", k.width}, {"height", k.height}};
}

CameraIntrinsics read_intrinsics(Section s) {
  CameraIntrinsics k;
  k.fx = s.get<double>("fx");
  k.fy = s.get<double>("fy");
  k.cx = s.get<double>("cx");
  k.cy = s.get<double>("cy");
  k.width = s.get<int>("width");
  k.height = s.get<int>("height");
  s.finish();
  return k;
}

json bounds_json(const SceneBounds& b) { return {{"min", vec(b.min)}, {"max", vec(b.max)}}; }

SceneBounds read_bounds(Section s) {
  SceneBounds b{s.vec3("min"), s.vec3("max")};
  s.finish();
  return b;
}

json scene_json(const SyntheticSceneSpec& spec) {
  json boxes = json::array();
  for (const SceneBox& b : spec.boxes) boxes.push_back({{"min", vec(b.min)}, {"max", vec(b.max)}});
  return {{"room_min", vec(spec.room_min)},
          {"room_max", vec(spec.room_max)},
          {"boxes", boxes},
          {"checker_period", spec.checker_period},
          {"light_range", {spec.light_range[0], spec.light_range[1]}},
          {"dark_range", {spec.dark_range[0], spec.dark_range[1]}},
          {"background", vec(spec.background)},
          {"far", spec.far},
          {"orbit_center", vec(spec.orbit_center)},
          {"orbit_radius", spec.orbit_radius},
          {"orbit_start", spec.orbit_start},
          {"orbit_sweep", spec.orbit_sweep},
          {"look_at", vec(spec.look_at)},
          {"frame_count", spec.frame_count},
          {"intrinsics", intrinsics_json(spec.intrinsics)}};
}

SyntheticSceneSpec read_scene(Section s) {
  SyntheticSceneSpec spec;
  spec.room_min = s.vec3("room_min");
  spec.room_max = s.vec3("room_max");
  const json& boxes = s.raw("boxes");
  if (!boxes.is_array()) throw ConfigError("config key boxes must be an array");
  spec.boxes.clear();
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    Section b(boxes[i], "boxes[" + std::to_string(i) + "]");
    spec.boxes.push_back({b.vec3("min"), b.vec3("max")});
    b.finish();
  }
  spec.checker_period = s.get<double>("checker_period");
  spec.light_range = s.range("light_range");
  spec.dark_range = s.range("dark_range");
  spec.background = s.vec3("background");
  spec.far = s.get<double>("far");
  spec.orbit_center = s.vec3("orbit_center");
  spec.orbit_radius = s.get<double>("orbit_radius");
  spec.orbit_start = s.get<double>("orbit_start");
  spec.orbit_sweep = s.get<double>("orbit_sweep");
  spec.look_at = s.vec3("look_at");
  spec.frame_count = s.get<int>("frame_count");
  spec.intrinsics = read_intrinsics(s.sub("intrinsics"));
  s.finish();
  return spec;
}

json to_json(const RunConfig& c) {
  const MappingConfig& m = c.mapping;
  const ScheduleConfig& sc = m.schedule;
  json j;
  j["seed"] = c.seed;
  j["threads"] = c.threads;
  j["field"] = {{"res", m.shape.res},
                {"density_channels", m.shape.density_channels},
                {"appearance_channels", m.shape.appearance_channels},
                {"hidden", m.shape.hidden},
                {"grid_std", m.grid_std},
                {"density_bias", m.density_bias}};
  j["schedule"] = {{"init_frames", sc.init_frames},
                   {"sampler_iters", sc.sampler_iters},
                   {"sample_counts", sc.sample_counts},
                   {"window_kernels", sc.window_kernels},
                   {"init_iters", sc.init_iters},
                   {"init_rays_per_iter", sc.init_rays_per_iter},
                   {"active_window", sc.active_window},
                   {"local_frames", sc.local_frames},
                   {"iters_per_update", sc.iters_per_update},
                   {"frames_per_update", sc.frames_per_update},
                   {"rays_per_iter", sc.rays_per_iter},
                   {"update_coarse", sc.update_coarse},
                   {"update_fine", sc.update_fine},
                   {"keyframe_stride", sc.keyframe_stride},
                   {"near_min", sc.near_min},
                   {"max_skips", sc.max_skips}};
  j["sampler"] = {{"beta", sc.score_beta},
                  {"quantile", sc.search.quantile},
                  {"gap_tol", sc.search.gap_tol},
                  {"padding", sc.search.padding},
                  {"mix_ratio", sc.mix_ratio}};
  j["optim"] = {{"lr_grid", m.lr.grid}, {"lr_decoder", m.lr.decoder}, {"lr_pose", m.lr.pose}};
  j["loss"] = {{"color", m.weights.color}, {"warp", m.weights.warp}, {"noise_variance", m.noise_variance}};
  j["render"] = {{"mode", m.render.mode == CompositeMode::kOccupancy ? "occupancy" : "exp"},
                 {"opacity_floor", m.render.opacity_floor}};
  j["dataset"] = {{"kind", c.dataset.kind},
                  {"path", c.dataset.path},
                  {"max_frames", c.dataset.max_frames},
                  {"intrinsics", intrinsics_json(c.dataset.intrinsics)},
                  {"bounds", bounds_json(c.dataset.bounds)}};
  j["synthetic"] = scene_json(c.synthetic);
  const OutputConfig& o = c.output;
  j["output"] = {{"dir", o.dir},
                 {"run_id", o.run_id},
                 {"snapshot_every", o.snapshot_every},
                 {"snapshot_final", o.snapshot_final},
                 {"view_stride", o.view_stride},
                 {"pixel_stride", o.pixel_stride},
                 {"opacity_floor", o.opacity_floor},
                 {"eval_coarse", o.eval_coarse},
                 {"eval_fine", o.eval_fine},
                 {"eval_threshold", o.eval_threshold}};
  return j;
}

RunConfig from_json(const json& j) {
  Section root(j, "");
  RunConfig c;
  c.seed = root.get<std::uint64_t>("seed");
  c.threads = root.get<int>("threads");
  MappingConfig& m = c.mapping;
  {
    Section s = root.sub("field");
    m.shape.res = s.get<int>("res");
    m.shape.density_channels = s.get<int>("density_channels");
    m.shape.appearance_channels = s.get<int>("appearance_channels");
    m.shape.hidden = s.get<int>("hidden");
    m.grid_std = s.get<double>("grid_std");
    m.density_bias = s.get<double>("density_bias");
    s.finish();
  }
  ScheduleConfig& sc = m.schedule;
  {
    Section s = root.sub("schedule");
    sc.init_frames = s.get<int>("init_frames");
    sc.sampler_iters = s.get<int>("sampler_iters");
    sc.sample_counts = s.ints("sample_counts");
    sc.window_kernels = s.ints("window_kernels");
    sc.init_iters = s.get<int>("init_iters");
    sc.init_rays_per_iter = s.get<int>("init_rays_per_iter");
    sc.active_window = s.get<int>("active_window");
    sc.local_frames = s.get<int>("local_frames");
    sc.iters_per_update = s.get<int>("iters_per_update");
    sc.frames_per_update = s.get<int>("frames_per_update");
    sc.rays_per_iter = s.get<int>("rays_per_iter");
    sc.update_coarse = s.get<int>("update_coarse");
    sc.update_fine = s.get<int>("update_fine");
    sc.keyframe_stride = s.get<int>("keyframe_stride");
    sc.near_min = s.get<double>("near_min");
    sc.max_skips = s.get<int>("max_skips");
    s.finish();
  }
  {
    Section s = root.sub("sampler");
    sc.score_beta = s.get<double>("beta");
    sc.search.quantile = s.get<double>("quantile");
    sc.search.gap_tol = s.get<double>("gap_tol");
    sc.search.padding = s.get<double>("padding");
    sc.mix_ratio = s.get<double>("mix_ratio");
    s.finish();
  }
  {
    Section s = root.sub("optim");
    m.lr.grid = s.get<double>("lr_grid");
    m.lr.decoder = s.get<double>("lr_decoder");
    m.lr.pose = s.get<double>("lr_pose");
    s.finish();
  }
  {
    Section s = root.sub("loss");
    m.weights.color = s.get<double>("color");
    m.weights.warp = s.get<double>("warp");
    m.noise_variance = s.get<double>("noise_variance");
    s.finish();
  }
  {
    Section s = root.sub("render");
    const std::string mode = s.get<std::string>("mode");
    if (mode == "occupancy") {
      m.render.mode = CompositeMode::kOccupancy;
    } else if (mode == "exp") {
      m.render.mode = CompositeMode::kExpAlpha;
    } else {
      throw ConfigError("config key render.mode must be \"occupancy\" or \"exp\"");
    }
    m.render.opacity_floor = s.get<double>("opacity_floor");
    s.finish();
  }
  {
    Section s = root.sub("dataset");
    c.dataset.kind = s.get<std::string>("kind");
    c.dataset.path = s.get<std::string>("path");
    c.dataset.max_frames = s.get<int>("max_frames");
    c.dataset.intrinsics = read_intrinsics(s.sub("intrinsics"));
    c.dataset.bounds = read_bounds(s.sub("bounds"));
    s.finish();
  }
  c.synthetic = read_scene(root.sub("synthetic"));
  {
    Section s = root.sub("output");
    OutputConfig& o = c.output;
    o.dir = s.get<std::string>("dir");
    o.run_id = s.get<std::string>("run_id");
    o.snapshot_every = s.get<int>("snapshot_every");
    o.snapshot_final = s.get<bool>("snapshot_final");
    o.view_stride = s.get<int>("view_stride");
    o.pixel_stride = s.get<int>("pixel_stride");
    o.opacity_floor = s.get<double>("opacity_floor");
    o.eval_coarse = s.get<int>("eval_coarse");
    o.eval_fine = s.get<int>("eval_fine");
    o.eval_threshold = s.get<double>("eval_threshold");
    s.finish();
  }
  root.finish();
  m.threads = c.threads;
  c.validate();
  return c;
}

json parse_or_throw(const std::string& text, const std::string& what) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(what + " is not valid JSON: " + e.what());
  }
}

}  // namespace

void RunConfig::validate() const {
  if (threads < 1) throw ConfigError("config key threads must be at least 1");
  mapping.validate();
  if (dataset.kind != "synthetic" && dataset.kind != "tum" && dataset.kind != "simple")
    throw ConfigError("config key dataset.kind must be synthetic, tum or simple");
  if (dataset.kind != "synthetic" && dataset.path.empty())
    throw ConfigError("config key dataset.path is required for " + dataset.kind + " datasets");
  if (dataset.max_frames < 0) throw ConfigError("config key dataset.max_frames must be non-negative");
  try {
    dataset.intrinsics.validate();
    dataset.bounds.validate();
    if (dataset.kind == "synthetic") synthetic.validate();
  } catch (const InvalidInput& e) {
    throw ConfigError(e.what());
  }
  if (output.snapshot_every < 0) throw ConfigError("config key output.snapshot_every must be non-negative");
  if (output.view_stride < 1) throw ConfigError("config key output.view_stride must be positive");
  if (output.pixel_stride < 1) throw ConfigError("config key output.pixel_stride must be positive");
  if (output.eval_coarse < 1 || output.eval_fine < 0)
    throw ConfigError("config keys output.eval_coarse/eval_fine are out of range");
  if (!(output.eval_threshold > 0.0)) throw ConfigError("config key output.eval_threshold must be positive");
  if (output.run_id.empty() || output.run_id.find('/') != std::string::npos)
    throw ConfigError("config key output.run_id must be a plain name");
}

SnapshotOptions RunConfig::snapshot_options() const {
  SnapshotOptions s;
  s.every = output.snapshot_every;
  s.final = output.snapshot_final;
  s.view_stride = output.view_stride;
  s.extract.pixel_stride = output.pixel_stride;
  s.extract.opacity_floor = output.opacity_floor;
  s.extract.render.coarse = output.eval_coarse;
  s.extract.render.fine = output.eval_fine;
  s.extract.render.near_min = mapping.schedule.near_min;
  s.extract.render.seed = Rng::derive_seed({seed, 3});
  s.extract.render.render = mapping.render;
  return s;
}

std::string config_to_json(const RunConfig& cfg) { return to_json(cfg).dump(2) + "\n"; }

RunConfig config_from_json(const std::string& text) { return from_json(parse_or_throw(text, "config")); }

std::string apply_overrides(const std::string& json_text, const std::vector<std::string>& overrides) {
  json j = parse_or_throw(json_text, "config");
  for (const std::string& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("override must be key=value: " + o);
    const std::string key = o.substr(0, eq);
    const std::string text = o.substr(eq + 1);
    json* node = &j;
    std::size_t start = 0;
    while (true) {
      const auto dot = key.find('.', start);
      const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
      if (!node->is_object() || !node->contains(part)) throw ConfigError("unknown config key: " + key);
      node = &(*node)[part];
      if (dot == std::string::npos) break;
      start = dot + 1;
    }
    json value;
    try {
      value = json::parse(text);
    } catch (const json::parse_error&) {
      value = text;
    }
    *node = value;
  }
  return j.dump();
}

RunConfig load_config(const std::filesystem::path& path, const std::vector<std::string>& overrides) {
  std::string text;
  if (path.empty()) {
    text = to_json(RunConfig{}).dump();
  } else {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot read config file " + path.string());
    std::ostringstream ss;
    ss << is.rdbuf();
    text = ss.str();
  }
  return config_from_json(apply_overrides(text, overrides));
}

std::string scene_spec_to_json(const SyntheticSceneSpec& spec) { return scene_json(spec).dump(2) + "\n"; }

SyntheticSceneSpec scene_spec_from_json(const std::string& text) {
  const json j = parse_or_throw(text, "scene spec");
  SyntheticSceneSpec spec = read_scene(Section(j, ""));
  try {
    spec.validate();
  } catch (const InvalidInput& e) {
    throw ConfigError(e.what());
  }
  return spec;
}

}  // namespace factormap
