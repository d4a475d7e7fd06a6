#include "factormap/pipeline.hpp"

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include "factormap/error.hpp"
#include "factormap/metrics.hpp"

namespace factormap {

void ScheduleConfig::validate() const {
  auto positive = [](int v, const char* name) {
    if (v <= 0) throw ConfigError(std::string("schedule.") + name + " must be positive");
  };
  positive(init_frames, "init_frames");
  positive(sampler_iters, "sampler_iters");
  positive(init_iters, "init_iters");
  positive(init_rays_per_iter, "init_rays_per_iter");
  positive(active_window, "active_window");
  positive(local_frames, "local_frames");
  positive(iters_per_update, "iters_per_update");
  positive(frames_per_update, "frames_per_update");
  positive(rays_per_iter, "rays_per_iter");
  positive(update_coarse, "update_coarse");
  positive(keyframe_stride, "keyframe_stride");
  positive(max_skips, "max_skips");
  if (update_fine < 0) throw ConfigError("schedule.update_fine must be non-negative");
  if (static_cast<int>(sample_counts.size()) != sampler_iters)
    throw ConfigError("schedule.sample_counts must have sampler_iters entries");
  if (static_cast<int>(window_kernels.size()) != sampler_iters)
    throw ConfigError("schedule.window_kernels must have sampler_iters entries");
  for (int c : sample_counts) positive(c, "sample_counts");
  for (int i = 1; i < sampler_iters; ++i) positive(window_kernels[i], "window_kernels");
  if (!(mix_ratio >= 0.0 && mix_ratio <= 1.0)) throw ConfigError("schedule.mix_ratio must be in [0, 1]");
  if (!(score_beta >= 0.0 && score_beta <= 1.0)) throw ConfigError("schedule.score_beta must be in [0, 1]");
  if (!(search.quantile >= 0.0 && search.quantile <= 1.0))
    throw ConfigError("schedule.quantile must be in [0, 1]");
  if (!(search.gap_tol >= 0.0)) throw ConfigError("schedule.gap_tol must be non-negative");
  if (!(search.padding >= 0.0)) throw ConfigError("schedule.padding must be non-negative");
  if (local_frames > active_window) throw ConfigError("schedule.local_frames exceeds active_window");
  if (!(near_min >= 0.0)) throw ConfigError("schedule.near_min must be non-negative");
}

void MappingConfig::validate() const {
  try {
    shape.validate();
    bounds.validate();
    weights.validate();
  } catch (const InvalidInput& e) {
    throw ConfigError(e.what());
  }
  schedule.validate();
  if (!(grid_std >= 0.0)) throw ConfigError("field.grid_std must be non-negative");
  if (!std::isfinite(density_bias)) throw ConfigError("field.density_bias must be finite");
  if (!(lr.grid >= 0.0 && lr.decoder >= 0.0 && lr.pose >= 0.0))
    throw ConfigError("learning rates must be non-negative");
  if (!(noise_variance > 0.0)) throw ConfigError("objective.noise_variance must be positive");
  if (threads < 1) throw ConfigError("threads must be at least 1");
}

std::vector<int> FrameWindow::ids() const {
  std::vector<int> out;
  for (const WindowFrame& f : frames) out.push_back(f.id);
  return out;
}

// ---------------------------------------------------------------------------

namespace {

Adam make_optimizer(const FactorizedField& field, const LearningRates& lr) {
  const FieldLayout& l = field.layout();
  return Adam(l.total(), {{0, l.grid_size(), lr.grid, false}, {l.grid_size(), l.decoder_size(), lr.decoder, false}});
}

int stage_of(int iter, const ScheduleConfig& cfg) {
  return std::min(cfg.sampler_iters - 1,
                  static_cast<int>(static_cast<std::int64_t>(iter) * cfg.sampler_iters / cfg.init_iters));
}

void require_image(const TrainFrame& f, const CameraIntrinsics& intr) {
  if (!f.image || f.image->empty()) throw DataError("frame " + std::to_string(f.id) + " has no image");
  if (f.image->width() != intr.width || f.image->height() != intr.height)
    throw DataError("frame " + std::to_string(f.id) + " does not match the intrinsics' image size");
}

std::string describe(const BatchLoss& l) {
  std::ostringstream os;
  os << "L_c=" << l.color << " L_w=" << l.warp << " total=" << l.total;
  return os.str();
}

// Uniformly drawn pixels over the views, with their sample sets.
template <typename SampleFn>
std::vector<TrainRay> draw_rays(std::span<const TrainingView> views, const CameraIntrinsics& intr,
                                const SceneBounds& bounds, double near_min, int count, Rng& rng,
                                SampleFn&& sample) {
  std::vector<TrainRay> rays;
  rays.reserve(count);
  for (int r = 0; r < count; ++r) {
    TrainRay tr;
    tr.view = static_cast<int>(rng.below(views.size()));
    tr.u = static_cast<int>(rng.below(intr.width));
    tr.v = static_cast<int>(rng.below(intr.height));
    const Ray ray = ray_for_pixel(intr, views[tr.view].pose.pose(), pixel_center(tr.u, tr.v));
    double near = 0.0, far = 0.0;
    if (!ray_span(bounds, ray, near_min, &near, &far)) continue;
    tr.samples = sample(ray, near, far);
    rays.push_back(std::move(tr));
  }
  return rays;
}

double per_ray(double v, std::size_t n) { return n ? v / static_cast<double>(n) : 0.0; }

}  // namespace

std::vector<int> init_sample_schedule(const ScheduleConfig& cfg) {
  std::vector<int> total(cfg.sampler_iters);
  int acc = 0;
  for (int i = 0; i < cfg.sampler_iters; ++i) total[i] = acc += cfg.sample_counts[i];
  return total;
}

RaySamples init_ray_samples(const FactorizedField& field, const Ray& ray, double near, double far,
                            int stage, const ScheduleConfig& cfg, const RenderOptions& render,
                            Rng& rng) {
  RaySamples s = stratified(near, far, cfg.sample_counts[0], rng);
  RenderOptions density_only = render;
  density_only.with_color = false;
  RayTape tape;
  for (int k = 1; k <= stage; ++k) {
    const RenderResult& r = tape.forward(field, ray, s, density_only);
    const ScoreVector sc = score_samples(s, r.weights, cfg.score_beta, cfg.window_kernels[k]);
    const IntervalSet iv = find_intervals(sc.smoothed, s.t, s.near, s.far, cfg.search);
    s = sliding_window_sample(s, r.weights, iv, cfg.sample_counts[k], cfg.mix_ratio, rng);
  }
  return s;
}

InitResult initialize(const std::vector<TrainFrame>& frames, const CameraIntrinsics& intr,
                      const MappingConfig& cfg, Rng& rng) {
  cfg.validate();
  intr.validate();
  const ScheduleConfig& sc = cfg.schedule;
  if (static_cast<int>(frames.size()) != sc.init_frames)
    throw InvalidInput("initialize: expected " + std::to_string(sc.init_frames) + " frames, got " +
                       std::to_string(frames.size()));
  for (const TrainFrame& f : frames) require_image(f, intr);

  InitResult out;
  MapState& st = out.state;
  st.intrinsics = intr;
  st.field = FactorizedField(cfg.shape, cfg.bounds);
  st.field.initialize(rng, cfg.grid_std);
  st.field.set_density_bias(cfg.density_bias);
  st.optimizer = make_optimizer(st.field, cfg.lr);

  std::vector<TrainingView> views(frames.size());
  bool any_trainable = false;
  for (std::size_t i = 0; i < frames.size(); ++i) {
    views[i].image = frames[i].image.get();
    if (frames[i].pose) {
      views[i].pose.base = *frames[i].pose;
    } else {
      // Unposed frames start at the first frame's pose.
      views[i].pose.base = frames[0].pose.value_or(Pose::identity());
      views[i].pose.trainable = i > 0;
      any_trainable = any_trainable || i > 0;
    }
  }
  Adam pose_opt(6 * views.size(), {{0, 6 * views.size(), cfg.lr.pose, !any_trainable}});
  std::vector<double> pose_params(6 * views.size(), 0.0);

  ObjectiveOptions opts;
  opts.weights = cfg.weights;
  opts.render = cfg.render;
  opts.decoder_grad = true;
  opts.pose_grad = any_trainable;
  opts.threads = cfg.threads;

  auto sampler_for = [&](int stage, Rng& r) {
    return [&, stage](const Ray& ray, double near, double far) {
      return init_ray_samples(st.field, ray, near, far, stage, sc, cfg.render, r);
    };
  };
  // Fixed probe batch for the before/after loss comparison.
  const std::uint64_t probe_seed = rng.below(std::uint64_t{1} << 62);
  auto probe_loss = [&]() {
    Rng pr(probe_seed);
    const auto rays = draw_rays(views, intr, cfg.bounds, sc.near_min, sc.init_rays_per_iter, pr,
                                sampler_for(sc.sampler_iters - 1, pr));
    ObjectiveOptions o = opts;
    o.pose_grad = false;
    const BatchLoss l = evaluate_batch(st.field, views, intr, rays, o, nullptr);
    return per_ray(l.total, rays.size());
  };
  out.initial_loss = probe_loss();

  Gradients grads;
  int consecutive = 0;
  BatchLoss last;
  for (int it = 0; it < sc.init_iters; ++it) {
    const int stage = stage_of(it, sc);
    const auto rays = draw_rays(views, intr, cfg.bounds, sc.near_min, sc.init_rays_per_iter, rng,
                                sampler_for(stage, rng));
    BatchLoss l = evaluate_batch(st.field, views, intr, rays, opts, &grads);
    ++out.stats.iterations;
    if (!l.finite) {
      ++out.stats.skipped;
      if (++consecutive >= sc.max_skips)
        throw DivergenceError("initialization diverged at iteration " + std::to_string(it) + ": " +
                              describe(l));
      continue;
    }
    consecutive = 0;
    st.optimizer.step(st.field.params(), grads.field);
    if (any_trainable) {
      pose_opt.step(pose_params, grads.pose);
      for (std::size_t v = 0; v < views.size(); ++v) {
        if (!views[v].pose.trainable) continue;
        std::copy_n(pose_params.begin() + 6 * v, 6, views[v].pose.delta.begin());
      }
    }
    last = std::move(l);
  }
  out.final_loss = probe_loss();

  out.stats.color = last.color;
  out.stats.warp = last.warp;
  out.stats.total = last.total;
  out.stats.mahalanobis = mahalanobis(last.rendered, last.observed, {cfg.noise_variance, {}});
  double se = 0.0;
  for (std::size_t i = 0; i < last.rendered.size(); ++i)
    se += (last.rendered[i] - last.observed[i]).squaredNorm();
  out.stats.psnr = last.rendered.empty() ? 0.0 : psnr_from_mse(se / (3.0 * last.rendered.size()));

  for (std::size_t i = 0; i < frames.size(); ++i) {
    const Pose p = frames[i].pose ? *frames[i].pose : views[i].pose.pose();
    out.frames.push_back({static_cast<int>(i), frames[i].image, p});
    if (static_cast<int>(i) % sc.keyframe_stride == 0) st.keyframes.push_back(out.frames.back());
  }
  st.decoder_frozen = true;
  st.optimizer.groups()[1].frozen = true;
  st.frames_processed = static_cast<int>(frames.size());
  return out;
}

FrameWindow select_window(const KeyframeSet& keyframes, const std::deque<WindowFrame>& locals,
                          const ScheduleConfig& cfg) {
  if (keyframes.empty()) throw InvalidInput("select_window: no keyframes");
  FrameWindow w;
  w.capacity = cfg.active_window;
  const std::size_t n_local = std::min<std::size_t>(cfg.local_frames, locals.size());
  for (std::size_t i = locals.size() - n_local; i < locals.size(); ++i) w.frames.push_back(locals[i]);
  const std::size_t slots = static_cast<std::size_t>(cfg.active_window) - n_local;
  const std::size_t k = keyframes.size();
  const std::size_t take = std::min(slots, k);
  for (std::size_t i = 0; i < take; ++i) {
    const WindowFrame& kf = keyframes[i * k / take];
    const bool dup = std::any_of(w.frames.begin(), w.frames.end(),
                                 [&](const WindowFrame& f) { return f.id == kf.id; });
    if (!dup) w.frames.push_back(kf);
  }
  std::sort(w.frames.begin(), w.frames.end(),
            [](const WindowFrame& a, const WindowFrame& b) { return a.id < b.id; });
  return w;
}

void advance_window(std::deque<WindowFrame>& locals, const std::vector<WindowFrame>& incoming,
                    const ScheduleConfig& cfg) {
  if (incoming.empty() || static_cast<int>(incoming.size()) > cfg.frames_per_update)
    throw InvalidInput("advance_window: expected 1.." + std::to_string(cfg.frames_per_update) +
                       " new frames");
  int last = locals.empty() ? -1 : locals.back().id;
  for (const WindowFrame& f : incoming) {
    if (f.id <= last) throw InvalidInput("advance_window: frame ids must increase");
    last = f.id;
  }
  for (std::size_t i = 0; i < incoming.size() && !locals.empty(); ++i) locals.pop_front();
  for (const WindowFrame& f : incoming) locals.push_back(f);
  while (static_cast<int>(locals.size()) > cfg.local_frames) locals.pop_front();
}

StepStats map_update(MapState& state, const FrameWindow& window, const MappingConfig& cfg, Rng& rng) {
  if (!state.decoder_frozen) throw InvalidInput("map_update: map is not initialized");
  if (window.frames.empty()) throw InvalidInput("map_update: empty window");
  const ScheduleConfig& sc = cfg.schedule;
  std::vector<TrainingView> views(window.frames.size());
  for (std::size_t i = 0; i < views.size(); ++i) {
    if (!window.frames[i].image) throw InvalidInput("map_update: window frame without image");
    views[i].image = window.frames[i].image.get();
    views[i].pose.base = window.frames[i].pose;
  }
  ObjectiveOptions opts;
  opts.weights = cfg.weights;
  opts.render = cfg.render;
  opts.decoder_grad = false;
  opts.pose_grad = false;
  opts.threads = cfg.threads;

  StepStats stats;
  Gradients grads;
  int consecutive = 0;
  int good = 0;
  BatchLoss last;
  for (int it = 0; it < sc.iters_per_update; ++it) {
    const auto rays = draw_rays(views, state.intrinsics, state.field.bounds(), sc.near_min,
                                sc.rays_per_iter, rng, [&](const Ray& ray, double near, double far) {
                                  return importance_samples(state.field, ray, near, far, sc.update_coarse,
                                                            sc.update_fine, rng, cfg.render);
                                });
    BatchLoss l = evaluate_batch(state.field, views, state.intrinsics, rays, opts, &grads);
    ++stats.iterations;
    if (!l.finite) {
      ++stats.skipped;
      std::fprintf(stderr, "map_update: skipping non-finite iteration %d (%s)\n", it, describe(l).c_str());
      if (++consecutive >= sc.max_skips)
        throw DivergenceError("map update diverged after " + std::to_string(consecutive) +
                              " consecutive non-finite iterations: " + describe(l));
      continue;
    }
    consecutive = 0;
    state.optimizer.step(state.field.params(), grads.field);
    stats.color += l.color;
    stats.warp += l.warp;
    stats.total += l.total;
    ++good;
    last = std::move(l);
  }
  if (good > 0) {
    stats.color /= good;
    stats.warp /= good;
    stats.total /= good;
  }
  stats.mahalanobis = mahalanobis(last.rendered, last.observed, {cfg.noise_variance, {}});
  double se = 0.0;
  for (std::size_t i = 0; i < last.rendered.size(); ++i)
    se += (last.rendered[i] - last.observed[i]).squaredNorm();
  stats.psnr = last.rendered.empty() ? 0.0 : psnr_from_mse(se / (3.0 * last.rendered.size()));
  return stats;
}

// ---------------------------------------------------------------------------

RunResult run_sequence(const FrameSource& source, const MappingConfig& cfg,
                       const SnapshotOptions& snapshots, std::uint64_t seed,
                       const RunCallbacks& callbacks) {
  cfg.validate();
  const ScheduleConfig& sc = cfg.schedule;
  const CameraIntrinsics intr = source.intrinsics();
  const int n = static_cast<int>(source.size());
  if (n < sc.init_frames)
    throw DataError("sequence has " + std::to_string(n) + " frames; initialization needs " +
                    std::to_string(sc.init_frames));
  using clock = std::chrono::steady_clock;
  auto seconds = [](clock::time_point a, clock::time_point b) {
    return std::chrono::duration<double>(b - a).count();
  };

  RunResult res;
  int last_snapshot = -1;
  auto maybe_snapshot = [&](int before, int after, bool force) {
    if (!callbacks.on_snapshot) return;
    if (snapshots.every > 0 && before / snapshots.every < after / snapshots.every) {
      callbacks.on_snapshot(res.state, after, res.processed);
      last_snapshot = after;
    }
    if (force && snapshots.final && last_snapshot != after) {
      callbacks.on_snapshot(res.state, after, res.processed);
      last_snapshot = after;
    }
  };
  auto emit = [&](const MetricsRow& row) {
    res.rows.push_back(row);
    if (callbacks.on_metrics) callbacks.on_metrics(row);
  };

  std::vector<TrainFrame> init_frames;
  for (int i = 0; i < sc.init_frames; ++i) {
    TrainFrame f = source.frame(i);
    f.id = i;
    init_frames.push_back(std::move(f));
  }
  Rng init_rng(Rng::derive_seed({seed, 1}));
  auto t0 = clock::now();
  InitResult ir = initialize(init_frames, intr, cfg, init_rng);
  if (callbacks.on_timing) callbacks.on_timing(0, seconds(t0, clock::now()));
  res.state = std::move(ir.state);
  res.processed = ir.frames;
  std::vector<double> distances{ir.stats.mahalanobis};
  emit({0, res.state.frames_processed, ir.stats});
  maybe_snapshot(0, res.state.frames_processed, false);

  std::deque<WindowFrame> locals;
  for (int i = std::max(0, sc.init_frames - sc.local_frames); i < sc.init_frames; ++i)
    locals.push_back(res.processed[i]);

  int next = sc.init_frames;
  while (next < n) {
    const int end = std::min(n, next + sc.frames_per_update);
    std::vector<WindowFrame> incoming;
    for (int i = next; i < end; ++i) {
      TrainFrame f = source.frame(i);
      require_image(f, intr);
      if (!f.pose) throw DataError("frame " + std::to_string(i) + " has no pose");
      incoming.push_back({i, f.image, *f.pose});
      if (i % sc.keyframe_stride == 0) res.state.keyframes.push_back(incoming.back());
    }
    advance_window(locals, incoming, sc);
    const FrameWindow window = select_window(res.state.keyframes, locals, sc);
    ++res.updates;
    Rng rng(Rng::derive_seed({seed, 2, static_cast<std::uint64_t>(res.updates)}));
    t0 = clock::now();
    const StepStats stats = map_update(res.state, window, cfg, rng);
    if (callbacks.on_timing) callbacks.on_timing(res.updates, seconds(t0, clock::now()));
    const int before = res.state.frames_processed;
    res.state.frames_processed += end - next;
    res.processed.insert(res.processed.end(), incoming.begin(), incoming.end());
    distances.push_back(stats.mahalanobis);
    emit({res.updates, res.state.frames_processed, stats});
    maybe_snapshot(before, res.state.frames_processed, false);
    next = end;
  }
  maybe_snapshot(res.state.frames_processed, res.state.frames_processed, true);
  res.uncertainty = global_uncertainty(distances, sc.active_window);
  return res;
}

// ---------------------------------------------------------------------------

std::string metrics_csv_header() { return "step,frame,L_c,L_w,total,d_M,PSNR"; }

std::string metrics_csv_line(const MetricsRow& row) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%d,%d,%.9g,%.9g,%.9g,%.9g,%.6f", row.step, row.frame,
                row.stats.color, row.stats.warp, row.stats.total, row.stats.mahalanobis,
                row.stats.psnr);
  return buf;
}

void write_snapshot(const std::filesystem::path& dir, const MapState& state, int frame,
                    const std::vector<WindowFrame>& processed, const std::vector<MetricsRow>& rows,
                    const SnapshotOptions& options) {
  char name[32];
  std::snprintf(name, sizeof(name), "snap_%06d", frame);
  const std::filesystem::path snap = dir / name;
  std::filesystem::create_directories(snap);
  std::vector<Pose> views;
  const int stride = std::max(1, options.view_stride);
  for (std::size_t i = 0; i < processed.size(); i += stride) views.push_back(processed[i].pose);
  if (!views.empty())
    write_ply(extract_pointcloud(state.field, views, state.intrinsics, options.extract), snap / "cloud.ply");
  if (!processed.empty()) {
    const WindowFrame& newest = processed.back();
    const ViewRender r = render_view(state.field, state.intrinsics, newest.pose, options.extract.render);
    write_png(r.rgb, snap / ("rgb_" + std::to_string(newest.id) + ".png"));
    write_depth_png(r.depth, snap / ("depth_" + std::to_string(newest.id) + ".png"));
  }
  std::string csv = metrics_csv_header() + "\n";
  for (const MetricsRow& row : rows) {
    if (row.frame > frame) break;
    csv += metrics_csv_line(row) + "\n";
  }
  write_file_atomic(snap / "metrics.csv", csv);
}

// ---------------------------------------------------------------------------
// Checkpoints: little-endian, see docs/checkpoint.md.

namespace {

constexpr char kMagic[8] = {'F', 'M', 'A', 'P', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

class Writer {
 public:
  template <typename T>
  void put(T v) {
    const char* p = reinterpret_cast<const char*>(&v);
    buf_.append(p, sizeof(T));
  }
  void raw(const void* p, std::size_t n) { buf_.append(static_cast<const char*>(p), n); }
  const std::string& str() const { return buf_; }

 private:
  std::string buf_;
};

class Reader {
 public:
  explicit Reader(std::string data) : data_(std::move(data)) {}
  template <typename T>
  T get() {
    T v;
    need(sizeof(T));
    std::memcpy(&v, data_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  void raw(void* p, std::size_t n) {
    need(n);
    std::memcpy(p, data_.data() + pos_, n);
    pos_ += n;
  }
  bool done() const { return pos_ == data_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > data_.size()) throw DataError("checkpoint truncated");
  }
  std::string data_;
  std::size_t pos_ = 0;
};

void put_pose(Writer& w, const Pose& p) {
  for (int k = 0; k < 3; ++k) w.put<double>(p.translation[k]);
  w.put<double>(p.rotation.x());
  w.put<double>(p.rotation.y());
  w.put<double>(p.rotation.z());
  w.put<double>(p.rotation.w());
}

Pose get_pose(Reader& r) {
  Pose p;
  for (int k = 0; k < 3; ++k) p.translation[k] = r.get<double>();
  const double x = r.get<double>(), y = r.get<double>(), z = r.get<double>(), w = r.get<double>();
  p.rotation = Eigen::Quaterniond(w, x, y, z);
  return p;
}

}  // namespace

void save_checkpoint(const MapState& state, const std::filesystem::path& path) {
  Writer w;
  w.raw(kMagic, sizeof(kMagic));
  w.put<std::uint32_t>(kVersion);
  const FieldShape& s = state.field.shape();
  w.put<std::int32_t>(s.res);
  w.put<std::int32_t>(s.density_channels);
  w.put<std::int32_t>(s.appearance_channels);
  w.put<std::int32_t>(s.hidden);
  const SceneBounds& b = state.field.bounds();
  for (int k = 0; k < 3; ++k) w.put<double>(b.min[k]);
  for (int k = 0; k < 3; ++k) w.put<double>(b.max[k]);
  w.put<double>(state.field.density_bias());
  const CameraIntrinsics& k = state.intrinsics;
  w.put<double>(k.fx);
  w.put<double>(k.fy);
  w.put<double>(k.cx);
  w.put<double>(k.cy);
  w.put<std::int32_t>(k.width);
  w.put<std::int32_t>(k.height);
  w.put<std::int32_t>(state.frames_processed);
  w.put<std::uint8_t>(state.decoder_frozen ? 1 : 0);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(state.keyframes.size()));
  for (const WindowFrame& f : state.keyframes) {
    w.put<std::int32_t>(f.id);
    put_pose(w, f.pose);
  }
  const std::span<const double> params = state.field.params();
  w.put<std::uint64_t>(params.size());
  for (double v : params) w.put<float>(static_cast<float>(v));
  write_file_atomic(path, w.str());
}

MapState load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open checkpoint " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  Reader r(ss.str());
  char magic[8];
  r.raw(magic, sizeof(magic));
  if (std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) throw DataError(path.string() + ": not a checkpoint");
  const auto version = r.get<std::uint32_t>();
  if (version != kVersion)
    throw DataError(path.string() + ": unsupported checkpoint version " + std::to_string(version));
  FieldShape s;
  s.res = r.get<std::int32_t>();
  s.density_channels = r.get<std::int32_t>();
  s.appearance_channels = r.get<std::int32_t>();
  s.hidden = r.get<std::int32_t>();
  SceneBounds b;
  for (int k = 0; k < 3; ++k) b.min[k] = r.get<double>();
  for (int k = 0; k < 3; ++k) b.max[k] = r.get<double>();
  MapState st;
  try {
    st.field = FactorizedField(s, b);
  } catch (const InvalidInput& e) {
    throw DataError(path.string() + ": " + e.what());
  }
  st.field.set_density_bias(r.get<double>());
  st.intrinsics.fx = r.get<double>();
  st.intrinsics.fy = r.get<double>();
  st.intrinsics.cx = r.get<double>();
  st.intrinsics.cy = r.get<double>();
  st.intrinsics.width = r.get<std::int32_t>();
  st.intrinsics.height = r.get<std::int32_t>();
  st.frames_processed = r.get<std::int32_t>();
  st.decoder_frozen = r.get<std::uint8_t>() != 0;
  const auto nk = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < nk; ++i) {
    WindowFrame f;
    f.id = r.get<std::int32_t>();
    f.pose = get_pose(r);
    st.keyframes.push_back(f);
  }
  const auto np = r.get<std::uint64_t>();
  if (np != st.field.params().size()) throw DataError(path.string() + ": parameter count mismatch");
  std::span<double> params = st.field.params();
  for (std::uint64_t i = 0; i < np; ++i) params[i] = r.get<float>();
  if (!r.done()) throw DataError(path.string() + ": trailing bytes");
  st.optimizer = make_optimizer(st.field, LearningRates{});
  st.optimizer.groups()[1].frozen = st.decoder_frozen;
  return st;
}

}  // namespace factormap
