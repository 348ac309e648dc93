#include "smn/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>

#include "json.hpp"
#include "smn/rng.hpp"

namespace smn {

using nlohmann::json;

const TrajPoint* Trajectory::at_frame(int64_t frame) const {
  auto it = std::lower_bound(points.begin(), points.end(), frame,
                             [](const TrajPoint& p, int64_t f) { return p.frame < f; });
  if (it == points.end() || it->frame != frame) return nullptr;
  return &*it;
}

std::string to_string(StreamTag tag) { return tag == StreamTag::I ? "I" : "R"; }

StreamTag stream_from_string(const std::string& s) {
  if (s == "I") return StreamTag::I;
  if (s == "R") return StreamTag::R;
  throw parse_error("unknown stream tag: '" + s + "'");
}

const Trajectory* Scene::find_ped(int ped_id) const {
  for (const auto& t : trajectories)
    if (t.ped_id == ped_id) return &t;
  return nullptr;
}

// ---------------------------------------------------------------------------
// JSONL
// ---------------------------------------------------------------------------

LoadResult load_jsonl(const std::string& path, const LoadOptions& opts) {
  std::ifstream in(path);
  if (!in) throw io_error("cannot open " + path);

  struct Key {
    int scene;
    StreamTag stream;
    bool operator<(const Key& o) const {
      if (scene != o.scene) return scene < o.scene;
      return static_cast<int>(stream) < static_cast<int>(o.stream);
    }
  };
  std::map<Key, std::map<int, std::vector<TrajPoint>>> groups;
  std::set<std::tuple<int, int, int64_t, int>> seen;

  std::string line;
  int lineno = 0;
  LoadResult result;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw parse_error(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
    int scene, ped;
    int64_t frame;
    double x, y;
    std::string stream;
    try {
      scene = j.at("scene").get<int>();
      stream = j.at("stream").get<std::string>();
      frame = j.at("frame").get<int64_t>();
      ped = j.at("ped").get<int>();
      x = j.at("x").get<double>();
      y = j.at("y").get<double>();
    } catch (const json::exception& e) {
      throw parse_error(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
    StreamTag tag = stream_from_string(stream);
    if (!seen.insert({scene, static_cast<int>(tag), frame, ped}).second)
      throw parse_error(path + ":" + std::to_string(lineno) +
                        ": duplicate observation (scene " + std::to_string(scene) +
                        ", stream " + stream + ", frame " + std::to_string(frame) +
                        ", ped " + std::to_string(ped) + ")");
    if (opts.extent) {
      const Extent& e = *opts.extent;
      double cx = std::clamp(x, e.x_min, e.x_max);
      double cy = std::clamp(y, e.y_min, e.y_max);
      if (cx != x || cy != y) ++result.clamped_points;
      x = cx;
      y = cy;
    }
    groups[{scene, tag}][ped].push_back({frame, x, y});
  }

  // Derive per-stream extents when none was imposed.
  Extent derived[2];
  bool any[2] = {false, false};
  for (auto& [key, peds] : groups) {
    int si = static_cast<int>(key.stream);
    for (auto& [ped, pts] : peds) {
      for (const auto& p : pts) {
        if (!any[si]) {
          derived[si] = {p.x, p.x, p.y, p.y};
          any[si] = true;
        } else {
          derived[si].x_min = std::min(derived[si].x_min, p.x);
          derived[si].x_max = std::max(derived[si].x_max, p.x);
          derived[si].y_min = std::min(derived[si].y_min, p.y);
          derived[si].y_max = std::max(derived[si].y_max, p.y);
        }
      }
    }
  }

  for (auto& [key, peds] : groups) {
    Scene s;
    s.scene_id = key.scene;
    s.stream = key.stream;
    s.fps = opts.fps;
    s.extent = opts.extent ? *opts.extent : derived[static_cast<int>(key.stream)];
    for (auto& [ped, pts] : peds) {
      Trajectory t;
      t.ped_id = ped;
      t.points = std::move(pts);
      std::sort(t.points.begin(), t.points.end(),
                [](const TrajPoint& a, const TrajPoint& b) { return a.frame < b.frame; });
      s.trajectories.push_back(std::move(t));
    }
    result.scenes.push_back(std::move(s));
  }
  return result;
}

void write_jsonl(const std::string& path, const std::vector<Scene>& scenes) {
  std::ofstream out(path);
  if (!out) throw io_error("cannot write " + path);
  std::vector<const Scene*> order;
  for (const auto& s : scenes) order.push_back(&s);
  std::sort(order.begin(), order.end(), [](const Scene* a, const Scene* b) {
    if (a->scene_id != b->scene_id) return a->scene_id < b->scene_id;
    return static_cast<int>(a->stream) < static_cast<int>(b->stream);
  });
  for (const Scene* s : order) {
    for (const auto& t : s->trajectories) {
      for (const auto& p : t.points) {
        json j;
        j["scene"] = s->scene_id;
        j["stream"] = to_string(s->stream);
        j["frame"] = p.frame;
        j["ped"] = t.ped_id;
        j["x"] = p.x;
        j["y"] = p.y;
        out << j.dump() << "\n";
      }
    }
  }
}

// ---------------------------------------------------------------------------
// Synthetic generation
// ---------------------------------------------------------------------------

void GenConfig::ensure_default_layout() {
  if (obstacles.empty()) {
    obstacles = {
        {0.35 * world, 0.55 * world, 0.09 * world},
        {0.65 * world, 0.35 * world, 0.07 * world},
        {0.55 * world, 0.75 * world, 0.06 * world},
    };
  }
  if (waypoints.empty()) {
    const double lo = 0.06 * world, hi = 0.94 * world, mid = 0.5 * world;
    waypoints = {{lo, lo},  {mid, lo},  {hi, lo},  {hi, mid},
                 {hi, hi},  {mid, hi},  {lo, hi},  {lo, mid}};
  }
}

int GenConfig::rate_ratio() const {
  double ratio = i_fps / r_fps;
  double rounded = std::round(ratio);
  if (r_fps <= 0 || i_fps <= 0 || std::abs(ratio - rounded) > 1e-9 || rounded < 1)
    throw config_error("I-rate " + std::to_string(i_fps) + " is not divisible by R-rate " +
                       std::to_string(r_fps));
  return static_cast<int>(rounded);
}

namespace {

struct SimPed {
  Vec2 pos, vel, goal;
  int goal_idx = -1;
};

Vec2 sub2(const Vec2& a, const Vec2& b) { return {a.x - b.x, a.y - b.y}; }
double norm2(const Vec2& v) { return std::sqrt(v.x * v.x + v.y * v.y); }

}  // namespace

std::vector<Scene> generate_synthetic(const GenConfig& config_in, uint64_t seed) {
  GenConfig config = config_in;
  config.ensure_default_layout();
  const int ratio = config.rate_ratio();
  if (config.scenes < 0 || config.peds_per_scene < 0)
    throw config_error("generate_synthetic: negative counts");
  if (config.waypoints.size() < 2)
    throw config_error("generate_synthetic: need at least 2 waypoints");

  const double dt = 1.0 / config.i_fps;
  const double relax = 0.5;        // velocity relaxation time
  const double ped_range = 1.2;    // repulsion length scales, world metres
  const double ped_strength = 3.0;
  const double obs_range = 0.8;
  const double obs_strength = 5.0;

  std::vector<Scene> out;
  out.reserve(static_cast<size_t>(config.scenes) * 2);

  for (int sc = 0; sc < config.scenes; ++sc) {
    RandomStream rng(seed, "gen-scene-" + std::to_string(sc));

    std::vector<SimPed> peds(config.peds_per_scene);
    for (auto& p : peds) {
      int start = static_cast<int>(rng.bounded(config.waypoints.size()));
      int goal = static_cast<int>(rng.bounded(config.waypoints.size()));
      while (goal == start) goal = static_cast<int>(rng.bounded(config.waypoints.size()));
      p.pos = config.waypoints[start];
      p.pos.x += rng.uniform(-0.02, 0.02) * config.world;
      p.pos.y += rng.uniform(-0.02, 0.02) * config.world;
      p.pos.x = std::clamp(p.pos.x, 0.0, config.world);
      p.pos.y = std::clamp(p.pos.y, 0.0, config.world);
      p.goal_idx = goal;
      p.goal = config.waypoints[goal];
      p.vel = {0, 0};
    }

    std::vector<std::vector<TrajPoint>> tracks(peds.size());
    for (int frame = 0; frame < config.frames; ++frame) {
      for (size_t i = 0; i < peds.size(); ++i)
        tracks[i].push_back({frame, peds[i].pos.x, peds[i].pos.y});

      // Forces from the current state, then a synchronous Euler step.
      std::vector<Vec2> accel(peds.size(), {0, 0});
      for (size_t i = 0; i < peds.size(); ++i) {
        SimPed& p = peds[i];
        Vec2 to_goal = sub2(p.goal, p.pos);
        double dist_goal = norm2(to_goal);
        if (dist_goal < 0.03 * config.world) {
          // Arrived: head somewhere else so motion continues.
          int next = static_cast<int>(rng.bounded(config.waypoints.size()));
          while (next == p.goal_idx) next = static_cast<int>(rng.bounded(config.waypoints.size()));
          p.goal_idx = next;
          p.goal = config.waypoints[next];
          to_goal = sub2(p.goal, p.pos);
          dist_goal = norm2(to_goal);
        }
        Vec2 desired = {0, 0};
        if (dist_goal > 1e-9) {
          desired.x = config.desired_speed * to_goal.x / dist_goal;
          desired.y = config.desired_speed * to_goal.y / dist_goal;
        }
        Vec2 a = {(desired.x - p.vel.x) / relax, (desired.y - p.vel.y) / relax};

        for (size_t jn = 0; jn < peds.size(); ++jn) {
          if (jn == i) continue;
          Vec2 away = sub2(p.pos, peds[jn].pos);
          double d = norm2(away);
          if (d < 1e-6 || d > 4.0 * ped_range) continue;
          double f = ped_strength * std::exp(-d / ped_range);
          a.x += f * away.x / d;
          a.y += f * away.y / d;
        }
        for (const auto& ob : config.obstacles) {
          Vec2 away = sub2(p.pos, Vec2{ob.x, ob.y});
          double d = norm2(away);
          double surf = d - ob.radius;
          if (d < 1e-6 || surf > 4.0 * obs_range) continue;
          double f = obs_strength * std::exp(-surf / obs_range);
          a.x += f * away.x / d;
          a.y += f * away.y / d;
        }
        accel[i] = a;
      }
      for (size_t i = 0; i < peds.size(); ++i) {
        SimPed& p = peds[i];
        p.vel.x += accel[i].x * dt;
        p.vel.y += accel[i].y * dt;
        double speed = norm2(p.vel);
        if (speed > config.max_speed) {
          p.vel.x *= config.max_speed / speed;
          p.vel.y *= config.max_speed / speed;
        }
        p.pos.x = std::clamp(p.pos.x + p.vel.x * dt, 0.0, config.world);
        p.pos.y = std::clamp(p.pos.y + p.vel.y * dt, 0.0, config.world);
      }
    }

    Extent world_extent{0.0, config.world, 0.0, config.world};

    Scene scene_i;
    scene_i.scene_id = sc;
    scene_i.stream = StreamTag::I;
    scene_i.extent = world_extent;
    scene_i.fps = config.i_fps;
    for (size_t i = 0; i < peds.size(); ++i) {
      Trajectory t;
      t.ped_id = static_cast<int>(i);
      t.points = tracks[i];
      scene_i.trajectories.push_back(std::move(t));
    }

    Scene scene_r;
    scene_r.scene_id = sc;
    scene_r.stream = StreamTag::R;
    scene_r.extent = world_extent;
    scene_r.fps = config.r_fps;
    for (size_t i = 0; i < peds.size(); ++i) {
      if (rng.uniform() < config.r_dropout) continue;
      Trajectory t;
      t.ped_id = static_cast<int>(i);
      for (const auto& p : tracks[i]) {
        if (p.frame % ratio != 0) continue;
        double nx = p.x + rng.gaussian(0.0, config.r_noise);
        double ny = p.y + rng.gaussian(0.0, config.r_noise);
        t.points.push_back({p.frame, std::clamp(nx, 0.0, config.world),
                            std::clamp(ny, 0.0, config.world)});
      }
      if (t.points.size() >= 2) scene_r.trajectories.push_back(std::move(t));
    }

    out.push_back(std::move(scene_i));
    out.push_back(std::move(scene_r));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Splits & samples
// ---------------------------------------------------------------------------

SplitResult split_scenes(const std::vector<int>& scene_ids, double train_ratio,
                         double test_ratio, double val_ratio, uint64_t seed) {
  if (scene_ids.empty()) throw contract_error("split: empty scene list");
  if (std::abs(train_ratio + test_ratio + val_ratio - 1.0) > 1e-9)
    throw config_error("split: ratios must sum to 1");
  std::vector<int> ids = scene_ids;
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  RandomStream rng(seed, "split");
  rng.shuffle(ids);
  const size_t n = ids.size();
  const size_t n_test = static_cast<size_t>(std::floor(n * test_ratio + 1e-9));
  const size_t n_val = static_cast<size_t>(std::floor(n * val_ratio + 1e-9));
  SplitResult r;
  for (size_t i = 0; i < n; ++i) {
    if (i < n - n_test - n_val)
      r.train.push_back(ids[i]);
    else if (i < n - n_val)
      r.test.push_back(ids[i]);
    else
      r.validation.push_back(ids[i]);
  }
  return r;
}

std::vector<Sample> make_samples(const std::vector<Scene>& scenes, int t_obs,
                                 int t_pred, int min_length) {
  std::vector<Sample> out;
  const int window = t_obs + t_pred;
  for (const auto& s : scenes) {
    if (s.stream != StreamTag::I) continue;
    for (const auto& t : s.trajectories) {
      if (static_cast<int>(t.points.size()) < std::max(window, min_length)) continue;
      // Windows over runs of consecutive frames, stride t_obs.
      size_t run_start = 0;
      for (size_t i = 1; i <= t.points.size(); ++i) {
        bool brk = i == t.points.size() ||
                   t.points[i].frame != t.points[i - 1].frame + 1;
        if (!brk) continue;
        const size_t run_len = i - run_start;
        for (size_t off = 0; off + window <= run_len;
             off += static_cast<size_t>(t_obs))
          out.push_back({s.scene_id, t.ped_id, t.points[run_start + off].frame,
                         t_obs, t_pred});
        run_start = i;
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Sample view
// ---------------------------------------------------------------------------

Vec2 normalize_point(const Extent& e, double x, double y) {
  double w = e.width() > 0 ? e.width() : 1.0;
  double h = e.height() > 0 ? e.height() : 1.0;
  return {(x - e.x_min) / w, (y - e.y_min) / h};
}

Vec2 denormalize_point(const Extent& e, const Vec2& p) {
  double w = e.width() > 0 ? e.width() : 1.0;
  double h = e.height() > 0 ? e.height() : 1.0;
  return {e.x_min + p.x * w, e.y_min + p.y * h};
}

namespace {

/// Linear interpolation at an exact frame, holding endpoint values outside
/// the covered range.
Vec2 interp_at(const Trajectory& t, int64_t frame) {
  if (frame <= t.first_frame()) return {t.points.front().x, t.points.front().y};
  if (frame >= t.last_frame()) return {t.points.back().x, t.points.back().y};
  auto it = std::lower_bound(t.points.begin(), t.points.end(), frame,
                             [](const TrajPoint& p, int64_t f) { return p.frame < f; });
  if (it->frame == frame) return {it->x, it->y};
  const TrajPoint& hi = *it;
  const TrajPoint& lo = *(it - 1);
  double a = static_cast<double>(frame - lo.frame) / static_cast<double>(hi.frame - lo.frame);
  return {lo.x + a * (hi.x - lo.x), lo.y + a * (hi.y - lo.y)};
}

}  // namespace

SampleView build_view(const Scene& scene_i, const Scene* scene_r, const Sample& s) {
  SampleView v;
  v.extent = scene_i.extent;
  v.t_obs = s.t_obs;
  v.t_pred = s.t_pred;

  const Trajectory* target = scene_i.find_ped(s.ped_id);
  if (!target) throw contract_error("sample target ped not in scene");
  const int window = s.t_obs + s.t_pred;
  v.target.reserve(window);
  for (int k = 0; k < window; ++k) {
    const TrajPoint* p = target->at_frame(s.start_frame + k);
    if (!p)
      throw contract_error("sample target lacks ground truth at frame " +
                           std::to_string(s.start_frame + k));
    v.target.push_back(normalize_point(scene_i.extent, p->x, p->y));
  }

  const int64_t obs_end = s.start_frame + s.t_obs;  // exclusive
  for (const auto& t : scene_i.trajectories) {
    if (t.ped_id == s.ped_id) continue;
    PedTrack track;
    track.ped_id = t.ped_id;
    for (const auto& p : t.points) {
      if (p.frame < s.start_frame || p.frame >= obs_end) continue;
      track.frames.push_back(p.frame);
      track.pos.push_back(normalize_point(scene_i.extent, p.x, p.y));
    }
    if (!track.frames.empty()) v.neighbours.push_back(std::move(track));
  }

  if (scene_r) {
    v.has_r = true;
    const Extent& re = scene_r->extent;
    for (const auto& t : scene_r->trajectories) {
      bool in_window = false;
      for (const auto& p : t.points)
        if (p.frame >= s.start_frame && p.frame < obs_end) in_window = true;
      if (!in_window) continue;
      PedTrack track;
      track.ped_id = t.ped_id;
      for (int k = 0; k < s.t_obs; ++k) {
        int64_t f = s.start_frame + k;
        Vec2 p = interp_at(t, f);
        track.frames.push_back(f);
        track.pos.push_back(normalize_point(re, p.x, p.y));
      }
      if (t.ped_id == s.ped_id) {
        v.target_in_r = true;
        v.target_r = track.pos;
      } else {
        v.neighbours_r.push_back(std::move(track));
      }
    }
  }
  return v;
}

const Scene* SceneIndex::find(int scene_id, StreamTag tag) const {
  for (const auto& s : scenes)
    if (s.scene_id == scene_id && s.stream == tag) return &s;
  return nullptr;
}

bool SceneIndex::has_stream(StreamTag tag) const {
  for (const auto& s : scenes)
    if (s.stream == tag && !s.trajectories.empty()) return true;
  return false;
}

}  // namespace smn
