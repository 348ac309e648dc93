#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "smn/error.hpp"

namespace smn {

struct Vec2 {
  double x = 0.0;
  double y = 0.0;
};

struct TrajPoint {
  int64_t frame = 0;
  double x = 0.0;
  double y = 0.0;
};

/// One pedestrian's observations within a scene. Frames strictly increasing.
struct Trajectory {
  int ped_id = 0;
  std::vector<TrajPoint> points;

  const TrajPoint* at_frame(int64_t frame) const;
  int64_t first_frame() const { return points.front().frame; }
  int64_t last_frame() const { return points.back().frame; }
};

struct Extent {
  double x_min = 0.0, x_max = 1.0;
  double y_min = 0.0, y_max = 1.0;
  double width() const { return x_max - x_min; }
  double height() const { return y_max - y_min; }
};

enum class StreamTag { I, R };

std::string to_string(StreamTag tag);
StreamTag stream_from_string(const std::string& s);

/// Co-occurring trajectories on one stream sharing a frame clock and extent.
/// Frames are in I-clock units for both streams; R scenes simply have points
/// only at frames divisible by the rate ratio.
struct Scene {
  int scene_id = 0;
  StreamTag stream = StreamTag::I;
  std::vector<Trajectory> trajectories;  // sorted by ped_id
  Extent extent;
  double fps = 25.0;

  const Trajectory* find_ped(int ped_id) const;
};

// ---------------------------------------------------------------------------
// JSONL ingestion / serialization
// ---------------------------------------------------------------------------

struct LoadOptions {
  /// When set, points are clamped into this extent instead of deriving the
  /// extent from the data. Clamps are counted in LoadResult.
  std::optional<Extent> extent;
  double fps = 25.0;
};

struct LoadResult {
  std::vector<Scene> scenes;  // sorted by (scene_id, stream)
  int clamped_points = 0;
};

LoadResult load_jsonl(const std::string& path, const LoadOptions& opts = {});
void write_jsonl(const std::string& path, const std::vector<Scene>& scenes);

// ---------------------------------------------------------------------------
// Synthetic generation
// ---------------------------------------------------------------------------

struct Obstacle {
  double x = 0.0, y = 0.0, radius = 1.0;
};

/// Social-force style generator configuration. Streams I and R share ground
/// truth; R is subsampled at the lower rate, perturbed with Gaussian noise
/// and whole trajectories are dropped with the dropout probability.
struct GenConfig {
  int scenes = 10;
  int peds_per_scene = 3;
  int frames = 48;          // simulated I-frames per scene
  double i_fps = 25.0;
  double r_fps = 5.0;       // i_fps must be divisible by r_fps
  double world = 20.0;      // square world [0, world)^2
  double r_noise = 0.05;    // sigma in world units
  double r_dropout = 0.1;
  double desired_speed = 1.4;
  double max_speed = 2.0;
  std::vector<Obstacle> obstacles;  // fixed layout shared by every scene
  std::vector<Vec2> waypoints;      // start/goal candidates

  /// Fills obstacles/waypoints with the default fixed layout when empty.
  void ensure_default_layout();
  int rate_ratio() const;  // I-frames per R-frame; validates divisibility
};

/// Generates paired scenes: for each scene id one stream-I and one stream-R
/// scene over the same wall-clock interval.
std::vector<Scene> generate_synthetic(const GenConfig& config, uint64_t seed);

// ---------------------------------------------------------------------------
// Splitting & samples
// ---------------------------------------------------------------------------

struct SplitResult {
  std::vector<int> train, test, validation;  // scene ids
};

/// Deterministic seeded partition at scene granularity.
SplitResult split_scenes(const std::vector<int>& scene_ids, double train_ratio,
                         double test_ratio, double val_ratio, uint64_t seed);

/// One prediction problem: a target pedestrian with ground truth over both
/// the observation and prediction windows in stream I.
struct Sample {
  int scene_id = 0;
  int ped_id = 0;
  int64_t start_frame = 0;  // first observed frame
  int t_obs = 20;
  int t_pred = 20;
};

/// Sliding-window extraction (stride t_obs) over stream-I trajectories.
/// Trajectories with fewer than min_length points are skipped.
std::vector<Sample> make_samples(const std::vector<Scene>& scenes, int t_obs,
                                 int t_pred, int min_length);

// ---------------------------------------------------------------------------
// Model-facing normalized view of one sample
// ---------------------------------------------------------------------------

struct PedTrack {
  int ped_id = 0;
  std::vector<int64_t> frames;  // ascending, clipped to the observed window
  std::vector<Vec2> pos;        // normalized coordinates
};

struct SampleView {
  Extent extent;                 // stream-I extent, for denormalization
  std::vector<Vec2> target;      // normalized, length t_obs + t_pred
  std::vector<PedTrack> neighbours;  // observed-window positions only
  int t_obs = 0;
  int t_pred = 0;

  bool has_r = false;            // an R scene exists for this sample
  bool target_in_r = false;      // target has R coverage in the window
  std::vector<Vec2> target_r;    // interpolated to I-frames, length t_obs
  std::vector<PedTrack> neighbours_r;
};

Vec2 normalize_point(const Extent& e, double x, double y);
Vec2 denormalize_point(const Extent& e, const Vec2& p);

/// Builds the normalized view. scene_r may be null (unimodal data). R-stream
/// tracks are linearly interpolated to I-frame timestamps, holding endpoint
/// values outside the covered range.
SampleView build_view(const Scene& scene_i, const Scene* scene_r, const Sample& s);

/// Scenes indexed by (scene_id, stream) with sample bookkeeping.
struct SceneIndex {
  std::vector<Scene> scenes;

  const Scene* find(int scene_id, StreamTag tag) const;
  bool has_stream(StreamTag tag) const;
};

}  // namespace smn
